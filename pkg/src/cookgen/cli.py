"""Command-line entry point wiring the pipeline stages.

Exit codes: 0 ok, 2 configuration problem, 3 missing/unusable input,
4 backend failure, 5 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import load_config
from .errors import PipelineError, exit_code_for
from . import pipeline

logger = logging.getLogger("cookgen")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cookgen",
        description="Curate egocentric cooking triplets, ground object masks, "
        "orchestrate masked inpainting, and evaluate the results.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="path to the YAML config file")
    parser.add_argument("--workers", type=int, help="stage-internal parallelism")
    parser.add_argument(
        "--backend", choices=["mock", "remote"], help="force backend mode"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="parse annotations and extract frame triplets")
    p.add_argument("--dataset", required=True, choices=["ego4d", "egtea", "ek100", "custom"])
    p.add_argument("--annotations", required=True)
    p.add_argument("--videos", required=True)
    p.add_argument("--strategy", choices=["paper", "lego", "keyframes"])
    p.add_argument("--out", required=True, help="output manifest (JSONL)")

    p = sub.add_parser("filter", help="filter triplets on object and hand presence")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, help="detection score cutoff")

    p = sub.add_parser("ground", help="categorize objects and build mask plans")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="mask output directory")
    p.add_argument("--prompts", help="prompt template directory")

    p = sub.add_parser("generate", help="run masked inpainting for target frames")
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--target", choices=["action", "final", "both"], default="both")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score generated frames against ground truth")
    p.add_argument("--generated", required=True)
    p.add_argument("--gt", required=True, help="ground-truth manifest (JSONL)")
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--table", help="report text table path")
    p.add_argument("--method", help="method tag for the report")

    p = sub.add_parser("score-curation", help="score curated frames against a benchmark")
    p.add_argument("--auto", required=True)
    p.add_argument("--manual", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("finetune-prep", help="emit a fine-tuning job spec")
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--target", choices=["action", "final"], required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--out", required=True)

    return parser


def _dispatch(args: argparse.Namespace) -> dict:
    config = load_config(args.config)
    if args.workers is not None:
        config.workers = args.workers
    if args.backend is not None:
        config.force_backend_mode(args.backend)
    config.validate()

    if args.command == "curate":
        return pipeline.run_curate(
            config, args.dataset, args.annotations, args.videos, args.out,
            strategy=args.strategy,
        )
    if args.command == "filter":
        return pipeline.run_filter(config, args.manifest, args.out, threshold=args.threshold)
    if args.command == "ground":
        return pipeline.run_ground(config, args.manifest, args.out, prompts_dir=args.prompts)
    if args.command == "generate":
        return pipeline.run_generate(
            config, args.manifest, args.masks, args.out,
            target=args.target, seed=args.seed,
        )
    if args.command == "evaluate":
        return pipeline.run_evaluate(
            config, args.generated, args.gt, args.masks, args.out,
            out_table=args.table, method_tag=args.method,
        )
    if args.command == "score-curation":
        return pipeline.run_score_curation(config, args.auto, args.manual, args.out)
    if args.command == "finetune-prep":
        return pipeline.run_finetune_prep(
            config, args.manifest, args.masks, args.target, args.out,
            ratio=args.ratio, seed=args.seed, epochs=args.epochs,
        )
    raise PipelineError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        summary = _dispatch(args)
    except PipelineError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exit_code_for(exc)
    except Exception:  # pragma: no cover - defensive
        logger.exception("internal error")
        return 5
    table = summary.pop("table", None)
    for key, value in summary.items():
        logger.info("%s: %s", key, value)
    if table:
        print(table, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
