"""Stage orchestration: the functions behind each CLI command.

Stages communicate only through manifests and files, never in-memory
handoff, so any stage can be rerun or resumed in isolation. Reruns with
identical inputs and seeds overwrite artifacts byte-identically; the only
append-only output is the audit log under `<out>/audit/`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable

from .audit import AuditLog
from .backends import create_backends
from .backends.base import Backends
from .config import PipelineConfig
from .errors import (
    AlignmentMismatch,
    BackendUnavailable,
    EmptyRelevantSet,
    MalformedBackendReply,
    MalformedFixtureKey,
    MissingInput,
    MissingPlan,
    PipelineError,
)
from .filtering import FilterDecision, filter_triplet, score_curation
from .generation import (
    FinetuneSpec,
    GenerationRequest,
    TargetFrame,
    finetune_prepare,
    generate,
)
from .grounding import (
    RelevantObjectSet,
    build_mask_plan,
    categorize_objects,
    ground_masks,
    load_plan,
    refine_location,
    save_plan,
)
from .imageio import load_image, save_image
from .ingest import (
    ActionAnnotation,
    ActionTriplet,
    DatasetTag,
    SelectionStrategy,
    extract_frames,
    make_triplet,
    parse_annotations,
    split_dataset,
)
from .manifest import read_jsonl, write_json, write_jsonl
from .metrics import fid, render_table, report, score_pair
from .prompting import load_prompts
from .video import find_source, open_source

logger = logging.getLogger(__name__)

_BACKEND_ERRORS = (BackendUnavailable, MalformedBackendReply, MalformedFixtureKey)


def _map_workers(fn: Callable, items: Iterable, workers: int) -> list:
    items = list(items)
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _strategy_for(ann: ActionAnnotation, name: str | None) -> SelectionStrategy:
    if name is not None:
        return SelectionStrategy(name)
    if ann.dataset_tag is DatasetTag.EGO4D and ann.keyframes is not None:
        return SelectionStrategy.ANNOTATED_KEYFRAMES
    return SelectionStrategy.PAPER_DEFAULT


def _kept_rows(manifest: Path) -> tuple[list[dict], Path]:
    rows = read_jsonl(manifest)
    if not rows:
        raise MissingInput(f"manifest {manifest} holds no triplets")
    kept = [r for r in rows if r.get("kept") is True]
    if not kept:
        raise MissingInput(f"manifest {manifest} holds no kept triplets")
    return kept, manifest.resolve().parent


# --- curate -----------------------------------------------------------------

def run_curate(
    config: PipelineConfig,
    dataset: str,
    annotations_path: str | Path,
    videos_dir: str | Path,
    out_manifest: str | Path,
    strategy: str | None = None,
) -> dict[str, Any]:
    tag = DatasetTag(dataset)
    parsed = parse_annotations(annotations_path, tag)
    out_manifest = Path(out_manifest).resolve()
    out_dir = out_manifest.parent
    frames_dir = out_dir / "frames"
    audit = AuditLog(out_dir, "curate")
    strategy_name = strategy or config.selection_strategy

    def work(ann: ActionAnnotation):
        try:
            triplet = make_triplet(ann, _strategy_for(ann, strategy_name))
            source = open_source(find_source(videos_dir, ann.video_id))
            try:
                return extract_frames(triplet, source, frames_dir)
            finally:
                source.close()
        except PipelineError as exc:
            return (ann, exc)

    results = _map_workers(work, parsed.annotations, config.workers)
    rows, skipped = [], parsed.skipped
    for result in results:
        if isinstance(result, ActionTriplet):
            rows.append(result.to_row(out_dir))
            audit.record(result.triplet_id, "curated", frame_times=result.frame_times)
        else:
            ann, exc = result
            skipped += 1
            audit.record(ann.video_id, "skipped", error=str(exc))
    if not rows:
        raise MissingInput("curation produced zero triplets")
    rows.sort(key=lambda r: r["triplet_id"])
    write_jsonl(out_manifest, rows)
    return {"triplets": len(rows), "skipped": skipped, "manifest": str(out_manifest)}


# --- filter -----------------------------------------------------------------

def run_filter(
    config: PipelineConfig,
    manifest: str | Path,
    out_manifest: str | Path,
    threshold: float | None = None,
) -> dict[str, Any]:
    manifest = Path(manifest)
    rows = read_jsonl(manifest)
    if not rows:
        raise MissingInput(f"manifest {manifest} holds no triplets")
    base = manifest.resolve().parent
    out_manifest = Path(out_manifest).resolve()
    out_dir = out_manifest.parent
    audit = AuditLog(out_dir, "filter")
    backends = create_backends(config.backends)
    prompts = load_prompts(config.prompts_dir)
    thr = config.detection_threshold if threshold is None else threshold

    def work(row: dict) -> FilterDecision:
        triplet = ActionTriplet.from_row(row, base)
        try:
            return filter_triplet(triplet, backends, thr, prompts)
        except PipelineError as exc:
            return FilterDecision(triplet, None, [f"INDETERMINATE: {exc}"], [])

    decisions = _map_workers(work, rows, config.workers)
    decisions.sort(key=lambda d: d.triplet.triplet_id)
    out_rows = []
    counts = {"kept": 0, "rejected": 0, "indeterminate": 0}
    for decision in decisions:
        out_rows.append(decision.to_row(out_dir))
        if decision.kept is True:
            event = "kept"
        elif decision.kept is False:
            event = "rejected"
        else:
            event = "indeterminate"
        counts[event] += 1
        audit.record(decision.triplet.triplet_id, event, reasons=decision.reasons)
    write_jsonl(out_manifest, out_rows)
    counts["manifest"] = str(out_manifest)
    return counts


# --- ground -----------------------------------------------------------------

def run_ground(
    config: PipelineConfig,
    manifest: str | Path,
    out_dir: str | Path,
    prompts_dir: str | Path | None = None,
) -> dict[str, Any]:
    kept, base = _kept_rows(Path(manifest))
    masks_root = Path(out_dir).resolve()
    masks_root.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(masks_root, "ground")
    backends = create_backends(config.backends)
    prompts = load_prompts(prompts_dir or config.prompts_dir)
    thr = config.detection_threshold
    flags = config.flags

    def work(row: dict):
        triplet = ActionTriplet.from_row(row, base)
        tid = triplet.triplet_id
        action = triplet.annotation.action_text
        try:
            f_in = load_image(triplet.frame_paths["initial"])
            try:
                objects, history = categorize_objects(
                    action, f_in, backends.vlm, prompts, flags.auto_append_hands
                )
                if len(objects.location) > 1:
                    objects = refine_location(
                        objects, f_in, backends.vlm, prompts, history,
                        detector=backends.detector, threshold=thr,
                    )
                masks = ground_masks(objects, f_in, backends.detector, thr)
            except EmptyRelevantSet as exc:
                objects = RelevantObjectSet(action=action, notes=[f"empty relevant set: {exc}"])
                masks = []
            plan = build_mask_plan(objects, masks, f_in, flags.full_frame_fallback)
            save_plan(plan, objects, masks, masks_root / tid)
            return {
                "triplet_id": tid,
                "dir": tid,
                "action": action,
                "n_masks": len(masks),
                "has_relocated_frame": plan.relocated_frame is not None,
            }
        except (*_BACKEND_ERRORS, PipelineError) as exc:
            return (tid, exc)

    results = _map_workers(work, kept, config.workers)
    index_rows, failed = [], 0
    for result in results:
        if isinstance(result, dict):
            index_rows.append(result)
            audit.record(result["triplet_id"], "grounded", n_masks=result["n_masks"])
        else:
            tid, exc = result
            failed += 1
            audit.record(tid, "failed", error=str(exc))
    if not index_rows:
        raise MissingInput("grounding produced zero mask plans")
    index_rows.sort(key=lambda r: r["triplet_id"])
    write_jsonl(masks_root / "index.jsonl", index_rows)
    return {"grounded": len(index_rows), "failed": failed, "masks": str(masks_root)}


# --- generate ----------------------------------------------------------------

def _parse_targets(target: str) -> list[TargetFrame]:
    if target == "both":
        return [TargetFrame.ACTION, TargetFrame.FINAL]
    return [TargetFrame(target)]


def run_generate(
    config: PipelineConfig,
    manifest: str | Path,
    masks_dir: str | Path,
    out_dir: str | Path,
    target: str = "both",
    seed: int | None = None,
) -> dict[str, Any]:
    kept, base = _kept_rows(Path(manifest))
    masks_root = Path(masks_dir).resolve()
    out_root = Path(out_dir).resolve()
    out_root.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(out_root, "generate")
    backends = create_backends(config.backends)
    targets = _parse_targets(target)
    run_seed = config.seed if seed is None else seed
    backend_tag = config.backends["inpainter"].model_tag

    def work(row: dict):
        triplet = ActionTriplet.from_row(row, base)
        tid = triplet.triplet_id
        outcome: dict[str, Any] = {"triplet_id": tid}
        try:
            plan_dir = masks_root / tid
            if not plan_dir.exists():
                raise MissingPlan(f"no mask plan directory for {tid}")
            f_in = load_image(triplet.frame_paths["initial"])
            plan = load_plan(plan_dir)
            for tgt in targets:
                request = GenerationRequest(
                    frame_in=f_in,
                    action=triplet.annotation.action_text,
                    plan=plan,
                    target=tgt,
                    seed=run_seed,
                    backend_tag=backend_tag,
                )
                result = generate(request, backends.inpainter, config.flags.full_frame_fallback)
                stem = f"{tid}_{tgt.value}"
                save_image(out_root / f"{stem}.png", result.frame_out)
                write_json(
                    out_root / f"{stem}.json",
                    {
                        "triplet_id": tid,
                        "target": tgt.value,
                        "prompt": triplet.annotation.action_text,
                        "seed": result.seed,
                        "backend_tag": backend_tag,
                        "stages": [s.to_row() for s in result.stages_run],
                        "masks_used": result.masks_used,
                        "notes": result.notes,
                    },
                )
                outcome[tgt.value] = {
                    "stages": len(result.stages_run),
                    "wall_time": result.wall_time,
                }
            return outcome
        except (*_BACKEND_ERRORS, PipelineError) as exc:
            return (tid, exc)

    results = _map_workers(work, kept, config.workers)
    generated, failed = 0, 0
    for result in results:
        if isinstance(result, dict):
            generated += 1
            tid = result.pop("triplet_id")
            audit.record(tid, "generated", **result)
        else:
            tid, exc = result
            failed += 1
            audit.record(tid, "failed", error=str(exc))
    if not generated:
        raise MissingInput("generation produced zero frames")
    return {"generated": generated, "failed": failed, "out": str(out_root)}


# --- evaluate ----------------------------------------------------------------

def _load_mask_union(masks_root: Path, tid: str, target: TargetFrame):
    from .imageio import load_mask

    plan_dir = masks_root / tid
    if target is TargetFrame.FINAL:
        return load_mask(plan_dir / "final_stage.png")
    return load_mask(plan_dir / "action_stage1.png") | load_mask(
        plan_dir / "action_stage2.png"
    )


def run_evaluate(
    config: PipelineConfig,
    generated_dir: str | Path,
    gt_manifest: str | Path,
    masks_dir: str | Path,
    out_json: str | Path,
    out_table: str | Path | None = None,
    method_tag: str | None = None,
) -> dict[str, Any]:
    kept, base = _kept_rows(Path(gt_manifest))
    gen_root = Path(generated_dir).resolve()
    masks_root = Path(masks_dir).resolve()
    out_json = Path(out_json).resolve()
    audit = AuditLog(out_json.parent, "evaluate")
    backends = create_backends(config.backends)
    method = method_tag or config.method_tag

    rows_by_id = {r["triplet_id"]: r for r in kept}
    dataset_tags = sorted({r.get("dataset_tag", "custom") for r in kept})
    dataset_tag = ",".join(dataset_tags)

    reports = []
    per_triplet: dict[str, dict[str, Any]] = {}
    for tgt in (TargetFrame.ACTION, TargetFrame.FINAL):
        gen_ids = sorted(
            p.stem[: -len(f"_{tgt.value}")]
            for p in gen_root.glob(f"*_{tgt.value}.png")
        )
        if not gen_ids:
            continue
        if set(gen_ids) != set(rows_by_id):
            missing = sorted(set(rows_by_id) - set(gen_ids))
            extra = sorted(set(gen_ids) - set(rows_by_id))
            raise AlignmentMismatch(
                f"target {tgt.value}: generated/ground-truth sets differ "
                f"(missing={missing[:5]}, extra={extra[:5]})"
            )
        pairs, gt_images, gen_images = [], [], []
        for tid in gen_ids:
            row = rows_by_id[tid]
            triplet = ActionTriplet.from_row(row, base)
            f_in = load_image(triplet.frame_paths["initial"])
            f_gt = load_image(triplet.frame_paths[tgt.value])
            f_hat = load_image(gen_root / f"{tid}_{tgt.value}.png")
            mask_union = _load_mask_union(masks_root, tid, tgt)
            pair = score_pair(
                f_in, f_gt, f_hat, mask_union, backends.embedder,
                mclip_crop=config.flags.mclip_crop, triplet_id=tid,
            )
            pairs.append(pair)
            gt_images.append(f_gt)
            gen_images.append(f_hat)
            per_triplet.setdefault(tid, {})[tgt.value] = pair.to_row()
        fid_value = fid(gt_images, gen_images, backends.embedder)
        reports.append(report(pairs, fid_value, dataset_tag, tgt.value, method))

    if not reports:
        raise MissingInput(f"no generated frames found under {gen_root}")
    for tid, scores in sorted(per_triplet.items()):
        audit.record(tid, "scored", **scores)
    write_json(out_json, [r.to_json() for r in reports])
    table = render_table(reports)
    if out_table is not None:
        out_table = Path(out_table)
        out_table.parent.mkdir(parents=True, exist_ok=True)
        out_table.write_text(table, encoding="utf-8")
    return {
        "reports": len(reports),
        "n_pairs": sum(r.n_pairs for r in reports),
        "json": str(out_json),
        "table": table,
    }


# --- score-curation -----------------------------------------------------------

def run_score_curation(
    config: PipelineConfig,
    auto_manifest: str | Path,
    manual_manifest: str | Path,
    out_json: str | Path,
) -> dict[str, Any]:
    auto_path, manual_path = Path(auto_manifest), Path(manual_manifest)
    auto_rows = read_jsonl(auto_path)
    manual_rows = read_jsonl(manual_path)
    if not auto_rows or not manual_rows:
        raise MissingInput("both curation manifests must hold triplets")
    auto_rows = [r for r in auto_rows if r.get("kept") is not False]
    backends = create_backends(config.backends)
    scores = score_curation(
        auto_rows,
        manual_rows,
        backends.embedder,
        similarity_threshold=config.similarity_threshold,
        auto_base=auto_path.resolve().parent,
        manual_base=manual_path.resolve().parent,
    )
    out_json = Path(out_json).resolve()
    write_json(out_json, [s.to_row() for s in scores])
    audit = AuditLog(out_json.parent, "score-curation")
    for score in scores:
        audit.record(score.frame_kind, "scored", mean_clip=score.mean_clip,
                     quantile_ge_80=score.quantile_ge_80, n_pairs=score.n_pairs)
    return {"scores": [s.to_row() for s in scores], "json": str(out_json)}


# --- finetune-prep -------------------------------------------------------------

def run_finetune_prep(
    config: PipelineConfig,
    manifest: str | Path,
    masks_dir: str | Path,
    target: str,
    out_json: str | Path,
    ratio: float = 0.8,
    seed: int | None = None,
    epochs: int = 5,
) -> dict[str, Any]:
    kept, base = _kept_rows(Path(manifest))
    masks_root = Path(masks_dir).resolve()
    out_json = Path(out_json).resolve()
    audit = AuditLog(out_json.parent, "finetune-prep")
    split_seed = config.seed if seed is None else seed
    triplets = [ActionTriplet.from_row(r, base) for r in kept]
    split = split_dataset(triplets, ratio, split_seed)
    plan_dirs = {t.triplet_id: masks_root / t.triplet_id for t in triplets}
    spec: FinetuneSpec = finetune_prepare(
        split,
        plan_dirs,
        TargetFrame(target),
        out_dir=out_json.parent,
        epochs=epochs,
    )
    job = spec.to_json()
    job["split"] = {
        "ratio": ratio,
        "seed": split_seed,
        "train_ids": [t.triplet_id for t in split.train],
        "test_ids": [t.triplet_id for t in split.test],
    }
    write_json(out_json, job)
    for t in split.train:
        audit.record(t.triplet_id, "prepared", role="train")
    for t in split.test:
        audit.record(t.triplet_id, "prepared", role="test")
    return {
        "pairs": len(spec.pairs),
        "train": len(split.train),
        "test": len(split.test),
        "job": str(out_json),
    }
