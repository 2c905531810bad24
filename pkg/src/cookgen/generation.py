"""Two-step masked-inpainting orchestration and fine-tuning job preparation.

The action frame is produced in two inpainting passes: functional-object
regions first (placing tools and hands), then core-object regions on that
intermediate result. The final frame takes a single pass over core regions
only. The backend contract does not promise to leave unmasked pixels alone,
so the orchestrator re-composites the stage input outside the active raster
after every call, making the masking contract bit-exact.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DimensionMismatch, EmptyMask, MissingPlan
from .grounding import InpaintMaskPlan
from .imageio import resize_image, resize_mask, save_mask
from .ingest import DatasetSplit
from .backends.base import EmbeddingBackend, InpaintBackend

logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = 5
DEFAULT_NONPOSITIVE_PENALTY = 1e3


class TargetFrame(str, Enum):
    ACTION = "action"
    FINAL = "final"


@dataclass
class GenerationRequest:
    frame_in: np.ndarray
    action: str
    plan: InpaintMaskPlan
    target: TargetFrame
    seed: int = 0
    backend_tag: str = "mock"


@dataclass
class StageRecord:
    name: str             # "functional" | "core" | "final"
    mask: str             # which plan raster was used
    full_frame_fallback: bool = False

    def to_row(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "mask": self.mask,
            "full_frame_fallback": self.full_frame_fallback,
        }


@dataclass
class GenerationResult:
    frame_out: np.ndarray
    stages_run: list[StageRecord]
    masks_used: list[str]
    wall_time: float
    seed: int
    notes: list[str] = field(default_factory=list)


def composite(output: np.ndarray, original: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Keep `output` inside the mask, `original` outside, exactly."""
    return np.where(np.asarray(mask, dtype=bool)[..., None], output, original)


def _run_backend(
    inpainter: InpaintBackend,
    image: np.ndarray,
    mask: np.ndarray,
    prompt: str,
    seed: int,
) -> np.ndarray:
    native = getattr(inpainter, "native_resolution", None)
    h, w = image.shape[:2]
    if native and (h, w) != (native, native):
        out = inpainter.inpaint(
            resize_image(image, (native, native)),
            resize_mask(mask, (native, native)),
            prompt,
            seed,
        )
        out = resize_image(out, (w, h))
    else:
        out = inpainter.inpaint(image, mask, prompt, seed)
    if out.shape != image.shape:
        raise DimensionMismatch(
            f"backend returned {out.shape}, expected {image.shape}"
        )
    return out


def generate(
    request: GenerationRequest,
    inpainter: InpaintBackend,
    full_frame_fallback: bool = True,
) -> GenerationResult:
    """Run the inpainting stages for one target frame.

    Final-frame generation always runs exactly one stage. Action-frame
    generation runs functional-then-core; an empty functional raster skips
    that stage (hands are normally guaranteed there by filtering, so this is
    rare). An empty raster on a stage that must run is replaced by a
    full-frame mask so generation still acts, unless fallback is disabled,
    in which case it is an error.
    """
    plan = request.plan
    frame = request.frame_in
    if plan.shape() != frame.shape[:2]:
        raise DimensionMismatch(
            f"plan rasters {plan.shape()} do not match frame {frame.shape[:2]}"
        )

    t0 = time.perf_counter()
    notes: list[str] = []
    stages: list[StageRecord] = []
    base = plan.relocated_frame if plan.relocated_frame is not None else frame

    def run_stage(image: np.ndarray, raster: np.ndarray, name: str, mask_name: str):
        fallback = False
        if not raster.any():
            if not full_frame_fallback:
                raise EmptyMask(f"stage {name} has an empty mask and fallback is disabled")
            raster = np.ones_like(raster)
            fallback = True
            notes.append(f"stage {name}: empty mask, full-frame fallback")
        out = _run_backend(inpainter, image, raster, request.action, request.seed)
        out = composite(out, image, raster)
        stages.append(StageRecord(name=name, mask=mask_name, full_frame_fallback=fallback))
        return out

    if request.target is TargetFrame.FINAL:
        out = run_stage(base, plan.final_stage, "final", "final_stage")
    else:
        intermediate = base
        if plan.action_stage1.any():
            intermediate = run_stage(base, plan.action_stage1, "functional", "action_stage1")
        else:
            notes.append("stage functional skipped: empty mask")
        out = run_stage(intermediate, plan.action_stage2, "core", "action_stage2")

    return GenerationResult(
        frame_out=out,
        stages_run=stages,
        masks_used=[s.mask for s in stages],
        wall_time=time.perf_counter() - t0,
        seed=request.seed,
        notes=notes,
    )


def training_loss(
    frame_in: np.ndarray,
    frame_out_hat: np.ndarray,
    embedder: EmbeddingBackend,
    penalty: float = DEFAULT_NONPOSITIVE_PENALTY,
) -> float:
    """Negative log of the embedding cosine similarity between the two frames.

    Zero exactly when the embeddings coincide. A non-positive similarity has
    no logarithm; it returns the configured finite penalty instead, flagged.
    """
    a = embedder.embed(frame_in)
    b = embedder.embed(frame_out_hat)
    cos = float(np.dot(a, b))
    if cos <= 0.0:
        logger.warning("non-positive similarity %.4f: returning penalty %g", cos, penalty)
        return penalty
    return -math.log(min(cos, 1.0))


@dataclass
class FinetunePair:
    frame_in: str
    mask: str
    prompt: str
    frame_target: str

    def to_row(self) -> dict[str, Any]:
        return {
            "frame_in": self.frame_in,
            "mask": self.mask,
            "prompt": self.prompt,
            "frame_target": self.frame_target,
        }


@dataclass
class FinetuneSpec:
    """A backend-executable fine-tuning job: data pairs plus loss settings.

    The similarity loss rides along as an auxiliary term; its weight
    relative to the backend's own denoising objective is backend-specific,
    so None means "backend default".
    """

    target: TargetFrame
    dataset_tag: str
    pairs: list[FinetunePair]
    epochs: int = DEFAULT_EPOCHS
    aux_similarity_loss_weight: float | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "target": self.target.value,
            "dataset_tag": self.dataset_tag,
            "epochs": self.epochs,
            "aux_similarity_loss": {
                "kind": "negative_log_cosine",
                "weight": self.aux_similarity_loss_weight,
            },
            "pairs": [p.to_row() for p in self.pairs],
            "n_pairs": len(self.pairs),
        }


def finetune_prepare(
    split: DatasetSplit,
    plan_dirs: dict[str, str | Path],
    target: TargetFrame,
    out_dir: str | Path,
    frame_base: str | Path = ".",
    epochs: int = DEFAULT_EPOCHS,
) -> FinetuneSpec:
    """Build one training pair per train-split triplet.

    `plan_dirs` maps triplet ids to their persisted mask-plan directories.
    For the final target the pair's mask is the final-stage raster; for the
    action target it is the union of both action-stage rasters, written next
    to the job file. Supervision comes from the curated ground-truth frame
    of the requested kind.
    """
    from .imageio import load_mask  # local import keeps module load light
    from .manifest import relativize, resolve

    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    out_dir = Path(out_dir)
    mask_dir = out_dir / "finetune_masks"
    pairs: list[FinetunePair] = []
    dataset_tags = set()
    for triplet in split.train:
        tid = triplet.triplet_id
        if tid not in plan_dirs:
            raise MissingPlan(f"no mask plan for triplet {tid}")
        plan_dir = Path(plan_dirs[tid])
        if target is TargetFrame.FINAL:
            mask_path = plan_dir / "final_stage.png"
        else:
            union = load_mask(plan_dir / "action_stage1.png") | load_mask(
                plan_dir / "action_stage2.png"
            )
            mask_path = mask_dir / f"{tid}_action.png"
            save_mask(mask_path, union)
        frame_in = resolve(triplet.frame_paths["initial"], frame_base)
        frame_target = resolve(triplet.frame_paths[target.value], frame_base)
        pairs.append(
            FinetunePair(
                frame_in=relativize(frame_in, out_dir),
                mask=relativize(mask_path, out_dir),
                prompt=triplet.annotation.action_text,
                frame_target=relativize(frame_target, out_dir),
            )
        )
        dataset_tags.add(triplet.annotation.dataset_tag.value)
    return FinetuneSpec(
        target=target,
        dataset_tag=",".join(sorted(dataset_tags)) or "custom",
        pairs=pairs,
        epochs=epochs,
    )
