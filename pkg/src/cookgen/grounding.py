"""Object categorization, mask grounding, core-object relocation, mask plans.

Objects relevant to an action fall into three roles: core objects the action
changes (always masked), a single location object marking where the core
object ends up (used for relocation, never masked itself), and functional
objects such as tools and hands (masked only when generating the action
frame). Bounding boxes, not tight masks, form the inpaint rasters: they are
coarse enough to let shapes and poses change. Tight pixel masks are used
only to composite a core object at its destination.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .backends.base import (
    HAND_LABEL,
    ChatTurn,
    DetectionBackend,
    DetectionResult,
    VlmBackend,
)
from .errors import (
    BackendUnavailable,
    DegenerateMask,
    EmptyInput,
    EmptyRelevantSet,
    MalformedBackendReply,
    MalformedFixtureKey,
    MissingPixelMask,
)
from .imageio import load_image, load_mask, save_image, save_mask
from .manifest import read_json, write_json
from .prompting import (
    PromptSet,
    load_prompts,
    parse_category_lines,
    parse_object_list,
)

logger = logging.getLogger(__name__)


class Category(str, Enum):
    CORE = "core"
    LOCATION = "location"
    FUNCTIONAL = "functional"


@dataclass
class RelevantObjectSet:
    action: str
    core: list[str] = field(default_factory=list)
    location: list[str] = field(default_factory=list)
    functional: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def all_names(self) -> list[str]:
        return list(self.core) + list(self.location) + list(self.functional)

    def category_of(self, name: str) -> Category | None:
        if name in self.core:
            return Category.CORE
        if name in self.location:
            return Category.LOCATION
        if name in self.functional:
            return Category.FUNCTIONAL
        return None

    def is_empty(self) -> bool:
        return not (self.core or self.location or self.functional)

    def to_row(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "core": list(self.core),
            "location": list(self.location),
            "functional": list(self.functional),
            "notes": list(self.notes),
        }


@dataclass
class GroundedMask:
    name: str
    category: Category
    bbox: tuple[int, int, int, int]
    pixel_mask: np.ndarray | None = None
    score: float = 0.0

    def __post_init__(self):
        # a pixel mask never spills outside its box
        if self.pixel_mask is not None:
            box = np.zeros(self.pixel_mask.shape, dtype=bool)
            x0, y0, x1, y1 = self.bbox
            box[y0:y1, x0:x1] = True
            self.pixel_mask = np.asarray(self.pixel_mask, dtype=bool) & box

    def to_row(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "category": self.category.value,
            "bbox": [int(v) for v in self.bbox],
            "score": round(float(self.score), 6),
        }


@dataclass
class InpaintMaskPlan:
    """Per-stage inpaint rasters plus the optionally relocated input frame."""

    action_stage1: np.ndarray  # functional regions, action-frame stage 1
    action_stage2: np.ndarray  # core regions (original + relocated + vacated)
    final_stage: np.ndarray    # same as stage 2; functional regions excluded
    relocated_frame: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)

    def shape(self) -> tuple[int, int]:
        return self.action_stage1.shape


def bbox_raster(shape: tuple[int, int], bboxes: list[tuple[int, int, int, int]]) -> np.ndarray:
    raster = np.zeros(shape, dtype=bool)
    for x0, y0, x1, y1 in bboxes:
        raster[y0:y1, x0:x1] = True
    return raster


def categorize_objects(
    action: str,
    frame: np.ndarray,
    vlm: VlmBackend,
    prompts: PromptSet | None = None,
    auto_append_hands: bool = True,
) -> tuple[RelevantObjectSet, list[ChatTurn]]:
    """Run the two-turn protocol: list relevant objects, then categorize them.

    Returns the object set and the conversation history so follow-up turns
    (location refinement) can continue the same chain of reasoning. Objects
    the second reply leaves unassigned or unparseable default to functional
    with a warning.
    """
    prompts = prompts or load_prompts()
    history: list[ChatTurn] = [
        ChatTurn("user", prompts.identify.format(action=action), image=frame)
    ]
    reply1 = vlm.chat(history)
    history.append(ChatTurn("assistant", reply1))
    names = parse_object_list(reply1)
    if not names:
        raise EmptyRelevantSet(f"no relevant objects identified for {action!r}")

    history.append(
        ChatTurn(
            "user",
            prompts.categorize.format(action=action, objects=", ".join(names)),
        )
    )
    reply2 = vlm.chat(history)
    history.append(ChatTurn("assistant", reply2))

    categories = parse_category_lines(reply2)
    result = RelevantObjectSet(action=action)
    assigned: set[str] = set()
    # precedence core > location > functional keeps categories disjoint
    for cat_name, target in (
        ("core", result.core),
        ("location", result.location),
        ("functional", result.functional),
    ):
        for item in categories.get(cat_name, []):
            if item not in assigned:
                target.append(item)
                assigned.add(item)

    for name in names:
        if name not in assigned:
            logger.warning("%r not categorized by backend; defaulting to functional", name)
            result.functional.append(name)
            result.notes.append(f"defaulted to functional: {name}")
            assigned.add(name)

    if auto_append_hands and HAND_LABEL not in assigned:
        result.functional.append(HAND_LABEL)

    if result.is_empty():
        raise EmptyRelevantSet(f"categorization produced no objects for {action!r}")
    return result, history


def refine_location(
    objects: RelevantObjectSet,
    frame: np.ndarray,
    vlm: VlmBackend,
    prompts: PromptSet | None = None,
    history: list[ChatTurn] | None = None,
    detector: DetectionBackend | None = None,
    scores: dict[str, float] | None = None,
    threshold: float = 0.3,
) -> RelevantObjectSet:
    """Keep only the most specific location object.

    Overlapping location candidates (stove, pan, the dish itself) describe
    the same region at different granularity; a follow-up VLM turn picks the
    most precise one. If the backend is unavailable or its answer matches no
    candidate, the highest-detection-score candidate wins and the set is
    flagged.
    """
    if not objects.location:
        raise EmptyInput("refine_location requires at least one location object")
    if len(objects.location) == 1:
        return objects

    prompts = prompts or load_prompts()
    chosen: str | None = None
    note: str | None = None
    question = prompts.refine.format(
        action=objects.action, locations=", ".join(objects.location)
    )
    if history:
        turns = list(history) + [ChatTurn("user", question)]
    else:
        turns = [ChatTurn("user", question, image=frame)]
    try:
        reply = vlm.chat(turns)
        answer = reply.strip().lower().strip(" .\"'")
        for cand in objects.location:
            if cand == answer or cand in answer:
                chosen = cand
                break
        if chosen is None:
            note = f"refinement answer {reply!r} matched no candidate"
    except (BackendUnavailable, MalformedFixtureKey, MalformedBackendReply) as exc:
        note = f"refinement backend failed: {exc}"

    if chosen is None:
        if scores is None and detector is not None:
            detections = detector.detect_segment(frame, list(objects.location))
            scores = {}
            for det in detections:
                if det.score >= threshold:
                    scores[det.label] = max(scores.get(det.label, 0.0), det.score)
        if scores:
            candidates = [loc for loc in objects.location if loc in scores]
            if candidates:
                chosen = max(candidates, key=lambda loc: scores[loc])
        if chosen is None:
            chosen = objects.location[0]
        logger.warning("%s; falling back to %r", note, chosen)

    refined = RelevantObjectSet(
        action=objects.action,
        core=list(objects.core),
        location=[chosen],
        functional=list(objects.functional),
        notes=list(objects.notes),
    )
    if note:
        refined.notes.append(f"location fallback ({note}): {chosen}")
    return refined


def ground_masks(
    objects: RelevantObjectSet,
    frame: np.ndarray,
    segmenter: DetectionBackend,
    threshold: float = 0.3,
) -> list[GroundedMask]:
    """Detect and segment the categorized objects on the frame.

    One mask per object that survives the detection threshold; undetected
    objects are dropped and logged (losing the location object merely
    degrades the plan to no relocation). Core objects carry pixel masks for
    relocation compositing; a detector that returns none gets a filled-box
    substitute.
    """
    if objects.is_empty():
        raise EmptyInput("ground_masks requires a non-empty object set")
    labels = objects.all_names()
    detections = segmenter.detect_segment(frame, labels, return_masks=True)

    best: dict[str, DetectionResult] = {}
    for det in detections:
        if det.score < threshold:
            continue
        if det.label not in best or det.score > best[det.label].score:
            best[det.label] = det

    masks: list[GroundedMask] = []
    for name in labels:
        det = best.get(name)
        if det is None:
            logger.info("%r not detected at threshold %.2f; dropped", name, threshold)
            continue
        category = objects.category_of(name)
        pixel_mask = det.pixel_mask
        if category is Category.CORE and pixel_mask is None:
            x0, y0, x1, y1 = det.bbox
            pixel_mask = np.zeros(frame.shape[:2], dtype=bool)
            pixel_mask[y0:y1, x0:x1] = True
            logger.warning("%r: no pixel mask from backend, using filled box", name)
        masks.append(
            GroundedMask(
                name=name,
                category=category,
                bbox=det.bbox,
                pixel_mask=pixel_mask,
                score=det.score,
            )
        )
    return masks


def relocation_shift(
    core_mask: GroundedMask,
    location_bbox: tuple[int, int, int, int],
    frame_shape: tuple[int, ...],
) -> tuple[int, int]:
    """Integer (dx, dy) moving the core centroid onto the location centroid.

    Clamped so the translated pixel mask stays entirely in-frame.
    """
    if core_mask.pixel_mask is None:
        raise MissingPixelMask(f"{core_mask.name}: relocation needs a pixel mask")
    ys, xs = np.nonzero(core_mask.pixel_mask)
    if ys.size == 0:
        raise DegenerateMask(f"{core_mask.name}: zero-area pixel mask")
    cy, cx = float(ys.mean()), float(xs.mean())
    lx0, ly0, lx1, ly1 = location_bbox
    tx, ty = (lx0 + lx1) / 2.0, (ly0 + ly1) / 2.0
    dx, dy = int(round(tx - cx)), int(round(ty - cy))
    h, w = frame_shape[0], frame_shape[1]
    dx = max(-int(xs.min()), min(dx, w - 1 - int(xs.max())))
    dy = max(-int(ys.min()), min(dy, h - 1 - int(ys.max())))
    return dx, dy


def relocate_core(
    frame: np.ndarray,
    core_mask: GroundedMask,
    location_mask: GroundedMask,
) -> np.ndarray:
    """Copy the core object's pixels so its centroid lands on the location's.

    The vacated source pixels are left in place; the caller includes the
    source region in the inpaint raster so the generator repairs the hole.
    """
    dx, dy = relocation_shift(core_mask, location_mask.bbox, frame.shape)
    out = frame.copy()
    ys, xs = np.nonzero(core_mask.pixel_mask)
    out[ys + dy, xs + dx] = frame[ys, xs]
    return out


def build_mask_plan(
    objects: RelevantObjectSet,
    masks: list[GroundedMask],
    frame: np.ndarray,
    full_frame_fallback: bool = True,
) -> InpaintMaskPlan:
    """Compose the per-stage inpaint rasters and relocate core objects.

    Stage 1 (action only) covers functional boxes; stage 2 and the final
    stage cover core boxes at their original and relocated positions, the
    original region doubling as the vacated-source repair area. When every
    raster would be empty the whole frame becomes editable, so generation
    still acts; a single empty stage is left empty and handled per request.
    """
    shape = frame.shape[:2]
    notes: list[str] = []

    functional_boxes = [m.bbox for m in masks if m.category is Category.FUNCTIONAL]
    core_masks = [m for m in masks if m.category is Category.CORE]
    location_masks = [m for m in masks if m.category is Category.LOCATION]

    stage1 = bbox_raster(shape, functional_boxes)
    core_boxes = [m.bbox for m in core_masks]

    relocated_frame: np.ndarray | None = None
    relocated_boxes: list[tuple[int, int, int, int]] = []
    if location_masks:
        location = location_masks[0]
        relocated_frame = frame.copy()
        moved_regions: list[np.ndarray] = []
        for core in core_masks:
            if core.pixel_mask is None or not core.pixel_mask.any():
                notes.append(f"{core.name}: no usable pixel mask, not relocated")
                continue
            dx, dy = relocation_shift(core, location.bbox, frame.shape)
            x0, y0, x1, y1 = core.bbox
            new_box = (x0 + dx, y0 + dy, x1 + dx, y1 + dy)
            ys, xs = np.nonzero(core.pixel_mask)
            relocated_frame[ys + dy, xs + dx] = frame[ys, xs]
            moved = np.zeros(shape, dtype=bool)
            moved[ys + dy, xs + dx] = True
            if any((moved & prev).any() for prev in moved_regions):
                notes.append(f"{core.name}: relocated region overlaps another core object")
            moved_regions.append(moved)
            relocated_boxes.append(
                (
                    max(0, new_box[0]),
                    max(0, new_box[1]),
                    min(shape[1], new_box[2]),
                    min(shape[0], new_box[3]),
                )
            )
            notes.append(f"relocated {core.name} by ({dx}, {dy}) toward {location.name}")

    stage2 = bbox_raster(shape, core_boxes + relocated_boxes)
    final_stage = stage2.copy()

    if full_frame_fallback and not (stage1.any() or stage2.any()):
        notes.append("all rasters empty: full-frame fallback applied")
        stage1 = np.ones(shape, dtype=bool)
        stage2 = np.ones(shape, dtype=bool)
        final_stage = np.ones(shape, dtype=bool)

    return InpaintMaskPlan(
        action_stage1=stage1,
        action_stage2=stage2,
        final_stage=final_stage,
        relocated_frame=relocated_frame,
        notes=notes,
    )


# --- plan persistence -------------------------------------------------------

PLAN_FILES = {
    "action_stage1": "action_stage1.png",
    "action_stage2": "action_stage2.png",
    "final_stage": "final_stage.png",
}
RELOCATED_FILE = "relocated.png"
SIDECAR_FILE = "objects.json"


def save_plan(
    plan: InpaintMaskPlan,
    objects: RelevantObjectSet,
    masks: list[GroundedMask],
    directory: str | Path,
) -> None:
    """Persist a plan: one 0/255 PNG per raster plus a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for attr, fname in PLAN_FILES.items():
        save_mask(directory / fname, getattr(plan, attr))
    if plan.relocated_frame is not None:
        save_image(directory / RELOCATED_FILE, plan.relocated_frame)
    write_json(
        directory / SIDECAR_FILE,
        {
            "objects": objects.to_row(),
            "masks": [m.to_row() for m in masks],
            "notes": list(plan.notes),
            "has_relocated_frame": plan.relocated_frame is not None,
        },
    )


def load_plan(directory: str | Path) -> InpaintMaskPlan:
    directory = Path(directory)
    rasters = {attr: load_mask(directory / fname) for attr, fname in PLAN_FILES.items()}
    sidecar = read_json(directory / SIDECAR_FILE)
    relocated = None
    if sidecar.get("has_relocated_frame"):
        relocated = load_image(directory / RELOCATED_FILE)
    return InpaintMaskPlan(
        action_stage1=rasters["action_stage1"],
        action_stage2=rasters["action_stage2"],
        final_stage=rasters["final_stage"],
        relocated_frame=relocated,
        notes=list(sidecar.get("notes", [])),
    )
