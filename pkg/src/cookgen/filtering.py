"""Triplet filtering and curation-quality scoring.

A candidate triplet survives when its initial frame shows hands or at least
one action-relevant object, and its action frame shows hands. The final
frame is never probed: objects may legitimately change shape or vanish by
then, and dropping such triplets would discard exactly the informative ones.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .backends.base import (
    HAND_LABEL,
    Backends,
    ChatTurn,
    DetectionBackend,
    DetectionResult,
    EmbeddingBackend,
    VlmBackend,
)
from .errors import (
    AlignmentMismatch,
    BackendUnavailable,
    EmptyInput,
    MalformedBackendReply,
    MalformedFixtureKey,
)
from .imageio import load_image
from .ingest import FRAME_KINDS, ActionTriplet
from .manifest import resolve
from .prompting import PromptSet, load_prompts, parse_object_list

logger = logging.getLogger(__name__)

DEFAULT_DETECTION_THRESHOLD = 0.3

REJECT_NO_OBJECTS_OR_HANDS_IN_INITIAL = "NO_OBJECTS_OR_HANDS_IN_INITIAL"
REJECT_NO_HANDS_IN_ACTION = "NO_HANDS_IN_ACTION"
INDETERMINATE = "INDETERMINATE"


@dataclass
class FilterDecision:
    triplet: ActionTriplet
    kept: bool | None  # None = indeterminate (backend failure)
    reasons: list[str]
    detections: list[DetectionResult]
    objects: list[str] = field(default_factory=list)

    def to_row(self, base_dir: str | Path | None = None) -> dict[str, Any]:
        row = self.triplet.to_row(base_dir)
        row["kept"] = self.kept
        row["reasons"] = list(self.reasons)
        row["objects"] = list(self.objects)
        row["detections"] = [d.to_row() for d in self.detections]
        return row


@dataclass
class CurationScore:
    """Similarity of automatically selected frames to a human benchmark."""

    frame_kind: str
    mean_clip: float       # 100 x cosine, averaged
    quantile_ge_80: float  # fraction of pairs at or above the threshold
    n_pairs: int = 0

    def to_row(self) -> dict[str, Any]:
        return {
            "frame_kind": self.frame_kind,
            "mean_clip": self.mean_clip,
            "quantile_ge_80": self.quantile_ge_80,
            "n_pairs": self.n_pairs,
        }


def identify_objects(
    action: str,
    frame: np.ndarray,
    vlm: VlmBackend,
    prompts: PromptSet | None = None,
) -> list[str]:
    """Ask the VLM which visible objects are relevant to the action."""
    prompts = prompts or load_prompts()
    reply = vlm.chat([ChatTurn("user", prompts.identify.format(action=action), image=frame)])
    return parse_object_list(reply)


def detect(
    frame: np.ndarray,
    labels: list[str],
    detector: DetectionBackend,
    threshold: float = DEFAULT_DETECTION_THRESHOLD,
    frame_ref: str | None = None,
    return_masks: bool = False,
) -> list[DetectionResult]:
    """Run open-vocabulary detection and drop results below the score cutoff."""
    if not labels:
        raise EmptyInput("detect requires at least one label")
    results = detector.detect_segment(frame, labels, return_masks=return_masks)
    kept = []
    for det in results:
        if det.score < threshold:
            continue
        det.frame_ref = frame_ref
        kept.append(det)
    return kept


def filter_triplet(
    triplet: ActionTriplet,
    backends: Backends,
    threshold: float = DEFAULT_DETECTION_THRESHOLD,
    prompts: PromptSet | None = None,
    frames: tuple[np.ndarray, np.ndarray] | None = None,
    base_dir: str | Path | None = None,
) -> FilterDecision:
    """Decide whether one triplet survives filtering.

    `frames` may supply pre-loaded (initial, action) images; otherwise they
    are read from the triplet's frame paths. Backend failures produce an
    indeterminate decision instead of a rejection so that transient errors
    never silently shrink a dataset.
    """
    if frames is not None:
        f_in, f_action = frames
    else:
        if not triplet.frame_paths:
            raise EmptyInput(f"{triplet.triplet_id}: frames not extracted")
        base = base_dir if base_dir is not None else "."
        f_in = load_image(resolve(triplet.frame_paths["initial"], base))
        f_action = load_image(resolve(triplet.frame_paths["action"], base))

    try:
        objects = identify_objects(triplet.annotation.action_text, f_in, backends.vlm, prompts)
        labels_in = objects + ([HAND_LABEL] if HAND_LABEL not in objects else [])
        det_in = detect(f_in, labels_in, backends.detector, threshold, frame_ref="initial")
        det_action = detect(
            f_action, [HAND_LABEL], backends.detector, threshold, frame_ref="action"
        )
    except (BackendUnavailable, MalformedBackendReply, MalformedFixtureKey) as exc:
        logger.warning("%s: backend failure, decision indeterminate: %s",
                       triplet.triplet_id, exc)
        return FilterDecision(
            triplet, kept=None, reasons=[f"{INDETERMINATE}: {exc}"], detections=[]
        )

    hands_in_initial = any(d.label == HAND_LABEL for d in det_in)
    objects_in_initial = any(d.label != HAND_LABEL for d in det_in)
    hands_in_action = any(d.label == HAND_LABEL for d in det_action)

    reasons = []
    if not (hands_in_initial or objects_in_initial):
        reasons.append(REJECT_NO_OBJECTS_OR_HANDS_IN_INITIAL)
    if not hands_in_action:
        reasons.append(REJECT_NO_HANDS_IN_ACTION)

    return FilterDecision(
        triplet,
        kept=not reasons,
        reasons=reasons,
        detections=det_in + det_action,
        objects=objects,
    )


def _alignment_key(row: dict[str, Any]) -> tuple:
    return (row["video_id"], row["action_text"], round(float(row["t_start"]), 3))


def score_curation(
    auto_rows: Iterable[dict[str, Any]],
    manual_rows: Iterable[dict[str, Any]],
    embedder: EmbeddingBackend,
    similarity_threshold: float = 80.0,
    auto_base: str | Path = ".",
    manual_base: str | Path = ".",
) -> list[CurationScore]:
    """Score automatically selected frames against a human-picked benchmark.

    Rows align on (video_id, action_text, t_start). For each frame kind the
    mean of 100 x cosine similarity is reported together with the fraction
    of pairs at or above the similarity threshold.
    """
    auto_by_key = {_alignment_key(r): r for r in auto_rows}
    manual_by_key = {_alignment_key(r): r for r in manual_rows}
    common = sorted(set(auto_by_key) & set(manual_by_key))
    if not common:
        raise AlignmentMismatch("no (video_id, action_text, t_start) keys in common")

    sims: dict[str, list[float]] = defaultdict(list)
    for key in common:
        auto, manual = auto_by_key[key], manual_by_key[key]
        for kind in FRAME_KINDS:
            a_path = resolve(auto["frame_paths"][kind], auto_base)
            m_path = resolve(manual["frame_paths"][kind], manual_base)
            ea = embedder.embed(load_image(a_path))
            em = embedder.embed(load_image(m_path))
            sims[kind].append(100.0 * float(np.dot(ea, em)))

    scores = []
    for kind in FRAME_KINDS:
        values = sims[kind]
        at_or_above = sum(1 for v in values if v >= similarity_threshold)
        scores.append(
            CurationScore(
                frame_kind=kind,
                mean_clip=float(np.mean(values)),
                quantile_ge_80=at_or_above / len(values),
                n_pairs=len(values),
            )
        )
    return scores
