"""Annotation parsing, triplet timestamp selection, frame extraction, splits.

Every dataset adapter normalizes its records into one ActionAnnotation
schema; fields the adapter does not understand are preserved in an opaque
metadata map so downstream stages stay dataset-agnostic.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import (
    EmptyInput,
    MissingKeyframes,
    NegativeDuration,
    PipelineError,
    SchemaMismatch,
)
from .imageio import save_image
from .manifest import relativize
from .video import FrameSource, nearest_frame_index

logger = logging.getLogger(__name__)

# timestamp selection constants
FINAL_FRACTION = 0.9          # final frame sits at 90% of the action interval
LEGO_INITIAL_LEAD = 0.25      # comparison strategy: initial frame 0.25s early
LEGO_ACTION_FRACTION = 0.6    # comparison strategy: action frame at 60% of duration

FRAME_KINDS = ("initial", "action", "final")


class DatasetTag(str, Enum):
    EGO4D = "ego4d"
    EGTEA = "egtea"
    EK100 = "ek100"
    CUSTOM = "custom"


class SelectionStrategy(str, Enum):
    PAPER_DEFAULT = "paper"
    LEGO_STYLE = "lego"
    ANNOTATED_KEYFRAMES = "keyframes"


@dataclass
class Keyframes:
    """Dataset-provided key moments: pre-condition, point-of-no-return, post."""

    pre: float
    pnr: float
    post: float


@dataclass
class ActionAnnotation:
    video_id: str
    action_text: str
    t_start: float
    t_end: float
    dataset_tag: DatasetTag = DatasetTag.CUSTOM
    keyframes: Keyframes | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.action_text or not self.action_text.strip():
            raise SchemaMismatch(f"{self.video_id}: empty action text")
        if self.t_end <= self.t_start:
            raise NegativeDuration(
                f"{self.video_id}: t_end {self.t_end} <= t_start {self.t_start}"
            )
        if self.t_start < 0:
            raise SchemaMismatch(f"{self.video_id}: negative t_start {self.t_start}")


@dataclass
class ActionTriplet:
    annotation: ActionAnnotation
    t_initial: float
    t_action: float
    t_final: float
    selection_strategy: SelectionStrategy = SelectionStrategy.PAPER_DEFAULT
    frame_paths: dict[str, str] | None = None   # kind -> path (manifest-relative)
    frame_times: dict[str, float] | None = None  # kind -> decoded frame time

    @property
    def triplet_id(self) -> str:
        ann = self.annotation
        action_hash = hashlib.sha1(ann.action_text.encode("utf-8")).hexdigest()[:6]
        return f"{ann.video_id}_{int(round(ann.t_start * 1000)):08d}_{action_hash}"

    def validate(self) -> None:
        self.annotation.validate()
        if not (self.t_initial <= self.t_action <= self.t_final):
            raise PipelineError(
                f"{self.triplet_id}: timestamps not ordered: "
                f"{self.t_initial}, {self.t_action}, {self.t_final}"
            )
        lo = self.annotation.t_start - LEGO_INITIAL_LEAD
        hi = self.annotation.t_end
        for t in (self.t_initial, self.t_action, self.t_final):
            if not (lo <= t <= hi):
                raise PipelineError(
                    f"{self.triplet_id}: timestamp {t} outside [{lo}, {hi}]"
                )

    def to_row(self, base_dir: str | Path | None = None) -> dict[str, Any]:
        ann = self.annotation
        row: dict[str, Any] = {
            "video_id": ann.video_id,
            "action_text": ann.action_text,
            "t_start": ann.t_start,
            "t_end": ann.t_end,
            "t_initial": self.t_initial,
            "t_action": self.t_action,
            "t_final": self.t_final,
            "frame_paths": self.frame_paths,
            "selection_strategy": self.selection_strategy.value,
            "dataset_tag": ann.dataset_tag.value,
            "triplet_id": self.triplet_id,
        }
        if self.frame_times is not None:
            row["frame_times"] = self.frame_times
        if base_dir is not None and self.frame_paths:
            row["frame_paths"] = {
                k: relativize(v, base_dir) for k, v in self.frame_paths.items()
            }
        return row

    @classmethod
    def from_row(
        cls, row: dict[str, Any], base_dir: str | Path | None = None
    ) -> "ActionTriplet":
        """Rebuild a triplet from a manifest row.

        When `base_dir` is given (normally the manifest's directory), frame
        paths are resolved to absolute paths.
        """
        ann = ActionAnnotation(
            video_id=row["video_id"],
            action_text=row["action_text"],
            t_start=float(row["t_start"]),
            t_end=float(row["t_end"]),
            dataset_tag=DatasetTag(row.get("dataset_tag", "custom")),
        )
        frame_paths = row.get("frame_paths")
        if frame_paths and base_dir is not None:
            from .manifest import resolve

            frame_paths = {k: str(resolve(v, base_dir)) for k, v in frame_paths.items()}
        return cls(
            annotation=ann,
            t_initial=float(row["t_initial"]),
            t_action=float(row["t_action"]),
            t_final=float(row["t_final"]),
            selection_strategy=SelectionStrategy(row.get("selection_strategy", "paper")),
            frame_paths=frame_paths,
            frame_times=row.get("frame_times"),
        )


@dataclass
class DatasetSplit:
    train: list[ActionTriplet]
    test: list[ActionTriplet]
    ratio: float
    seed: int


@dataclass
class ParsedAnnotations:
    """parse_annotations result: parsed records plus the malformed-row count."""

    annotations: list[ActionAnnotation]
    skipped: int


def select_timestamps(
    annotation: ActionAnnotation, strategy: SelectionStrategy
) -> tuple[float, float, float]:
    """Choose the (initial, action, final) timestamps for one annotation.

    Default strategy: initial at action start, action at the interval
    midpoint, final at 90% of the interval. The comparison strategy starts
    0.25s before the action (clamped at the video start) and takes the
    action frame at 60% of the duration; it defines no final frame, so the
    default's final timestamp is reused. The keyframes strategy passes
    through dataset-provided pre/pnr/post times.
    """
    annotation.validate()
    t_s, t_f = annotation.t_start, annotation.t_end
    default_final = 0.1 * t_s + FINAL_FRACTION * t_f
    if strategy is SelectionStrategy.PAPER_DEFAULT:
        return (t_s, (t_s + t_f) / 2.0, default_final)
    if strategy is SelectionStrategy.LEGO_STYLE:
        logger.debug(
            "%s: comparison strategy defines no final frame; reusing default",
            annotation.video_id,
        )
        return (
            max(0.0, t_s - LEGO_INITIAL_LEAD),
            t_s + LEGO_ACTION_FRACTION * (t_f - t_s),
            default_final,
        )
    if strategy is SelectionStrategy.ANNOTATED_KEYFRAMES:
        kf = annotation.keyframes
        if kf is None:
            raise MissingKeyframes(
                f"{annotation.video_id}: dataset provides no pre/pnr/post keyframes"
            )
        return (kf.pre, kf.pnr, kf.post)
    raise PipelineError(f"unknown strategy {strategy!r}")


def make_triplet(
    annotation: ActionAnnotation, strategy: SelectionStrategy
) -> ActionTriplet:
    t_i, t_a, t_f = select_timestamps(annotation, strategy)
    triplet = ActionTriplet(annotation, t_i, t_a, t_f, selection_strategy=strategy)
    triplet.validate()
    return triplet


def extract_frames(
    triplet: ActionTriplet,
    source: FrameSource,
    out_dir: str | Path,
) -> ActionTriplet:
    """Write the three frames nearest the selected timestamps as PNG files.

    Returns a copy of the triplet with frame_paths (absolute) and the
    decoded frame times filled in.
    """
    out_dir = Path(out_dir)
    paths: dict[str, str] = {}
    times: dict[str, float] = {}
    timestamps = {
        "initial": triplet.t_initial,
        "action": triplet.t_action,
        "final": triplet.t_final,
    }
    for kind in FRAME_KINDS:
        index = nearest_frame_index(timestamps[kind], source.fps, source.frame_count)
        frame = source.read_frame(index)
        path = out_dir / f"{triplet.triplet_id}_{kind}.png"
        save_image(path, frame)
        paths[kind] = str(path)
        times[kind] = index / source.fps
    return ActionTriplet(
        annotation=triplet.annotation,
        t_initial=triplet.t_initial,
        t_action=triplet.t_action,
        t_final=triplet.t_final,
        selection_strategy=triplet.selection_strategy,
        frame_paths=paths,
        frame_times=times,
    )


def split_dataset(
    triplets: list[ActionTriplet], ratio: float, seed: int
) -> DatasetSplit:
    """Deterministic seeded train/test partition with |train| = round(n * ratio)."""
    if not triplets:
        raise EmptyInput("cannot split an empty triplet list")
    if not (0.0 < ratio < 1.0):
        raise EmptyInput(f"split ratio must be in (0, 1), got {ratio}")
    order = list(range(len(triplets)))
    random.Random(seed).shuffle(order)
    n_train = int(round(len(triplets) * ratio))
    n_train = min(max(n_train, 1), len(triplets) - 1)
    train_idx = sorted(order[:n_train])
    test_idx = sorted(order[n_train:])
    return DatasetSplit(
        train=[triplets[i] for i in train_idx],
        test=[triplets[i] for i in test_idx],
        ratio=ratio,
        seed=seed,
    )


# --- dataset adapters -------------------------------------------------------

def parse_annotations(path: str | Path, tag: DatasetTag) -> ParsedAnnotations:
    """Parse a dataset annotation file into normalized annotations.

    Malformed records are skipped and counted; a file from which nothing
    parses raises SchemaMismatch.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaMismatch(f"annotation file not found: {path}")
    parser = {
        DatasetTag.EGTEA: _parse_egtea,
        DatasetTag.EGO4D: _parse_ego4d,
        DatasetTag.EK100: _parse_ek100,
        DatasetTag.CUSTOM: _parse_custom,
    }[tag]
    annotations: list[ActionAnnotation] = []
    skipped = 0
    for record in parser(path):
        if record is None:
            skipped += 1
            continue
        try:
            record.validate()
        except PipelineError as exc:
            logger.warning("skipping malformed record: %s", exc)
            skipped += 1
            continue
        annotations.append(record)
    if not annotations:
        raise SchemaMismatch(f"no records parsed from {path} as {tag.value}")
    if skipped:
        logger.info("parsed %d annotations, skipped %d malformed", len(annotations), skipped)
    return ParsedAnnotations(annotations, skipped)


def _float_field(row: dict, *names: str) -> float:
    for name in names:
        if name in row and row[name] not in (None, ""):
            return float(row[name])
    raise KeyError(names[0])


def _str_field(row: dict, *names: str) -> str:
    for name in names:
        if name in row and row[name]:
            return str(row[name])
    raise KeyError(names[0])


def _parse_egtea(path: Path):
    # CSV with frame-level action annotations normalized to seconds:
    # video_id, action (or action_text), start_sec (or t_start), end_sec (or t_end)
    with path.open("r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            try:
                yield ActionAnnotation(
                    video_id=_str_field(row, "video_id", "clip_id"),
                    action_text=_str_field(row, "action", "action_text"),
                    t_start=_float_field(row, "start_sec", "t_start"),
                    t_end=_float_field(row, "end_sec", "t_end"),
                    dataset_tag=DatasetTag.EGTEA,
                    metadata={k: v for k, v in row.items()},
                )
            except (KeyError, ValueError):
                yield None


def _parse_ego4d(path: Path):
    # JSON: either a top-level list of action records or {"clips": [...]}
    # with each clip holding "actions". Records may carry pre/pnr/post times.
    with path.open("r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError:
            return
    if isinstance(data, dict):
        records = []
        for clip in data.get("clips", []):
            vid = clip.get("video_uid") or clip.get("video_id")
            for action in clip.get("actions", []):
                records.append({**action, "video_id": vid})
    else:
        records = data
    for row in records:
        if not isinstance(row, dict):
            yield None
            continue
        try:
            keyframes = None
            if all(k in row for k in ("pre_sec", "pnr_sec", "post_sec")):
                keyframes = Keyframes(
                    pre=float(row["pre_sec"]),
                    pnr=float(row["pnr_sec"]),
                    post=float(row["post_sec"]),
                )
            yield ActionAnnotation(
                video_id=_str_field(row, "video_id", "video_uid"),
                action_text=_str_field(row, "narration_text", "action_text", "action"),
                t_start=_float_field(row, "start_sec", "t_start"),
                t_end=_float_field(row, "end_sec", "t_end"),
                dataset_tag=DatasetTag.EGO4D,
                keyframes=keyframes,
                metadata={k: v for k, v in row.items() if not isinstance(v, (dict, list))},
            )
        except (KeyError, ValueError, TypeError):
            yield None


def _hms_to_seconds(stamp: str) -> float:
    parts = stamp.strip().split(":")
    if len(parts) != 3:
        raise ValueError(f"bad timestamp {stamp!r}")
    h, m, s = parts
    return int(h) * 3600 + int(m) * 60 + float(s)


def _parse_ek100(path: Path):
    # CSV with HH:MM:SS.ss start/stop timestamps and a narration column.
    with path.open("r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            try:
                yield ActionAnnotation(
                    video_id=_str_field(row, "video_id"),
                    action_text=_str_field(row, "narration", "action_text"),
                    t_start=_hms_to_seconds(_str_field(row, "start_timestamp")),
                    t_end=_hms_to_seconds(_str_field(row, "stop_timestamp")),
                    dataset_tag=DatasetTag.EK100,
                    metadata={k: v for k, v in row.items()},
                )
            except (KeyError, ValueError):
                yield None


def _parse_custom(path: Path):
    # JSONL, one record per line: {video_id, action_text, t_start, t_end,
    # pre?, pnr?, post?}
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                keyframes = None
                if all(k in row for k in ("pre", "pnr", "post")):
                    keyframes = Keyframes(
                        pre=float(row["pre"]), pnr=float(row["pnr"]), post=float(row["post"])
                    )
                yield ActionAnnotation(
                    video_id=_str_field(row, "video_id"),
                    action_text=_str_field(row, "action_text", "action"),
                    t_start=_float_field(row, "t_start"),
                    t_end=_float_field(row, "t_end"),
                    dataset_tag=DatasetTag.CUSTOM,
                    keyframes=keyframes,
                    metadata=row.get("metadata", {}),
                )
            except (KeyError, ValueError, TypeError, json.JSONDecodeError):
                yield None
