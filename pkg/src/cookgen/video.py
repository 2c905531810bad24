"""Frame sources: read individual frames from videos or frame-dump directories.

Two source flavours are supported: a directory of numbered frame images with
a `source.json` metadata file (the form egocentric datasets are commonly
shipped in after extraction), and a video file decoded with OpenCV. Decoders
are not shared across workers; each extraction opens its own source.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import DecodeFailure, TimestampOutOfRange
from .imageio import load_image

FRAME_NAME_RE = re.compile(r"frame_(\d+)\.(png|jpg|jpeg)$", re.IGNORECASE)


class FrameSource(Protocol):
    fps: float
    frame_count: int

    def read_frame(self, index: int) -> np.ndarray: ...
    def close(self) -> None: ...


def nearest_frame_index(t: float, fps: float, frame_count: int) -> int:
    """Index of the decodable frame whose timestamp is nearest to `t`.

    Frame i sits at timestamp i / fps. Ties between two equidistant frames
    resolve to the earlier one. Raises TimestampOutOfRange for negative
    times or times past the source duration (frame_count / fps).
    """
    if fps <= 0 or frame_count <= 0:
        raise DecodeFailure("source reports no frames")
    duration = frame_count / fps
    if t < 0 or t > duration:
        raise TimestampOutOfRange(
            f"timestamp {t:.3f}s outside [0, {duration:.3f}s]"
        )
    lo = int(np.floor(t * fps))
    lo = min(lo, frame_count - 1)
    hi = min(lo + 1, frame_count - 1)
    if (t - lo / fps) <= (hi / fps - t):
        return lo
    return hi


class ImageDirSource:
    """Frames stored as `frame_%06d.png` in a directory with a `source.json`.

    `source.json` must carry {"fps": <float>}; frame numbering must start at
    zero and be gap-free.
    """

    def __init__(self, directory: str | Path, fps: float | None = None):
        self.directory = Path(directory)
        if fps is None:
            meta_path = self.directory / "source.json"
            if not meta_path.exists():
                raise DecodeFailure(f"{self.directory} has no source.json and no fps given")
            with meta_path.open("r", encoding="utf-8") as f:
                fps = float(json.load(f)["fps"])
        self.fps = fps
        self._frames: dict[int, Path] = {}
        for p in self.directory.iterdir():
            m = FRAME_NAME_RE.match(p.name)
            if m:
                self._frames[int(m.group(1))] = p
        if not self._frames:
            raise DecodeFailure(f"no frame images found in {self.directory}")
        self.frame_count = max(self._frames) + 1
        if len(self._frames) != self.frame_count:
            raise DecodeFailure(f"frame numbering in {self.directory} has gaps")

    def read_frame(self, index: int) -> np.ndarray:
        if index not in self._frames:
            raise TimestampOutOfRange(f"frame index {index} not in source")
        return load_image(self._frames[index])

    def close(self) -> None:
        pass


class VideoFileSource:
    """Video file decoded with OpenCV (requires the `video` extra)."""

    def __init__(self, path: str | Path):
        try:
            import cv2
        except ImportError as exc:
            raise DecodeFailure(
                "opencv-python-headless is required to decode video files"
            ) from exc
        self._cv2 = cv2
        self.path = Path(path)
        self._cap = cv2.VideoCapture(str(self.path))
        if not self._cap.isOpened():
            raise DecodeFailure(f"cannot open video {self.path}")
        self.fps = float(self._cap.get(cv2.CAP_PROP_FPS))
        self.frame_count = int(self._cap.get(cv2.CAP_PROP_FRAME_COUNT))
        if self.fps <= 0 or self.frame_count <= 0:
            raise DecodeFailure(f"video {self.path} reports no frames")

    def read_frame(self, index: int) -> np.ndarray:
        self._cap.set(self._cv2.CAP_PROP_POS_FRAMES, index)
        ok, frame_bgr = self._cap.read()
        if not ok:
            raise DecodeFailure(f"failed to decode frame {index} of {self.path}")
        return frame_bgr[:, :, ::-1].copy()

    def close(self) -> None:
        self._cap.release()


def open_source(path: str | Path) -> FrameSource:
    """Open a frame source: a frame directory or a video file."""
    path = Path(path)
    if path.is_dir():
        return ImageDirSource(path)
    if path.exists():
        return VideoFileSource(path)
    raise DecodeFailure(f"video source not found: {path}")


def find_source(videos_dir: str | Path, video_id: str) -> Path:
    """Locate the source for a video id inside a videos directory."""
    base = Path(videos_dir)
    candidates = [base / video_id] + [
        base / f"{video_id}{ext}" for ext in (".mp4", ".avi", ".mkv", ".mov")
    ]
    for cand in candidates:
        if cand.exists():
            return cand
    raise DecodeFailure(f"no source for video id {video_id!r} under {base}")
