"""Deterministic in-process mock backends for desk-scale runs and tests.

Every mock is a pure function of (inputs, seed, fixtures). Fixture files are
versioned JSON checked into the test corpus; see the fixture layout notes on
each class.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..errors import MalformedFixtureKey
from ..imageio import image_digest, resize_image
from .base import ChatTurn, DetectionResult, clamp_bbox

logger = logging.getLogger(__name__)


def _load_fixture(source) -> dict:
    if source is None:
        return {}
    if isinstance(source, dict):
        return source
    with Path(source).open("r", encoding="utf-8") as f:
        return json.load(f)


class MockVlm:
    """Replays canned chat replies keyed by (action phrase, user-turn index).

    Fixture layout: ``{"cut tomato": ["reply to turn 1", "reply to turn 2", ...]}``.
    The action key is matched as a substring of the latest user message (the
    prompt templates quote the action verbatim); the longest matching key wins.
    """

    def __init__(self, fixtures=None, strict: bool = True):
        self.fixtures = _load_fixture(fixtures)
        self.strict = strict

    def chat(self, messages: list[ChatTurn]) -> str:
        user_turns = [m for m in messages if m.role == "user"]
        if not user_turns:
            raise MalformedFixtureKey("conversation contains no user turn")
        turn_index = len(user_turns)
        text = user_turns[-1].text
        matches = [k for k in self.fixtures if k in text]
        if not matches:
            if self.strict:
                raise MalformedFixtureKey(f"no fixture action matches prompt: {text!r}")
            return ""
        key = max(matches, key=len)
        replies = self.fixtures[key]
        if turn_index > len(replies):
            if self.strict:
                raise MalformedFixtureKey(
                    f"fixture {key!r} has no reply for turn {turn_index}"
                )
            return ""
        return replies[turn_index - 1]


class MockDetector:
    """Replays detections from a per-frame fixture keyed by image content digest.

    Fixture layout::

        {"frames": {"<digest>": [{"label": ..., "score": ..., "bbox": [x0,y0,x1,y1],
                                  "mask": "bbox" | null}, ...]},
         "labels": {"<label>": [ ...same detection objects... ]}}

    ``frames`` entries take precedence; ``labels`` entries apply to any frame.
    A mask value of ``"bbox"`` materializes a filled-rectangle pixel mask.
    Use :func:`cookgen.imageio.image_digest` to compute keys when building
    fixtures.
    """

    def __init__(self, fixtures=None):
        self.fixtures = _load_fixture(fixtures)

    def detect_segment(
        self, frame: np.ndarray, labels: list[str], return_masks: bool = False
    ) -> list[DetectionResult]:
        entries = self.fixtures.get("frames", {}).get(image_digest(frame))
        if entries is None:
            by_label = self.fixtures.get("labels", {})
            entries = [e for lbl in labels for e in by_label.get(lbl, [])]
        results = []
        for entry in entries:
            if entry["label"] not in labels:
                continue
            bbox, changed = clamp_bbox(tuple(entry["bbox"]), frame.shape)
            if changed:
                logger.warning(
                    "fixture bbox %s clamped to %s for %dx%d frame",
                    entry["bbox"], bbox, frame.shape[1], frame.shape[0],
                )
            pixel_mask = None
            if return_masks and entry.get("mask") is not None:
                pixel_mask = self._build_mask(entry["mask"], bbox, frame.shape)
            score = float(entry["score"])
            if not (0.0 <= score <= 1.0):
                logger.warning("fixture score %s clamped into [0, 1]", score)
                score = min(max(score, 0.0), 1.0)
            results.append(
                DetectionResult(
                    label=entry["label"],
                    score=score,
                    bbox=bbox,
                    pixel_mask=pixel_mask,
                )
            )
        return results

    @staticmethod
    def _build_mask(spec, bbox, shape) -> np.ndarray:
        mask = np.zeros(shape[:2], dtype=bool)
        if spec == "bbox":
            x0, y0, x1, y1 = bbox
            mask[y0:y1, x0:x1] = True
        else:
            arr = np.asarray(spec, dtype=bool)
            mask[: arr.shape[0], : arr.shape[1]] = arr
            # fixture masks must stay inside the (clamped) box
            box_mask = np.zeros_like(mask)
            x0, y0, x1, y1 = bbox
            box_mask[y0:y1, x0:x1] = True
            mask &= box_mask
        return mask


class IdentityInpainter:
    """Returns its input unchanged; useful for contract tests."""

    native_resolution = None

    def inpaint(self, frame, mask, prompt, seed):
        if mask.shape != frame.shape[:2]:
            from ..errors import DimensionMismatch

            raise DimensionMismatch(
                f"mask {mask.shape} does not match frame {frame.shape[:2]}"
            )
        return frame.copy()


class CheckerboardInpainter:
    """Fills the masked region with a seed-derived checkerboard.

    Every pixel the mask permits is guaranteed to change: where the pattern
    happens to equal the original pixel, the pixel is inverted instead (an
    8-bit value never equals its own inverse).
    """

    native_resolution = None

    def __init__(self, cell: int = 8):
        self.cell = cell

    def inpaint(self, frame, mask, prompt, seed):
        if mask.shape != frame.shape[:2]:
            from ..errors import DimensionMismatch

            raise DimensionMismatch(
                f"mask {mask.shape} does not match frame {frame.shape[:2]}"
            )
        rng = np.random.default_rng(seed)
        c1 = rng.integers(0, 256, size=3, dtype=np.uint8)
        c2 = rng.integers(0, 256, size=3, dtype=np.uint8)
        h, w = frame.shape[:2]
        ys, xs = np.mgrid[0:h, 0:w]
        parity = ((ys // self.cell) + (xs // self.cell)) % 2
        pattern = np.where(parity[..., None] == 0, c1, c2).astype(np.uint8)
        out = frame.copy()
        region = np.asarray(mask, dtype=bool)
        out[region] = pattern[region]
        unchanged = region & np.all(out == frame, axis=-1)
        out[unchanged] = 255 - frame[unchanged]
        return out


class MockEmbedder:
    """Locality-sensitive deterministic embedding.

    The image is mean-pooled to 8x8x3, a constant bias channel is appended
    (so uniform images still embed to a nonzero vector), and the result is
    pushed through a fixed seeded random projection and normalized. Similar
    images therefore map to similar vectors, identical images to identical
    ones.
    """

    POOL = 8

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((dim, self.POOL * self.POOL * 3 + 1))

    def embed(self, image: np.ndarray) -> np.ndarray:
        pooled = resize_image(image, (self.POOL, self.POOL)).astype(np.float64) / 255.0
        features = np.concatenate([pooled.ravel(), [1.0]])
        vec = self._projection @ features
        return vec / np.linalg.norm(vec)
