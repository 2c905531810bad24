"""Backend contracts for the four model roles the pipeline depends on.

Heavy models (vision-language chat, open-vocabulary detection/segmentation,
masked inpainting, image embedding) live behind these seams as either
in-process mocks or remote HTTP services; the pipeline core never links
model inference code.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, runtime_checkable

import numpy as np

from ..errors import ConfigInvalid

logger = logging.getLogger(__name__)

HAND_LABEL = "hand"


class BackendKind(str, Enum):
    VLM = "vlm"
    DETECTOR = "detector"
    INPAINTER = "inpainter"
    EMBEDDER = "embedder"


@dataclass
class BackendDescriptor:
    """Connection and behaviour settings for one backend role."""

    kind: BackendKind
    endpoint: str = "mock"
    model_tag: str = "mock"
    timeout: float = 30.0
    max_concurrency: int = 1
    # role-specific knobs
    native_resolution: int | None = None  # inpainter: square working resolution
    embed_dim: int = 64                   # embedder: mock output dimension
    seed: int = 0                         # mock determinism
    fixtures: str | None = None           # mock fixture file

    def __post_init__(self):
        if self.timeout <= 0:
            raise ConfigInvalid(f"backend timeout must be positive, got {self.timeout}")
        if self.max_concurrency < 1:
            raise ConfigInvalid(
                f"backend max_concurrency must be >= 1, got {self.max_concurrency}"
            )

    @property
    def is_mock(self) -> bool:
        return self.endpoint == "mock"


@dataclass
class ChatTurn:
    """One turn of a vision-language conversation; the image rides on the first turn."""

    role: str  # "user" | "assistant"
    text: str
    image: np.ndarray | None = None


@dataclass
class DetectionResult:
    """A single detection: object label, confidence, box, optional pixel mask."""

    label: str
    score: float
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max
    pixel_mask: np.ndarray | None = None
    frame_ref: str | None = None  # "initial" | "action" | "final" once attached

    def to_row(self) -> dict:
        return {
            "label": self.label,
            "score": round(float(self.score), 6),
            "bbox": [int(v) for v in self.bbox],
            "frame_ref": self.frame_ref,
        }


def clamp_bbox(
    bbox: tuple[float, float, float, float], shape: tuple[int, ...]
) -> tuple[tuple[int, int, int, int], bool]:
    """Clamp a box to image bounds; returns (box, True) when clamping changed it."""
    h, w = shape[0], shape[1]
    x0, y0, x1, y1 = bbox
    clamped = (
        int(max(0, min(x0, w))),
        int(max(0, min(y0, h))),
        int(max(0, min(x1, w))),
        int(max(0, min(y1, h))),
    )
    return clamped, clamped != tuple(int(v) for v in bbox)


@runtime_checkable
class VlmBackend(Protocol):
    def chat(self, messages: list[ChatTurn]) -> str: ...


@runtime_checkable
class DetectionBackend(Protocol):
    def detect_segment(
        self, frame: np.ndarray, labels: list[str], return_masks: bool = False
    ) -> list[DetectionResult]: ...


@runtime_checkable
class InpaintBackend(Protocol):
    def inpaint(
        self, frame: np.ndarray, mask: np.ndarray, prompt: str, seed: int
    ) -> np.ndarray: ...


@runtime_checkable
class EmbeddingBackend(Protocol):
    def embed(self, image: np.ndarray) -> np.ndarray: ...


@dataclass
class Backends:
    """The four backend clients a pipeline run is wired with."""

    vlm: VlmBackend | None = None
    detector: DetectionBackend | None = None
    inpainter: InpaintBackend | None = None
    embedder: EmbeddingBackend | None = None
    descriptors: dict[str, BackendDescriptor] = field(default_factory=dict)
