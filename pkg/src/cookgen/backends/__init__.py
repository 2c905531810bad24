"""Backend contracts, deterministic mocks, and remote HTTP clients."""

from __future__ import annotations

from .base import (
    HAND_LABEL,
    BackendDescriptor,
    BackendKind,
    Backends,
    ChatTurn,
    DetectionBackend,
    DetectionResult,
    EmbeddingBackend,
    InpaintBackend,
    VlmBackend,
    clamp_bbox,
)
from .mocks import (
    CheckerboardInpainter,
    IdentityInpainter,
    MockDetector,
    MockEmbedder,
    MockVlm,
)
from .remote import RemoteDetector, RemoteEmbedder, RemoteInpainter, RemoteVlm

__all__ = [
    "HAND_LABEL",
    "BackendDescriptor",
    "BackendKind",
    "Backends",
    "ChatTurn",
    "DetectionBackend",
    "DetectionResult",
    "EmbeddingBackend",
    "InpaintBackend",
    "VlmBackend",
    "clamp_bbox",
    "MockVlm",
    "MockDetector",
    "IdentityInpainter",
    "CheckerboardInpainter",
    "MockEmbedder",
    "RemoteVlm",
    "RemoteDetector",
    "RemoteInpainter",
    "RemoteEmbedder",
    "create_backends",
]


def create_backends(descriptors: dict[str, BackendDescriptor]) -> Backends:
    """Instantiate the four backend clients from their descriptors.

    Descriptors with endpoint "mock" produce in-process mocks (the default
    inpainting mock is the checkerboard, whose output is visibly distinct
    from its input); any other endpoint produces a remote HTTP client.
    """
    bundle = Backends(descriptors=dict(descriptors))
    vlm = descriptors.get("vlm")
    if vlm is not None:
        bundle.vlm = MockVlm(vlm.fixtures) if vlm.is_mock else RemoteVlm(vlm)
    det = descriptors.get("detector")
    if det is not None:
        bundle.detector = MockDetector(det.fixtures) if det.is_mock else RemoteDetector(det)
    inp = descriptors.get("inpainter")
    if inp is not None:
        if inp.is_mock:
            bundle.inpainter = (
                IdentityInpainter() if inp.model_tag == "identity" else CheckerboardInpainter()
            )
        else:
            bundle.inpainter = RemoteInpainter(inp)
    emb = descriptors.get("embedder")
    if emb is not None:
        bundle.embedder = (
            MockEmbedder(dim=emb.embed_dim, seed=emb.seed) if emb.is_mock else RemoteEmbedder(emb)
        )
    return bundle
