"""cookgen: frame curation, object grounding, mask inpainting orchestration and metrics."""

__version__ = "0.1.0"
