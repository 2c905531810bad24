"""Shared fixtures and deterministic test stubs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from cookgen.backends.base import Backends, DetectionResult
from cookgen.backends.mocks import MockDetector, MockEmbedder, MockVlm
from cookgen.errors import BackendUnavailable
from cookgen.imageio import image_digest, save_image
from cookgen.ingest import ActionAnnotation, ActionTriplet, SelectionStrategy

MINI_DIR = Path(__file__).parent / "fixtures" / "mini"
GOLDEN_DIR = Path(__file__).parent / "fixtures" / "golden"


def rand_image(seed: int, h: int = 48, w: int = 64) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (h, w, 3), dtype=np.uint8)


class StubDetector:
    """Returns canned detections keyed by frame content digest."""

    def __init__(self, by_digest=None, default=()):
        self.by_digest = by_digest or {}
        self.default = list(default)
        self.seen_digests: list[str] = []

    def detect_segment(self, frame, labels, return_masks=False):
        digest = image_digest(frame)
        self.seen_digests.append(digest)
        dets = self.by_digest.get(digest, self.default)
        return [dataclasses.replace(d) for d in dets if d.label in labels]


class StubEmbedder:
    """Maps images to fixed vectors by content digest."""

    def __init__(self, by_digest, default=None):
        self.by_digest = {k: np.asarray(v, dtype=np.float64) for k, v in by_digest.items()}
        self.default = None if default is None else np.asarray(default, dtype=np.float64)

    def embed(self, image):
        vec = self.by_digest.get(image_digest(image), self.default)
        if vec is None:
            raise KeyError("no stub embedding for image")
        return vec / np.linalg.norm(vec)


class FailingBackend:
    """Raises BackendUnavailable from every entry point."""

    def chat(self, messages):
        raise BackendUnavailable("stub backend down")

    def detect_segment(self, frame, labels, return_masks=False):
        raise BackendUnavailable("stub backend down")

    def inpaint(self, frame, mask, prompt, seed):
        raise BackendUnavailable("stub backend down")

    def embed(self, image):
        raise BackendUnavailable("stub backend down")


def make_triplet(action="stir soup", t_start=1.0, t_end=3.0, video_id="vid") -> ActionTriplet:
    ann = ActionAnnotation(video_id, action, t_start, t_end)
    return ActionTriplet(
        ann,
        t_initial=t_start,
        t_action=(t_start + t_end) / 2,
        t_final=0.1 * t_start + 0.9 * t_end,
        selection_strategy=SelectionStrategy.PAPER_DEFAULT,
    )


def make_extracted_triplet(tmp_path: Path, seeds=(1, 2, 3), **kwargs) -> ActionTriplet:
    """Triplet with three distinct frames written to disk."""
    triplet = make_triplet(**kwargs)
    paths = {}
    for kind, seed in zip(("initial", "action", "final"), seeds):
        path = tmp_path / f"{triplet.triplet_id}_{kind}.png"
        save_image(path, rand_image(seed))
        paths[kind] = str(path)
    triplet.frame_paths = paths
    return triplet


def detection(label, score, bbox=(5, 5, 20, 20), mask=False, shape=(48, 64)):
    pixel_mask = None
    if mask:
        pixel_mask = np.zeros(shape, dtype=bool)
        x0, y0, x1, y1 = bbox
        pixel_mask[y0:y1, x0:x1] = True
    return DetectionResult(label=label, score=score, bbox=bbox, pixel_mask=pixel_mask)


def tree_digests(root: Path, exclude_dirs=("audit",)) -> dict[str, str]:
    """Logical digests of an artifact tree.

    PNGs are digested by decoded pixel content (stable across encoder
    versions); everything else by raw bytes.
    """
    from PIL import Image

    digests = {}
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(root).as_posix()
        if any(part in exclude_dirs for part in path.relative_to(root).parts):
            continue
        if path.suffix == ".png":
            with Image.open(path) as img:
                arr = np.asarray(img.convert("RGBA"))
            h = hashlib.sha256()
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
            digests[rel] = h.hexdigest()
        else:
            digests[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
    return digests


@pytest.fixture
def mini_dir() -> Path:
    return MINI_DIR


@pytest.fixture
def mock_backends(mini_dir) -> Backends:
    return Backends(
        vlm=MockVlm(mini_dir / "backends" / "vlm.json"),
        detector=MockDetector(mini_dir / "backends" / "detector.json"),
        embedder=MockEmbedder(),
    )


def run_cli(*args) -> int:
    from cookgen.cli import main

    return main([str(a) for a in args])


def run_mini_pipeline(out_dir: Path, mini: Path, workers: int = 1) -> None:
    """Drive every stage of the bundled fixture through the CLI in-process."""
    cfg = mini / "config.yaml"
    steps = [
        ("curate", "--dataset", "custom", "--annotations", mini / "annotations.jsonl",
         "--videos", mini / "videos", "--out", out_dir / "manifest.jsonl"),
        ("filter", "--manifest", out_dir / "manifest.jsonl", "--out", out_dir / "kept.jsonl"),
        ("ground", "--manifest", out_dir / "kept.jsonl", "--out", out_dir / "masks"),
        ("generate", "--manifest", out_dir / "kept.jsonl", "--masks", out_dir / "masks",
         "--target", "both", "--out", out_dir / "gen"),
        ("evaluate", "--generated", out_dir / "gen", "--gt", out_dir / "kept.jsonl",
         "--masks", out_dir / "masks", "--out", out_dir / "report.json",
         "--table", out_dir / "report.txt"),
        ("score-curation", "--auto", out_dir / "kept.jsonl",
         "--manual", mini / "bench.jsonl", "--out", out_dir / "curation.json"),
        ("finetune-prep", "--manifest", out_dir / "kept.jsonl", "--masks", out_dir / "masks",
         "--target", "action", "--ratio", "0.8", "--seed", "1",
         "--out", out_dir / "job_action.json"),
    ]
    for step in steps:
        rc = run_cli("--config", cfg, "--workers", workers, *step)
        assert rc == 0, f"stage {step[0]} exited {rc}"


def load_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
