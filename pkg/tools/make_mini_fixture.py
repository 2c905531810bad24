#!/usr/bin/env python3
"""Regenerate the bundled 5-triplet mini dataset and its backend fixtures.

Deterministic: rerunning produces the same frames, annotations, and fixture
keys. Run from the repo root:

    python3 tools/make_mini_fixture.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from cookgen.imageio import image_digest, save_image  # noqa: E402

MINI = REPO / "tests" / "fixtures" / "mini"
FPS = 10
SIZE = (48, 64)  # h, w

# object name -> (bbox (x0, y0, x1, y1), rgb)
VID_A_OBJECTS = {
    "cutting board": ((34, 28, 62, 46), (139, 90, 43)),
    "tomato": ((8, 30, 20, 42), (200, 30, 30)),
    "knife": ((24, 8, 40, 14), (160, 160, 170)),
    "hand": ((44, 6, 60, 22), (224, 172, 138)),
    "lid": ((6, 6, 16, 12), (190, 190, 200)),
    "jar": ((20, 30, 30, 44), (80, 120, 200)),
}
VID_B_OBJECTS = {
    "stove": ((30, 22, 63, 47), (60, 60, 66)),
    "pan": ((34, 26, 62, 46), (90, 90, 100)),
    "burger": ((40, 30, 56, 44), (150, 75, 40)),
    "cheese": ((6, 6, 18, 14), (240, 210, 60)),
    "hand": ((20, 16, 34, 30), (224, 172, 138)),
    "plate": ((4, 32, 18, 46), (235, 235, 235)),
    "pot": ((24, 34, 34, 44), (60, 140, 90)),
}

VIDEOS = {
    "vid_a": (50, (30, 60, 90), VID_A_OBJECTS),
    "vid_b": (80, (70, 45, 30), VID_B_OBJECTS),
}

ANNOTATIONS = [
    {"video_id": "vid_a", "action_text": "cut tomato", "t_start": 1.0, "t_end": 3.0},
    {"video_id": "vid_a", "action_text": "open jar", "t_start": 3.4, "t_end": 5.0},
    {"video_id": "vid_b", "action_text": "put cheese", "t_start": 0.5, "t_end": 2.5},
    {"video_id": "vid_b", "action_text": "wash plate", "t_start": 3.0, "t_end": 5.0},
    {"video_id": "vid_b", "action_text": "stir pot", "t_start": 5.5, "t_end": 7.5},
]

VLM_FIXTURE = {
    "cut tomato": [
        "tomato, knife, cutting board",
        "core: tomato\nlocation: cutting board\nfunctional: knife",
    ],
    "open jar": [
        "jar, lid",
        "core: jar\nlocation:\nfunctional: lid",
    ],
    "put cheese": [
        "cheese, burger, pan, stove",
        "core: cheese\nlocation: burger, pan, stove\nfunctional:",
        "burger",
    ],
    "wash plate": ["plate, sponge"],
    "stir pot": ["pot, spoon"],
}

# (video_id, frame_index) -> detection entries
DETECTIONS = {
    ("vid_a", 10): [  # cut tomato, initial
        {"label": "tomato", "score": 0.9, "mask": "bbox"},
        {"label": "cutting board", "score": 0.8},
        {"label": "knife", "score": 0.7},
        {"label": "hand", "score": 0.85},
    ],
    ("vid_a", 20): [{"label": "hand", "score": 0.9}],  # cut tomato, action
    ("vid_a", 34): [  # open jar, initial: jar falls below the cutoff
        {"label": "hand", "score": 0.6},
        {"label": "lid", "score": 0.4},
        {"label": "jar", "score": 0.25},
    ],
    ("vid_a", 42): [{"label": "hand", "score": 0.9}],  # open jar, action
    ("vid_b", 5): [  # put cheese, initial
        {"label": "cheese", "score": 0.95, "mask": "bbox"},
        {"label": "burger", "score": 0.8},
        {"label": "pan", "score": 0.7},
        {"label": "stove", "score": 0.5},
        {"label": "hand", "score": 0.9},
    ],
    ("vid_b", 15): [{"label": "hand", "score": 0.95}],  # put cheese, action
    ("vid_b", 30): [{"label": "plate", "score": 0.9}],  # wash plate, initial
    ("vid_b", 40): [],  # wash plate, action: no hands -> rejected
    ("vid_b", 55): [],  # stir pot, initial: nothing -> rejected
    ("vid_b", 65): [{"label": "hand", "score": 0.9}],  # stir pot, action
}

# benchmark rows for score-curation point at the raw video frames
BENCH = [
    ("vid_a", "cut tomato", 1.0, (10, 20, 28)),
    ("vid_a", "open jar", 3.4, (34, 42, 48)),
    ("vid_b", "put cheese", 0.5, (5, 15, 23)),
]

CONFIG_YAML = """\
detection_threshold: 0.3
similarity_threshold: 80
seed: 7
workers: 1
backends:
  vlm: {endpoint: mock, fixtures: backends/vlm.json}
  detector: {endpoint: mock, fixtures: backends/detector.json}
  inpainter: {endpoint: mock, model_tag: checkerboard}
  embedder: {endpoint: mock, embed_dim: 64, seed: 0}
"""


def render_frame(index: int, base_rgb, objects) -> np.ndarray:
    h, w = SIZE
    frame = np.zeros((h, w, 3), dtype=np.uint8)
    grad = np.linspace(0, 60, h, dtype=np.uint8)[:, None]
    for c, base in enumerate(base_rgb):
        frame[:, :, c] = base + grad
    for (x0, y0, x1, y1), color in objects.values():
        frame[y0:y1, x0:x1] = color
    # per-frame ticker block so every frame has a unique digest
    frame[0:4, 0:4] = [(index * 37) % 256, (index * 91) % 256, (index * 53) % 256]
    return frame


def main() -> None:
    frames: dict[tuple[str, int], np.ndarray] = {}
    for vid, (count, base_rgb, objects) in VIDEOS.items():
        vdir = MINI / "videos" / vid
        vdir.mkdir(parents=True, exist_ok=True)
        (vdir / "source.json").write_text(json.dumps({"fps": FPS}) + "\n")
        for i in range(count):
            frame = render_frame(i, base_rgb, objects)
            frames[(vid, i)] = frame
            save_image(vdir / f"frame_{i:06d}.png", frame)

    with (MINI / "annotations.jsonl").open("w") as f:
        for ann in ANNOTATIONS:
            f.write(json.dumps(ann, sort_keys=True) + "\n")

    backends_dir = MINI / "backends"
    backends_dir.mkdir(exist_ok=True)
    with (backends_dir / "vlm.json").open("w") as f:
        json.dump(VLM_FIXTURE, f, indent=2, sort_keys=True)
        f.write("\n")

    detector_fixture = {"frames": {}}
    for (vid, index), entries in DETECTIONS.items():
        objects = VIDEOS[vid][2]
        digest = image_digest(frames[(vid, index)])
        detector_fixture["frames"][digest] = [
            {
                "label": e["label"],
                "score": e["score"],
                "bbox": list(objects[e["label"]][0]),
                **({"mask": e["mask"]} if "mask" in e else {}),
            }
            for e in entries
        ]
    with (backends_dir / "detector.json").open("w") as f:
        json.dump(detector_fixture, f, indent=2, sort_keys=True)
        f.write("\n")

    with (MINI / "bench.jsonl").open("w") as f:
        for vid, action, t_start, indices in BENCH:
            row = {
                "video_id": vid,
                "action_text": action,
                "t_start": t_start,
                "frame_paths": {
                    kind: f"videos/{vid}/frame_{idx:06d}.png"
                    for kind, idx in zip(("initial", "action", "final"), indices)
                },
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")

    (MINI / "config.yaml").write_text(CONFIG_YAML)
    print(f"mini fixture written under {MINI}")


if __name__ == "__main__":
    main()
