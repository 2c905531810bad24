"""Optional smoke tier against real model services.

Skipped unless COOKGEN_REAL_BACKENDS=1 and the backend endpoints are
configured (COOKGEN_VLM_ENDPOINT, COOKGEN_DETECTOR_ENDPOINT,
COOKGEN_INPAINTER_ENDPOINT, COOKGEN_EMBEDDER_ENDPOINT), together with
COOKGEN_REAL_MANIFEST pointing at a curated-and-filtered manifest of at
least 50 triplets (frames extracted) and COOKGEN_REAL_WORKDIR for outputs.

This tier checks report shape and sanity bounds only. Absolute headline
numbers depend on model weights and datasets and are documented in the
README as reference values, not asserted here.
"""

import json
import os
from pathlib import Path

import pytest

pytestmark = pytest.mark.skipif(
    os.environ.get("COOKGEN_REAL_BACKENDS") != "1",
    reason="real-backend tier disabled (set COOKGEN_REAL_BACKENDS=1)",
)


@pytest.fixture(scope="module")
def real_env():
    required = [
        "COOKGEN_VLM_ENDPOINT",
        "COOKGEN_DETECTOR_ENDPOINT",
        "COOKGEN_INPAINTER_ENDPOINT",
        "COOKGEN_EMBEDDER_ENDPOINT",
        "COOKGEN_REAL_MANIFEST",
        "COOKGEN_REAL_WORKDIR",
    ]
    missing = [var for var in required if not os.environ.get(var)]
    if missing:
        pytest.skip(f"missing environment: {', '.join(missing)}")
    return {
        "manifest": Path(os.environ["COOKGEN_REAL_MANIFEST"]),
        "workdir": Path(os.environ["COOKGEN_REAL_WORKDIR"]),
    }


def test_real_backend_report_shape_and_bounds(real_env):
    from cookgen.cli import main

    manifest = real_env["manifest"]
    work = real_env["workdir"]
    work.mkdir(parents=True, exist_ok=True)

    rows = [json.loads(line) for line in manifest.read_text().splitlines() if line.strip()]
    kept = [r for r in rows if r.get("kept") is True]
    assert len(kept) >= 50, "real tier needs at least 50 kept triplets"

    for step in (
        ["ground", "--manifest", str(manifest), "--out", str(work / "masks")],
        ["generate", "--manifest", str(manifest), "--masks", str(work / "masks"),
         "--target", "both", "--out", str(work / "gen")],
        ["evaluate", "--generated", str(work / "gen"), "--gt", str(manifest),
         "--masks", str(work / "masks"), "--out", str(work / "report.json"),
         "--table", str(work / "report.txt")],
    ):
        rc = main(["--backend", "remote", *step])
        assert rc == 0, f"stage {step[0]} exited {rc}"

    reports = json.loads((work / "report.json").read_text())
    assert {r["target"] for r in reports} <= {"action", "final"}
    for rep in reports:
        metrics = rep["metrics"]
        assert set(metrics) == {"clip", "m_clip", "d_clip", "fid", "psnr", "ssim"}
        assert 40.0 <= metrics["clip"] <= 100.0
        assert metrics["d_clip"] < 50.0
        assert metrics["fid"] >= 0.0 and metrics["fid"] < float("inf")
        assert rep["n_pairs"] >= 50
