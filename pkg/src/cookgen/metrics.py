"""Evaluation metrics: embedding similarities, masked and relative variants,
plus the standard FID / PSNR / SSIM trio, and table-style reporting.

Similarity scores are reported on a x100 scale to match common result
tables; raw cosine values ride along in the JSON output. High input-target
similarity is the norm in egocentric footage (the camera barely moves), so
the relative-drop metric normalizes the generated frame's similarity against
the ground truth's, and the masked variant restricts comparison to the
edited region.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.linalg
from skimage.metrics import structural_similarity

from .backends.base import EmbeddingBackend
from .errors import (
    DimensionMismatch,
    EmptyInput,
    EmptyMask,
    ZeroReferenceSimilarity,
)

logger = logging.getLogger(__name__)

# Table column order with the direction arrows used in result tables.
TABLE_COLUMNS = (
    ("clip", "CLIP ↑"),
    ("m_clip", "M-CLIP ↑"),
    ("d_clip", "D-CLIP ↓"),
    ("fid", "FID ↓"),
    ("psnr", "PSNR ↑"),
    ("ssim", "SSIM ↑"),
)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def clip_score(a: np.ndarray, b: np.ndarray, embedder: EmbeddingBackend) -> float:
    """100 x cosine similarity between the two images' embeddings."""
    return 100.0 * cosine(embedder.embed(a), embedder.embed(b))


def mask_crop_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def m_clip(
    a: np.ndarray,
    b: np.ndarray,
    mask_union: np.ndarray,
    embedder: EmbeddingBackend,
    crop: bool = True,
    allow_fallback: bool = True,
) -> float:
    """Similarity restricted to the edited region.

    Both images are cropped to the tight bounding rectangle of the mask
    union before scoring (embedding models behave poorly on mostly-black
    inputs, so cropping beats zeroing). With crop disabled, out-of-mask
    pixels are blacked out instead. An empty mask falls through to the
    whole-frame score, flagged, unless fallback is disabled.
    """
    mask_union = np.asarray(mask_union, dtype=bool)
    if not mask_union.any():
        if not allow_fallback:
            raise EmptyMask("mask union is empty")
        logger.warning("empty mask union: falling back to whole-frame similarity")
        return clip_score(a, b, embedder)
    if crop:
        x0, y0, x1, y1 = mask_crop_box(mask_union)
        return clip_score(a[y0:y1, x0:x1], b[y0:y1, x0:x1], embedder)
    keep = mask_union[..., None]
    return clip_score(
        np.where(keep, a, 0).astype(np.uint8),
        np.where(keep, b, 0).astype(np.uint8),
        embedder,
    )


def d_clip_from_cosines(cos_gt: float, cos_hat: float) -> float:
    """Relative similarity drop, as a percentage of the reference similarity."""
    if abs(cos_gt) < 1e-12:
        raise ZeroReferenceSimilarity("reference similarity is zero")
    return 100.0 * (cos_gt - cos_hat) / cos_gt


def d_clip(
    f_in: np.ndarray,
    f_out_gt: np.ndarray,
    f_out_hat: np.ndarray,
    embedder: EmbeddingBackend,
) -> float:
    """Drop of generated-frame similarity relative to ground-truth similarity.

    Positive when the generated frame drifted further from the input than
    the ground truth did; negative when it hugs the input more closely.
    """
    e_in = embedder.embed(f_in)
    cos_gt = cosine(e_in, embedder.embed(f_out_gt))
    cos_hat = cosine(e_in, embedder.embed(f_out_hat))
    return d_clip_from_cosines(cos_gt, cos_hat)


def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"psnr inputs differ in shape: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity on a x100 scale.

    Standard constants (k1=0.01, k2=0.03, 8-bit range) over an 11x11
    Gaussian window with sigma 1.5.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    value = structural_similarity(
        a,
        b,
        win_size=SSIM_WINDOW,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        data_range=255,
        channel_axis=2 if a.ndim == 3 else None,
    )
    return 100.0 * float(value)


def fid_from_features(
    feats_a: np.ndarray, feats_b: np.ndarray, eps: float = 1e-6
) -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with sample
    covariances (ddof=1). A failed or non-finite matrix square root triggers
    diagonal epsilon regularization, flagged.
    """
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    if feats_a.ndim != 2 or feats_b.ndim != 2 or feats_a.shape[1] != feats_b.shape[1]:
        raise DimensionMismatch("feature sets must be 2-D with a common dimension")
    if len(feats_a) < 2 or len(feats_b) < 2:
        raise EmptyInput("fid needs at least two samples per set")

    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    sigma_a = np.cov(feats_a, rowvar=False)
    sigma_b = np.cov(feats_b, rowvar=False)
    sigma_a = np.atleast_2d(sigma_a)
    sigma_b = np.atleast_2d(sigma_b)

    diff = mu_a - mu_b
    covmean, _ = scipy.linalg.sqrtm(sigma_a @ sigma_b, disp=False)
    if not np.isfinite(covmean).all():
        logger.warning("singular covariance product: regularizing with eps=%g", eps)
        offset = np.eye(sigma_a.shape[0]) * eps
        covmean, _ = scipy.linalg.sqrtm((sigma_a + offset) @ (sigma_b + offset), disp=False)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    value = float(diff @ diff + np.trace(sigma_a + sigma_b - 2.0 * covmean))
    return max(value, 0.0)


def fid(
    images_a: Sequence[np.ndarray],
    images_b: Sequence[np.ndarray],
    embedder: EmbeddingBackend,
    eps: float = 1e-6,
) -> float:
    """FID over image sets using the embedding backend as feature extractor."""
    feats_a = np.stack([embedder.embed(img) for img in images_a])
    feats_b = np.stack([embedder.embed(img) for img in images_b])
    return fid_from_features(feats_a, feats_b, eps=eps)


@dataclass
class PairScore:
    clip: float
    m_clip: float
    d_clip: float
    psnr: float
    ssim: float
    triplet_id: str | None = None

    def to_row(self) -> dict[str, Any]:
        return {
            "triplet_id": self.triplet_id,
            "clip": self.clip,
            "m_clip": self.m_clip,
            "d_clip": self.d_clip,
            "psnr": self.psnr,
            "ssim": self.ssim,
        }


def score_pair(
    f_in: np.ndarray,
    f_out_gt: np.ndarray,
    f_out_hat: np.ndarray,
    mask_union: np.ndarray,
    embedder: EmbeddingBackend,
    mclip_crop: bool = True,
    triplet_id: str | None = None,
) -> PairScore:
    """All per-pair metrics for one generated frame against its ground truth."""
    return PairScore(
        clip=clip_score(f_out_gt, f_out_hat, embedder),
        m_clip=m_clip(f_out_gt, f_out_hat, mask_union, embedder, crop=mclip_crop),
        d_clip=d_clip(f_in, f_out_gt, f_out_hat, embedder),
        psnr=psnr(f_out_gt, f_out_hat),
        ssim=ssim(f_out_gt, f_out_hat),
        triplet_id=triplet_id,
    )


@dataclass
class MetricReport:
    dataset_tag: str
    target: str
    method_tag: str
    aggregates: dict[str, float]
    fid: float
    n_pairs: int
    raw: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        metrics = {k: self.aggregates.get(k) for k, _ in TABLE_COLUMNS if k != "fid"}
        metrics["fid"] = self.fid
        return {
            "dataset": self.dataset_tag,
            "target": self.target,
            "method": self.method_tag,
            "metrics": metrics,
            "n_pairs": self.n_pairs,
            "raw": dict(self.raw),
        }


def report(
    pairs: Sequence[PairScore],
    fid_value: float,
    dataset_tag: str,
    target: str,
    method_tag: str = "cookgen",
) -> MetricReport:
    """Aggregate per-pair scores into one report row."""
    if not pairs:
        raise EmptyInput("cannot build a report from zero pairs")
    aggregates = {
        "clip": float(np.mean([p.clip for p in pairs])),
        "m_clip": float(np.mean([p.m_clip for p in pairs])),
        "d_clip": float(np.mean([p.d_clip for p in pairs])),
        "psnr": float(np.mean([p.psnr for p in pairs])),
        "ssim": float(np.mean([p.ssim for p in pairs])),
    }
    raw = {
        "clip_cosine": aggregates["clip"] / 100.0,
        "m_clip_cosine": aggregates["m_clip"] / 100.0,
        "d_clip_fraction": aggregates["d_clip"] / 100.0,
    }
    return MetricReport(
        dataset_tag=dataset_tag,
        target=target,
        method_tag=method_tag,
        aggregates=aggregates,
        fid=float(fid_value),
        n_pairs=len(pairs),
        raw=raw,
    )


def render_table(reports: Sequence[MetricReport]) -> str:
    """Fixed-width text table, one row per report, table-style column order."""
    headers = ["Dataset", "Target", "Method"] + [label for _, label in TABLE_COLUMNS]
    rows = []
    for rep in reports:
        values = dict(rep.aggregates)
        values["fid"] = rep.fid
        rows.append(
            [rep.dataset_tag, rep.target, rep.method_tag]
            + [f"{values[key]:.2f}" for key, _ in TABLE_COLUMNS]
        )
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"
