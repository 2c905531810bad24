import logging
import math

import numpy as np
import pytest

from cookgen.backends.mocks import MockEmbedder
from cookgen.errors import (
    DimensionMismatch,
    EmptyInput,
    EmptyMask,
    ZeroReferenceSimilarity,
)
from cookgen.imageio import image_digest
from cookgen.metrics import (
    PairScore,
    clip_score,
    d_clip,
    d_clip_from_cosines,
    fid,
    fid_from_features,
    m_clip,
    psnr,
    render_table,
    report,
    score_pair,
    ssim,
)

from conftest import StubEmbedder, rand_image


def angle_embedder(images_and_angles):
    """Stub embedder mapping each image to a unit vector at a given angle."""
    return StubEmbedder(
        {
            image_digest(img): [math.cos(theta), math.sin(theta)]
            for img, theta in images_and_angles
        }
    )


class TestClipScore:
    def test_self_similarity_is_100(self):
        img = rand_image(1)
        assert clip_score(img, img, MockEmbedder()) == pytest.approx(100.0, abs=1e-9)

    def test_orthogonal_embeddings_score_zero(self):
        a, b = rand_image(1), rand_image(2)
        embedder = angle_embedder([(a, 0.0), (b, math.pi / 2)])
        assert clip_score(a, b, embedder) == pytest.approx(0.0, abs=1e-9)


class TestMClip:
    def test_identical_crops_score_100(self):
        a = rand_image(1)
        b = a.copy()
        b[:, 40:] = 0  # differ outside the mask only
        mask = np.zeros((48, 64), dtype=bool)
        mask[8:24, 8:24] = True
        assert m_clip(a, b, mask, MockEmbedder()) == pytest.approx(100.0, abs=1e-9)

    def test_full_frame_mask_equals_clip_score_exactly(self):
        a, b = rand_image(1), rand_image(2)
        mask = np.ones((48, 64), dtype=bool)
        embedder = MockEmbedder()
        assert m_clip(a, b, mask, embedder) == clip_score(a, b, embedder)

    def test_local_identity_beats_global_score(self):
        a = rand_image(3)
        b = a.copy()
        b[:, 48:] = 255 - b[:, 48:]  # heavy change outside the mask
        mask = np.zeros((48, 64), dtype=bool)
        mask[8:40, 4:40] = True
        embedder = MockEmbedder()
        masked = m_clip(a, b, mask, embedder)
        whole = clip_score(a, b, embedder)
        assert masked == pytest.approx(100.0, abs=1e-9)
        assert whole < masked

    def test_empty_mask_falls_back_flagged(self, caplog):
        a, b = rand_image(1), rand_image(2)
        mask = np.zeros((48, 64), dtype=bool)
        embedder = MockEmbedder()
        with caplog.at_level(logging.WARNING):
            value = m_clip(a, b, mask, embedder)
        assert value == clip_score(a, b, embedder)
        assert any("empty mask" in r.message for r in caplog.records)

    def test_empty_mask_errors_when_fallback_disabled(self):
        with pytest.raises(EmptyMask):
            m_clip(rand_image(1), rand_image(2), np.zeros((48, 64), bool),
                   MockEmbedder(), allow_fallback=False)

    def test_blackout_variant(self):
        a = rand_image(4)
        b = a.copy()
        b[:, 40:] = 0
        mask = np.zeros((48, 64), dtype=bool)
        mask[8:24, 8:24] = True
        assert m_clip(a, b, mask, MockEmbedder(), crop=False) == pytest.approx(100.0, abs=1e-9)


class TestDClip:
    def test_exact_value_from_cosines(self):
        assert d_clip_from_cosines(0.9, 0.72) == pytest.approx(20.0, abs=1e-9)

    def test_zero_when_cosines_coincide(self):
        assert d_clip_from_cosines(0.77, 0.77) == 0.0

    def test_sign_flips_when_generated_exceeds_reference(self):
        assert d_clip_from_cosines(0.8, 0.9) < 0.0

    def test_zero_reference_raises(self):
        with pytest.raises(ZeroReferenceSimilarity):
            d_clip_from_cosines(0.0, 0.5)

    def test_image_level_matches_hand_computation(self):
        f_in, gt, hat = rand_image(1), rand_image(2), rand_image(3)
        embedder = angle_embedder(
            [(f_in, 0.0), (gt, math.acos(0.9)), (hat, math.acos(0.72))]
        )
        assert d_clip(f_in, gt, hat, embedder) == pytest.approx(20.0, abs=1e-6)

    def test_generated_equal_to_ground_truth_scores_zero(self):
        f_in, gt = rand_image(1), rand_image(2)
        assert d_clip(f_in, gt, gt.copy(), MockEmbedder()) == 0.0


class TestPsnr:
    def test_identical_images_infinite(self):
        img = rand_image(1)
        assert psnr(img, img) == math.inf

    def test_black_vs_white_is_zero_db(self):
        black = np.zeros((8, 8, 3), dtype=np.uint8)
        white = np.full((8, 8, 3), 255, dtype=np.uint8)
        assert psnr(black, white) == pytest.approx(0.0, abs=1e-12)

    def test_single_pixel_difference_on_2x2(self):
        a = np.full((2, 2), 128, dtype=np.uint8)
        b = a.copy()
        b[0, 0] += 1
        expected = 10 * math.log10(255**2 / 0.25)
        assert psnr(a, b) == pytest.approx(expected, abs=1e-9)

    def test_symmetric(self):
        a, b = rand_image(1), rand_image(2)
        assert psnr(a, b) == psnr(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            psnr(rand_image(1), rand_image(1, h=10, w=10))


class TestSsim:
    def test_identical_images_score_100(self):
        img = rand_image(1)
        assert ssim(img, img) == pytest.approx(100.0, abs=1e-9)

    def test_constant_shift_matches_luminance_closed_form(self):
        c1, c2 = 100.0, 150.0
        a = np.full((32, 32), c1, dtype=np.uint8)
        b = np.full((32, 32), c2, dtype=np.uint8)
        k1 = 0.01
        c1_const = (k1 * 255) ** 2
        expected = 100.0 * (2 * c1 * c2 + c1_const) / (c1**2 + c2**2 + c1_const)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-6)

    def test_symmetric(self):
        a, b = rand_image(1), rand_image(2)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_independent_noise_near_zero(self):
        rng = np.random.default_rng(0)
        a = rng.integers(0, 256, (128, 128), dtype=np.uint8)
        b = rng.integers(0, 256, (128, 128), dtype=np.uint8)
        assert abs(ssim(a, b)) < 5.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            ssim(rand_image(1), rand_image(1, h=10, w=10))


def trace_sqrt_product(sigma_a, sigma_b):
    """Oracle for Tr((S_a S_b)^(1/2)) via eigenvalues of the product."""
    eigvals = np.linalg.eigvals(sigma_a @ sigma_b)
    eigvals = np.clip(eigvals.real, 0.0, None)
    return float(np.sum(np.sqrt(eigvals)))


class TestFid:
    def test_self_distance_below_tolerance(self):
        rng = np.random.default_rng(1)
        feats = rng.standard_normal((50, 8))
        assert fid_from_features(feats, feats) < 1e-6

    def test_mean_shift_with_identical_covariance(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((200, 4))
        shift = np.array([1.0, -2.0, 0.5, 3.0])
        value = fid_from_features(x, x + shift)
        assert value == pytest.approx(float(shift @ shift), abs=1e-8)

    def test_matches_moment_oracle_on_2d_features(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((40, 2)) @ np.array([[2.0, 0.3], [0.1, 0.5]]) + [1.0, -1.0]
        y = rng.standard_normal((60, 2)) @ np.array([[1.0, -0.2], [0.4, 1.5]]) + [-0.5, 2.0]
        mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
        n, m = len(x), len(y)
        sigma_x = (x - mu_x).T @ (x - mu_x) / (n - 1)
        sigma_y = (y - mu_y).T @ (y - mu_y) / (m - 1)
        diff = mu_x - mu_y
        expected = float(
            diff @ diff
            + np.trace(sigma_x) + np.trace(sigma_y)
            - 2.0 * trace_sqrt_product(sigma_x, sigma_y)
        )
        assert fid_from_features(x, y) == pytest.approx(expected, abs=1e-9)

    def test_rank_deficient_sets_stay_finite(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 64))
        y = rng.standard_normal((3, 64))
        value = fid_from_features(x, y)
        assert math.isfinite(value) and value >= 0.0

    def test_too_few_samples(self):
        with pytest.raises(EmptyInput):
            fid_from_features(np.zeros((1, 4)), np.zeros((5, 4)))

    def test_image_level_self_fid(self):
        images = [rand_image(i) for i in range(6)]
        assert fid(images, images, MockEmbedder()) < 1e-6


def pair(clip=90.0, m=80.0, d=5.0, p=30.0, s=70.0, tid=None):
    return PairScore(clip=clip, m_clip=m, d_clip=d, psnr=p, ssim=s, triplet_id=tid)


class TestReport:
    def test_single_pair_aggregates_equal_pair(self):
        rep = report([pair()], fid_value=12.0, dataset_tag="egtea",
                     target="action", method_tag="m")
        assert rep.aggregates == {
            "clip": 90.0, "m_clip": 80.0, "d_clip": 5.0, "psnr": 30.0, "ssim": 70.0,
        }
        assert rep.fid == 12.0
        assert rep.n_pairs == 1

    def test_two_pairs_arithmetic_means(self):
        rep = report([pair(clip=80.0), pair(clip=100.0)], 0.0, "egtea", "action")
        assert rep.aggregates["clip"] == pytest.approx(90.0)

    def test_means_permutation_invariant(self):
        pairs = [pair(clip=float(c), d=float(c) / 10) for c in (70, 80, 95)]
        a = report(pairs, 1.0, "d", "action")
        b = report(list(reversed(pairs)), 1.0, "d", "action")
        assert a.aggregates == b.aggregates

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            report([], 0.0, "d", "action")

    def test_n_pairs_counted(self):
        rep = report([pair() for _ in range(650)], 1.0, "egtea", "action")
        assert rep.n_pairs == 650

    def test_table_layout(self):
        rep = report([pair()], 12.0, "egtea", "action", method_tag="cookgen")
        table = render_table([rep])
        header = table.splitlines()[0]
        assert header.index("CLIP ↑") < header.index("M-CLIP ↑")
        assert header.index("M-CLIP ↑") < header.index("D-CLIP ↓")
        assert header.index("D-CLIP ↓") < header.index("FID ↓")
        assert header.index("FID ↓") < header.index("PSNR ↑")
        assert header.index("PSNR ↑") < header.index("SSIM ↑")
        assert "egtea" in table and "cookgen" in table

    def test_json_schema(self):
        rep = report([pair()], 12.0, "egtea", "action")
        payload = rep.to_json()
        assert set(payload) == {"dataset", "target", "method", "metrics", "n_pairs", "raw"}
        assert set(payload["metrics"]) == {"clip", "m_clip", "d_clip", "fid", "psnr", "ssim"}


class TestScorePair:
    def test_smoke(self):
        f_in, gt, hat = rand_image(1), rand_image(2), rand_image(3)
        mask = np.zeros((48, 64), dtype=bool)
        mask[10:30, 10:30] = True
        score = score_pair(f_in, gt, hat, mask, MockEmbedder(), triplet_id="t1")
        assert -100.0 <= score.clip <= 100.0
        assert math.isfinite(score.ssim)
        assert score.triplet_id == "t1"
