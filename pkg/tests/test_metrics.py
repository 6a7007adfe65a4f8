import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from gsq import DimensionMismatch, QuantizerConfig, UsageHistogram, mse, perplexity, psnr, ssim, usage_percent
from gsq.metrics import perplexity_per_group_mean


def hist(counts, shared=True):
    c = np.atleast_2d(np.asarray(counts, dtype=np.int64))
    return UsageHistogram(c, shared, int(c[0].sum()))


# ---------------------------------------------------------------- usage / perplexity


def test_usage_all_and_one():
    assert usage_percent(hist([3, 1, 4, 1])) == 100.0
    assert usage_percent(hist([0, 0, 7, 0])) == 25.0


def test_usage_matches_direct_count(rng):
    counts = rng.integers(0, 3, size=97)
    hit = sum(1 for c in counts if c > 0)
    assert usage_percent(hist(counts)) == pytest.approx(100.0 * hit / 97, abs=1e-12)


def test_usage_unshared_counts_every_table():
    h = UsageHistogram(np.array([[1, 0, 0, 0], [1, 1, 1, 1]]), shared=False)
    assert usage_percent(h) == 62.5
    assert usage_percent(UsageHistogram(h.counts, shared=True)) == 100.0


def test_perplexity_uniform_and_single():
    assert perplexity(hist(np.full(8192, 5))) == 8192.0
    assert perplexity(hist([0, 0, 9, 0])) == 1.0
    assert perplexity(UsageHistogram(np.zeros((1, 4), dtype=np.int64))) == 1.0


def test_perplexity_formula(rng):
    counts = rng.integers(0, 50, size=30)
    p = counts[counts > 0] / counts.sum()
    expected = math.exp(-sum(v * math.log(v) for v in p))
    assert perplexity(hist(counts)) == pytest.approx(expected, rel=1e-12)
    assert 1.0 <= perplexity(hist(counts)) <= 30


def test_perplexity_pooled_and_per_group():
    h = UsageHistogram(np.array([[4, 0], [0, 4]]), shared=False)
    assert perplexity(h) == 2.0
    assert perplexity_per_group_mean(h) == 1.0


def test_histogram_from_indices_and_merge():
    cfg = QuantizerConfig(4, 2, 3, shared_codebook=True)
    a = UsageHistogram.from_indices([[0, 1], [1, 1]], cfg)
    b = UsageHistogram.from_indices([[2, 2]], cfg)
    m = a.merge(b)
    assert m.counts.tolist() == [[1, 1, 1], [0, 2, 1]]
    assert m.rows == 3 and m.total == 6 and m.shared
    assert b.merge(a).counts.tolist() == m.counts.tolist()
    with pytest.raises(DimensionMismatch):
        a.merge(UsageHistogram(np.zeros((2, 4), dtype=np.int64)))


def test_usage_permutation_invariant(rng):
    counts = rng.integers(0, 3, size=50)
    perm = rng.permutation(50)
    assert usage_percent(hist(counts)) == usage_percent(hist(counts[perm]))
    assert perplexity(hist(counts)) == pytest.approx(perplexity(hist(counts[perm])), rel=1e-14)


# ---------------------------------------------------------------- mse / psnr


def test_mse():
    a = np.arange(12.0).reshape(3, 4)
    assert mse(a, a) == 0.0
    assert mse(a, a + 1) == 1.0
    with pytest.raises(DimensionMismatch):
        mse(a, a.T)


def test_mse_loop_oracle(rng):
    a, b = rng.random((5, 6)), rng.random((5, 6))
    total = 0.0
    for i in range(5):
        for j in range(6):
            total += (a[i, j] - b[i, j]) ** 2
    assert mse(a, b) == pytest.approx(total / 30, rel=1e-14)


def test_psnr():
    a = np.zeros((4, 4))
    assert psnr(a, a + 1, 255.0) == pytest.approx(48.1308036, abs=1e-6)
    assert psnr(a, a + 1, 255.0) == pytest.approx(20 * math.log10(255), abs=1e-12)
    assert psnr(a, a) == math.inf


def test_psnr_formula_and_monotone(rng):
    a = rng.random((8, 8))
    prev = math.inf
    for s in (0.01, 0.05, 0.1, 0.3):
        b = a + s * rng.standard_normal((8, 8))
        e = np.mean((a - b) ** 2)
        value = psnr(a, b, 1.0)
        assert value == pytest.approx(10 * math.log10(1.0 / e), abs=1e-12)
        assert value < prev
        prev = value


# ---------------------------------------------------------------- ssim


def reference_ssim(x, y, data_range=1.0):
    """Loop over every 11x11 window with explicit Gaussian weights."""
    r = np.arange(11) - 5.0
    g = np.exp(-r**2 / 4.5)
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_ssim_identical():
    a = np.random.default_rng(0).random((16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_anticorrelated_binary():
    a = (np.random.default_rng(1).random((24, 24)) > 0.5).astype(float)
    assert ssim(a, 1 - a) < 0


def test_ssim_matches_window_loop(rng):
    a = rng.random((17, 19))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(reference_ssim(a, b), abs=1e-10)


def test_ssim_matches_skimage_gaussian_mode(rng):
    a = rng.random((32, 30, 3))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(
        a, b, data_range=1.0, channel_axis=2, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
    )
    assert ssim(a, b) == pytest.approx(ref, abs=1e-8)


def test_ssim_symmetric(rng):
    a, b = rng.random((20, 20)), rng.random((20, 20))
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12


def test_ssim_too_small():
    with pytest.raises(DimensionMismatch):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
