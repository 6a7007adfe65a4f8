"""Codebook health (usage, perplexity) and reconstruction quality (MSE, PSNR, SSIM)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class UsageHistogram:
    """Assignment counts per group: ``counts[g, j]`` rows sent to code j by group g.

    ``shared`` says whether all groups index one table, in which case usage is
    measured on the pooled counts.
    """

    counts: np.ndarray  # (G, V) int64
    shared: bool = True
    rows: int = 0

    @classmethod
    def empty(cls, config) -> "UsageHistogram":
        return cls(np.zeros((config.groups, config.vocab), dtype=np.int64), _pooled(config), 0)

    @classmethod
    def from_indices(cls, indices, config) -> "UsageHistogram":
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, config.groups)
        counts = np.stack(
            [np.bincount(idx[:, g], minlength=config.vocab) for g in range(config.groups)]
        )
        return cls(counts.astype(np.int64), _pooled(config), idx.shape[0])

    @property
    def vocab(self) -> int:
        return self.counts.shape[1]

    @property
    def groups(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pooled(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def merge(self, other: "UsageHistogram") -> "UsageHistogram":
        if self.counts.shape != other.counts.shape:
            raise DimensionMismatch("cannot merge histograms of different shapes")
        return UsageHistogram(self.counts + other.counts, self.shared, self.rows + other.rows)


def _pooled(config) -> bool:
    return bool(config.shared_codebook or config.groups == 1)


def usage_percent(h: UsageHistogram) -> float:
    """Share of codebook entries hit at least once, in percent."""
    if h.shared:
        return 100.0 * np.count_nonzero(h.pooled()) / h.vocab
    return 100.0 * np.count_nonzero(h.counts) / h.counts.size


def _entropy(counts: np.ndarray) -> float:
    c = counts[counts > 0].astype(np.float64)
    n = c.sum()
    if n == 0:
        return 0.0
    p = c / n
    return -math.fsum(p * np.log(p))


def _perplexity(counts: np.ndarray) -> float:
    c = counts[counts > 0]
    if c.size == 0:
        return 1.0
    if np.all(c == c[0]):
        # uniform over k codes; exp(log k) need not round back to k
        return float(c.size)
    return math.exp(_entropy(c))


def perplexity(h: UsageHistogram) -> float:
    """exp of the entropy of the pooled usage distribution; 1 for an empty histogram."""
    return _perplexity(h.pooled())


def perplexity_per_group_mean(h: UsageHistogram) -> float:
    return float(np.mean([_perplexity(row) for row in h.counts]))


def _pair(a, b):
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def mse(a, b) -> float:
    x, y = _pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value**2 / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_plane(x: np.ndarray, y: np.ndarray, w: np.ndarray, c1: float, c2: float) -> float:
    k = w.shape[0]

    def filt(img):
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, (k, k)), w)

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2.0 * (mx * my) + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean structural similarity over all valid 11x11 Gaussian windows.

    Accepts (H, W) or (H, W, C) arrays; channels are scored separately and
    averaged.
    """
    x, y = _pair(a, b)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.ndim != 3:
        raise DimensionMismatch(f"ssim expects (H, W) or (H, W, C) images, got {x.shape}")
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise DimensionMismatch(f"images must be at least {SSIM_WINDOW} pixels on each side")
    w = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    return float(np.mean([_ssim_plane(x[..., c], y[..., c], w, c1, c2) for c in range(x.shape[2])]))
