"""Seeded synthetic corpora for tests, demos and trend checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import special_ortho_group


def planted_clusters(n: int, n_clusters: int, dim: int, seed: int, spread: float = 0.05,
                     separation: float = 1.0):
    """``n`` points around ``n_clusters`` centers drawn on a sphere of radius ``separation``.

    Returns ``(points, labels, centers)``.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_clusters, dim))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.integers(0, n_clusters, size=n)
    points = centers[labels] + spread * rng.standard_normal((n, dim))
    return points, labels, centers


@dataclass
class GaussianMixture:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    factors: np.ndarray  # (K, D, D): sample = mean + factor @ standard normal

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for k in range(len(self.weights)):
            m = comp == k
            out[m] = self.means[k] + eps[m] @ self.factors[k].T
        return out


def heavy_tailed_mixture(dim: int = 8, seed: int = 0) -> GaussianMixture:
    """Three anisotropic Gaussians with unequal weights; the rarest one is 4x wider.

    Per-axis scales are log-uniform on [0.3, 3] under a random rotation, so
    the mixture has a heavy tail and an uneven angular density.
    """
    rng = np.random.default_rng(seed)
    weights = np.array([0.6, 0.3, 0.1])
    widths = (1.0, 1.0, 4.0)
    means = rng.normal(0.0, 0.5, size=(3, dim))
    factors = np.empty((3, dim, dim))
    for k in range(3):
        rot = special_ortho_group.rvs(dim, random_state=rng)
        scales = np.exp(rng.uniform(np.log(0.3), np.log(3.0), size=dim)) * widths[k]
        factors[k] = rot * scales[None, :]
    return GaussianMixture(weights, means, factors)


def _smooth_field(rng, h: int, w: int, power: float) -> np.ndarray:
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fx**2 + fy**2)
    f[0, 0] = 1.0
    spec = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f**power
    spec[0, 0] = 0.0
    field = np.fft.irfft2(spec, s=(h, w))
    return field / (np.abs(field).max() + 1e-12)


def synthetic_image(height: int, width: int, seed: int) -> np.ndarray:
    """Procedural RGB image in [0, 1]: 1/f background, flat shapes with hard edges, mild grain."""
    rng = np.random.default_rng(seed)
    mix = rng.uniform(0.2, 1.0, size=(3, 3))
    base = np.stack([_smooth_field(rng, height, width, 1.8) for _ in range(3)], axis=-1)
    img = 0.5 + 0.35 * base @ mix / mix.sum(axis=0)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(6, 14)):
        color = rng.uniform(0.0, 1.0, size=3)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        if rng.random() < 0.5:
            r = rng.uniform(0.05, 0.2) * min(height, width)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
        else:
            hh, ww = rng.uniform(0.05, 0.3, size=2) * (height, width)
            mask = (np.abs(yy - cy) < hh) & (np.abs(xx - cx) < ww)
        shade = 1.0 + 0.3 * _smooth_field(rng, height, width, 2.5)[..., None]
        img = np.where(mask[..., None], color * shade, img)
    img += 0.01 * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def synthetic_images(count: int, height: int, width: int, seed: int) -> list[np.ndarray]:
    return [synthetic_image(height, width, seed * 1000 + i) for i in range(count)]
