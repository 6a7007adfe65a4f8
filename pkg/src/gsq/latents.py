"""Fixed linear maps from raw patch vectors to latent vectors of a chosen dimension.

Patches stand in for encoder latents. When the requested latent dim is
smaller than the raw patch dim, a PCA projection fitted on the corpus plays
the encoder; decoding applies its transpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .persistence import read_tensor, write_tensor


@dataclass
class LinearProjection:
    mean: np.ndarray  # (raw,)
    components: np.ndarray  # (dim, raw), orthonormal rows

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    @property
    def raw_dim(self) -> int:
        return self.components.shape[1]

    @classmethod
    def identity(cls, raw_dim: int) -> "LinearProjection":
        return cls(np.zeros(raw_dim), np.eye(raw_dim))

    @classmethod
    def fit(cls, vectors: np.ndarray, dim: int) -> "LinearProjection":
        x = np.asarray(vectors, dtype=np.float64)
        if dim > x.shape[1]:
            raise DimensionMismatch(f"cannot project {x.shape[1]}-dim vectors up to {dim} dims")
        if dim == x.shape[1]:
            return cls.identity(dim)
        mean = x.mean(axis=0)
        cov = np.cov(x - mean, rowvar=False)
        vals, vecs = np.linalg.eigh(cov)
        comps = vecs[:, np.argsort(vals)[::-1][:dim]].T
        # pin the eigenvector sign so fits are reproducible
        pivot = np.argmax(np.abs(comps), axis=1)
        comps *= np.sign(comps[np.arange(dim), pivot])[:, None]
        return cls(mean, comps)

    def encode(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def decode(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.components + self.mean

    def save(self, path) -> None:
        write_tensor(path, np.vstack([self.mean[None, :], self.components]))

    @classmethod
    def load(cls, path) -> "LinearProjection":
        arr = read_tensor(path).astype(np.float64)
        if arr.ndim != 2 or arr.shape[0] < 2:
            raise DimensionMismatch(f"{path}: not a projection tensor")
        return cls(arr[0], arr[1:])
