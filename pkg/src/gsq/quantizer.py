"""Grouped spherical quantization: config, codebooks, lookup and dequantization.

A latent row of dim ``D`` is split into ``G`` contiguous slices of dim
``d = D / G``. Each slice is matched against its own table (or a single shared
table) by squared Euclidean distance, optionally after projecting both the
slice and the codewords onto the unit sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVector, DimensionMismatch, IndexOutOfRange, InvalidConfig

NORM_EPS = 1e-12
INIT_KINDS = ("spherical_gaussian", "uniform_interval", "explicit")

# rows * groups * vocab per distance block
_BLOCK_ELEMS = 1 << 22


@dataclass(frozen=True)
class QuantizerConfig:
    """Full parameterization of a grouped quantizer.

    ``l2_lookup=None`` resolves to ``group_dim > 2``.
    """

    latent_dim: int
    groups: int
    vocab: int
    shared_codebook: bool = False
    l2_lookup: bool | None = None
    finite_levels: tuple[int, ...] | None = None
    fixed_codebook: bool = False

    def __post_init__(self):
        for name in ("latent_dim", "groups", "vocab"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value!r}")
        if self.vocab < 2:
            raise InvalidConfig(f"vocab must be >= 2, got {self.vocab}")
        if self.latent_dim % self.groups:
            raise InvalidConfig(
                f"groups={self.groups} does not divide latent_dim={self.latent_dim}"
            )
        if self.finite_levels is not None:
            levels = tuple(int(v) for v in self.finite_levels)
            if len(levels) != self.groups:
                raise InvalidConfig(
                    f"finite_levels has {len(levels)} entries, expected one per group ({self.groups})"
                )
            if min(levels) < 2:
                raise InvalidConfig("every finite level count must be >= 2")
            if self.group_dim != 1:
                raise InvalidConfig("finite levels require group_dim == 1")
            object.__setattr__(self, "finite_levels", levels)
        if self.l2_lookup is None:
            object.__setattr__(self, "l2_lookup", self.group_dim > 2)
        object.__setattr__(self, "latent_dim", int(self.latent_dim))
        object.__setattr__(self, "groups", int(self.groups))
        object.__setattr__(self, "vocab", int(self.vocab))

    @property
    def group_dim(self) -> int:
        return self.latent_dim // self.groups

    @property
    def n_tables(self) -> int:
        if self.finite_levels is not None:
            return 0
        return 1 if self.shared_codebook else self.groups

    @property
    def is_finite(self) -> bool:
        return self.finite_levels is not None

    def table_for_group(self, g: int) -> int:
        return 0 if self.shared_codebook else g

    def as_dict(self) -> dict:
        return {
            "D": self.latent_dim,
            "G": self.groups,
            "d": self.group_dim,
            "V": self.vocab,
            "shared": int(self.shared_codebook),
            "l2": int(self.l2_lookup),
            "fixed": int(self.fixed_codebook),
            "levels": "" if self.finite_levels is None else ":".join(map(str, self.finite_levels)),
        }


@dataclass(frozen=True)
class CompressionGeometry:
    image_height: int
    image_width: int
    downsample: int

    def __post_init__(self):
        f = self.downsample
        if f < 1 or self.image_height % f or self.image_width % f:
            raise InvalidConfig(
                f"image {self.image_height}x{self.image_width} not divisible by f={f}"
            )

    @property
    def latent_height(self) -> int:
        return self.image_height // self.downsample

    @property
    def latent_width(self) -> int:
        return self.image_width // self.downsample

    def compression_ratio(self, latent_dim: int) -> float:
        return latent_dim / (3 * self.downsample**2)


@dataclass
class Codebook:
    """``tables`` has shape (n_tables, V, d); finite-level configs carry zero tables."""

    tables: np.ndarray
    init_kind: str = "explicit"

    def __post_init__(self):
        self.tables = np.asarray(self.tables)
        if self.tables.ndim != 3:
            raise DimensionMismatch(f"codebook tables must be 3-D, got shape {self.tables.shape}")
        if self.init_kind not in INIT_KINDS:
            raise InvalidConfig(f"unknown init kind {self.init_kind!r}")
        if not np.all(np.isfinite(self.tables)):
            raise InvalidConfig("codebook contains non-finite entries")

    @property
    def vocab(self) -> int:
        return self.tables.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.tables.copy(), self.init_kind)


@dataclass
class CodeAssignment:
    indices: np.ndarray  # (N, G) int64
    dequantized: np.ndarray  # (N, D)
    distances: np.ndarray  # (N, G), squared, in lookup space
    queries: np.ndarray | None = field(default=None, repr=False)  # (N, G, d) lookup-space slices

    @property
    def count(self) -> int:
        return self.indices.shape[0]


def l2_normalize(v):
    """Project ``v`` onto the unit sphere along its last axis.

    For a last axis of length 1 the sphere is {-1, +1}; zero maps to -1.
    """
    x = np.asarray(v, dtype=np.float64)
    scalar_input = x.ndim == 0
    if scalar_input:
        x = x.reshape(1)
    if x.shape[-1] == 1:
        out = np.where(x > 0, 1.0, -1.0)
    else:
        norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
        if np.any(norms <= NORM_EPS):
            raise DegenerateVector("cannot l2-normalize a vector with near-zero norm")
        out = x / norms
    return out[0] if scalar_input else out


def init_codebook(config: QuantizerConfig, seed: int, kind: str = "spherical_gaussian") -> Codebook:
    """Draw an initial codebook for ``config``.

    ``spherical_gaussian`` samples standard normals and projects them to the
    unit sphere; ``uniform_interval`` draws every component from
    U(-1/V, 1/V).
    """
    V, d, T = config.vocab, config.group_dim, config.n_tables
    if config.is_finite:
        return Codebook(np.zeros((0, V, 1)), "explicit")
    rng = np.random.default_rng(seed)
    if kind == "spherical_gaussian":
        raw = rng.standard_normal((T, V, d))
        if d > 1:
            norms = np.linalg.norm(raw, axis=-1)
            bad = norms <= NORM_EPS
            while np.any(bad):
                raw[bad] = rng.standard_normal((int(bad.sum()), d))
                norms = np.linalg.norm(raw, axis=-1)
                bad = norms <= NORM_EPS
        tables = l2_normalize(raw)
    elif kind == "uniform_interval":
        tables = rng.uniform(-1.0 / V, 1.0 / V, size=(T, V, d))
    else:
        raise InvalidConfig(f"cannot sample codebook of kind {kind!r}")
    return Codebook(tables, kind)


def _check_codebook(codebook: Codebook, config: QuantizerConfig):
    expected = (config.n_tables, config.vocab, config.group_dim)
    if not config.is_finite and codebook.tables.shape != expected:
        raise DimensionMismatch(
            f"codebook shape {codebook.tables.shape} does not match config {expected}"
        )


def _as_batch(batch, dim: int) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1 and dim == x.shape[0]:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionMismatch(f"expected a batch of shape (N, {dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")
    return x


def lookup_tables(codebook: Codebook, config: QuantizerConfig) -> np.ndarray:
    """Codewords as seen by the lookup: float64, normalized iff ``l2_lookup``."""
    tables = codebook.tables.astype(np.float64)
    if config.l2_lookup and tables.size:
        tables = l2_normalize(tables)
    return tables


def split_groups(batch: np.ndarray, config: QuantizerConfig) -> np.ndarray:
    """(N, D) -> (N, G, d) contiguous slices; applies the sphere projection iff ``l2_lookup``."""
    z = batch.reshape(batch.shape[0], config.groups, config.group_dim)
    if config.l2_lookup:
        z = l2_normalize(z)
    return z


def _nearest_scalar(q: np.ndarray, table: np.ndarray) -> np.ndarray:
    # exact for 1-D tables: compare against midpoints instead of rounded distances
    order = np.argsort(table, kind="stable")
    vals = table[order]
    keep = np.ones(vals.shape[0], dtype=bool)
    keep[1:] = vals[1:] != vals[:-1]
    vals, order = vals[keep], order[keep]
    if vals.shape[0] == 1:
        return np.full(q.shape, order[0], dtype=np.int64)
    mids = vals[:-1] / 2 + vals[1:] / 2
    k = np.searchsorted(mids, q, side="left")
    idx = order[k]
    tie = np.zeros(q.shape, dtype=bool)
    inner = k < mids.shape[0]
    tie[inner] = q[inner] == mids[k[inner]]
    if np.any(tie):
        idx[tie] = np.minimum(order[k[tie]], order[k[tie] + 1])
    return idx.astype(np.int64)


def _nearest_block(q: np.ndarray, table: np.ndarray, table_sq: np.ndarray) -> np.ndarray:
    """Argmin over ``table`` (V, d) for queries ``q`` (M, d), ties to lowest index."""
    scores = q @ (-2.0 * table.T)
    scores += table_sq
    best = np.argmin(scores, axis=1)
    floor = np.take_along_axis(scores, best[:, None], axis=1)
    # rows whose runner-up is within rounding noise get re-resolved by direct differences
    tol = 1e-9 * (np.sum(q * q, axis=1, keepdims=True) + table_sq.max() + 1.0)
    limit = floor + tol
    close = np.count_nonzero(scores <= limit, axis=1) > 1
    for r in np.flatnonzero(close):
        cand = np.flatnonzero(scores[r] <= limit[r])
        direct = np.sum((table[cand] - q[r]) ** 2, axis=1)
        best[r] = cand[np.argmin(direct)]
    return best


def nearest_codes(z: np.ndarray, tables: np.ndarray, config: QuantizerConfig) -> np.ndarray:
    """Per-group argmin indices for lookup-space slices ``z`` of shape (N, G, d)."""
    N, G, d = z.shape
    V = tables.shape[1]
    out = np.empty((N, G), dtype=np.int64)
    if d == 1:
        for g in range(G):
            out[:, g] = _nearest_scalar(z[:, g, 0], tables[config.table_for_group(g), :, 0])
        return out
    sq = np.sum(tables * tables, axis=-1)
    step = max(1, _BLOCK_ELEMS // V)
    if config.shared_codebook:
        flat = z.reshape(N * G, d)
        res = np.empty(N * G, dtype=np.int64)
        for lo in range(0, N * G, step):
            res[lo:lo + step] = _nearest_block(flat[lo:lo + step], tables[0], sq[0])
        return res.reshape(N, G)
    for g in range(G):
        for lo in range(0, N, step):
            out[lo:lo + step, g] = _nearest_block(z[lo:lo + step, g], tables[g], sq[g])
    return out


def quantize(batch, codebook: Codebook | None, config: QuantizerConfig) -> CodeAssignment:
    """Assign every group slice of every row to its nearest codeword."""
    x = _as_batch(batch, config.latent_dim)
    if config.is_finite:
        from .zoo import FiniteLevelRule, fsq_quantize

        return fsq_quantize(x, FiniteLevelRule(config.finite_levels))
    _check_codebook(codebook, config)
    tables = lookup_tables(codebook, config)
    z = split_groups(x, config)
    indices = nearest_codes(z, tables, config)
    chosen = _gather(tables, indices, config)
    distances = np.sum((z - chosen) ** 2, axis=-1)
    return CodeAssignment(indices, chosen.reshape(x.shape[0], config.latent_dim), distances, z)


def _gather(tables: np.ndarray, indices: np.ndarray, config: QuantizerConfig) -> np.ndarray:
    if config.shared_codebook:
        return tables[0][indices]
    return tables[np.arange(config.groups)[None, :], indices]


def dequantize(indices, codebook: Codebook | None, config: QuantizerConfig) -> np.ndarray:
    """Map (N, G) code indices back to (N, D) vectors."""
    idx = np.asarray(indices)
    if idx.ndim == 1 and config.groups == 1:
        idx = idx[:, None]
    if idx.ndim != 2 or idx.shape[1] != config.groups:
        raise DimensionMismatch(f"expected indices of shape (N, {config.groups}), got {idx.shape}")
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        raise DimensionMismatch("indices must be integers")
    idx = idx.astype(np.int64)
    if config.is_finite:
        from .zoo import FiniteLevelRule

        return FiniteLevelRule(config.finite_levels).grid_values(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= config.vocab):
        raise IndexOutOfRange(f"code indices must lie in [0, {config.vocab})")
    _check_codebook(codebook, config)
    tables = lookup_tables(codebook, config)
    return _gather(tables, idx, config).reshape(idx.shape[0], config.latent_dim)


def effective_vocab_bits(config: QuantizerConfig) -> float:
    """log2 of the number of distinct codes a row can take."""
    if config.is_finite:
        return float(sum(math.log2(v) for v in config.finite_levels))
    return config.groups * math.log2(config.vocab)
