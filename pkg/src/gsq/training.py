"""Gradient-free codebook learning with exponential-moving-average cluster statistics."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, FixedCodebook, InvalidConfig
from .metrics import UsageHistogram
from .quantizer import (
    NORM_EPS,
    CodeAssignment,
    Codebook,
    QuantizerConfig,
    init_codebook,
    quantize,
    split_groups,
)

DEFAULT_DECAY = 0.999
DEFAULT_SMOOTHING = 1e-5


@dataclass
class EmaState:
    cluster_size: np.ndarray  # (T, V)
    cluster_sum: np.ndarray  # (T, V, d)
    decay: float = DEFAULT_DECAY
    smoothing: float = DEFAULT_SMOOTHING
    steps: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise InvalidConfig(f"decay must lie in (0, 1), got {self.decay}")
        if self.smoothing <= 0.0:
            raise InvalidConfig("smoothing must be positive")

    @classmethod
    def zeros(cls, config: QuantizerConfig, decay=DEFAULT_DECAY, smoothing=DEFAULT_SMOOTHING):
        T, V, d = max(config.n_tables, 1), config.vocab, config.group_dim
        return cls(np.zeros((T, V)), np.zeros((T, V, d)), decay, smoothing)

    def copy(self) -> "EmaState":
        return replace(self, cluster_size=self.cluster_size.copy(), cluster_sum=self.cluster_sum.copy())


@dataclass
class TrainReport:
    steps: int
    mean_quantization_error: float
    usage: UsageHistogram
    commitment: float
    rows: int = 0
    extra: dict = field(default_factory=dict)


def _lookup_inputs(x: np.ndarray, config: QuantizerConfig) -> np.ndarray:
    if config.is_finite:
        return expit(x)
    return split_groups(x, config).reshape(x.shape[0], config.latent_dim)


def commitment_loss(batch, assignment: CodeAssignment, config: QuantizerConfig | None = None) -> float:
    """Mean squared distance between each row and its reconstruction.

    Measured in lookup space: pass ``config`` to project ``batch`` here,
    otherwise the projected slices stored on ``assignment`` are used.
    """
    x = np.asarray(batch, dtype=np.float64)
    deq = assignment.dequantized
    if x.shape != deq.shape:
        raise DimensionMismatch(f"batch shape {x.shape} != reconstruction shape {deq.shape}")
    if x.shape[0] == 0:
        return 0.0
    if config is not None:
        ref = _lookup_inputs(x, config)
    elif assignment.queries is not None:
        ref = assignment.queries.reshape(x.shape)
    else:
        ref = x
    return float(np.mean(np.sum((ref - deq) ** 2, axis=1)))


def _accumulate(assign: CodeAssignment, config: QuantizerConfig):
    T, V, d = config.n_tables, config.vocab, config.group_dim
    counts = np.zeros((T, V))
    sums = np.zeros((T, V, d))
    z, idx = assign.queries, assign.indices
    if config.shared_codebook:
        groups = [(0, idx.reshape(-1), z.reshape(-1, d))]
    else:
        groups = [(g, idx[:, g], z[:, g]) for g in range(config.groups)]
    for t, ix, q in groups:
        counts[t] += np.bincount(ix, minlength=V)
        for k in range(d):
            sums[t, :, k] += np.bincount(ix, weights=q[:, k], minlength=V)
    return counts, sums


def ema_step(
    batch,
    codebook: Codebook,
    state: EmaState,
    config: QuantizerConfig,
    revive_below: float | None = None,
    rng: np.random.Generator | None = None,
):
    """One EMA update; returns ``(codebook, state, report)`` without mutating the inputs.

    Codes that have never been assigned keep their initial value. With
    ``revive_below`` set, codes whose cluster size drops under it are
    re-seeded from random rows of the batch.
    """
    if config.fixed_codebook or config.is_finite:
        raise FixedCodebook("this configuration has a fixed codebook and cannot be trained")
    x = np.asarray(batch, dtype=np.float64).reshape(-1, config.latent_dim)
    new_state = state.copy()
    new_state.steps += 1
    if x.shape[0] == 0:
        usage = UsageHistogram.empty(config)
        return codebook.copy(), new_state, TrainReport(new_state.steps, 0.0, usage, 0.0)

    assign = quantize(x, codebook, config)
    counts, sums = _accumulate(assign, config)
    lam = state.decay
    new_state.cluster_size = lam * state.cluster_size + (1.0 - lam) * counts
    new_state.cluster_sum = lam * state.cluster_sum + (1.0 - lam) * sums

    tables = codebook.tables.astype(np.float64)
    live = new_state.cluster_size > 0
    updated = new_state.cluster_sum / (new_state.cluster_size + state.smoothing)[..., None]
    if config.l2_lookup:
        norms = np.sqrt(np.sum(updated * updated, axis=-1))
        # a vanishing mean carries no direction; keep the previous codeword there
        live &= norms > NORM_EPS
        if config.group_dim == 1:
            updated = np.where(updated > 0, 1.0, -1.0)
        else:
            updated /= np.where(live, norms, 1.0)[..., None]
    tables = np.where(live[..., None], updated, tables)

    if revive_below is not None:
        dead = new_state.cluster_size < revive_below
        if np.any(dead):
            rng = rng if rng is not None else np.random.default_rng(new_state.steps)
            pool = assign.queries.reshape(-1, config.group_dim)
            picks = rng.integers(0, pool.shape[0], size=int(dead.sum()))
            tables[dead] = pool[picks]
            new_state.cluster_size[dead] = 0.0
            new_state.cluster_sum[dead] = 0.0

    error = float(np.mean(assign.distances.sum(axis=1)))
    report = TrainReport(
        steps=new_state.steps,
        mean_quantization_error=error,
        usage=UsageHistogram.from_indices(assign.indices, config),
        commitment=commitment_loss(x, assign),
        rows=x.shape[0],
    )
    return Codebook(tables, codebook.init_kind), new_state, report


def _batches(corpus, batch_size: int, rng: np.random.Generator):
    if isinstance(corpus, np.ndarray):
        n = corpus.shape[0]
        if n == 0:
            raise InvalidConfig("corpus is empty")
        while True:
            order = rng.permutation(n)
            for lo in range(0, n, batch_size):
                yield corpus[order[lo:lo + batch_size]]
    else:
        for b in corpus:
            yield np.asarray(b, dtype=np.float64)


def _merge_window(reports: list[TrainReport], config: QuantizerConfig) -> TrainReport:
    rows = sum(r.rows for r in reports)
    usage = UsageHistogram.empty(config)
    for r in reports:
        usage = usage.merge(r.usage)
    if rows:
        err = sum(r.mean_quantization_error * r.rows for r in reports) / rows
        com = sum(r.commitment * r.rows for r in reports) / rows
    else:
        err = com = 0.0
    return TrainReport(reports[-1].steps, err, usage, com, rows)


def train(
    corpus: np.ndarray | Iterable[np.ndarray],
    config: QuantizerConfig,
    seed: int,
    steps: int,
    *,
    batch_size: int = 256,
    decay: float = DEFAULT_DECAY,
    smoothing: float = DEFAULT_SMOOTHING,
    init: str = "spherical_gaussian",
    codebook: Codebook | None = None,
    report_every: int = 0,
    on_report: Callable[[TrainReport], None] | None = None,
    revive_below: float | None = None,
):
    """Run ``steps`` EMA updates over ``corpus`` and return ``(codebook, report)``.

    An array corpus is visited in seeded random epochs of ``batch_size`` rows;
    any other iterable is consumed in order, one batch per step. Every
    ``report_every`` steps a report covering that window is passed to
    ``on_report``. The returned report covers the last window (the whole run
    when ``report_every`` is 0).
    """
    if steps < 1:
        raise InvalidConfig("steps must be >= 1")
    if config.fixed_codebook or config.is_finite:
        raise FixedCodebook("this configuration has a fixed codebook and cannot be trained")
    rng = np.random.default_rng(seed)
    cb = codebook.copy() if codebook is not None else init_codebook(config, seed, init)
    state = EmaState.zeros(config, decay, smoothing)
    window: list[TrainReport] = []
    last = None
    source = _batches(corpus, batch_size, rng)
    for _ in range(steps):
        try:
            batch = next(source)
        except StopIteration:
            raise InvalidConfig(f"corpus ran out after {state.steps} of {steps} steps") from None
        cb, state, rep = ema_step(batch, cb, state, config, revive_below, rng)
        window.append(rep)
        if report_every and state.steps % report_every == 0:
            last = _merge_window(window, config)
            if on_report is not None:
                on_report(last)
            window = []
    if window:
        last = _merge_window(window, config)
        if on_report is not None and report_every:
            on_report(last)
    return cb, last


def evaluate(corpus, codebook: Codebook, config: QuantizerConfig, block: int = 8192) -> TrainReport:
    """Full pass over ``corpus``: usage histogram plus mean squared lookup error."""
    x = np.asarray(corpus, dtype=np.float64).reshape(-1, config.latent_dim)
    reports = []
    for lo in range(0, x.shape[0], block):
        part = x[lo:lo + block]
        a = quantize(part, codebook, config)
        reports.append(
            TrainReport(
                0,
                float(np.mean(a.distances.sum(axis=1))),
                UsageHistogram.from_indices(a.indices, config),
                commitment_loss(part, a),
                part.shape[0],
            )
        )
    if not reports:
        return TrainReport(0, 0.0, UsageHistogram.empty(config), 0.0, 0)
    out = _merge_window(reports, config)
    out.steps = 0
    return out
