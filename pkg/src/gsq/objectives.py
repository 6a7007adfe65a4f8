"""Codebook entropy objective and adversarial/discriminator losses over logits.

All losses are plain batch means. Softplus terms go through
``np.logaddexp(0, x)`` so logits of magnitude 1e4 stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .quantizer import Codebook, QuantizerConfig, _as_batch, lookup_tables, split_groups

LOSS_WEIGHTS = {"reconstruction": 1.0, "commitment": 0.25, "adversarial": 0.1}


@dataclass
class LogitBatch:
    real: np.ndarray
    fake: np.ndarray

    def __post_init__(self):
        self.real = np.atleast_1d(np.asarray(self.real, dtype=np.float64))
        self.fake = np.atleast_1d(np.asarray(self.fake, dtype=np.float64))
        if not (np.all(np.isfinite(self.real)) and np.all(np.isfinite(self.fake))):
            raise ValueError("logits must be finite")


def _softplus(x):
    return np.logaddexp(0.0, x)


def entropy_terms(distances, temperature: float = 1.0):
    """Entropy objective from a (M, V) matrix of squared distances.

    Returns ``(per_sample_entropy, codebook_entropy, loss)`` with
    ``loss = per_sample - codebook``. Natural log.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = -np.asarray(distances, dtype=np.float64) / temperature
    logq = logits - logsumexp(logits, axis=1, keepdims=True)
    q = np.exp(logq)
    per_sample = float(np.mean(-np.sum(np.where(q > 0, q * logq, 0.0), axis=1)))
    avg = q.mean(axis=0)
    nz = avg[avg > 0]
    codebook = float(-np.sum(nz * np.log(nz)))
    return per_sample, codebook, per_sample - codebook


def entropy_loss(batch, codebook: Codebook, config: QuantizerConfig, temperature: float = 1.0,
                 block: int = 4096):
    """Entropy objective with soft assignments from lookup-space distances.

    Each (row, group) slice contributes one soft assignment over its table.
    Terms are computed per table and averaged across tables.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    x = _as_batch(batch, config.latent_dim)
    if x.shape[0] == 0:
        return 0.0, 0.0, 0.0
    tables = lookup_tables(codebook, config)
    z = split_groups(x, config)
    if config.shared_codebook:
        per_table = [(0, z.reshape(-1, config.group_dim))]
    else:
        per_table = [(g, z[:, g]) for g in range(config.groups)]
    pers, cbs = [], []
    for t, q in per_table:
        c = tables[t]
        c_sq = np.sum(c * c, axis=1)
        ent_sum, q_sum = 0.0, np.zeros(c.shape[0])
        for lo in range(0, q.shape[0], block):
            part = q[lo:lo + block]
            d2 = np.maximum(np.sum(part * part, axis=1)[:, None] + c_sq[None, :] - 2.0 * part @ c.T, 0.0)
            logits = -d2 / temperature
            logp = logits - logsumexp(logits, axis=1, keepdims=True)
            p = np.exp(logp)
            ent_sum += float(-np.sum(np.where(p > 0, p * logp, 0.0)))
            q_sum += p.sum(axis=0)
        avg = q_sum / q.shape[0]
        nz = avg[avg > 0]
        pers.append(ent_sum / q.shape[0])
        cbs.append(float(-np.sum(nz * np.log(nz))))
    per, cb = float(np.mean(pers)), float(np.mean(cbs))
    return per, cb, per - cb


def vanilla_discr_loss(logits: LogitBatch) -> float:
    return 0.5 * (float(np.mean(_softplus(-logits.real))) + float(np.mean(_softplus(logits.fake))))


def vanilla_gen_loss(logits: LogitBatch) -> float:
    return float(np.mean(_softplus(-logits.fake)))


def hinge_gen_loss(logits: LogitBatch) -> float:
    return -float(np.mean(logits.fake))


def hinge_discr_loss(logits: LogitBatch) -> float:
    real = np.mean(np.maximum(0.0, 1.0 - logits.real))
    fake = np.mean(np.maximum(0.0, 1.0 + logits.fake))
    return 0.5 * (float(real) + float(fake))


def _bce_with_logits(x: np.ndarray, target: float) -> np.ndarray:
    # ReLU(x) - x*t + log(1 + exp(-|x|))
    return np.maximum(x, 0.0) - x * target + np.log1p(np.exp(-np.abs(x)))


def non_saturate_gen_loss(logits: LogitBatch) -> float:
    return float(np.mean(_bce_with_logits(logits.fake, 1.0)))


def non_saturate_discr_loss(logits: LogitBatch) -> float:
    real = np.mean(_bce_with_logits(logits.real, 1.0))
    fake = np.mean(_bce_with_logits(logits.fake, 0.0))
    return 0.5 * (float(real) + float(fake))


def weighted_total(parts: dict, weights: dict | None = None) -> float:
    """Sum of ``weight * part``; parts without a weight contribute nothing."""
    weights = LOSS_WEIGHTS if weights is None else weights
    return math.fsum(weights.get(k, 0.0) * float(v) for k, v in parts.items())
