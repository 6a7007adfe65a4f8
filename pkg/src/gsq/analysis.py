"""Distance statistics for Gaussian codebooks and the vocabulary/latent-dim scaling law."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateDim, DegenerateFit, InsufficientData


@dataclass
class DistanceStatsReport:
    """Sample moments of squared distances next to their closed-form predictions.

    ``predicted_*`` are the published closed forms (2n sigma^2, 4n sigma^4;
    2, 4/(n-1) once normalized). ``exact_*`` are the moments of the actual
    distributions: 2 sigma^2 chi^2_n has variance 8n sigma^4, and the
    cosine between independent uniform directions has variance 1/n.
    """

    n: int
    sigma: float
    normalized: bool
    samples: int
    sample_mean: float
    sample_var: float
    se_mean: float
    se_var: float
    predicted_mean: float
    predicted_var: float
    exact_mean: float
    exact_var: float

    def z_scores(self, against: str = "predicted") -> tuple[float, float]:
        mean = getattr(self, f"{against}_mean")
        var = getattr(self, f"{against}_var")
        return (self.sample_mean - mean) / self.se_mean, (self.sample_var - var) / self.se_var

    def as_dict(self) -> dict:
        return asdict(self)


def predicted_moments(n: int, sigma: float, normalized: bool) -> tuple[float, float]:
    if normalized:
        if n < 2:
            raise DegenerateDim("the normalized variance formula needs n >= 2")
        return 2.0, 4.0 / (n - 1)
    return 2.0 * n * sigma**2, 4.0 * n * sigma**4


def exact_moments(n: int, sigma: float, normalized: bool) -> tuple[float, float]:
    if normalized:
        return 2.0, 4.0 / n
    return 2.0 * n * sigma**2, 8.0 * n * sigma**4


def sample_distances(n: int, sigma: float, normalized: bool, samples: int, seed: int,
                     chunk: int = 1 << 16) -> np.ndarray:
    """Squared distances between ``samples`` independent Gaussian pairs."""
    rng = np.random.default_rng(seed)
    out = np.empty(samples)
    for lo in range(0, samples, chunk):
        m = min(chunk, samples - lo)
        z = rng.normal(0.0, sigma, size=(m, n))
        c = rng.normal(0.0, sigma, size=(m, n))
        if normalized:
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            c /= np.linalg.norm(c, axis=1, keepdims=True)
        out[lo:lo + m] = np.sum((z - c) ** 2, axis=1)
    return out


def distance_stats(n: int, sigma: float = 1.0, normalized: bool = False,
                   samples: int = 1_000_000, seed: int = 0) -> DistanceStatsReport:
    if n < 1:
        raise ValueError("n must be positive")
    if normalized and n < 2:
        raise DegenerateDim("normalized statistics are undefined for n = 1")
    if samples < 1000:
        raise ValueError("at least 1000 samples are required")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = sample_distances(n, sigma, normalized, samples, seed)
    mean = float(d.mean())
    centered = d - mean
    var = float(np.mean(centered**2))
    m4 = float(np.mean(centered**4))
    pm, pv = predicted_moments(n, sigma, normalized)
    em, ev = exact_moments(n, sigma, normalized)
    return DistanceStatsReport(
        n=n, sigma=sigma, normalized=normalized, samples=samples,
        sample_mean=mean, sample_var=var,
        se_mean=math.sqrt(var / samples), se_var=math.sqrt(max(m4 - var * var, 0.0) / samples),
        predicted_mean=pm, predicted_var=pv, exact_mean=em, exact_var=ev,
    )


@dataclass
class ScalingFit:
    """score = B / (log_base V)^alpha + c_dim * D^beta"""

    B: float
    alpha: float
    c_dim: float
    beta: float
    residual_rms: float = 0.0
    log_base: float = 2.0

    def as_dict(self) -> dict:
        return asdict(self)


# published fit; its log base is unstated, so it defaults to 2 here like every other fit
PUBLISHED_SCALING_FIT = ScalingFit(B=411.63, alpha=2.8375, c_dim=0.1601, beta=0.1956)


def scaling_eval(fit: ScalingFit, V, D):
    V = np.asarray(V, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if np.any(V < 2) or np.any(D < 1):
        raise ValueError("scaling law needs V >= 2 and D >= 1")
    logv = np.log(V) / math.log(fit.log_base)
    out = fit.B / logv**fit.alpha + fit.c_dim * D**fit.beta
    return float(out) if out.ndim == 0 else out


def _linear_part(u, v, y):
    # least-squares (B, c) for y ~ B*u + c*v
    a11, a12, a22 = u @ u, u @ v, v @ v
    b1, b2 = u @ y, v @ y
    det = a11 * a22 - a12 * a12
    if not np.isfinite(det) or abs(det) <= 1e-300 * max(a11 * a22, 1e-300):
        return None
    return (a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det


class _Objective:
    def __init__(self, logv, D, y, weights):
        self.logv, self.D, self.y, self.w = logv, D, y, weights

    def solve(self, alpha, beta):
        u = self.logv ** (-alpha)
        v = self.D**beta
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            return math.inf, None
        w = self.w
        lin = _linear_part(w * u, w * v, w * self.y)
        if lin is None:
            return math.inf, None
        r = w * (self.y - lin[0] * u - lin[1] * v)
        return float(np.mean(r * r)), lin

    def __call__(self, alpha, beta):
        return self.solve(alpha, beta)[0]


def _hooke_jeeves(f, x0, step=0.25, tol=1e-12, max_evals=40000):
    """Coordinate exploration plus pattern moves; returns (x, fx, evals)."""
    x = np.array(x0, dtype=np.float64)
    fx = f(*x)
    h = np.full_like(x, step)
    evals = 1

    def explore(base, fbase):
        nonlocal evals
        p, fp = base.copy(), fbase
        for i in range(p.size):
            for sgn in (1.0, -1.0):
                trial = p.copy()
                trial[i] += sgn * h[i]
                ft = f(*trial)
                evals += 1
                if ft < fp:
                    p, fp = trial, ft
                    break
        return p, fp

    while h.max() > tol and evals < max_evals:
        p, fp = explore(x, fx)
        if fp >= fx:
            h *= 0.5
            continue
        # keep moving along the successful direction while it pays off
        while evals < max_evals:
            jump = p + (p - x)
            x, fx = p, fp
            fj = f(*jump)
            evals += 1
            q, fq = explore(jump, fj)
            if fq >= fx:
                break
            p, fp = q, fq
    return x, fx, evals


ALPHA_GRID = (0.5, 1.0, 2.0, 3.0, 4.0, 6.0)
BETA_GRID = (-0.5, 0.1, 0.25, 0.5, 1.0)


def fit_scaling(observations, log_base: float = 2.0, relative: bool = True) -> ScalingFit:
    """Least-squares fit of the scaling law to ``(V, D, score)`` triples.

    For fixed exponents the two coefficients are linear and solved exactly;
    the exponents are found by Hooke-Jeeves search from every point of a
    fixed grid, keeping the best result. ``relative`` weights each residual
    by 1/score, which suits multiplicative noise; ``residual_rms`` is then a
    relative error.
    """
    obs = np.asarray(list(observations), dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 4 or obs.shape[1] != 3:
        raise InsufficientData("need at least 4 (V, D, score) observations")
    V, D, y = obs[:, 0], obs[:, 1], obs[:, 2]
    if np.unique(V).size < 2 or np.unique(D).size < 2:
        raise InsufficientData("observations must span at least 2 distinct V and 2 distinct D")
    if np.any(V < 2) or np.any(D < 1):
        raise InsufficientData("observations need V >= 2 and D >= 1")
    if relative and np.any(y <= 0):
        raise InsufficientData("relative fitting needs positive scores")
    weights = 1.0 / y if relative else np.ones_like(y)
    f = _Objective(np.log(V) / math.log(log_base), D, y, weights)

    starts = [(a, b, f(a, b)) for a, b in itertools.product(ALPHA_GRID, BETA_GRID)]
    start_best = min(s[2] for s in starts)
    best = None
    for a, b, f0 in starts:
        if not math.isfinite(f0):
            continue
        x, fx, _ = _hooke_jeeves(f, (a, b))
        if best is None or fx < best[1]:
            best = (x, fx)
    if best is None or not math.isfinite(best[1]):
        raise DegenerateFit("no starting point produced a finite residual")
    if best[1] >= start_best and start_best > 0.0:
        raise DegenerateFit("local search did not improve on any starting point")
    (alpha, beta), mse = best
    _, (B, c) = f.solve(alpha, beta)
    return ScalingFit(float(B), float(alpha), float(c), float(beta), math.sqrt(mse), log_base)
