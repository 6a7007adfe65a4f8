import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def oracle_unit(v):
    """Sphere projection along the last axis, written independently of the library."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] == 1:
        return np.where(v > 0, 1.0, -1.0)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def brute_force_indices(x, tables, G, shared, l2):
    """Exhaustive search: direct squared differences to every codeword, first minimum wins."""
    x = np.asarray(x, dtype=np.float64)
    N, D = x.shape
    d = D // G
    out = np.zeros((N, G), dtype=np.int64)
    for g in range(G):
        table = np.asarray(tables[0 if shared else g], dtype=np.float64)
        if l2:
            table = oracle_unit(table)
        for i in range(N):
            q = x[i, g * d:(g + 1) * d]
            if l2:
                q = oracle_unit(q)
            dist = ((table - q) ** 2).sum(axis=1)
            out[i, g] = int(np.flatnonzero(dist == dist.min())[0])
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records one acceptance line, then asserts ``ok``."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n, ok, detail):
        lines[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        ok, detail = lines[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
