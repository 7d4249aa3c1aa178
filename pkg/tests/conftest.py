import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.optimize import brentq

from freeflow.measure import SemicircleParams, semicircle_cdf, semicircle_to_grid

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@lru_cache(maxsize=None)
def sc(m=0.0, v=1.0, n=512):
    return semicircle_to_grid(SemicircleParams(m, v), n)


@pytest.fixture
def sc1():
    return sc(0.0, 1.0)


def sc_quantile(m, v, u):
    """Semicircle quantile by root finding on the analytic CDF."""
    p = SemicircleParams(m, v)
    r = 2.0 * math.sqrt(v)
    return np.array([brentq(lambda x: semicircle_cdf(p, x) - ui, m - r, m + r, xtol=1e-14) for ui in u])


def w2_to_semicircle_bruteforce(positions, m, v, sub=64):
    """W2 between equal-weight particles and SC(m, v) by midpoint sampling of
    the quantile coupling (``sub`` levels per particle)."""
    x = np.sort(np.asarray(positions, dtype=float))
    n = x.size
    u = (np.arange(n * sub) + 0.5) / (n * sub)
    q = sc_quantile(m, v, u)
    return float(np.sqrt(np.mean((np.repeat(x, sub) - q) ** 2)))


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """``record(number, title, ok, detail)`` stores one verdict line per criterion."""
    def record(number, title, ok, detail=""):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>4g}. {title}: {detail}")
