"""Hilbert transform, conjugate variable and the free entropy functionals.

All grid quadratures are carried out in index space: on a uniform grid
``x_i - x_j = (i - j) dx``, so the principal-value kernel and the
logarithmic kernel reduce to Toeplitz sums whose coefficients are cached
per cell count.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import fftconvolve

from .measure import GridMeasure, MeasureError, moment

CHI_CONSTANT = 0.75 + 0.5 * math.log(2.0 * math.pi)
GAP_CELLS = 10


@dataclass(frozen=True, eq=False)
class ConjugateField:
    """Conjugate variable sampled at the cell centers of ``grid``."""

    grid: GridMeasure
    values: np.ndarray = field(repr=False)
    gap_warning: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n_cells,):
            raise MeasureError("conjugate field must match the grid cell count")

    def pairing(self) -> float:
        """``int x Xi(x) dmu(x)``; equals 1 for any smooth law."""
        return float(np.sum(self.grid.centers * self.values * self.grid.masses))


@dataclass(frozen=True)
class FunctionalReport:
    log_energy: float
    chi: float
    fisher: float
    free_energy: float
    second_moment: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@lru_cache(maxsize=8)
def _pv_matrix(n: int) -> np.ndarray:
    """``1/(i - j)`` with a zero diagonal."""
    k = np.arange(n, dtype=float)
    col = np.zeros(n)
    col[1:] = 1.0 / k[1:]
    m = toeplitz(col, -col)
    m.setflags(write=False)
    return m


def _pv_rowsum(n: int) -> np.ndarray:
    # sum_j 1/(i-j) over j != i, i.e. H_{n-1-i} - H_i with harmonic numbers
    h = np.concatenate(([0.0], np.cumsum(1.0 / np.arange(1, n))))
    i = np.arange(n)
    return h[i] - h[n - 1 - i]


@lru_cache(maxsize=8)
def _log_kernel(n: int) -> np.ndarray:
    """Mean of ``log|m + s|`` under the triangular law of ``s`` on [-1, 1].

    This is the exact cell-pair average of ``log|x - y| - log dx`` for two
    uniform cells ``m`` apart; ``m = 0`` gives the self-energy ``-3/2``.
    """
    def phi(y):
        y = np.abs(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 0.5 * y * y * np.log(y) - 0.75 * y * y
        return np.where(y > 0, out, 0.0)

    m = np.arange(-(n - 1), n, dtype=float)
    return phi(m + 1.0) - 2.0 * phi(m) + phi(m - 1.0)


def _hilbert_at_centers(mu: GridMeasure) -> np.ndarray:
    rho = mu.density
    n = rho.size
    i = np.arange(n)
    core = _pv_matrix(n) @ rho - rho * _pv_rowsum(n)
    # the j = i term is the limit -rho'(x_i) dx of the subtracted integrand
    padded = np.concatenate(([0.0], rho, [0.0]))
    diag = -0.5 * (padded[2:] - padded[:-2])
    ends = rho * np.log((i + 0.5) / (n - i - 0.5))
    return core + diag + ends


@lru_cache(maxsize=8)
def _edge_kernel(n: int):
    """``1/(k - j - 1/2)`` for edges ``k = 0..n`` and cells ``j``, plus row sums."""
    k = np.arange(n + 1, dtype=float)[:, None]
    j = np.arange(n, dtype=float)[None, :]
    m = 1.0 / (k - j - 0.5)
    m.setflags(write=False)
    rows = m.sum(axis=1)
    rows.setflags(write=False)
    return m, rows


def hilbert_at_edges(mu: GridMeasure) -> np.ndarray:
    """Hilbert transform at the ``n + 1`` cell edges.

    Interior edges use singularity subtraction against the mean of the two
    adjacent cells; the two outer edges use the plain sum.  Unlike the
    cell-center values this responds to grid-scale density oscillations,
    which is what the transport integrator needs to damp them.
    """
    rho = mu.density
    n = rho.size
    m, rows = _edge_kernel(n)
    ref = np.zeros(n + 1)
    ref[1:-1] = 0.5 * (rho[:-1] + rho[1:])
    k = np.arange(1, n)
    out = m @ rho - ref * rows
    out[1:-1] += ref[1:-1] * np.log(k / (n - k))
    return out


def _interp_density(mu: GridMeasure, x):
    return np.interp(x, mu.centers, mu.density, left=0.0, right=0.0)


def hilbert_transform(mu: GridMeasure, x):
    """Principal value ``p.v. int dmu(y) / (x - y)``.

    Uses singularity subtraction against the interpolated density at
    ``x``; outside ``[x_min, x_max]`` the integrand is regular and the plain
    midpoint sum is used.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    c = mu.centers
    rho = mu.density
    out = np.empty_like(x)
    inside = (x > mu.x_min) & (x < mu.x_max)
    xi = x[inside]
    if xi.size:
        r = _interp_density(mu, xi)
        diff = xi[:, None] - c[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = (rho[None, :] - r[:, None]) / diff
        # a point on a cell center: use the derivative of the interpolant
        hit = diff == 0
        if np.any(hit):
            rows, cols = np.nonzero(hit)
            padded = np.concatenate(([0.0], rho, [0.0]))
            terms[rows, cols] = -0.5 * (padded[cols + 2] - padded[cols]) / mu.dx
        out[inside] = terms.sum(axis=1) * mu.dx + r * np.log((xi - mu.x_min) / (mu.x_max - xi))
    xo = x[~inside]
    if xo.size:
        out[~inside] = np.sum(mu.masses[None, :] / (xo[:, None] - c[None, :]), axis=1)
    return float(out[0]) if scalar else out


def hilbert_at_centers(mu: GridMeasure) -> np.ndarray:
    return _hilbert_at_centers(mu)


def _has_wide_gap(mu: GridMeasure) -> bool:
    # convolution output has ~1e-12 tails; treat them as empty
    nz = np.flatnonzero(mu.density > 1e-9 * mu.density.max())
    return nz.size > 1 and int(np.max(np.diff(nz))) - 1 > GAP_CELLS


def conjugate_variable(mu: GridMeasure) -> ConjugateField:
    """``Xi = 2 H mu`` at every cell center."""
    # gaps wider than GAP_CELLS degrade the p.v. quadrature; flagged, not fatal
    return ConjugateField(mu, 2.0 * _hilbert_at_centers(mu), _has_wide_gap(mu))


def log_energy(mu: GridMeasure) -> float:
    """``iint log|x - y| dmu dmu`` with exact cell-pair averages."""
    p = mu.masses
    n = p.size
    conv = fftconvolve(p, _log_kernel(n), mode="valid")
    return float(math.log(mu.dx) + p @ conv)


def free_entropy_chi(mu: GridMeasure) -> float:
    return log_energy(mu) + CHI_CONSTANT


def fisher_of(field: ConjugateField) -> float:
    return float(np.sum(field.values ** 2 * field.grid.masses))


def free_fisher(mu: GridMeasure) -> float:
    return fisher_of(conjugate_variable(mu))


def free_energy(mu: GridMeasure) -> float:
    return 0.5 * moment(mu, 2) - log_energy(mu)


def entropy_gradient(mu: GridMeasure, form: str = "energy") -> np.ndarray:
    """Spatial gradient of the entropy first variation at cell centers.

    ``form="energy"`` gives ``Xi - x``, the negative gradient of the free
    energy; ``form="half_x"`` gives ``x/2 + Xi``, the alternative affine
    convention.  Both are exposed because the two disagree on the sign of
    the confinement term.
    """
    xi = conjugate_variable(mu).values
    x = mu.centers
    if form == "energy":
        return xi - x
    if form == "half_x":
        return 0.5 * x + xi
    raise ValueError(f"unknown gradient form {form!r}")


def functional_report(mu: GridMeasure) -> FunctionalReport:
    le = log_energy(mu)
    m2 = moment(mu, 2)
    return FunctionalReport(
        log_energy=le,
        chi=le + CHI_CONSTANT,
        fisher=free_fisher(mu),
        free_energy=0.5 * m2 - le,
        second_moment=m2,
    )
