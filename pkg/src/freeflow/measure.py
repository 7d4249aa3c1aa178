"""Spectral measures on the real line.

Two representations are used throughout the package:

* :class:`GridMeasure` -- a piecewise-constant density on a uniform,
  cell-centered grid.  The CDF is exact at cell edges and linear inside
  each cell, so quantiles and transport distances are computed without
  further discretization.
* :class:`ParticleMeasure` -- sorted, equally weighted atoms.

Dirac masses only ever live in :class:`SemicircleParams` (zero variance)
or as repeated particle positions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

MASS_TOL = 1e-9
MIN_CELLS = 8


class MeasureError(ValueError):
    """Raised when a measure violates its representation invariants."""


@dataclass(frozen=True)
class SemicircleParams:
    center: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise MeasureError("semicircle variance must be nonnegative")

    @property
    def radius(self) -> float:
        return 2.0 * math.sqrt(self.variance)

    @property
    def is_dirac(self) -> bool:
        return self.variance == 0.0


@dataclass(frozen=True, eq=False)
class GridMeasure:
    x_min: float
    x_max: float
    density: np.ndarray = field(repr=False)

    def __post_init__(self):
        rho = np.array(self.density, dtype=float)
        rho.setflags(write=False)
        object.__setattr__(self, "density", rho)
        if rho.ndim != 1 or rho.size < MIN_CELLS:
            raise MeasureError(f"grid needs at least {MIN_CELLS} cells")
        if not self.x_min < self.x_max:
            raise MeasureError("x_min must be smaller than x_max")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise MeasureError("density must be finite and nonnegative")
        mass = rho.sum() * self.dx
        if abs(mass - 1.0) > MASS_TOL:
            raise MeasureError(f"grid measure has mass {mass!r}, expected 1")

    @classmethod
    def from_density(cls, x_min, x_max, density) -> "GridMeasure":
        """Build a measure after rescaling ``density`` to unit mass."""
        rho = np.clip(np.asarray(density, dtype=float), 0.0, None)
        dx = (x_max - x_min) / rho.size
        total = rho.sum() * dx
        if not total > 0:
            raise MeasureError("density has no mass")
        return cls(float(x_min), float(x_max), rho / total)

    @property
    def n_cells(self) -> int:
        return self.density.size

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.density.size

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_cells + 1)

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.dx

    @property
    def cdf_edges(self) -> np.ndarray:
        cdf = np.concatenate(([0.0], np.cumsum(self.masses)))
        cdf[-1] = 1.0
        return cdf

    def quantile(self, u) -> np.ndarray:
        """Quantile function; linear inside each cell of positive mass."""
        u = np.asarray(u, dtype=float)
        cdf = self.cdf_edges
        j = np.clip(np.searchsorted(cdf[1:], u, side="left"), 0, self.n_cells - 1)
        # skip empty cells so each level lands in a cell that carries mass
        j = _next_massive_cell(self.density, j)
        return self.x_min + (j + (u - cdf[j]) / self.masses[j]) * self.dx

    def shifted(self, c: float) -> "GridMeasure":
        return GridMeasure(self.x_min + c, self.x_max + c, self.density)

    def dilated(self, c: float) -> "GridMeasure":
        """Law of ``c*X`` for ``c > 0``; the grid is rescaled, not resampled."""
        if c <= 0:
            raise MeasureError("dilation factor must be positive")
        return GridMeasure(self.x_min * c, self.x_max * c, self.density / c)


@dataclass(frozen=True, eq=False)
class ParticleMeasure:
    positions: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)
        if x.ndim != 1 or x.size < 2:
            raise MeasureError("particle measure needs at least 2 positions")
        if not np.all(np.isfinite(x)):
            raise MeasureError("particle positions must be finite")
        if np.any(np.diff(x) < 0):
            raise MeasureError("particle positions must be sorted")

    @classmethod
    def from_unsorted(cls, positions) -> "ParticleMeasure":
        return cls(np.sort(np.asarray(positions, dtype=float)))

    def __len__(self):
        return self.positions.size

    def quantile(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        n = self.positions.size
        k = np.clip(np.ceil(u * n).astype(int) - 1, 0, n - 1)
        return self.positions[k]


Measure = Union[GridMeasure, ParticleMeasure]


def _next_massive_cell(density, j):
    massive = np.flatnonzero(density > 0)
    k = np.searchsorted(massive, j, side="left")
    return massive[np.clip(k, 0, massive.size - 1)]


# ---------------------------------------------------------------------------
# Semicircle family


def semicircle_density(p: SemicircleParams, x):
    if p.is_dirac:
        raise MeasureError("degenerate semicircle has no density")
    r2 = 4.0 * p.variance - (np.asarray(x, dtype=float) - p.center) ** 2
    out = np.sqrt(np.clip(r2, 0.0, None)) / (2.0 * np.pi * p.variance)
    return out if np.ndim(out) else float(out)


def semicircle_cdf(p: SemicircleParams, x):
    if p.is_dirac:
        return np.where(np.asarray(x) >= p.center, 1.0, 0.0)
    u = np.clip((np.asarray(x, dtype=float) - p.center) / p.radius, -1.0, 1.0)
    return 0.5 + (u * np.sqrt(1.0 - u * u) + np.arcsin(u)) / np.pi


def semicircle_to_grid(p: SemicircleParams, n_cells: int = 512, padding: float = 0.5) -> GridMeasure:
    """Grid measure of ``SC(m, s2)`` on ``[m - 2s - padding, m + 2s + padding]``.

    Each cell holds the exact semicircle mass of that cell, so the grid CDF
    agrees with the analytic CDF at every edge.
    """
    if p.is_dirac:
        raise MeasureError("degenerate semicircle has no density")
    if padding < 0:
        raise MeasureError("padding must be nonnegative")
    lo = p.center - p.radius - padding
    hi = p.center + p.radius + padding
    cdf = semicircle_cdf(p, np.linspace(lo, hi, n_cells + 1))
    return GridMeasure.from_density(lo, hi, np.diff(cdf))


def uniform_grid(a: float, b: float, n_cells: int = 512) -> GridMeasure:
    return GridMeasure.from_density(a, b, np.ones(n_cells))


def atoms(positions) -> ParticleMeasure:
    """Equal-weight atoms; repeat a position to give it more weight."""
    return ParticleMeasure.from_unsorted(positions)


# ---------------------------------------------------------------------------
# Statistics and conversions


def moment(mu: Measure, k: int) -> float:
    if not 0 <= k <= 12:
        raise MeasureError("moment order must lie in [0, 12]")
    if isinstance(mu, ParticleMeasure):
        return float(np.mean(mu.positions ** k))
    return float(np.sum(mu.centers ** k * mu.masses))


def mean(mu: Measure) -> float:
    return moment(mu, 1)


def variance(mu: Measure) -> float:
    m = mean(mu)
    if isinstance(mu, ParticleMeasure):
        return float(np.mean((mu.positions - m) ** 2))
    return float(np.sum((mu.centers - m) ** 2 * mu.masses))


def quantile_levels(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def to_particles(mu: GridMeasure, n: int) -> ParticleMeasure:
    if n < 2:
        raise MeasureError("need at least 2 particles")
    mass = mu.masses.sum()
    if abs(mass - 1.0) > MASS_TOL:
        raise MeasureError("cannot take quantiles of a non-normalized measure")
    return ParticleMeasure(np.maximum.accumulate(mu.quantile(quantile_levels(n))))


def regrid(p: ParticleMeasure, n_cells: int = 512, x_min=None, x_max=None) -> GridMeasure:
    """Grid measure whose CDF interpolates the particle quantiles.

    Particle ``i`` sits at CDF level ``(i + 1/2)/N``.  The mass ``1/N``
    between consecutive particles is spread linearly, except that each half
    stays within one neighbouring spacing of its particle, so an empty gap
    in the support is not filled with spurious mass.  The CDF reaches 0 and
    1 half a spacing beyond the outermost particles.
    """
    x = p.positions
    n = x.size
    d = np.diff(x)
    if not d.sum() > 0:
        raise MeasureError("cannot regrid a fully collapsed particle measure")
    d_prev = np.concatenate(([d[0]], d[:-1]))
    d_next = np.concatenate((d[1:], [d[-1]]))
    left = x[:-1] + np.minimum(0.5 * d, d_prev)
    right = x[1:] - np.minimum(0.5 * d, d_next)
    lo_end = x[0] - 0.5 * d[0]
    hi_end = x[-1] + 0.5 * d[-1]
    if x_min is None or x_max is None:
        pad = 0.05 * (hi_end - lo_end)
        x_min, x_max = lo_end - pad, hi_end + pad

    lev = quantile_levels(n)
    knots = np.empty(3 * n - 2)
    levels = np.empty(3 * n - 2)
    knots[0::3], levels[0::3] = x, lev
    knots[1::3], levels[1::3] = left, lev[:-1] + 0.5 / n
    knots[2::3], levels[2::3] = right, lev[:-1] + 0.5 / n
    knots = np.concatenate(([lo_end], knots, [hi_end]))
    levels = np.concatenate(([0.0], levels, [1.0]))
    cdf = np.interp(np.linspace(x_min, x_max, n_cells + 1), knots, levels, left=0.0, right=1.0)
    return GridMeasure.from_density(x_min, x_max, np.diff(cdf))


def _breakpoints(mu: Measure) -> np.ndarray:
    if isinstance(mu, ParticleMeasure):
        return np.arange(mu.positions.size + 1) / mu.positions.size
    return mu.cdf_edges


def _quantile_on_pieces(mu: Measure, a, b):
    """Quantile values at the ends of level intervals ``(a, b)``.

    Each interval lies inside one linear piece of the quantile function, so
    the values are the one-sided limits from inside the interval.
    """
    mid = 0.5 * (a + b)
    if isinstance(mu, ParticleMeasure):
        q = mu.quantile(mid)
        return q, q
    cdf = mu.cdf_edges
    j = np.clip(np.searchsorted(cdf[1:], mid, side="left"), 0, mu.n_cells - 1)
    j = _next_massive_cell(mu.density, j)
    m = mu.masses[j]
    base = mu.x_min + j * mu.dx
    return base + (a - cdf[j]) / m * mu.dx, base + (b - cdf[j]) / m * mu.dx


def w2(mu: Measure, nu: Measure) -> float:
    """Quadratic Wasserstein distance between two laws on the line.

    Both quantile functions are piecewise linear (grid) or piecewise
    constant (particles) in the level variable; on the merged breakpoints
    the squared difference is a quadratic and is integrated exactly.
    """
    if isinstance(mu, ParticleMeasure) and isinstance(nu, ParticleMeasure) and len(mu) == len(nu):
        return float(np.sqrt(np.mean((mu.positions - nu.positions) ** 2)))
    u = np.unique(np.concatenate((_breakpoints(mu), _breakpoints(nu))))
    u = u[(u >= 0.0) & (u <= 1.0)]
    a, b = u[:-1], u[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    pa, pb = _quantile_on_pieces(mu, a, b)
    qa, qb = _quantile_on_pieces(nu, a, b)
    da, db = pa - qa, pb - qb
    total = np.sum((b - a) * (da * da + da * db + db * db) / 3.0)
    return float(np.sqrt(max(total, 0.0)))


# ---------------------------------------------------------------------------
# CSV serialization


def write_grid_csv(mu: GridMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "density"])
        for x, r in zip(mu.centers, mu.density):
            w.writerow([f"{x:.17g}", f"{r:.17g}"])


def read_grid_csv(path) -> GridMeasure:
    """Read a ``x,density`` CSV written by :func:`write_grid_csv`.

    Rows must be uniformly spaced cell centers.
    """
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x, rho = data[:, 0], data[:, 1]
    if x.size < MIN_CELLS:
        raise MeasureError(f"grid needs at least {MIN_CELLS} cells")
    dx = (x[-1] - x[0]) / (x.size - 1)
    if not np.allclose(np.diff(x), dx, rtol=1e-6, atol=1e-12):
        raise MeasureError("grid CSV rows are not uniformly spaced")
    return GridMeasure.from_density(x[0] - 0.5 * dx, x[-1] + 0.5 * dx, rho)


def write_particles_csv(p: ParticleMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position"])
        for x in p.positions:
            w.writerow([f"{x:.17g}"])


def read_particles_csv(path) -> ParticleMeasure:
    return ParticleMeasure.from_unsorted(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=1))
