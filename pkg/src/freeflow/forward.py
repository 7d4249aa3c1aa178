"""Forward free diffusion: schedules, exact marginals and the transport integrator.

The forward law solves the continuity equation
``d_t mu + d_x(v mu) = 0`` with ``v = -beta x / 2 + beta H mu`` (Ornstein-
Uhlenbeck mode) or ``v = H mu`` (free heat mode, unit rate).  Its marginals
are also available in closed form as a dilation followed by free additive
convolution with a semicircle, which is computed here by subordination.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import functionals as fn
from .measure import (
    GridMeasure,
    Measure,
    MeasureError,
    ParticleMeasure,
    SemicircleParams,
    atoms,
    mean,
    regrid,
    to_particles,
    variance,
)


class FlowError(RuntimeError):
    pass


class ConvergenceError(FlowError):
    def __init__(self, msg, x=None):
        super().__init__(msg)
        self.x = x


# ---------------------------------------------------------------------------
# Noise schedules


@dataclass(frozen=True)
class Schedule:
    """Noise schedule ``beta(t)`` on ``[0, T]`` with closed-form integral.

    * ``constant``: ``beta(t) = beta``
    * ``linear``: ``beta(t) = beta0 + (beta1 - beta0) t / T``
    * ``cosine``: ``beta(t) = beta0 + (beta1 - beta0) (1 - cos(pi t / T)) / 2``
    """

    kind: str = "constant"
    T: float = 1.0
    beta: float = 1.0
    beta0: float = 0.1
    beta1: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.T > 0:
            raise ValueError("schedule horizon T must be positive")
        if self.kind == "constant":
            if not self.beta > 0:
                raise ValueError("β must be positive")
        else:
            # beta may touch zero at t = 0 only; Lambda stays strictly increasing
            if self.beta0 < 0 or not self.beta1 > 0:
                raise ValueError("β must be positive")

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.T * (1 + 1e-12)):
            raise ValueError(f"time outside [0, {self.T}]")
        return np.clip(t, 0.0, self.T)

    def beta_at(self, t):
        t = self._check(t)
        if self.kind == "constant":
            out = np.full_like(t, self.beta)
        elif self.kind == "linear":
            out = self.beta0 + (self.beta1 - self.beta0) * t / self.T
        else:
            out = self.beta0 + (self.beta1 - self.beta0) * 0.5 * (1.0 - np.cos(np.pi * t / self.T))
        return out if out.ndim else float(out)

    def Lambda(self, t):
        t = self._check(t)
        if self.kind == "constant":
            out = self.beta * t
        elif self.kind == "linear":
            out = self.beta0 * t + 0.5 * (self.beta1 - self.beta0) * t * t / self.T
        else:
            d = self.beta1 - self.beta0
            out = self.beta0 * t + 0.5 * d * (t - self.T * np.sin(np.pi * t / self.T) / np.pi)
        return out if np.ndim(out) else float(out)

    def with_horizon(self, T: float) -> "Schedule":
        return Schedule(self.kind, T, self.beta, self.beta0, self.beta1)


def schedule_eval(s: Schedule, t: float):
    return s.beta_at(t), s.Lambda(t)


# ---------------------------------------------------------------------------
# Closed-form marginals


def ou_marginal_semicircle(a: float, s: Schedule, t: float) -> SemicircleParams:
    """Marginal law at time ``t`` of the OU flow started from a point mass at ``a``."""
    lam = s.Lambda(t)
    return SemicircleParams(math.exp(-0.5 * lam) * a, -math.expm1(-lam))


def _support(mu: Measure):
    if isinstance(mu, ParticleMeasure):
        return float(mu.positions[0]), float(mu.positions[-1])
    nz = np.flatnonzero(mu.density > 0)
    return mu.x_min + nz[0] * mu.dx, mu.x_min + (nz[-1] + 1) * mu.dx


def _cauchy(mu: Measure, w: np.ndarray, derivative: bool = False):
    """Cauchy transform ``int dmu(y)/(w - y)`` for ``Im w > 0``.

    Grid measures are integrated exactly as piecewise-constant densities.
    With ``derivative=True`` also returns the derivative in ``w``.
    """
    if isinstance(mu, ParticleMeasure):
        r = 1.0 / (w[:, None] - mu.positions[None, :])
        g = np.mean(r, axis=1)
        return (g, -np.mean(r * r, axis=1)) if derivative else g
    rho = mu.density
    jumps = np.diff(np.concatenate(([0.0], rho, [0.0])))
    k = np.flatnonzero(jumps)
    d = w[:, None] - mu.edges[k][None, :]
    g = np.log(d) @ jumps[k]
    return (g, (1.0 / d) @ jumps[k]) if derivative else g


def _semicircle_cauchy(z, m, v):
    d = z - m
    root = np.sqrt(d * d - 4.0 * v)
    g1 = (d - root) / (2.0 * v)
    g2 = (d + root) / (2.0 * v)
    return np.where(g1.imag <= g2.imag, g1, g2)


def _subordination_sweeps(mu0, s_var, z, g, damping, max_iter, tol):
    """Newton/Picard sweeps from ``g``; returns ``g`` and the unconverged indices."""
    g = g.copy()
    active = np.arange(z.size)
    for _ in range(max_iter):
        za, ga = z[active], g[active]
        w = za - s_var * ga
        gw, dg = _cauchy(mu0, w, derivative=True)
        res = ga - gw
        done = np.abs(res) <= tol
        # Newton on F(G) = G - G_mu0(z - s G), F' = 1 + s G_mu0'(w)
        g_newton = ga - res / (1.0 + s_var * dg)
        w_newton = za - s_var * g_newton
        ok = np.isfinite(g_newton) & (w_newton.imag >= za.imag)
        if np.any(ok):
            gn = _cauchy(mu0, w_newton[ok])
            ok_idx = np.flatnonzero(ok)
            better = np.abs(g_newton[ok] - gn) < np.abs(res[ok])
            ok[ok_idx[~better]] = False
        g_picard = (1.0 - damping) * ga + damping * gw
        g[active] = np.where(done, ga, np.where(ok, g_newton, g_picard))
        active = active[~done]
        if active.size == 0:
            break
    return g, active


def subordination(mu0: Measure, s_var: float, z: np.ndarray, damping: float = 0.5,
                  max_iter: int = 500, tol: float = 1e-10) -> np.ndarray:
    """Cauchy transform of ``mu0 ⊞ SC(0, s_var)`` at points ``z`` (``Im z > 0``).

    Solves ``G = G_mu0(z - s_var G)`` through the subordination point
    ``w = z - s_var G``.  Each sweep takes a Newton step where it reduces
    the residual and stays in ``Im w >= Im z``; elsewhere it falls back to
    the damped Picard update ``G <- (1-d) G + d G_mu0(w)``.

    Points that stall (near support edges, where the map is almost
    non-contracting) are re-solved by continuation in ``Im z``: first well
    above the axis, then down to the requested height in decades, each
    level started from the previous solution so the physical branch is kept.
    """
    z = np.asarray(z, dtype=complex)
    g0 = _semicircle_cauchy(z, mean(mu0), variance(mu0) + s_var)
    g, stalled = _subordination_sweeps(mu0, s_var, z, g0, damping, min(max_iter, 60), tol)
    if stalled.size == 0:
        return g
    zs = z[stalled]
    lift = math.sqrt(s_var)
    gs = _semicircle_cauchy(zs + 1j * lift, mean(mu0), variance(mu0) + s_var)
    while True:
        lift *= 0.1
        target = zs + 1j * lift
        final = lift < 1e-3 * np.min(zs.imag)
        if final:
            target = zs
        gs, left = _subordination_sweeps(mu0, s_var, target, gs, damping, max_iter, tol)
        if left.size:
            bad = float(zs[left[0]].real)
            raise ConvergenceError(f"subordination fixed point did not converge at x={bad:.6g}", bad)
        if final:
            break
    g[stalled] = gs
    return g


def free_convolve_semicircle(
    mu0: Measure,
    s_var: float,
    n_cells: int | None = None,
    damping: float = 0.5,
    max_iter: int = 500,
    tol: float = 1e-10,
) -> GridMeasure:
    """Density of ``mu0 ⊞ SC(0, s_var)`` on a grid.

    The subordination equation is solved at ``z = x + i eps`` for each cell
    center ``x`` and the density is read off as ``-Im G / pi``.  ``eps`` is
    kept tiny (1e-9 of a cell) so the output carries no Poisson-kernel blur.
    """
    if not s_var > 0:
        raise MeasureError("semicircle variance must be positive")
    if n_cells is None:
        n_cells = mu0.n_cells if isinstance(mu0, GridMeasure) else 512
    lo, hi = _support(mu0)
    r = 2.0 * math.sqrt(s_var)
    pad = 0.05 * (hi - lo + 2 * r)
    x_min, x_max = lo - r - pad, hi + r + pad
    dx = (x_max - x_min) / n_cells
    x = x_min + (np.arange(n_cells) + 0.5) * dx
    g = subordination(mu0, s_var, x + 1e-9j * dx, damping, max_iter, tol)
    return GridMeasure.from_density(x_min, x_max, np.clip(-g.imag, 0.0, None) / np.pi)


def heat_smooth(mu0: Measure, s: float = 0.01, n_cells: int = 512) -> GridMeasure:
    """Run the free heat flow for time ``s``; turns atoms into smooth bumps."""
    return free_convolve_semicircle(mu0, s, n_cells=n_cells)


def two_atom(left: float = -1.0, right: float = 1.0) -> ParticleMeasure:
    return atoms([left, right])


def ou_pushforward(mu0: Measure, s: Schedule, t: float, n_cells: int | None = None) -> GridMeasure:
    """Exact OU marginal: dilate by ``exp(-Lambda/2)``, then add ``SC(0, 1 - exp(-Lambda))``."""
    if not t > 0:
        raise ValueError("ou_pushforward needs t > 0")
    lam = s.Lambda(t)
    c = math.exp(-0.5 * lam)
    if isinstance(mu0, ParticleMeasure):
        dil = ParticleMeasure(mu0.positions * c)
    else:
        dil = mu0.dilated(c)
    return free_convolve_semicircle(dil, -math.expm1(-lam), n_cells=n_cells)


# ---------------------------------------------------------------------------
# Transport integrator


@dataclass(eq=False)
class FlowTrajectory:
    times: np.ndarray
    measures: list
    xi_fields: list
    mode: str
    schedule: Schedule
    particles: ParticleMeasure | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if not (len(self.times) == len(self.measures) == len(self.xi_fields)):
            raise ValueError("trajectory arrays must have equal lengths")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be increasing")
        if self.mode not in ("ou", "heat"):
            raise ValueError(f"unknown flow mode {self.mode!r}")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def rate(self, t):
        """Effective diffusion rate: ``beta(t)`` for OU, 1 for the heat flow."""
        if self.mode == "heat":
            return np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else 1.0
        return self.schedule.beta_at(t)

    def chi(self) -> np.ndarray:
        return np.array([fn.free_entropy_chi(m) for m in self.measures])

    def fisher(self) -> np.ndarray:
        return np.array([fn.fisher_of(f) for f in self.xi_fields])


def _velocity_field(g: GridMeasure, h_edges: np.ndarray, x: np.ndarray, beta: float, mode: str):
    h = np.interp(x, g.edges, h_edges)
    if mode == "heat":
        return h
    return beta * (h - 0.5 * x)


def _stable_substeps(g: GridMeasure, h: float, rate: float) -> int:
    # the grid-scale density mode decays at about pi^2 max(rho) / dx times
    # the rate; explicit midpoint is kept at h * lam <= 1
    lam = rate * (np.pi ** 2 * float(g.density.max()) / g.dx + 0.5)
    return max(1, int(math.ceil(h * lam)))


def integrate_forward(
    mu0: GridMeasure,
    s: Schedule,
    n_steps: int | None = None,
    n_particles: int = 2048,
    mode: str = "ou",
    n_cells: int = 512,
) -> FlowTrajectory:
    """Follow characteristics of the transport form of the forward flow.

    Particles start at the quantiles of ``mu0`` and move with
    ``v = -beta x/2 + beta H mu_t`` (``mode="ou"``) or ``v = H mu_t``
    (``mode="heat"``), where ``H mu_t`` is the Hilbert transform of the
    particle law regridded to ``n_cells`` cells.  Explicit midpoint steps on
    a uniform time grid; each output step is split into enough equal
    substeps to keep the explicit scheme stable.  ``n_steps`` defaults to
    400 per unit of ``Lambda(T)`` (per unit time for the heat flow).
    """
    if mode not in ("ou", "heat"):
        raise ValueError(f"unknown flow mode {mode!r}")
    T = s.T
    if n_steps is None:
        horizon = T if mode == "heat" else s.Lambda(T)
        n_steps = max(10, int(math.ceil(400 * horizon)))
    if n_steps < 10:
        raise ValueError("n_steps must be at least 10")
    if n_particles < 64:
        raise ValueError("n_particles must be at least 64")

    times = np.linspace(0.0, T, n_steps + 1)
    x = to_particles(mu0, n_particles).positions.copy()
    measures = [mu0]
    fields = [fn.conjugate_variable(mu0)]

    def rate(t):
        return 1.0 if mode == "heat" else float(s.beta_at(t))

    def field_at(pos):
        g = regrid(ParticleMeasure(pos), n_cells)
        return g, fn.hilbert_at_edges(g)

    g, xi = regrid(ParticleMeasure(x), n_cells), None
    for k in range(n_steps):
        t0, t1 = times[k], times[k + 1]
        g, xi = field_at(x)
        n_sub = _stable_substeps(g, t1 - t0, max(rate(t0), rate(t1)))
        h = (t1 - t0) / n_sub
        for j in range(n_sub):
            t = t0 + j * h
            if j:
                g, xi = field_at(x)
            v = _velocity_field(g, xi, x, rate(t), mode)
            xm = x + 0.5 * h * v
            _check_order(xm)
            gm, xim = field_at(xm)
            x = x + h * _velocity_field(gm, xim, xm, rate(t + 0.5 * h), mode)
            _check_order(x)
        g = regrid(ParticleMeasure(x), n_cells)
        measures.append(g)
        fields.append(fn.conjugate_variable(g))
    return FlowTrajectory(times, measures, fields, mode, s, ParticleMeasure(x))


def _check_order(x):
    gaps = np.diff(x)
    if gaps.size and gaps.min() < 1e-12:
        raise FlowError("particle collision: use a smaller step or more particles")


def de_bruijn_residual(traj: FlowTrajectory):
    """Entropy production along a trajectory.

    Returns ``(t, dchi/dt, rate*fisher/2, rate*(fisher - 1)/2)`` at interior
    stored times; ``dchi/dt`` is a central difference.
    """
    if len(traj.times) < 3:
        raise ValueError("need at least 3 stored times")
    t = traj.times
    chi = traj.chi()
    phi = traj.fisher()
    rows = []
    for k in range(1, len(t) - 1):
        d = (chi[k + 1] - chi[k - 1]) / (t[k + 1] - t[k - 1])
        b = float(traj.rate(t[k]))
        rows.append((float(t[k]), float(d), 0.5 * b * phi[k], 0.5 * b * (phi[k] - 1.0)))
    return rows


def trajectory_summary(traj: FlowTrajectory):
    """Rows of ``t,beta,Lambda,mean,variance,chi,fisher,free_energy``."""
    rows = []
    for t, m, f in zip(traj.times, traj.measures, traj.xi_fields):
        le = fn.log_energy(m)
        m2 = float(np.sum(m.centers ** 2 * m.masses))
        lam = float(t) if traj.mode == "heat" else float(traj.schedule.Lambda(t))
        rows.append((float(t), float(traj.rate(t)), lam, mean(m), variance(m),
                     le + fn.CHI_CONSTANT, fn.fisher_of(f), 0.5 * m2 - le))
    return rows


SUMMARY_COLUMNS = ("t", "beta", "Lambda", "mean", "variance", "chi", "fisher", "free_energy")


def write_summary_csv(rows: Sequence, path, columns=SUMMARY_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
