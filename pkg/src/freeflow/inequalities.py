"""Free functional inequalities in two conventions.

``as_stated`` compares free entropies directly against the standard
semicircle; ``relative`` includes the quadratic potential, so entropy is
``F[mu] - F[SC(0,1)]`` and Fisher information is ``int (Xi - x)^2 dmu``.
Only the relative forms carry pass/fail contracts; the as-stated forms fail
on plain semicircle rescalings and are reported for information.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import functionals as fn
from .forward import FlowTrajectory, heat_smooth
from .matrix_mc import max_workers
from .measure import GridMeasure, ParticleMeasure, SemicircleParams, semicircle_to_grid, w2

SUITE_TOL = 5e-3
F_SC = 0.75
CHI_SC = -0.25 + fn.CHI_CONSTANT

_REFERENCE = {}


def standard_semicircle(n_cells: int = 16384) -> GridMeasure:
    """Fine-grid SC(0, 1) used as the transport reference."""
    if n_cells not in _REFERENCE:
        _REFERENCE[n_cells] = semicircle_to_grid(SemicircleParams(0.0, 1.0), n_cells, padding=0.0)
    return _REFERENCE[n_cells]


@dataclass(frozen=True)
class InequalityReport:
    name: str
    lhs: float
    rhs: float
    holds: bool
    convention: str
    inputs: str = ""
    tol: float = 1e-9

    @classmethod
    def make(cls, name, lhs, rhs, convention, inputs="", tol=1e-9):
        lhs, rhs = float(lhs), float(rhs)
        return cls(name, lhs, rhs, bool(lhs <= rhs + tol), convention, inputs, tol)

    def holds_within(self, tol: float = SUITE_TOL) -> bool:
        """``lhs - tol <= rhs + tol``: each side allowed ``tol`` of quadrature error."""
        return self.lhs - tol <= self.rhs + tol

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "convention": self.convention,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "holds": self.holds,
            "input": self.inputs,
        }


@dataclass(frozen=True)
class RelativeQuantities:
    rel_entropy: float
    rel_fisher: float
    w2_to_sc: float
    chi_gap: float = 0.0
    fisher: float = 0.0

    @classmethod
    def of(cls, mu: GridMeasure) -> "RelativeQuantities":
        xi = fn.conjugate_variable(mu)
        x = mu.centers
        rel_fisher = float(np.sum((xi.values - x) ** 2 * mu.masses))
        return cls(
            rel_entropy=fn.free_energy(mu) - F_SC,
            rel_fisher=rel_fisher,
            w2_to_sc=w2(mu, standard_semicircle()),
            chi_gap=CHI_SC - fn.free_entropy_chi(mu),
            fisher=fn.fisher_of(xi),
        )


def _quantities(mu, q):
    return q if q is not None else RelativeQuantities.of(mu)


def lsi_report(mu: GridMeasure, label: str = "", q: RelativeQuantities | None = None):
    q = _quantities(mu, q)
    return (
        InequalityReport.make("lsi", q.chi_gap, 0.5 * q.fisher, "as_stated", label),
        InequalityReport.make("lsi", q.rel_entropy, 0.5 * q.rel_fisher, "relative", label),
    )


def talagrand_report(mu: GridMeasure, label: str = "", q: RelativeQuantities | None = None):
    q = _quantities(mu, q)
    w_sq = q.w2_to_sc ** 2
    return (
        InequalityReport.make("talagrand", w_sq, 2.0 * q.chi_gap, "as_stated", label),
        InequalityReport.make("talagrand", w_sq, 2.0 * q.rel_entropy, "relative", label),
    )


def hwi_report(mu: GridMeasure, label: str = "", q: RelativeQuantities | None = None):
    q = _quantities(mu, q)
    w = q.w2_to_sc
    return (
        InequalityReport.make("hwi", q.chi_gap,
                              w * math.sqrt(0.5 * q.fisher) - 0.25 * w * w, "as_stated", label),
        InequalityReport.make("hwi", q.rel_entropy,
                              w * math.sqrt(q.rel_fisher) - 0.5 * w * w, "relative", label),
    )


def stam_check(heat_traj: FlowTrajectory, tol: float = 1e-2):
    """Per stored time: ``1/Phi(mu_0) + t`` against ``1/Phi(mu_t)``."""
    if heat_traj.mode != "heat":
        raise ValueError("Stam check needs a heat-mode trajectory")
    phi = heat_traj.fisher()
    base = 1.0 / phi[0]
    return [
        InequalityReport.make("stam", base + t, 1.0 / f, "as_stated", f"t={t:.6g}", tol)
        for t, f in zip(heat_traj.times, phi)
    ]


def entropy_production_report(traj: FlowTrajectory) -> dict:
    """Residuals of both entropy-production balances (trapezoid in time).

    ``heat_form_residual`` is ``|dchi - 1/2 int rate Phi|``, exact for the
    heat flow; ``integral_identity_residual`` is ``|dchi - 1/2 int rate
    (Phi - 1)|``, exact for the OU flow.  In heat mode the two coincide.
    """
    t = traj.times
    rate = np.asarray(traj.rate(t), dtype=float) * np.ones_like(t)
    phi = traj.fisher()
    dchi = float(fn.free_entropy_chi(traj.measures[-1]) - fn.free_entropy_chi(traj.measures[0]))
    heat_form = 0.5 * float(np.trapezoid(rate * phi, t))
    if traj.mode == "heat":
        ident = heat_form
    else:
        ident = 0.5 * float(np.trapezoid(rate * (phi - 1.0), t))
    return {
        "delta_chi": dchi,
        "heat_form_residual": abs(dchi - heat_form),
        "integral_identity_residual": abs(dchi - ident),
    }


def default_family(n_cells: int = 512):
    """Twenty labelled test laws: semicircle scalings and translations plus
    heat-smoothed two- and three-atom mixtures."""
    fam = []
    for v in np.geomspace(0.25, 4.0, 9):
        fam.append((f"SC(0,{v:.4g})", semicircle_to_grid(SemicircleParams(0.0, float(v)), n_cells)))
    for m, v in ((0.5, 1.0), (-1.0, 1.0), (2.0, 1.0), (1.0, 0.5), (-0.5, 2.0)):
        fam.append((f"SC({m:g},{v:g})", semicircle_to_grid(SemicircleParams(m, v), n_cells)))
    atoms = (
        (-1.0, 1.0), (-0.5, 1.5), (-2.0, 2.0),
        (-1.0, 0.0, 1.0), (-2.0, 0.0, 1.0), (-1.5, -1.0, 1.5),
    )
    for pos in atoms:
        label = "heat(" + ",".join(f"{p:g}" for p in pos) + ")"
        fam.append((label, heat_smooth(ParticleMeasure(list(pos)), 0.01, n_cells)))
    return fam


def _reports_for(item):
    label, mu = item
    q = RelativeQuantities.of(mu)
    return [*lsi_report(mu, label, q), *talagrand_report(mu, label, q), *hwi_report(mu, label, q)]


def run_suite(measures=None, tol: float = SUITE_TOL):
    """All reports for each labelled measure plus a summary dict.

    ``measures`` is a sequence of ``(label, GridMeasure)`` pairs or bare
    measures; the default is :func:`default_family`.  Relative violations
    are counted at ``tol`` per side; as-stated violations use the strict
    ``holds`` flag.
    """
    if measures is None:
        measures = default_family()
    items = [m if isinstance(m, tuple) else (f"measure[{i}]", m) for i, m in enumerate(measures)]
    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        reports = [r for rs in pool.map(_reports_for, items) for r in rs]
    summary = {
        "total": len(reports),
        "holds": sum(r.holds for r in reports),
        "violations_as_stated": sum(not r.holds for r in reports if r.convention == "as_stated"),
        "violations_relative": sum(not r.holds_within(tol) for r in reports if r.convention == "relative"),
    }
    return reports, summary


def write_reports_json(reports, summary, path) -> None:
    with open(path, "w") as fh:
        json.dump({"reports": [r.to_dict() for r in reports], "summary": summary}, fh, indent=2)
        fh.write("\n")
