"""Spectral-measure diffusion under free probability: forward and reverse
flows, free entropy functionals, random-matrix Monte Carlo, a JKO solver
and a functional-inequality suite."""

__version__ = "0.1.0"

from .measure import (  # noqa: E402
    GridMeasure,
    MeasureError,
    ParticleMeasure,
    SemicircleParams,
    semicircle_to_grid,
    to_particles,
    w2,
)
from .forward import Schedule, integrate_forward, ou_pushforward  # noqa: E402
from .functionals import conjugate_variable, free_energy, free_entropy_chi, free_fisher  # noqa: E402
from .reverse import integrate_reverse  # noqa: E402

__all__ = [
    "GridMeasure",
    "MeasureError",
    "ParticleMeasure",
    "Schedule",
    "SemicircleParams",
    "conjugate_variable",
    "free_energy",
    "free_entropy_chi",
    "free_fisher",
    "integrate_forward",
    "integrate_reverse",
    "ou_pushforward",
    "semicircle_to_grid",
    "to_particles",
    "w2",
]
