"""Finite-N Hermitian random-matrix Monte Carlo for the free DDPM chain.

The GUE is normalized so its spectrum converges to ``SC(0, variance)``.
Members of an ensemble evolve independently with per-member random
streams spawned from ``SeedSequence(seed)``, so distinct seeds give
disjoint streams.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .forward import Schedule
from .measure import ParticleMeasure, quantile_levels, GridMeasure


class EigenError(RuntimeError):
    pass


def max_workers() -> int:
    """Worker cap from ``FREEFLOW_THREADS`` (default: CPU count)."""
    env = os.environ.get("FREEFLOW_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(eq=False)
class MatrixEnsemble:
    N: int
    members: list = field(repr=False)
    rng_seed: int = 0

    def __post_init__(self):
        self.members = [hermitize(m) for m in self.members]


@dataclass(eq=False)
class EsdResult:
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def as_measure(self) -> ParticleMeasure:
        return ParticleMeasure(self.eigenvalues)

    def mean(self) -> float:
        return float(self.eigenvalues.mean())

    def variance(self) -> float:
        return float(self.eigenvalues.var())


def hermitize(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.conj().T)


def sample_gue(N: int, variance: float = 1.0, rng_seed=None) -> np.ndarray:
    """GUE matrix with ``E[(1/N) Tr X^2] = variance``.

    Diagonal entries are real ``Normal(0, variance/N)``; off-diagonal entries
    have independent real and imaginary parts of variance ``variance/(2N)``.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    # A + A^H for A with standard complex entries: off-diagonal real and
    # imaginary parts have variance 2, the real diagonal has variance 4
    a = rng.standard_normal((N, 2 * N)).view(complex)
    x = a + a.conj().T
    x *= 0.5 * math.sqrt(variance / N)
    return x


def ddpm_step(X: np.ndarray, alpha: float, rng) -> np.ndarray:
    """``sqrt(alpha) X + sqrt(1 - alpha) Z`` with fresh unit-variance GUE ``Z``."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if alpha == 1.0:
        return X.copy()
    # scalar combinations of Hermitian matrices stay exactly Hermitian
    Z = sample_gue(X.shape[0], 1.0, rng)
    Z *= math.sqrt(1.0 - alpha)
    Z += math.sqrt(alpha) * X
    return Z


def _eigvals(args):
    i, m = args
    try:
        return np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"eigendecomposition failed for member {i}") from exc


def esd(ens: MatrixEnsemble) -> EsdResult:
    if not ens.members:
        raise ValueError("empty ensemble")
    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        parts = list(pool.map(_eigvals, enumerate(ens.members)))
    return EsdResult(np.sort(np.concatenate(parts)))


def member_rngs(rng_seed: int, members: int):
    """One independent generator per ensemble member."""
    return [np.random.default_rng(c) for c in np.random.SeedSequence(rng_seed).spawn(members)]


def gue_ensemble(N: int, members: int, variance: float = 1.0, rng_seed: int = 1) -> MatrixEnsemble:
    mats = [sample_gue(N, variance, rng) for rng in member_rngs(rng_seed, members)]
    return MatrixEnsemble(N, mats, rng_seed)


def initial_matrix(spec, N: int) -> np.ndarray:
    """Diagonal initial data.

    ``spec`` is ``("dirac", a)``, ``"two_atom"`` (half at -1, half at +1),
    ``("atoms", positions)`` or a :class:`GridMeasure` whose quantiles fill
    the diagonal.
    """
    if isinstance(spec, GridMeasure):
        d = spec.quantile(quantile_levels(N))
    elif spec == "two_atom":
        d = np.where(np.arange(N) < N // 2, -1.0, 1.0)
    elif spec[0] == "dirac":
        d = np.full(N, float(spec[1]))
    elif spec[0] == "atoms":
        pos = np.sort(np.asarray(spec[1], dtype=float))
        d = pos[np.minimum((np.arange(N) * pos.size) // N, pos.size - 1)]
    else:
        raise ValueError(f"unknown initial law {spec!r}")
    return np.diag(d).astype(complex)


def run_forward_mc(x0_spec, s: Schedule, n_steps: int, N: int = 512, members: int = 32,
                   rng_seed: int = 1, snapshot_steps=None, snapshot_times=None):
    """Evolve diagonal initial data through the DDPM chain.

    Step ``k`` uses ``alpha_k = exp(-beta(t_k) dt)`` with the left-endpoint
    rate.  Returns ``[(t, EsdResult)]`` at ``snapshot_steps`` or at the steps
    nearest to ``snapshot_times`` (default: the final step only).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    dt = s.T / n_steps
    if snapshot_times is not None:
        snapshot_steps = [int(round(t / dt)) for t in snapshot_times]
    if snapshot_steps is None:
        snapshot_steps = [n_steps]
    snaps = sorted(set(int(k) for k in snapshot_steps))
    if snaps[0] < 0 or snaps[-1] > n_steps:
        raise ValueError("snapshot outside [0, T]")
    alphas = [math.exp(-float(s.beta_at(k * dt)) * dt) for k in range(n_steps)]
    X0 = initial_matrix(x0_spec, N)

    rngs = member_rngs(rng_seed, members)

    def evolve(i):
        rng = rngs[i]
        X = X0.copy()
        eig = {}
        if 0 in snaps:
            eig[0] = np.linalg.eigvalsh(X)
        for k, a in enumerate(alphas, start=1):
            X = ddpm_step(X, a, rng)
            if k in snaps:
                eig[k] = _eigvals((i, X))
        return eig

    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        per_member = list(pool.map(evolve, range(members)))
    out = []
    for k in snaps:
        vals = np.sort(np.concatenate([m[k] for m in per_member]))
        out.append((k * dt, EsdResult(vals)))
    return out


def write_esd_csv(snapshots, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "eigenvalue"])
        for t, res in snapshots:
            for v in res.eigenvalues:
                w.writerow([f"{t:.17g}", f"{v:.17g}"])


def write_mc_summary(rows, path) -> None:
    """``rows`` are dicts with keys ``t, mean, variance, w2_to_prediction``."""
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
