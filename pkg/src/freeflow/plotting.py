"""SVG line plots of trajectories and densities.

Figures are 8 x 5 in at 100 dpi (an 800 x 500 viewport).  The SVG date
stamp is dropped and element ids are salted with a constant so identical
data gives byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "svg.hashsalt": "freeflow",
    "svg.fonttype": "path",
    "axes.linewidth": 0.6,
    "font.size": 10,
    "lines.linewidth": 1.2,
}

TRAJECTORY_CURVES = (("mean", "mean"), ("variance", "variance"), ("chi", "χ"),
                     ("fisher", "Φ*"), ("free_energy", "F"))


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_series(t, series: dict, path, xlabel="t", title=None, logy=False):
    """One axis, one curve per ``series`` entry."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 5), dpi=100)
        for label, y in series.items():
            ax.plot(t, y, label=label)
        ax.set_xlabel(xlabel)
        if logy:
            ax.set_yscale("log")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_trajectory(rows, columns, path, title=None):
    """Mean, variance, χ, Φ* and F against ``t`` from summary rows."""
    data = np.asarray(rows, dtype=float)
    idx = {c: i for i, c in enumerate(columns)}
    t = data[:, idx["t"]]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 5), dpi=100)
        for key, label in TRAJECTORY_CURVES:
            ax.plot(t, data[:, idx[key]], label=label)
        ax.set_xlabel("t")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, ncol=5, loc="upper center")
        fig.tight_layout()
        _save(fig, path)


def plot_densities(measures, path, title=None):
    """``measures`` is a sequence of ``(label, GridMeasure)`` pairs."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 5), dpi=100)
        for label, mu in measures:
            ax.plot(mu.centers, mu.density, label=label)
        ax.set_xlabel("x")
        ax.set_ylabel("density")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_histogram(samples, path, bins=80, overlay=None, title=None):
    """Histogram of eigenvalues, optionally with ``(label, GridMeasure)`` overlays."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 5), dpi=100)
        ax.hist(samples, bins=bins, density=True, histtype="step", label="ESD")
        for label, mu in overlay or ():
            ax.plot(mu.centers, mu.density, label=label)
        ax.set_xlabel("eigenvalue")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
