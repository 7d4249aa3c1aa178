"""Command-line runner: ``freeflow <subcommand> --config <path>``.

Exit codes: 0 on success, 1 on a configuration error, 2 on a numerical
failure.  Every run ends by writing ``manifest.json`` with the config echo,
library version, wall-clock time and a sha256 for every file written.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import functionals as fn
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, load_config
from .forward import (
    SUMMARY_COLUMNS,
    FlowError,
    de_bruijn_residual,
    integrate_forward,
    ou_pushforward,
    trajectory_summary,
    write_summary_csv,
)
from .inequalities import (
    entropy_production_report,
    run_suite,
    standard_semicircle,
    stam_check,
)
from .jko import JkoConfig, run_jko
from .matrix_mc import run_forward_mc, write_esd_csv
from .measure import MeasureError, ParticleMeasure, w2, write_grid_csv, write_particles_csv
from .reverse import integrate_reverse
from . import plotting

log = logging.getLogger("freeflow")

NUMERICAL_ERRORS = (FlowError, MeasureError, ArithmeticError, np.linalg.LinAlgError)


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.cause = exc


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_clock: float = 0.0
    checksums: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "version": self.version,
            "wall_clock_s": round(self.wall_clock, 3),
            "checksums": dict(sorted(self.checksums.items())),
        }


class _Outputs:
    """Tracks written files so a failed run can remove them."""

    def __init__(self, root):
        self.root = root
        self.files = []

    def path(self, name):
        p = os.path.join(self.root, name)
        self.files.append(p)
        return p

    def json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")

    def checksums(self):
        out = {}
        for p in self.files:
            with open(p, "rb") as fh:
                out[os.path.basename(p)] = hashlib.sha256(fh.read()).hexdigest()
        return out

    def remove_all(self):
        for p in self.files:
            if os.path.exists(p):
                os.remove(p)


@contextmanager
def stage(name):
    try:
        yield
    except NUMERICAL_ERRORS as exc:
        raise StageError(name, exc) from exc


def _initial(cfg: ExperimentConfig):
    with stage("initial_law"):
        return cfg.initial_law.grid(cfg.n_cells, cfg.get("initial_law.smoothing"))


def _write_trajectory(out, traj, stem="trajectory", title=None):
    rows = trajectory_summary(traj)
    write_summary_csv(rows, out.path(f"{stem}.csv"))
    plotting.plot_trajectory(rows, SUMMARY_COLUMNS, out.path(f"{stem}.svg"), title)
    return rows


def _write_measure(out, name, mu, label):
    write_grid_csv(mu, out.path(f"{name}.csv"))
    plotting.plot_densities([(label, mu)], out.path(f"{name}.svg"))


def _forward(cfg, mode=None):
    mu0 = _initial(cfg)
    mode = mode or cfg.get("flow.mode")
    with stage("forward"):
        return mu0, integrate_forward(mu0, cfg.schedule, cfg.n_steps, cfg.n_particles, mode, cfg.n_cells)


def run_forward(cfg, out, mode=None):
    mu0, traj = _forward(cfg, mode)
    _write_trajectory(out, traj, title=f"{traj.mode} flow")
    _write_measure(out, "final_density", traj.measures[-1], f"t = {traj.T:g}")
    plotting.plot_densities([("t = 0", mu0), (f"t = {traj.T:g}", traj.measures[-1])],
                            out.path("densities.svg"))
    with stage("forward"):
        report = entropy_production_report(traj)
    if traj.mode == "heat":
        with stage("stam"):
            reports = stam_check(traj)
        out.json("stam.json", [r.to_dict() for r in reports])
    out.json("entropy_production.json", report)
    return traj


def run_reverse(cfg, out):
    traj = run_forward(cfg, out)
    with stage("reverse"):
        res = integrate_reverse(traj, cfg.n_particles, cfg.n_cells, cfg.get("reverse.substeps"))
    res.write_steps_csv(out.path("reverse_steps.csv"))
    res.write_json(out.path("reverse.json"))
    _write_measure(out, "reconstructed_density", res.reconstructed, "reconstructed")
    return res


def run_mc(cfg, out):
    law = cfg.initial_law
    s = cfg.schedule
    n = cfg.get("mc.n_steps")
    k = cfg.get("mc.snapshots")
    steps = sorted({max(1, round(n * (j + 1) / k)) for j in range(k)})
    with stage("mc"):
        snaps = run_forward_mc(law.mc_spec(cfg.n_cells), s, n, cfg.get("mc.N"),
                               cfg.get("mc.members"), cfg.seed, snapshot_steps=steps)
    rows = []
    with stage("prediction"):
        raw = law.raw(cfg.n_cells)
        for t, res in snaps:
            pred = ou_pushforward(raw, s, t, cfg.n_cells)
            rows.append({"t": t, "mean": res.mean(), "variance": res.variance(),
                         "w2_to_prediction": w2(res.as_measure, pred)})
    write_esd_csv(snaps, out.path("esd.csv"))
    out.json("mc_summary.json", rows)
    t_last, last = snaps[-1]
    plotting.plot_histogram(last.eigenvalues, out.path("esd.svg"),
                            overlay=[("prediction", pred)], title=f"t = {t_last:g}")
    return rows


def run_jko_cmd(cfg, out):
    mu0 = _initial(cfg)
    jc = JkoConfig(cfg.get("jko.tau"), cfg.get("jko.n_outer"), cfg.get("jko.n_particles"),
                   cfg.get("jko.inner_tol"), cfg.get("jko.inner_max_iters"))
    with stage("jko"):
        run = run_jko(mu0, jc)
        final = run.iterates[-1]
        summary = {
            "w2_final_to_sc": w2(final, standard_semicircle()),
            "edi_all": bool(np.all(run.edi_ok)),
            "min_edi_slack": float(run.edi_slack.min()) if len(run.edi_slack) else 0.0,
            "total_bound_slack": run.total_bound_slack(),
        }
    run.write_csv(out.path("jko.csv"))
    write_particles_csv(final, out.path("final_particles.csv"))
    out.json("jko.json", summary)
    k = np.arange(len(run.energies))
    plotting.plot_series(k, {"free energy": run.energies}, out.path("jko.svg"), xlabel="k")
    return summary


def run_ineq(cfg, out):
    with stage("ineq"):
        reports, summary = run_suite()
    out.json("reports.json", [r.to_dict() for r in reports])
    out.json("summary.json", summary)
    return summary


def run_debruijn(cfg, out):
    mu0, traj = _forward(cfg)
    _write_trajectory(out, traj)
    with stage("debruijn"):
        rows = de_bruijn_residual(traj)
        report = entropy_production_report(traj)
    write_summary_csv(rows, out.path("debruijn.csv"),
                      ("t", "dchi_dt", "half_rate_fisher", "half_rate_fisher_minus_one"))
    out.json("entropy_production.json", report)
    r = np.asarray(rows)
    plotting.plot_series(r[:, 0], {"dχ/dt": r[:, 1], "½βΦ*": r[:, 2], "½β(Φ*-1)": r[:, 3]},
                         out.path("debruijn.svg"))
    return report


def run_universality(cfg, out):
    res = run_reverse(cfg, out)
    traj_final = res.path[0][1]
    with stage("universality"):
        summary = {
            "initial_law": cfg.get("initial_law"),
            "Lambda_T": float(cfg.schedule.Lambda(cfg.schedule.T)),
            "w2_forward_to_sc": w2(traj_final, standard_semicircle()),
            "w2_reverse_to_initial": res.w2_to_target,
        }
        if cfg.initial_law.is_atomic:
            summary["w2_reverse_to_unsmoothed"] = w2(res.particles, cfg.initial_law.raw())
    out.json("universality.json", summary)
    return summary


PIPELINES = {
    "forward": run_forward,
    "heat": lambda cfg, out: run_forward(cfg, out, mode="heat"),
    "reverse": run_reverse,
    "mc": run_mc,
    "jko": run_jko_cmd,
    "ineq": run_ineq,
    "debruijn": run_debruijn,
    "universality": run_universality,
}


def run(cfg: ExperimentConfig) -> RunManifest:
    """Run one experiment; on failure every file written so far is removed."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = _Outputs(cfg.output_dir)
    start = time.perf_counter()
    try:
        PIPELINES[cfg.subcommand](cfg, out)
    except BaseException:
        out.remove_all()
        raise
    manifest = RunManifest(cfg.echo(), __version__, time.perf_counter() - start, out.checksums())
    with open(os.path.join(cfg.output_dir, "manifest.json"), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
        fh.write("\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freeflow", description="Free-probability diffusion experiments.")
    p.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {"subcommand": args.subcommand, "output_dir": args.output_dir, "seed": args.seed}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        manifest = run(cfg)
    except StageError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    log.info("wrote %d files to %s", len(manifest.checksums) + 1, cfg.output_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
