"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .forward import Schedule, heat_smooth
from .measure import (
    GridMeasure,
    ParticleMeasure,
    SemicircleParams,
    read_grid_csv,
    semicircle_to_grid,
)

SUBCOMMANDS = ("forward", "reverse", "heat", "mc", "jko", "ineq", "debruijn", "universality")


class ConfigError(ValueError):
    pass


# key -> (type, default, (lo, hi) bounds or None)
KEYS = {
    "subcommand": (str, None, None),
    "initial_law": (str, "semicircle:0,1", None),
    "initial_law.smoothing": (float, 0.01, (1e-6, 1.0)),
    "seed": (int, 1, None),
    "output_dir": (str, "out", None),
    "schedule.kind": (str, "constant", None),
    "schedule.beta": (float, 1.0, None),
    "schedule.beta0": (float, 0.1, None),
    "schedule.beta1": (float, 1.0, None),
    "schedule.T": (float, 1.0, (1e-9, 1e4)),
    "resolution.n_cells": (int, 512, (16, 65536)),
    "resolution.n_particles": (int, 2048, (64, 1 << 17)),
    "resolution.n_steps": (int, 400, (10, 1_000_000)),
    "flow.mode": (str, "ou", None),
    "reverse.substeps": (int, 1, (1, 64)),
    "mc.N": (int, 512, (2, 8192)),
    "mc.members": (int, 32, (1, 4096)),
    "mc.n_steps": (int, 20, (1, 100_000)),
    "mc.snapshots": (int, 4, (1, 1000)),
    "jko.tau": (float, 0.05, (1e-9, 1e3)),
    "jko.n_outer": (int, 200, (1, 100_000)),
    "jko.n_particles": (int, 256, (16, 8192)),
    "jko.inner_tol": (float, 1e-8, (1e-15, 1.0)),
    "jko.inner_max_iters": (int, 100, (1, 100_000)),
}

_TYPE_NAMES = {int: "integer", float: "real", str: "text"}


@dataclass(frozen=True)
class LawSpec:
    """Parsed ``initial_law`` descriptor.

    Forms: ``semicircle:m,var``, ``dirac:a``, ``two_atom`` (or
    ``two_atom:l,r``), ``mixture:x1,x2,...`` (equal-weight atoms) and
    ``csv:path`` (a grid CSV with header ``x,density``).
    """

    kind: str
    params: tuple = ()
    path: str = ""

    @classmethod
    def parse(cls, text: str) -> "LawSpec":
        head, _, rest = text.strip().partition(":")
        head = head.strip().lower()
        if head == "csv":
            if not os.path.isfile(rest.strip()):
                raise ConfigError(f"initial_law: file not found: {rest.strip()}")
            return cls("csv", (), rest.strip())
        try:
            nums = tuple(float(v) for v in rest.split(",")) if rest.strip() else ()
        except ValueError:
            raise ConfigError(f"initial_law: expected real parameters, got {rest!r}") from None
        if head in ("semicircle", "sc"):
            if len(nums) != 2 or nums[1] <= 0:
                raise ConfigError("initial_law: semicircle needs m,var with var > 0")
            return cls("semicircle", nums)
        if head == "dirac":
            if len(nums) != 1:
                raise ConfigError("initial_law: dirac needs one location")
            return cls("dirac", nums)
        if head == "two_atom":
            if nums and len(nums) != 2:
                raise ConfigError("initial_law: two_atom takes l,r")
            return cls("two_atom", nums or (-1.0, 1.0))
        if head == "mixture":
            if len(nums) < 1:
                raise ConfigError("initial_law: mixture needs atom locations")
            return cls("mixture", tuple(sorted(nums)))
        raise ConfigError(f"initial_law: unknown law {head!r}")

    @property
    def is_atomic(self) -> bool:
        return self.kind in ("dirac", "two_atom", "mixture")

    def atoms(self) -> ParticleMeasure:
        if self.kind == "dirac":
            return ParticleMeasure([self.params[0]] * 2)
        return ParticleMeasure(sorted(self.params))

    def raw(self, n_cells: int = 512):
        """The law itself: atoms as particles, densities as grids."""
        if self.is_atomic:
            return self.atoms()
        return self.grid(n_cells, 0.0)

    def grid(self, n_cells: int = 512, smoothing: float = 0.01) -> GridMeasure:
        """Grid version; atomic laws are first run through the heat flow for ``smoothing``."""
        if self.kind == "semicircle":
            return semicircle_to_grid(SemicircleParams(*self.params), n_cells)
        if self.kind == "csv":
            return read_grid_csv(self.path)
        return heat_smooth(self.atoms(), smoothing, n_cells)

    def mc_spec(self, n_cells: int = 512):
        if self.kind == "dirac":
            return ("dirac", self.params[0])
        if self.is_atomic:
            return ("atoms", self.params)
        return self.grid(n_cells)


@dataclass
class ExperimentConfig:
    subcommand: str
    initial_law: LawSpec
    schedule: Schedule
    n_cells: int = 512
    n_particles: int = 2048
    n_steps: int = 400
    seed: int = 1
    output_dir: str = "out"
    values: dict = field(default_factory=dict)

    def get(self, key):
        return self.values[key]

    def echo(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}


def _convert(key, raw):
    typ = KEYS[key][0]
    try:
        if typ is int:
            val = int(raw, 0)
        elif typ is float:
            val = float(raw)
        else:
            val = raw
    except ValueError:
        raise ConfigError(f"{key}: expected {_TYPE_NAMES[typ]}, got {raw!r}") from None
    bounds = KEYS[key][2]
    if bounds is not None and not bounds[0] <= val <= bounds[1]:
        raise ConfigError(f"{key}: {val} outside [{bounds[0]}, {bounds[1]}]")
    return val


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a config document; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, raw.strip())
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = _convert(key, str(val))
    if "subcommand" not in values:
        raise ConfigError("subcommand required")
    if values["subcommand"] not in SUBCOMMANDS:
        raise ConfigError(f"subcommand must be one of {', '.join(SUBCOMMANDS)}")
    for key, (_, default, _) in KEYS.items():
        values.setdefault(key, default)

    if values["flow.mode"] not in ("ou", "heat"):
        raise ConfigError("flow.mode must be ou or heat")
    for key in ("schedule.beta", "schedule.beta1"):
        if values[key] <= 0:
            raise ConfigError("β must be positive")
    if values["schedule.beta0"] < 0:
        raise ConfigError("β must be positive")
    try:
        sched = Schedule(
            kind=values["schedule.kind"],
            T=values["schedule.T"],
            beta=values["schedule.beta"],
            beta0=values["schedule.beta0"],
            beta1=values["schedule.beta1"],
        )
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    return ExperimentConfig(
        subcommand=values["subcommand"],
        initial_law=LawSpec.parse(values["initial_law"]),
        schedule=sched,
        n_cells=values["resolution.n_cells"],
        n_particles=values["resolution.n_particles"],
        n_steps=values["resolution.n_steps"],
        seed=values["seed"],
        output_dir=values["output_dir"],
        values=values,
    )


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, overrides)
