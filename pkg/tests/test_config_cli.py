import csv
import hashlib
import json
import os

import pytest

from freeflow import __version__, cli
from freeflow.config import KEYS, ConfigError, LawSpec, parse_config
from freeflow.forward import SUMMARY_COLUMNS
from freeflow.measure import ParticleMeasure

FORWARD = """\
subcommand = forward
initial_law = dirac:1
schedule.kind = constant
schedule.beta = 1
schedule.T = 0.6931
"""

SMALL = "resolution.n_cells = 256\nresolution.n_particles = 512\nresolution.n_steps = 60\n"


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def run_cli(tmp_path, text, sub=None, out="out", extra=()):
    argv = ([sub] if sub else []) + ["--config", write_cfg(tmp_path, text),
                                     "--output-dir", str(tmp_path / out), *extra]
    return cli.main(argv)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def manifest(tmp_path, out="out"):
    return json.loads((tmp_path / out / "manifest.json").read_text())


def check_manifest(tmp_path, out="out"):
    m = manifest(tmp_path, out)
    files = sorted(f for f in os.listdir(tmp_path / out) if f != "manifest.json")
    assert sorted(m["checksums"]) == files
    for name, digest in m["checksums"].items():
        assert hashlib.sha256((tmp_path / out / name).read_bytes()).hexdigest() == digest
    assert m["version"] == __version__ and m["wall_clock_s"] >= 0
    return m


# -- parsing ------------------------------------------------------------------------

def test_parse_forward_example():
    cfg = parse_config(FORWARD)
    assert cfg.subcommand == "forward"
    assert cfg.initial_law == LawSpec("dirac", (1.0,))
    assert cfg.schedule.T == pytest.approx(0.6931) and cfg.schedule.beta == 1.0
    assert (cfg.n_cells, cfg.n_particles, cfg.n_steps, cfg.seed) == (512, 2048, 400, 1)


def test_parse_defaults_and_echo():
    cfg = parse_config("subcommand = ineq  # comment\n\n")
    echo = cfg.echo()
    assert list(echo) == sorted(KEYS)
    assert echo["initial_law"] == "semicircle:0,1"


def test_parse_overrides():
    cfg = parse_config(FORWARD, {"seed": 9, "output_dir": "x", "subcommand": None})
    assert cfg.seed == 9 and cfg.output_dir == "x" and cfg.subcommand == "forward"


@pytest.mark.parametrize("text, msg", [
    ("schedule.T = 1\n", "subcommand required"),
    ("subcommand = forward\nschedule.beta = -1\n", "β must be positive"),
    ("subcommand = forward\nfoo.bar = 1\n", "unknown key 'foo.bar'"),
    ("subcommand = forward\nseed = one\n", "seed: expected integer"),
    ("subcommand = forward\nschedule.T = soon\n", "schedule.T: expected real"),
    ("subcommand = dance\n", "subcommand must be one of"),
    ("subcommand = forward\nresolution.n_cells = 4\n", "outside"),
    ("subcommand = forward\nflow.mode = brownian\n", "flow.mode"),
    ("subcommand = forward\nschedule.kind = stepwise\n", "unknown schedule kind"),
    ("subcommand = forward\njust text\n", "expected key = value"),
    ("subcommand = forward\ninitial_law = csv:/nonexistent/law.csv\n", "file not found"),
    ("subcommand = forward\ninitial_law = semicircle:0\n", "semicircle needs"),
    ("subcommand = forward\ninitial_law = cauchy:0,1\n", "unknown law"),
])
def test_parse_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_law_specs():
    assert LawSpec.parse("two_atom") == LawSpec("two_atom", (-1.0, 1.0))
    assert LawSpec.parse("mixture:1,-2,0").params == (-2.0, 0.0, 1.0)
    assert LawSpec.parse("SC:0,4").kind == "semicircle"
    law = LawSpec.parse("mixture:-1,0,1")
    assert law.is_atomic and isinstance(law.raw(), ParticleMeasure)
    g = law.grid(256, 0.01)
    assert g.masses.sum() == pytest.approx(1.0, abs=1e-9)
    assert LawSpec.parse("dirac:0.5").mc_spec() == ("dirac", 0.5)
    assert not LawSpec.parse("semicircle:0,1").is_atomic


def test_law_from_csv(tmp_path):
    src = LawSpec.parse("semicircle:0,1").grid(128)
    path = tmp_path / "law.csv"
    from freeflow.measure import write_grid_csv
    write_grid_csv(src, path)
    law = LawSpec.parse(f"csv:{path}")
    assert law.grid().masses == pytest.approx(src.masses, abs=1e-12)


# -- runs ------------------------------------------------------------------------------

def test_cli_forward_point_mass_example(tmp_path):
    assert run_cli(tmp_path, FORWARD) == 0
    rows = read_csv(tmp_path / "out" / "trajectory.csv")
    assert tuple(rows[0]) == SUMMARY_COLUMNS
    last = dict(zip(rows[0], map(float, rows[-1])))
    assert last["mean"] == pytest.approx(0.7071, abs=0.01)
    assert last["variance"] == pytest.approx(0.5, abs=0.01)
    m = check_manifest(tmp_path)
    assert {"trajectory.csv", "trajectory.svg", "final_density.csv", "final_density.svg",
            "entropy_production.json"} <= set(m["checksums"])
    assert m["config"]["initial_law"] == "dirac:1"
    svg = (tmp_path / "out" / "trajectory.svg").read_text()
    assert 'width="576pt" height="360pt"' in svg and 'viewBox="0 0 576 360"' in svg


def test_cli_reproducible_checksums(tmp_path):
    text = "subcommand = jko\ninitial_law = semicircle:0,4\njko.n_outer = 20\njko.n_particles = 64\n"
    assert run_cli(tmp_path, text, out="a") == 0
    assert run_cli(tmp_path, text, out="b") == 0
    assert manifest(tmp_path, "a")["checksums"] == manifest(tmp_path, "b")["checksums"]
    assert read_csv(tmp_path / "a" / "jko.csv")[0] == ["k", "free_energy", "transport_cost_sq", "edi_ok"]
    check_manifest(tmp_path, "a")


def test_cli_mc_reproducible(tmp_path):
    text = FORWARD.replace("forward", "mc") + "mc.N = 64\nmc.members = 4\nmc.n_steps = 4\nmc.snapshots = 2\n"
    assert run_cli(tmp_path, text, out="a") == 0
    assert run_cli(tmp_path, text, out="b") == 0
    assert manifest(tmp_path, "a")["checksums"] == manifest(tmp_path, "b")["checksums"]
    assert read_csv(tmp_path / "a" / "esd.csv")[0] == ["t", "eigenvalue"]
    summary = json.loads((tmp_path / "a" / "mc_summary.json").read_text())
    assert [sorted(r) for r in summary] == [["mean", "t", "variance", "w2_to_prediction"]] * 2
    assert run_cli(tmp_path, text, out="c", extra=("--seed", "2")) == 0
    assert manifest(tmp_path, "c")["checksums"]["esd.csv"] != manifest(tmp_path, "a")["checksums"]["esd.csv"]


def test_cli_subcommand_argument_overrides(tmp_path):
    assert run_cli(tmp_path, FORWARD + SMALL, sub="heat") == 0
    m = check_manifest(tmp_path)
    assert m["config"]["subcommand"] == "heat"
    assert "stam.json" in m["checksums"]


@pytest.mark.parametrize("sub, expected", [
    ("reverse", {"reverse_steps.csv", "reverse.json", "reconstructed_density.csv"}),
    ("debruijn", {"debruijn.csv", "debruijn.svg", "entropy_production.json"}),
    ("universality", {"universality.json", "reverse.json"}),
])
def test_cli_pipelines(tmp_path, sub, expected):
    text = f"subcommand = {sub}\ninitial_law = two_atom\nschedule.T = 1\n" + SMALL
    assert run_cli(tmp_path, text) == 0
    m = check_manifest(tmp_path)
    assert expected <= set(m["checksums"])
    if sub == "universality":
        u = json.loads((tmp_path / "out" / "universality.json").read_text())
        assert {"w2_forward_to_sc", "w2_reverse_to_initial", "w2_reverse_to_unsmoothed"} <= set(u)


def test_cli_ineq(tmp_path):
    assert run_cli(tmp_path, "subcommand = ineq\n") == 0
    reports = json.loads((tmp_path / "out" / "reports.json").read_text())
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert len(reports) == summary["total"] == 120
    assert summary["violations_relative"] == 0
    assert set(reports[0]) == {"name", "convention", "lhs", "rhs", "holds", "input"}


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert run_cli(tmp_path, "subcommand = forward\nschedule.beta = -1\n") == 1
    assert "β must be positive" in capsys.readouterr().err
    assert cli.main(["forward", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_cli_numerical_failure_exit_code(tmp_path, capsys):
    text = "subcommand = jko\ninitial_law = semicircle:0,4\njko.inner_max_iters = 1\njko.n_particles = 64\n"
    assert run_cli(tmp_path, text) == 2
    assert "stage 'jko'" in capsys.readouterr().err
    assert not (tmp_path / "out" / "manifest.json").exists()


def test_partial_outputs_removed(tmp_path, monkeypatch):
    def failing(cfg, out):
        out.json("early.json", {"x": 1})
        with cli.stage("late"):
            raise ArithmeticError("boom")

    monkeypatch.setitem(cli.PIPELINES, "forward", failing)
    assert run_cli(tmp_path, FORWARD) == 2
    assert os.listdir(tmp_path / "out") == []
