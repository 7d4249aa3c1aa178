import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freeflow.forward import Schedule, ou_pushforward, two_atom
from freeflow.matrix_mc import (
    EigenError,
    MatrixEnsemble,
    ddpm_step,
    esd,
    gue_ensemble,
    initial_matrix,
    max_workers,
    run_forward_mc,
    sample_gue,
    write_esd_csv,
)
from freeflow.measure import ParticleMeasure, moment, w2

from conftest import sc


def ntr(x, k=1):
    return float(np.trace(np.linalg.matrix_power(x, k)).real) / x.shape[0]


def test_gue_normalization():
    x = sample_gue(512, 1.0, 7)
    assert ntr(x, 2) == pytest.approx(1.0, abs=0.1)
    assert ntr(x) == pytest.approx(0.0, abs=0.1)
    assert ntr(sample_gue(512, 4.0, 7), 2) == pytest.approx(4.0, abs=0.4)


def test_gue_entry_variances():
    n = 400
    x = sample_gue(n, 2.0, 3)
    iu = np.triu_indices(n, 1)
    assert np.var(x.diagonal().real) * n == pytest.approx(2.0, rel=0.2)
    assert np.all(x.diagonal().imag == 0)
    assert np.var(x[iu].real) * 2 * n == pytest.approx(2.0, rel=0.02)
    assert np.var(x[iu].imag) * 2 * n == pytest.approx(2.0, rel=0.02)


def test_gue_rejects_small_n():
    with pytest.raises(ValueError):
        sample_gue(1)


def test_ddpm_step_limits():
    rng = np.random.default_rng(0)
    x = sample_gue(64, 1.0, 1)
    assert np.array_equal(ddpm_step(x, 1.0, rng), x)
    y = ddpm_step(np.diag(np.full(256, 5.0)).astype(complex), 1e-12, rng)
    assert ntr(y) == pytest.approx(0.0, abs=0.1)
    assert ntr(y, 2) == pytest.approx(1.0, abs=0.15)
    with pytest.raises(ValueError):
        ddpm_step(x, 0.0, rng)


def test_ddpm_iteration_second_moment():
    rng = np.random.default_rng(5)
    x0 = initial_matrix(("atoms", (-2.0, 1.0)), 512)
    m2 = ntr(x0, 2)
    x = x0
    abar = 1.0
    for a in (0.9, 0.8, 0.95, 0.7):
        x = ddpm_step(x, a, rng)
        abar *= a
    assert ntr(x, 2) == pytest.approx(abar * m2 + 1 - abar, abs=0.1)


@given(st.integers(2, 40), st.floats(0.01, 1.0), st.integers(0, 2 ** 32))
def test_hermiticity_preserved(n, alpha, seed):
    rng = np.random.default_rng(seed)
    x = sample_gue(n, 1.0, rng)
    for _ in range(3):
        x = ddpm_step(x, alpha, rng)
        assert np.max(np.abs(x - x.conj().T)) == 0.0


def test_esd_examples():
    e = esd(gue_ensemble(512, 32, 1.0, 1))
    assert len(e.eigenvalues) == 512 * 32
    assert np.all(np.diff(e.eigenvalues) >= 0)
    assert w2(e.as_measure, sc(n=8192)) <= 0.05
    d = np.arange(1, 65) / 64
    ens = MatrixEnsemble(64, [np.diag(d[::-1]).astype(complex)])
    np.testing.assert_array_equal(esd(ens).eigenvalues, d)
    e4 = esd(gue_ensemble(512, 8, 4.0, 1))
    assert w2(e4.as_measure, sc(0, 4, 8192)) <= 0.1


def test_esd_reports_member_index():
    bad = np.full((4, 4), np.nan, dtype=complex)
    ens = MatrixEnsemble(4, [np.eye(4, dtype=complex), bad])
    with pytest.raises((EigenError, np.linalg.LinAlgError, ValueError)) as info:
        esd(ens)
    if isinstance(info.value, EigenError):
        assert "member 1" in str(info.value)


def test_gue_w2_decreases_with_n():
    ref = sc(n=16384)
    d = [w2(esd(gue_ensemble(n, 8, 1.0, 1)).as_measure, ref) for n in (128, 256, 512)]
    assert d[1] <= 1.2 * d[0] and d[2] <= 1.2 * d[1]
    assert d[2] < d[0]


def test_forward_mc_examples():
    ref = sc(n=8192)
    (t, res), = run_forward_mc("two_atom", Schedule(T=3.0), 10, N=256, members=8, rng_seed=1)
    assert t == pytest.approx(3.0)
    assert w2(res.as_measure, ref) <= 0.05
    s = Schedule("linear", T=2.0, beta0=0.0, beta1=1.0)  # Lambda(2) = 1
    (t, res), = run_forward_mc(("dirac", 0.0), s, 40, N=256, members=8, rng_seed=1)
    assert s.Lambda(t) == pytest.approx(1.0)
    assert w2(res.as_measure, sc(0, 1 - math.exp(-1), 8192)) <= 0.05


def test_forward_mc_snapshots_and_csv(tmp_path):
    snaps = run_forward_mc(("dirac", 1.0), Schedule(T=1.0), 4, N=16, members=2,
                           rng_seed=3, snapshot_times=[0.0, 0.5, 1.0])
    assert [t for t, _ in snaps] == [0.0, 0.5, 1.0]
    np.testing.assert_array_equal(snaps[0][1].eigenvalues, np.ones(32))
    write_esd_csv(snaps, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "t,eigenvalue" and len(lines) == 1 + 3 * 32


def test_forward_mc_deterministic(monkeypatch):
    a = run_forward_mc("two_atom", Schedule(T=1.0), 3, N=32, members=4, rng_seed=9)
    monkeypatch.setenv("FREEFLOW_THREADS", "1")
    assert max_workers() == 1
    b = run_forward_mc("two_atom", Schedule(T=1.0), 3, N=32, members=4, rng_seed=9)
    np.testing.assert_array_equal(a[0][1].eigenvalues, b[0][1].eigenvalues)


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_gue_tolerance_across_seeds(seed):
    assert w2(esd(gue_ensemble(256, 8, 1.0, seed)).as_measure, sc(n=8192)) <= 0.05


def test_moments_match_free_prediction():
    s = Schedule(T=1.0)
    for spec, law in ((("dirac", 1.0), ParticleMeasure([1.0, 1.0])),
                      ("two_atom", two_atom()),
                      (("atoms", (-1.0, 0.0, 2.0)), ParticleMeasure([-1.0, 0.0, 2.0]))):
        (t, res), = run_forward_mc(spec, s, 5, N=512, members=8, rng_seed=1)
        pred = ou_pushforward(law, s, t, 2048)
        for k in range(1, 5):
            got = float(np.mean(res.eigenvalues ** k))
            want = moment(pred, k)
            assert got == pytest.approx(want, abs=0.05 * max(1.0, abs(want)))
