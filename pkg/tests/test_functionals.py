import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from freeflow import functionals as fn
from freeflow.forward import heat_smooth
from freeflow.measure import ParticleMeasure, moment

from conftest import sc

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def pv_oracle(mu, x):
    """``p.v. int rho(y)/(x - y) dy`` by QUADPACK's Cauchy-weight rule on the
    piecewise-linear interpolant of the density."""
    f = lambda y: np.interp(y, mu.centers, mu.density, left=0.0, right=0.0)
    val, _ = quad(f, mu.x_min, mu.x_max, weight="cauchy", wvar=x, limit=400)
    return -val


def log_energy_oracle(v, n=4000):
    """Double Gauss-Chebyshev (second kind) quadrature on SC(0, v) with two
    interleaved node sets so no pair coincides."""
    k = np.arange(1, n + 1)
    th1 = k * np.pi / (n + 1)
    th2 = (k - 0.5) * np.pi / n
    r = 2.0 * math.sqrt(v)
    x, y = r * np.cos(th1), r * np.cos(th2)
    wx = np.sin(th1) ** 2 / np.sum(np.sin(th1) ** 2)
    wy = np.sin(th2) ** 2 / np.sum(np.sin(th2) ** 2)
    return float(wx @ np.log(np.abs(x[:, None] - y[None, :])) @ wy)


def test_hilbert_examples():
    assert fn.hilbert_transform(sc(), 1.0) == pytest.approx(0.5, abs=1e-2)
    assert fn.hilbert_transform(sc(), 0.0) == pytest.approx(0.0, abs=1e-3)
    assert fn.hilbert_transform(sc(0, 2), 1.0) == pytest.approx(0.25, abs=1e-2)


def test_hilbert_matches_cauchy_weight_quadrature():
    mu = heat_smooth(ParticleMeasure([-1.0, 0.5, 1.0]), 0.05)
    for x in (-1.2, -0.3, 0.2, 0.77, 1.1):
        assert fn.hilbert_transform(mu, x) == pytest.approx(pv_oracle(mu, x), abs=2e-3)


def test_hilbert_outside_support_is_plain_integral():
    mu = sc()
    x = 3.0
    want = quad(lambda y: np.interp(y, mu.centers, mu.density) / (x - y),
                mu.x_min, mu.x_max, limit=500, points=[-2.0, 2.0])[0]
    assert fn.hilbert_transform(mu, x) == pytest.approx(want, abs=1e-5)
    # exact Cauchy transform of SC(0,1) on the real axis outside [-2, 2]
    assert fn.hilbert_transform(mu, x) == pytest.approx((x - math.sqrt(x * x - 4)) / 2, abs=1e-4)


def test_edge_and_center_values_agree_with_exact_field():
    mu = sc(0, 2)
    inside = np.abs(mu.centers) < 2.5
    np.testing.assert_allclose(fn.hilbert_at_centers(mu)[inside], mu.centers[inside] / 4, atol=2e-3)
    e = mu.edges
    inside = np.abs(e) < 2.5
    np.testing.assert_allclose(fn.hilbert_at_edges(mu)[inside], e[inside] / 4, atol=5e-3)


def test_conjugate_variable_examples():
    def xi_at(mu, x):
        f = fn.conjugate_variable(mu)
        return float(np.interp(x, mu.centers, f.values))

    assert xi_at(sc(), 0.7) == pytest.approx(0.7, abs=1e-2)
    assert xi_at(sc(0, 4), 1.0) == pytest.approx(0.25, abs=1e-2)
    assert xi_at(sc(5, 1), 5.0) == pytest.approx(0.0, abs=1e-2)


def test_gap_flag():
    wide = heat_smooth(ParticleMeasure([-3.0, 3.0]), 0.01)
    assert fn.conjugate_variable(wide).gap_warning
    assert not fn.conjugate_variable(sc()).gap_warning


def test_log_energy_examples_and_oracle():
    assert fn.log_energy(sc()) == pytest.approx(-0.25, abs=5e-3)
    assert fn.log_energy(sc(5, 1)) == pytest.approx(-0.25, abs=5e-3)
    assert fn.log_energy(sc(0, 4)) == pytest.approx(-0.25 + math.log(2), abs=5e-3)
    for v in (0.5, 2.0):
        assert fn.log_energy(sc(0, v)) == pytest.approx(log_energy_oracle(v), abs=2e-3)


def test_chi_examples():
    assert fn.free_entropy_chi(sc()) == pytest.approx(0.5 + HALF_LOG_2PI, abs=5e-3)
    assert fn.free_entropy_chi(sc(2, 1)) == pytest.approx(fn.free_entropy_chi(sc()), abs=1e-6)
    for v in (0.25, 3.0):
        diff = fn.free_entropy_chi(sc(0, v)) - fn.free_entropy_chi(sc())
        assert diff == pytest.approx(0.5 * math.log(v), abs=5e-3)


def test_fisher_examples():
    assert fn.free_fisher(sc()) == pytest.approx(1.0, abs=2e-2)
    assert fn.free_fisher(sc(0, 4)) == pytest.approx(0.25, abs=1e-2)
    assert fn.free_fisher(sc(3, 1)) == pytest.approx(1.0, abs=2e-2)


def test_free_energy_examples():
    assert fn.free_energy(sc()) == pytest.approx(0.75, abs=1e-2)
    assert fn.free_energy(sc(0, 4)) == pytest.approx(2.25 - math.log(2), abs=1e-2)


def test_free_energy_minimized_at_standard_semicircle():
    vs = np.linspace(0.25, 4.0, 61)
    f = [fn.free_energy(sc(0, float(v))) for v in vs]
    assert abs(vs[int(np.argmin(f))] - 1.0) <= vs[1] - vs[0]


def test_report_identities_and_json():
    r = fn.functional_report(sc(0, 2))
    assert r.chi == r.log_energy + fn.CHI_CONSTANT
    assert r.free_energy == 0.5 * r.second_moment - r.log_energy
    assert set(json.loads(r.to_json())) == {"log_energy", "chi", "fisher", "free_energy", "second_moment"}


def test_entropy_gradient_forms():
    mu = sc(0, 2)
    x = mu.centers
    xi = fn.conjugate_variable(mu).values
    np.testing.assert_allclose(fn.entropy_gradient(mu), xi - x)
    np.testing.assert_allclose(fn.entropy_gradient(mu, "half_x"), 0.5 * x + xi)
    with pytest.raises(ValueError):
        fn.entropy_gradient(mu, "other")


smooth_laws = st.sampled_from([
    ("sc", (0.0, 1.0)), ("sc", (0.5, 0.3)), ("sc", (-1.0, 3.0)),
    ("atoms", (-1.0, 1.0)), ("atoms", (-1.0, 0.0, 2.0)), ("atoms", (-0.5, 0.5)),
])


def build(law):
    kind, par = law
    if kind == "sc":
        return sc(*par)
    return heat_smooth(ParticleMeasure(list(par)), 0.05)


@given(smooth_laws)
def test_integration_by_parts(law):
    assert fn.conjugate_variable(build(law)).pairing() == pytest.approx(1.0, abs=1e-2)


@given(smooth_laws, st.floats(-3.0, 3.0))
def test_translation_invariance(law, c):
    mu = build(law)
    nu = mu.shifted(c)
    assert fn.log_energy(nu) == pytest.approx(fn.log_energy(mu), abs=1e-6)
    assert fn.free_entropy_chi(nu) == pytest.approx(fn.free_entropy_chi(mu), abs=1e-6)
    assert fn.free_fisher(nu) == pytest.approx(fn.free_fisher(mu), rel=1e-6)


@given(smooth_laws, st.floats(0.3, 3.0))
def test_dilation_identities(law, c):
    mu = build(law)
    d = mu.dilated(c)
    assert fn.free_entropy_chi(d) == pytest.approx(fn.free_entropy_chi(mu) + math.log(c), abs=5e-3)
    assert fn.free_fisher(d) == pytest.approx(fn.free_fisher(mu) / c ** 2, abs=2e-2)


@given(smooth_laws)
def test_fisher_nonnegative(law):
    assert fn.free_fisher(build(law)) >= 0.0


@given(st.floats(0.25, 4.0).filter(lambda v: abs(v - 1) > 0.05))
def test_fisher_is_one_only_at_unit_variance(v):
    assert abs(fn.free_fisher(sc(0, v)) - 1.0) > 1e-2
