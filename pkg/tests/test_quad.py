import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blowuplab import quad
from blowuplab.errors import QuadFailure


def test_integrate_square():
    assert abs(quad.integrate(lambda y: y ** 2, 0.0, 1.0) - 1 / 3) <= 1e-10


def test_integrate_reciprocal_square():
    assert quad.integrate(lambda y: y ** -2, 1.0, 2.0) == pytest.approx(0.5, abs=1e-10)


def test_integrate_declared_endpoint_singularity():
    with np.errstate(divide="ignore"):
        got = quad.integrate(lambda y: y ** -0.5, 0.0, 1.0, singular=(0.5, 0.0))
    assert got == pytest.approx(2.0, abs=1e-9)


def test_integrate_rejects_empty_interval():
    with pytest.raises(ValueError):
        quad.integrate(lambda y: y, 1.0, 1.0)


def test_integrate_non_finite_integrand_fails():
    with pytest.raises(QuadFailure):
        quad.integrate(lambda y: np.where(y > 0.5, np.nan, 1.0), 0.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(0.01, 3), st.floats(0.01, 3), st.sampled_from(["exp", "cos", "poly"]))
def test_integrate_is_additive(a, w1, w2, kind):
    f = {"exp": np.exp, "cos": np.cos, "poly": lambda y: y ** 3 - 2 * y}[kind]
    b, c = a + w1, a + w1 + w2
    ab, bc, ac = (quad.integrate(f, lo, hi) for lo, hi in ((a, b), (b, c), (a, c)))
    assert abs(ab + bc - ac) <= 1e-10 * (3 + abs(ab) + abs(bc) + abs(ac))


# -- improper integrals --------------------------------------------------------

def test_improper_reciprocal_square_converges_to_one():
    v = quad.integrate_improper(lambda y: y ** -2, 1.0)
    assert v.convergent and v.value == pytest.approx(1.0, abs=1e-6)


def test_improper_inverse_sqrt_diverges():
    assert quad.integrate_improper(lambda y: y ** -0.5, 1.0).divergent


def test_improper_harmonic_diverges():
    v = quad.integrate_improper(lambda y: 1 / y, 1.0)
    assert v.divergent and v.direction == 1


@pytest.mark.parametrize("q", [0.5, 0.8, 1.0, 1.2, 2.0, 3.0])
def test_power_tail_dichotomy(q):
    v = quad.integrate_improper(lambda y: y ** -q, 1.0)
    if q < 1:
        assert v.divergent
    elif q == 1:
        assert not v.convergent
    else:
        assert v.convergent and abs(v.value - 1 / (q - 1)) <= 1e-6


def test_improper_verdict_carries_diagnostics():
    d = quad.integrate_improper(lambda y: y ** -2, 1.0).to_dict()
    assert d["status"] == "convergent" and d["diagnostics"]


def test_improper_to_finite_endpoint():
    # int_0^1 (1-y)^-2 diverges, int_0^1 (1-y)^-0.5 = 2
    assert quad.integrate_improper_to(lambda y: (1 - y) ** -2, 0.0, 1.0).divergent
    v = quad.integrate_improper_to(lambda y: (1 - y) ** -0.5, 0.0, 1.0)
    assert v.convergent and v.value == pytest.approx(2.0, abs=1e-5)


def test_fit_tail_slope_recovers_power():
    y = np.geomspace(10, 1e3, 9)
    assert quad.fit_tail_slope(y, -2.5 * np.log(y)) == pytest.approx(-2.5)


# -- log space -----------------------------------------------------------------

def test_cumulative_log_integral_of_one():
    got = quad.cumulative_log_integral(lambda y: np.zeros_like(y), 1.0, [1.0, 2.0, 3.0])
    assert got[0] == -math.inf
    assert got[1:] == pytest.approx([0.0, math.log(2.0)], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(-5, 5), st.lists(st.floats(0.01, 10), min_size=1, max_size=6))
def test_cumulative_log_integral_of_constant(k, c, widths):
    grid = c + np.concatenate([[0.0], np.cumsum(widths)])
    got = quad.cumulative_log_integral(lambda y: np.full_like(y, math.log(k)), c, grid)
    want = np.log(k * (grid[1:] - c))
    assert np.all(np.abs(got[1:] - want) <= 1e-8 * np.maximum(1.0, np.abs(want)))


def test_cumulative_log_integral_survives_huge_exponents():
    # int_0^x e^{700 y} dy = (e^{700x} - 1)/700 overflows long before x = 10
    grid = np.arange(0.0, 11.0)
    got = quad.cumulative_log_integral(lambda y: 700.0 * y, 0.0, grid)
    want = 700.0 * grid[1:] + np.log1p(-np.exp(-700.0 * grid[1:])) - math.log(700.0)
    assert np.all(np.isfinite(got[1:]))
    assert np.allclose(got[1:], want, rtol=1e-10)


def test_cumulative_log_integral_cubic_exponent():
    # log int_0^y e^{-2 z^3/3} dz checked against direct quadrature
    grid = np.linspace(0.0, 3.0, 13)
    got = quad.cumulative_log_integral(lambda z: -2 * z ** 3 / 3, 0.0, grid)
    direct = quad.integrate(lambda z: np.exp(-2 * z ** 3 / 3), 0.0, 3.0, tol=1e-13)
    assert got[-1] == pytest.approx(math.log(direct), rel=1e-10)


def test_cumulative_log_integral_grid_checks():
    with pytest.raises(ValueError):
        quad.cumulative_log_integral(lambda y: y, 0.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        quad.cumulative_log_integral(lambda y: y, 0.0, [0.0, 2.0, 1.0])


def test_cumulative_integral_signed():
    got = quad.cumulative_integral(np.sin, 0.0, [0.0, math.pi, 2 * math.pi])
    assert got == pytest.approx([0.0, 2.0, 0.0], abs=1e-12)


def test_logsumexp_matches_naive():
    v = np.array([1.0, 2.0, -3.0])
    assert quad.logsumexp(v) == pytest.approx(math.log(np.exp(v).sum()))
