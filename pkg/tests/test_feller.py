import math

import numpy as np
import pytest
from scipy.integrate import quad as scipy_quad
from scipy.integrate import solve_ivp

from blowuplab import feller as fl
from blowuplab import quad
from blowuplab.errors import DimensionError, DriftNotPositive, JumpsUnsupported
from blowuplab.model import Verdict, load_model


def model(drift, diffusion, **extra):
    return load_model({"dim": 1, "drift": [drift], "diffusion": [diffusion], **extra})


QUAD_UNIT = model("x^2", "1")
QUAD_QUINTIC = model("x^2", "x^5")


def v_oracle(b, s2, c, x):
    """v(x) from the ODE system v' = w, w' = -2 (b / s2) w + 2 / s2, v(c) = w(c) = 0."""
    sol = solve_ivp(lambda y, u: [u[1], -2 * b(y) / s2(y) * u[1] + 2 / s2(y)],
                    (c, x), [0.0, 0.0], rtol=1e-12, atol=1e-14, method="DOP853")
    return sol.y[0, -1]


# -- scale function --------------------------------------------------------------

def test_log_scale_derivative_quadratic_drift():
    assert fl.scale_log_derivative(QUAD_UNIT, 0.0)(3.0) == pytest.approx(-18.0, rel=1e-10)


def test_log_scale_derivative_quintic_noise_matches_quadrature_oracle():
    # oracle: -2 int_1^2 z^-8 dz by an independent adaptive routine
    oracle = -2 * scipy_quad(lambda z: z ** -8, 1.0, 2.0, epsabs=0, epsrel=1e-13)[0]
    got = fl.scale_log_derivative(QUAD_QUINTIC, 1.0)(2.0)
    assert got == pytest.approx(oracle, rel=1e-10)
    assert got == pytest.approx(-0.28348, abs=5e-6)


def test_log_scale_derivative_closed_forms():
    ld = fl.scale_log_derivative(model("x^2", "1.5"), 0.7)
    for y in (-1.0, 0.2, 2.5):
        assert ld(y) == pytest.approx(-2 * (y ** 3 - 0.7 ** 3) / (3 * 2.25), rel=1e-10, abs=1e-12)
    assert np.all(fl.scale_log_derivative(model("0", "1"), 0.0)(np.array([-3.0, 1.0, 5.0])) == 0.0)


@pytest.mark.parametrize("c", [-1.0, 0.5, 2.0])
def test_log_scale_derivative_is_zero_at_anchor(c):
    assert fl.scale_log_derivative(QUAD_UNIT, c)(c) == 0.0


# -- v ----------------------------------------------------------------------------

def test_v_without_drift_is_square():
    m = model("0", "1")
    for x in (0.5, 2.0, -3.0):
        assert fl.v_function(m, 0.0, x) == pytest.approx(x * x, rel=1e-9)


def test_v_quadratic_drift_matches_ode_oracle():
    want = v_oracle(lambda y: y * y, lambda y: 1.0, 1.0, 6.0)
    assert fl.v_function(QUAD_UNIT, 1.0, 6.0) == pytest.approx(want, rel=1e-7)


def test_v_quadratic_drift_truncations_are_cauchy():
    vals = [fl.v_function(QUAD_UNIT, 1.0, R) for R in (100.0, 1e3, 1e4)]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0]) < 1e-2
    assert all(math.isfinite(v) for v in vals)


def test_v_quintic_noise_grows_linearly():
    v = [fl.v_function(QUAD_QUINTIC, 2.0, R) for R in (100.0, 200.0, 400.0)]
    assert (v[2] - v[1]) / (v[1] - v[0]) == pytest.approx(2.0, rel=1e-3)


def test_v_is_nondecreasing_away_from_anchor():
    for m, c in ((QUAD_UNIT, 1.0), (QUAD_QUINTIC, 2.0), (model("-x", "1"), 0.0)):
        y, lw = fl.log_w_profile(m, c, c + 10.0)
        assert np.all(np.diff(y) > 0)
        # w > 0 so v = int w increases
        assert np.all(np.isfinite(lw[1:]))
        xs = c + np.array([0.5, 1, 2, 4, 8])
        vs = [fl.v_function(m, c, x) for x in xs]
        assert np.all(np.diff(vs) >= 0)


# -- classification ---------------------------------------------------------------

@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_quadratic_drift_unit_noise_explodes_with_positive_probability(c):
    rep = fl.classify_feller(QUAD_UNIT, c)
    assert rep.verdict == Verdict.POSITIVE_PROBABILITY_EXPLOSION
    assert rep.v_at_right.convergent
    assert not rep.conditional


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_quadratic_drift_quintic_noise_does_not_explode(c):
    rep = fl.classify_feller(QUAD_QUINTIC, c)
    assert rep.verdict == Verdict.AS_NON_EXPLOSION
    assert rep.v_at_left.divergent and rep.v_at_right.divergent
    assert rep.conditional and rep.degenerate_points == [0.0] and rep.caveats


def test_brownian_motion_does_not_explode():
    assert fl.classify_feller(model("0", "1"), 0.0).verdict == Verdict.AS_NON_EXPLOSION


def test_feller_never_claims_almost_sure_explosion():
    for drift in ("x^2", "x^3", "exp(x)"):
        assert fl.classify_feller(model(drift, "1")).verdict != Verdict.AS_EXPLOSION


def test_feller_report_serialises():
    d = fl.classify_feller(QUAD_UNIT, with_profiles=True)
    assert d.to_dict()["verdict"] == str(Verdict.POSITIVE_PROBABILITY_EXPLOSION)
    assert d.profile_rows()


def test_outer_integrand_tail_slope_is_minus_two():
    assert fl.outer_tail_slope(QUAD_UNIT, 1.0, 10.0, 1e3) == pytest.approx(-2.0, abs=0.2)


def test_feller_rejects_jumps_and_higher_dimensions():
    merton = load_model({"dim": 1, "drift": ["x"], "diffusion": ["x"],
                         "jumps": {"lambda": 1, "dist": "lognormal",
                                   "dist_params": {"mu": 0, "sigma": 0.3}, "apply": "merton"}})
    with pytest.raises(JumpsUnsupported):
        fl.classify_feller(merton)
    planar = load_model({"dim": 2, "drift": ["0", "0"], "diffusion": [["1", "0"], ["0", "1"]]})
    with pytest.raises(DimensionError):
        fl.classify_feller(planar)


# -- preconditions ----------------------------------------------------------------

def test_preconditions_hold_for_unit_noise():
    assert fl.check_preconditions(QUAD_UNIT) == (True, True)


def test_quintic_noise_is_degenerate_at_zero():
    nondeg, _ = fl.check_preconditions(QUAD_QUINTIC)
    assert not nondeg
    assert fl.degenerate_points(QUAD_QUINTIC) == [0.0]


def test_inverse_square_drift_is_not_locally_integrable_at_zero():
    # oracle: int_eps^1 y^-2 = 1/eps - 1 grows without bound as eps -> 0
    near = [quad.integrate(lambda y: y ** -2, eps, 1.0) for eps in (1e-2, 1e-4, 1e-6)]
    assert near == pytest.approx([99.0, 9999.0, 999999.0], rel=1e-9)
    m = model("x^(-alpha)", "1", params={"alpha": 2}, domain={"kind": "positive_half_line"})
    nondeg, integrable = fl.check_preconditions(m)
    assert nondeg and not integrable
    assert "0+" in fl.classify_feller(m).nonintegrable_at


# -- Osgood -------------------------------------------------------------------------

def test_osgood_quadratic_converges_to_one():
    v = fl.osgood_test(QUAD_UNIT, 1.0)
    assert v.convergent and v.value == pytest.approx(1.0, abs=1e-6)


def test_osgood_sublinear_and_linear_diverge():
    assert fl.osgood_test(model("sqrt(x^2)^p", "1", params={"p": 0.5}), 1.0).divergent
    assert fl.osgood_test(model("x", "1"), 1.0).divergent


def test_osgood_requires_positive_drift():
    with pytest.raises(DriftNotPositive):
        fl.osgood_test(model("x - 5", "1"), 1.0)


@pytest.mark.parametrize("drift", ["sqrt(x^2)^0.5", "x^2", "x^3"])
def test_osgood_agrees_with_feller_for_constant_noise(drift):
    m = model(drift, "1")
    osgood = fl.osgood_test(m, 1.0)
    rep = fl.classify_feller(m, 1.0)
    assert osgood.convergent == (rep.verdict == Verdict.POSITIVE_PROBABILITY_EXPLOSION)
    assert rep.verdict != Verdict.INCONCLUSIVE
