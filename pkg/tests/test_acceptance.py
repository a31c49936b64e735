"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line in
the terminal summary (see conftest.py)."""
import math
import time

import test_expr
import test_lyapunov
import test_mc
import test_quad
from blowuplab import expr as ex
from blowuplab import feller as fl
from blowuplab import lyapunov as ly
from blowuplab import mc
from blowuplab.cli import run_gallery
from blowuplab.model import Verdict, load_model, squared_norm

MU, SIG, LAM, MU_J, SIG_J = 0.05, 0.2, 1.0, 0.0, 0.3


def one_d(drift, diffusion, **extra):
    return load_model({"dim": 1, "drift": [drift], "diffusion": [diffusion], **extra})


def diag_norm(dim, p):
    rows = [[f"norm(x)^{p}" if i == j else "0" for j in range(dim)] for i in range(dim)]
    return load_model({"dim": dim, "drift": ["0"] * dim, "diffusion": rows})


def attempt(rec, label, fn, *args):
    """Run a property-suite test function and record whether it passed."""
    try:
        fn(*args)
    except Exception as err:  # noqa: BLE001 - any failure of the suite counts
        return rec.check(False, f"{label}: {type(err).__name__}: {err}"[:300])
    return rec.check(True, label)


def test_criterion_1_feller_golden_verdicts(acceptance):
    rec = acceptance(1, "Feller golden verdicts")
    cases = [(one_d("x^2", "1"), Verdict.POSITIVE_PROBABILITY_EXPLOSION, "x^2, 1"),
             (one_d("x^2", "x^5"), Verdict.AS_NON_EXPLOSION, "x^2, x^5")]
    for m, want, label in cases:
        for c in (0.5, 1.0, 2.0):
            start = time.perf_counter()
            got = fl.classify_feller(m, c).verdict
            seconds = time.perf_counter() - start
            rec.check(got == want, f"({label}) c={c}: {got}")
            rec.check(seconds < 30, f"({label}) c={c} took {seconds:.1f} s < 30 s")
    rec.finish()


def test_criterion_2_outer_integrand_tail_slope(acceptance):
    rec = acceptance(2, "outer v-integrand tail slope")
    slope = fl.outer_tail_slope(one_d("x^2", "1"), 1.0, 10.0, 1e3)
    rec.check(abs(slope + 2.0) <= 0.2, f"slope {slope:.4f} within -2 +- 0.2")
    rec.finish()


def test_criterion_3_osgood_suite(acceptance):
    rec = acceptance(3, "Osgood suite")
    for p in (0.5, 1.0):
        drift = "sqrt(x^2)^p" if p != 1.0 else "x"
        v = fl.osgood_test(one_d(drift, "1", params={"p": p}), 1.0)
        ok = v.divergent if p < 1 else not v.convergent
        rec.check(ok, f"p={p}: {v.status}")
    for p in (1.5, 2.0, 3.0):
        v = fl.osgood_test(one_d("x^p", "1", params={"p": p}), 1.0)
        ok = v.convergent and abs(v.value - 1 / (p - 1)) <= 1e-6
        rec.check(ok, f"p={p}: {v.status} {v.value}")
    rec.finish()


def test_criterion_4_merton_bound(acceptance):
    rec = acceptance(4, "Merton bound")
    m = load_model({"dim": 1, "params": {"mu": MU, "s": SIG}, "drift": ["mu*x"], "diffusion": ["s*x"],
                    "jumps": {"lambda": LAM, "dist": "lognormal",
                              "dist_params": {"mu": MU_J, "sigma": SIG_J}, "apply": "merton"}})
    C = 2 * MU + SIG ** 2 + LAM * (math.exp(2 * MU_J + 2 * SIG_J ** 2) - 1)
    gen = ly.generator_apply(m, squared_norm(1))
    coeffs = {k: v for k, v in ex.poly_coeffs(gen.total(), 0, m.params).items() if v}
    rec.check(set(coeffs) == {2} and abs(coeffs[2] - C) <= 1e-14 * C,
              f"LV coefficients {coeffs} vs C = {C!r}")
    x = mc.run_paths(m, mc.SimConfig((1.0,), T=1.0, n_paths=100_000, seed=0)).state[:, 0]
    x2 = x * x
    se = x2.std(ddof=1) / math.sqrt(len(x2))
    rec.check(x2.mean() <= math.exp(C) + 3 * se,
              f"E[X_T^2] = {x2.mean():.5f} <= e^C + 3 se = {math.exp(C) + 3 * se:.5f}")
    rec.finish(budget=120)


def test_criterion_5_dimension_dichotomy(acceptance):
    rec = acceptance(5, "dimension dichotomy")
    planar, spatial = diag_norm(2, 3), diag_norm(3, 2)
    pairs = [(ly.chow_nonexplosion_condition(planar), "Yes", "2-D p=3 non-explosion"),
             (ly.chow_explosion_condition(spatial, eps=0.5), "Yes", "3-D p=2 explosion"),
             (ly.chow_explosion_condition(planar, eps=0.5), "No", "2-D p=3 explosion"),
             (ly.chow_nonexplosion_condition(spatial), "No", "3-D p=2 non-explosion")]
    for rep, want, label in pairs:
        rec.check(rep.holds == want, f"{label}: {rep.holds} (want {want})")
    rec.finish()


def test_criterion_6_almost_sure_explosion(acceptance):
    rec = acceptance(6, "almost-sure explosion")
    m = one_d("x^2", "1")
    rep = ly.check_as_explosion(m)
    rec.check(rep.yes, f"check_as_explosion: {rep.holds}")
    est = mc.estimate_explosion_prob(m, mc.SimConfig((2.0,), T=5.0, n_paths=2000, seed=0))
    rec.check(est.ci_low >= 0.9, f"Wilson lower bound {est.ci_low:.4f} >= 0.9 (p_hat {est.p_hat:.4f})")
    fine = mc.estimate_explosion_prob(m, mc.SimConfig((2.0,), T=5.0, dt0=1e-3, B=1e10,
                                                      n_paths=500, seed=1))
    rec.check(fine.p_hat >= 0.95, f"fine-step oracle p_hat {fine.p_hat:.4f} >= 0.95")
    rec.finish(budget=120)


def test_criterion_7_boundary_avoidance(acceptance):
    rec = acceptance(7, "boundary avoidance")
    m = one_d("x^(-alpha)", "1", params={"alpha": 2.0}, domain={"kind": "positive_half_line"})
    C = ly.boundary_avoidance_check(m).C
    rec.check(abs(C - 4 / 27) <= 1e-6, f"C = {C!r} vs sup(x^-2 - x^-3) = 4/27")
    cfg = mc.SimConfig((1.0,), T=1.0, n_paths=1000, seed=0)
    for n in (10 ** 2, 10 ** 3, 10 ** 4):
        est = mc.boundary_hit_prob(m, cfg, 1.0 / n)
        bound = math.exp(C) / n + 3 * est.halfwidth
        rec.check(est.p_hat <= bound, f"n={n}: p_hat {est.p_hat:.4g} <= {bound:.4g}")
    rec.finish()


def test_criterion_8_property_suites(acceptance):
    rec = acceptance(8, "property suites")
    attempt(rec, "expr round trip", test_expr.test_render_parse_round_trip)
    attempt(rec, "finite differences", test_expr.test_derivative_matches_central_difference)
    for q in (0.5, 0.8, 1.0, 1.2, 2.0, 3.0):
        attempt(rec, f"q-grid q={q}", test_quad.test_power_tail_dichotomy, q)
    attempt(rec, "generator linearity", test_lyapunov.test_generator_is_linear)
    for d in (2, 3):
        attempt(rec, f"log-norm LV identity d={d}", test_lyapunov.test_log_squared_norm_generator_identity, d)
    attempt(rec, "point-mass jump consistency",
            test_lyapunov.test_point_mass_at_zero_jumps_leave_generator_unchanged)
    attempt(rec, "MC reproducibility", test_mc.test_reproducible_across_worker_counts)
    for integrand in ("1", "x"):
        attempt(rec, f"martingale {integrand}", test_mc.test_ito_integral_has_zero_mean, integrand)
    rec.finish()


GALLERY_TABLE = {
    "quadratic_drift_unit_noise": "a.s. explosion",
    "quadratic_drift_quintic_noise": "a.s. non-explosion",
    "sublinear_drift_constant_noise": "a.s. non-explosion",
    "planar_cubic_norm_noise": "a.s. non-explosion",
    "spatial_quadratic_norm_noise": "positive-probability",
    "merton_jump_diffusion": "a.s. non-explosion",
    "inverse_power_drift_unit_noise": "stays in (0,inf)",
}


def test_criterion_9_gallery_and_mutual_exclusion(acceptance):
    rec = acceptance(9, "gallery table and mutual exclusion")
    rows = run_gallery(seed=0)
    rec.check({r["model"]: r["label"] for r in rows} == GALLERY_TABLE,
              "gallery labels: " + ", ".join(f"{r['model']}={r['label']}" for r in rows))
    for r in rows:
        rep = r["report"]
        claims = {f.claim for f in rep.findings if f.claim is not None}
        both = Verdict.AS_NON_EXPLOSION in claims and bool(
            claims & {Verdict.AS_EXPLOSION, Verdict.POSITIVE_PROBABILITY_EXPLOSION})
        rec.check(not both or rep.contradictions, f"{r['model']}: conflicting findings are flagged")
        rec.check(r["match"], f"{r['model']}: final {r['final']} matches expected {r['expected']}")
    rec.finish()
