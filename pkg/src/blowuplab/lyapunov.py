"""Generators of Lyapunov candidates and sampled checks of the Lyapunov
criteria for non-explosion, explosion with positive probability, and almost
sure explosion.

Conditions that quantify over an unbounded region are checked on log-spaced
radial shells up to a truncation radius R.  A "Yes" needs the margin to be
non-negative at every sampled point and a per-shell trend over the outer two
decades that does not work against it; a "No" comes with a witness point.
Everything else is "Inconclusive".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import minimize_scalar

from . import expr as ex
from . import quad
from .errors import (CandidateNotPositive, DimensionError, DriftNotMonotone, DriftNotPositive,
                     JumpsUnsupported, MomentDiverges, NotSymmetric, PreconditionError,
                     SupremumDiverges, UnboundedCandidate)
from .model import LyapunovCandidate, RegionSpec, SdeModel, Verdict

YES, NO, INCONCLUSIVE = "Yes", "No", "Inconclusive"
MARGIN_RTOL = 1e-9
N_DIRECTIONS = 64
SHELLS_PER_DECADE = 10
MC_JUMP_SAMPLES = 100_000
GROWTH_PERSISTENCE = 0.9   # late/early decade increment ratio that counts as unbounded growth


def _is_zero(e):
    return isinstance(e, ex.Const) and e.value == 0.0


def _sum(terms):
    out = None
    for t in terms:
        out = t if out is None else ex.BinOp("+", out, t)
    return ex.ZERO if out is None else out


# -- eigenvalues ------------------------------------------------------------------

def jacobi_eigenvalues(A, tol=1e-15, max_sweeps=60):
    """Eigenvalues of a batch of symmetric matrices (..., d, d) by cyclic Jacobi."""
    A = np.array(A, dtype=float, copy=True)
    squeeze = A.ndim == 2
    if squeeze:
        A = A[None]
    d = A.shape[-1]
    for _ in range(max_sweeps):
        off = np.sum(A ** 2, axis=(-1, -2)) - np.sum(np.diagonal(A, axis1=-2, axis2=-1) ** 2, axis=-1)
        scale = np.sum(A ** 2, axis=(-1, -2))
        if not np.any(off > tol * tol * scale):
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[:, p, q]
                active = np.abs(apq) > 0
                if not np.any(active):
                    continue
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    theta = (A[:, q, q] - A[:, p, p]) / (2.0 * apq)
                    t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(active & np.isfinite(t), t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cc, ss = c[:, None], s[:, None]
                colp, colq = A[:, :, p].copy(), A[:, :, q].copy()
                A[:, :, p] = cc * colp - ss * colq
                A[:, :, q] = ss * colp + cc * colq
                rowp, rowq = A[:, p, :].copy(), A[:, q, :].copy()
                A[:, p, :] = cc * rowp - ss * rowq
                A[:, q, :] = ss * rowp + cc * rowq
    ev = np.diagonal(A, axis1=-2, axis2=-1).copy()
    return ev[0] if squeeze else ev


def lambda_extremes(A, sym_tol=1e-10):
    """(lambda_min, lambda_max) of a symmetric matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(A - A.T), initial=0.0) > sym_tol * (1.0 + np.max(np.abs(A), initial=0.0)):
        raise NotSymmetric("matrix is not symmetric")
    ev = jacobi_eigenvalues(0.5 * (A + A.T))
    return float(ev.min()), float(ev.max())


# -- generator ---------------------------------------------------------------------

@dataclass
class GeneratorResult:
    """L V split into its drift/diffusion part and an optional jump part."""

    lv: ex.Expr
    terms: tuple
    jump_term: ex.Expr | None
    jump_method: str
    model: SdeModel = field(repr=False)
    candidate: ex.Expr = field(repr=False)
    mc_samples: int = MC_JUMP_SAMPLES
    mc_seed: int = 0

    def total(self):
        """Symbolic L V including the jump part when it has a closed form."""
        if self.jump_method == "monte_carlo":
            raise ValueError("jump part is estimated, not symbolic")
        if self.jump_term is None:
            return self.lv
        return ex.simplify(ex.BinOp("+", self.lv, self.jump_term))

    def evaluate_with_scale(self, X):
        """(L V, sum of |additive pieces|, jump standard error) at points X (n, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = self.model.params
        vals = np.zeros(len(X))
        scale = np.zeros(len(X))
        with np.errstate(all="ignore"):
            for t in self.terms:
                vals += ex.evaluate_array(t, X, p)
                scale += ex.magnitude_array(t, X, p)
        stderr = np.zeros(len(X))
        if self.jump_method == "closed_form":
            vals += ex.evaluate_array(self.jump_term, X, p)
            scale += ex.magnitude_array(self.jump_term, X, p)
        elif self.jump_method == "monte_carlo":
            mean, se = jump_term_mc(self.model, self.candidate, X, self.mc_samples, self.mc_seed)
            vals += mean
            scale += np.abs(mean)
            stderr = se
        return vals, scale, stderr

    def evaluate(self, X):
        return self.evaluate_with_scale(X)[0]


def diffusion_generator_terms(m: SdeModel, V: ex.Expr):
    """Additive pieces b_i dV/dx_i and (1/2) a_ij d2V/dx_i dx_j, simplified."""
    grads = [ex.differentiate(V, i) for i in range(m.dim)]
    terms = []
    for i in range(m.dim):
        t = ex.simplify(ex.BinOp("*", m.drift[i], grads[i]))
        if not _is_zero(t):
            terms.append(t)
    A = m.a_exprs()
    for i in range(m.dim):
        for j in range(m.dim):
            if _is_zero(A[i][j]) or _is_zero(grads[i]):
                continue
            h = ex.differentiate(grads[i], j)
            t = ex.simplify(ex.BinOp("*", ex.BinOp("*", ex.Const(0.5), A[i][j]), h))
            if not _is_zero(t):
                terms.append(t)
    return terms


def closed_form_jump_term(m: SdeModel, V: ex.Expr):
    """lambda E[V(x + J) - V(x)] as a polynomial expression, or None when V is not
    a polynomial of degree <= 4 in a 1-D state."""
    J = m.jumps
    if J is None or m.dim != 1:
        return None
    coeffs = ex.poly_coeffs(V, 0, m.params)
    if coeffs is None or (coeffs and max(coeffs) > 4):
        return None
    out = {}
    lam = J.intensity
    for k, ck in coeffs.items():
        if k == 0:
            continue
        if J.apply == "merton":
            # V(xY) - V(x) = c_k x^k (Y^k - 1)
            out[k] = out.get(k, 0.0) + lam * ck * (J.moment(k) - 1.0)
        else:
            # (x + Y)^k - x^k = sum_{j >= 1} C(k, j) x^(k-j) Y^j
            for j in range(1, k + 1):
                out[k - j] = out.get(k - j, 0.0) + lam * ck * math.comb(k, j) * J.moment(j)
    return ex.from_poly({k: v for k, v in out.items() if v != 0.0})


def jump_term_mc(m: SdeModel, V: ex.Expr, X, n_samples=MC_JUMP_SAMPLES, seed=0):
    """Monte Carlo estimate of lambda E[V(x + J) - V(x)] and its standard error at each x."""
    J = m.jumps
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if J is None:
        return np.zeros(len(X)), np.zeros(len(X))
    z = np.random.default_rng(seed).standard_normal(n_samples)
    Y = J.sample(z)
    means, ses = np.empty(len(X)), np.empty(len(X))
    for i, x in enumerate(X):
        pts = J.apply_to(np.broadcast_to(x, (n_samples, m.dim)), Y)
        with np.errstate(all="ignore"):
            diff = ex.evaluate_array(V, pts, m.params) - ex.evaluate_array(V, x[None], m.params)[0]
        if not np.all(np.isfinite(diff)):
            raise MomentDiverges(f"V(x + J) is not finite for sampled jumps at x = {x.tolist()}")
        means[i] = J.intensity * diff.mean()
        ses[i] = J.intensity * diff.std(ddof=1) / math.sqrt(n_samples)
    return means, ses


def generator_apply(m: SdeModel, V, mc_samples=MC_JUMP_SAMPLES, seed=0):
    """Symbolic L V for a candidate (expression or LyapunovCandidate)."""
    Vx = V.v if isinstance(V, LyapunovCandidate) else V
    terms = diffusion_generator_terms(m, Vx)
    lv = ex.simplify(_sum(terms))
    if m.jumps is None:
        return GeneratorResult(lv, tuple(terms), None, "none", m, Vx)
    jt = closed_form_jump_term(m, Vx)
    if jt is not None:
        return GeneratorResult(lv, tuple(terms), jt, "closed_form", m, Vx)
    return GeneratorResult(lv, tuple(terms), None, "monte_carlo", m, Vx, mc_samples, seed)


# -- tabulated drift-integral candidate -----------------------------------------------

@dataclass(frozen=True)
class TabulatedCandidate:
    """V(x) = int_1^x dy / b(y) on [1, inf), tabulated as a cubic Hermite
    spline in log x with the exact slopes x / b(x).  Derivatives come from b,
    not from the table."""

    name: str
    model: SdeModel = field(repr=False)
    log_x: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    limit: float                              # V(inf), inf when the integral diverges
    singular_points: tuple = ()

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, np.nan)
        inside = (x >= 1.0) & (x <= math.exp(self.log_x[-1]))
        slopes = np.exp(self.log_x) / self.model.b(np.exp(self.log_x))
        spline = CubicHermiteSpline(self.log_x, self.values, slopes)
        out[inside] = spline(np.log(x[inside]))
        beyond = x > math.exp(self.log_x[-1])
        if np.any(beyond):
            xmax = math.exp(self.log_x[-1])
            out[beyond] = [self.values[-1] + quad.integrate(lambda y: 1.0 / self.model.b(y), xmax, float(v))
                           for v in x[beyond]]
        return out

    def d1(self, x):
        return 1.0 / self.model.b(x)

    def d2(self, x):
        db = ex.differentiate(self.model.drift[0], 0)
        X = np.asarray(x, dtype=float)[..., None]
        return -ex.evaluate_array(db, X, self.model.params) / self.model.b(x) ** 2


def drift_integral_candidate(m: SdeModel, x_max=1e12):
    """Tabulate V(x) = int_1^x 1/b for a 1-D drift that is positive on [1, inf)."""
    if m.dim != 1:
        raise DimensionError("the drift-integral candidate is 1-D only")
    # 100 nodes per decade keeps the Hermite interpolation error below 1e-9
    grid = np.geomspace(1.0, x_max, 100 * int(round(math.log10(x_max))) + 1)
    bv = m.b(grid)
    if not np.all(bv > 0):
        raise DriftNotPositive(f"drift is not positive at x = {grid[np.argmax(~(bv > 0))]:g}")

    def recip(y):
        return 1.0 / m.b(y)

    vals = quad.cumulative_integral(recip, 1.0, grid, tol=1e-12)
    verdict = quad.integrate_improper(recip, 1.0)
    limit = verdict.value if verdict.convergent else math.inf
    return TabulatedCandidate("drift_integral", m, np.log(grid), vals, limit)


# -- sampling ------------------------------------------------------------------------

def directions(d, n=N_DIRECTIONS):
    """Deterministic unit directions: both signs in 1-D, a circle in 2-D, a
    Fibonacci sphere in 3-D, seeded Gaussian directions plus axes above."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        a = 2.0 * np.pi * np.arange(n) / n
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    if d == 3:
        k = np.arange(n) + 0.5
        z = 1.0 - 2.0 * k / n
        phi = np.pi * (1.0 + 5.0 ** 0.5) * k
        rr = np.sqrt(1.0 - z * z)
        return np.stack([rr * np.cos(phi), rr * np.sin(phi), z], axis=1)
    G = np.random.default_rng(2357).standard_normal((n, d))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    eye = np.eye(d)
    return np.concatenate([G, eye, -eye])


def shell_radii(r_lo, r_hi, per_decade=SHELLS_PER_DECADE):
    n = max(8, int(math.ceil(per_decade * math.log10(r_hi / r_lo))) + 1)
    return np.geomspace(r_lo, r_hi, n)


@dataclass
class _Sample:
    X: np.ndarray
    shell: np.ndarray        # shell index of each point
    radii: np.ndarray        # radius of each shell
    side: np.ndarray         # +1 / -1 for 1-D, 0 otherwise


def sample_shells(m: SdeModel, r_lo, r_hi, per_decade=SHELLS_PER_DECADE):
    radii = shell_radii(r_lo, r_hi, per_decade)
    dirs = directions(m.dim)
    X = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, m.dim)
    shell = np.repeat(np.arange(len(radii)), len(dirs))
    side = np.tile(np.sign(dirs[:, 0]) if m.dim == 1 else np.zeros(len(dirs)), len(radii))
    keep = m.domain.contains(X)
    return _Sample(X[keep], shell[keep], radii, side[keep])


def _per_shell(values, shell, n, how):
    out = np.full(n, np.nan)
    for j in range(n):
        v = values[shell == j]
        v = v[~np.isnan(v)]
        if v.size:
            out[j] = v.max() if how == "max" else v.min()
    return out


def _outer(radii, R):
    sel = radii >= R / 100.0
    if sel.sum() < 3:
        sel = np.zeros_like(sel)
        sel[-3:] = True
    return sel


def upper_trend(radii, s, R):
    """Per-shell suprema over the outer two decades: "bounded" when they do not
    increase, "growing" when they increase without levelling off."""
    o = _outer(radii, R)
    so = s[o]
    if not np.all(np.isfinite(so)):
        return "unclear" if not np.any(np.isposinf(so)) else "growing"
    span = MARGIN_RTOL * (1.0 + np.max(np.abs(so)))
    dif = np.diff(so)
    if np.all(dif <= span):
        return "bounded"
    if np.all(dif > 0):
        ro = radii[o]
        mid = np.searchsorted(ro, ro[-1] / 10.0)
        d_late = so[-1] - so[mid]
        d_early = so[mid] - so[0]
        if d_late >= GROWTH_PERSISTENCE * d_early and d_late > span:
            return "growing"
    return "unclear"


def lower_trend(radii, s, R):
    """Per-shell infima over the outer two decades: "bounded_below" when they do
    not decrease, "falling" when they decrease, else "unclear"."""
    o = _outer(radii, R)
    so = s[o]
    if not np.all(np.isfinite(so)):
        return "unclear"
    span = MARGIN_RTOL * (1.0 + np.max(np.abs(so)))
    dif = np.diff(so)
    if np.all(dif >= -span):
        return "bounded_below"
    if np.all(dif < 0):
        return "falling"
    return "unclear"


def _positive_from(radii, s, tol=0.0):
    """Index of the first shell from which every per-shell value is > tol."""
    bad = np.flatnonzero(~(s > tol))
    if bad.size == 0:
        return 0
    j = int(bad[-1]) + 1
    return j if j < len(radii) else None


# -- reports ----------------------------------------------------------------------------

@dataclass
class ConditionReport:
    condition: str
    holds: str
    C: float | None = None
    worst_margin: float | None = None
    witness: list | None = None
    constants: dict = field(default_factory=dict)
    region: dict = field(default_factory=dict)
    subverdicts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    shells: list = field(default_factory=list, repr=False)
    extra: dict = field(default_factory=dict)

    @property
    def yes(self):
        return self.holds == YES

    @property
    def no(self):
        return self.holds == NO

    @property
    def verdict(self):
        """Classification implied by a Yes, else None."""
        if not self.yes:
            return None
        return {
            "nonexplosion": Verdict.AS_NON_EXPLOSION,
            "chow_nonexplosion": Verdict.AS_NON_EXPLOSION,
            "boundary_avoidance": Verdict.AS_NON_EXPLOSION,
            "positive_explosion": Verdict.POSITIVE_PROBABILITY_EXPLOSION,
            "chow_explosion": Verdict.POSITIVE_PROBABILITY_EXPLOSION,
            "as_explosion": Verdict.AS_EXPLOSION,
        }.get(self.condition)

    def to_dict(self):
        d = {
            "condition": self.condition,
            "holds": self.holds,
            "C": _clean(self.C),
            "worst_margin": _clean(self.worst_margin),
            "witness": self.witness,
            "constants": {k: _clean(v) for k, v in self.constants.items()},
            "region": self.region,
            "subverdicts": self.subverdicts,
            "notes": self.notes,
        }
        d.update(self.extra)
        return d


def _clean(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return None
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _region_dict(r_lo, R, **kw):
    d = {"r_from": r_lo, "R": R, "shells_per_decade": SHELLS_PER_DECADE}
    d.update(kw)
    return d


def _candidate_expr(V):
    return V.v if isinstance(V, LyapunovCandidate) else V


# -- upper-bound conditions (non-explosion) -------------------------------------------------

def _upper_condition(name, radii, ratio, shell, X, margin_fn, R, notes):
    """Shared Yes/No/Inconclusive logic for sup(ratio) < inf conditions."""
    s = _per_shell(ratio, shell, len(radii), "max")
    trend = upper_trend(radii, s, R)
    C = float(np.nanmax(s))
    rows = [(float(r), float(v)) for r, v in zip(radii, s)]
    if trend == "bounded":
        C_used = max(C, 0.0)
        margins = margin_fn(C_used)
        i = int(np.nanargmin(margins))
        return ConditionReport(name, YES, C=C_used, worst_margin=float(margins[i]),
                               witness=X[i].tolist(), subverdicts={"trend": trend},
                               notes=notes, shells=rows)
    if trend == "growing":
        C_probe = float(s[_outer(radii, R)][0])
        margins = margin_fn(C_probe)
        i = int(np.nanargmin(margins))
        notes = notes + [f"per-shell sup keeps growing; with C = {C_probe:.6g} (its value at "
                         f"radius {radii[_outer(radii, R)][0]:.3g}) the margin is negative at the witness"]
        return ConditionReport(name, NO, C=None, worst_margin=float(margins[i]),
                               witness=X[i].tolist(), subverdicts={"trend": trend},
                               notes=notes, shells=rows)
    return ConditionReport(name, INCONCLUSIVE, C=C, subverdicts={"trend": trend}, notes=notes, shells=rows)


def check_nonexplosion(m: SdeModel, V, shell: RegionSpec = RegionSpec(), include_interior=None,
                       mc_samples=10_000):
    """LV <= C V outside D together with inf_{|x|>r} V -> inf."""
    Vx = _candidate_expr(V)
    gen = generator_apply(m, Vx, mc_samples=mc_samples)
    if include_interior is None:
        include_interior = m.jumps is not None
    smp = sample_shells(m, shell.r_D, shell.R)
    X, sh = smp.X, smp.shell
    with np.errstate(all="ignore"):
        v = ex.evaluate_array(Vx, X, m.params)
    bad = ~(v > 0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise CandidateNotPositive(f"candidate is not positive at {X[i].tolist()}", witness=X[i].tolist())
    lv, scale, se = gen.evaluate_with_scale(X)
    tol = MARGIN_RTOL * (1.0 + scale) + 3.0 * se
    lv_c = np.where(np.abs(lv) <= tol, 0.0, lv)
    ratio = lv_c / v
    notes = []
    region = _region_dict(shell.r_D, shell.R, include_interior=bool(include_interior))
    if include_interior:
        inner = sample_shells(m, shell.r_D * 1e-3, shell.r_D)
        Xi = np.concatenate([inner.X, np.zeros((1, m.dim))]) if m.domain.contains(np.zeros((1, m.dim)))[0] else inner.X
        with np.errstate(all="ignore"):
            vi = ex.evaluate_array(Vx, Xi, m.params)
        lvi, sci, sei = gen.evaluate_with_scale(Xi)
        toli = MARGIN_RTOL * (1.0 + sci) + 3.0 * sei
        ok = np.isfinite(vi) & np.isfinite(lvi)
        Xi, vi, lvi, toli = Xi[ok], vi[ok], lvi[ok], toli[ok]
        lvi = np.where(np.abs(lvi) <= toli, 0.0, lvi)
        notes.append("interior of D included in the LV <= C V check")
    else:
        notes.append("checked on |x| >= r_D only")

    def margin_fn(C):
        mg = C * v - lv_c
        if include_interior and len(vi):
            mg = np.concatenate([mg, C * vi - lvi])
        return mg

    Xall = np.concatenate([X, Xi]) if include_interior and len(vi) else X
    rep = _upper_condition("nonexplosion", smp.radii, ratio, sh, Xall, margin_fn, shell.R, notes)
    if include_interior and rep.holds == YES and len(vi):
        pos = vi > 0
        ci = float(np.max(lvi[pos] / vi[pos])) if np.any(pos) else -np.inf
        zero_bad = np.any((~pos) & (lvi > 0))
        if zero_bad:
            rep.holds = INCONCLUSIVE
            rep.notes.append("LV > 0 where V = 0 inside D")
        elif ci > rep.C:
            rep.C = ci
            mg = margin_fn(ci)
            i = int(np.nanargmin(mg))
            rep.worst_margin, rep.witness = float(mg[i]), Xall[i].tolist()
    rep.region = region
    # radial growth of V
    vmin = _per_shell(v, sh, len(smp.radii), "min")
    growth = _radial_growth(smp.radii, vmin, shell.R)
    rep.subverdicts["radial_growth"] = growth
    rep.subverdicts["LV_le_CV"] = rep.holds
    if rep.holds == YES and growth != YES:
        rep.holds = NO if growth == NO else INCONCLUSIVE
        rep.notes.append("inf of V over |x| > r does not grow without bound")
    rep.extra["generator"] = ex.render(gen.lv)
    if gen.jump_method != "none":
        rep.extra["jump_term"] = ex.render(gen.jump_term) if gen.jump_term is not None else "monte_carlo"
    return rep


def _radial_growth(radii, vmin, R):
    o = _outer(radii, R)
    vo = vmin[o]
    if not np.all(np.isfinite(vo)):
        return INCONCLUSIVE
    dif = np.diff(vo)
    if np.any(dif < -MARGIN_RTOL * (1 + np.abs(vo[1:]))):
        return NO
    ro = radii[o]
    mid = np.searchsorted(ro, ro[-1] / 10.0)
    d_late, d_early = vo[-1] - vo[mid], vo[mid] - vo[0]
    if d_late > 0 and d_late >= GROWTH_PERSISTENCE * d_early:
        return YES
    if d_late <= MARGIN_RTOL * (1 + abs(vo[-1])):
        return NO
    return INCONCLUSIVE


def _chow_pieces(m, X):
    """<b, x>, tr A and the extreme eigenvalues of A at X, plus magnitudes."""
    with np.errstate(all="ignore"):
        B = m.drift_at(X)
        A = m.a_at(X)
    bx_terms = B * X
    bx = bx_terms.sum(axis=1)
    tr = np.trace(A, axis1=-2, axis2=-1)
    ev = jacobi_eigenvalues(A)
    return bx, np.abs(bx_terms).sum(axis=1), tr, ev.min(axis=1), ev.max(axis=1)


def chow_nonexplosion_condition(m: SdeModel, shell: RegionSpec = RegionSpec()):
    """<b,x> + tr A / 2 - lambda_max(A) <= C |x|^2 ln |x|^2 for |x| > max(r_D, e)."""
    if m.jumps is not None:
        raise JumpsUnsupported("the closed-form condition ignores jumps")
    r_lo = max(shell.r_D, math.e * (1 + 1e-9))
    smp = sample_shells(m, r_lo, shell.R)
    X = smp.X
    bx, bx_abs, tr, _, lmax = _chow_pieces(m, X)
    lhs = bx + 0.5 * tr - lmax
    tol = MARGIN_RTOL * (1.0 + bx_abs + 0.5 * np.abs(tr) + np.abs(lmax))
    lhs = np.where(np.abs(lhs) <= tol, 0.0, lhs)
    r2 = np.sum(X * X, axis=1)
    den = r2 * np.log(r2)
    rep = _upper_condition("chow_nonexplosion", smp.radii, lhs / den, smp.shell, X,
                           lambda C: C * den - lhs, shell.R, [])
    rep.region = _region_dict(r_lo, shell.R)
    return rep


# -- lower-bound conditions (explosion) ---------------------------------------------------

def _lower_condition(name, radii, ratio, shell, X, margin_at, R, notes):
    """Shared logic for inf(ratio) >= C > 0 beyond some radius.

    Returns (report, r_star_index)."""
    s = _per_shell(ratio, shell, len(radii), "min")
    rows = [(float(r), float(v)) for r, v in zip(radii, s)]
    trend = lower_trend(radii, s, R)
    j = _positive_from(radii, s)
    o = _outer(radii, R)
    first_outer = int(np.argmax(o))
    if j is not None and j <= first_outer and trend == "bounded_below":
        C = float(np.nanmin(s[j:]))
        sel = shell >= j
        mg = margin_at(C)
        mg = np.where(sel, mg, np.inf)
        i = int(np.argmin(mg))
        return ConditionReport(name, YES, C=C, worst_margin=float(mg[i]), witness=X[i].tolist(),
                               subverdicts={"trend": trend}, notes=notes, shells=rows,
                               extra={"holds_from_radius": float(radii[j])}), j
    so = s[o]
    if np.all(so < 0) and trend in ("falling", "bounded_below") and np.all(np.isfinite(so)):
        mg = margin_at(0.0)
        mg = np.where(shell >= first_outer, mg, np.inf)
        i = int(np.argmin(mg))
        return ConditionReport(name, NO, C=None, worst_margin=float(mg[i]), witness=X[i].tolist(),
                               subverdicts={"trend": trend}, notes=notes + [
                                   "the left side is negative on every outer shell, so no C > 0 works"],
                               shells=rows), None
    return ConditionReport(name, INCONCLUSIVE, C=None, subverdicts={"trend": trend},
                           notes=notes, shells=rows), None


def _by_side(m, smp, run):
    """Run a lower-bound check on all points, or per side in 1-D (Yes if either side holds)."""
    if m.dim != 1:
        return run(np.ones(len(smp.X), dtype=bool), "all directions")
    reports = {}
    for sgn, label in ((1.0, "positive side"), (-1.0, "negative side")):
        sel = smp.side == sgn
        if np.any(sel):
            reports[label] = run(sel, label)
    best = None
    for label, rep in reports.items():
        if rep.yes:
            best = rep
            break
    if best is None:
        best = next((r for r in reports.values() if r.holds == INCONCLUSIVE), None) or next(iter(reports.values()))
    best.subverdicts["sides"] = {k: v.holds for k, v in reports.items()}
    return best


def chow_explosion_condition(m: SdeModel, shell: RegionSpec = RegionSpec(), eps=0.5):
    """<b,x> + Tr A / 2 - lambda_max (1 + (1+eps)/ln|x|^2) >= C |x|^2 (ln|x|^2)^(1+eps)."""
    if m.jumps is not None:
        raise JumpsUnsupported("the closed-form condition ignores jumps")
    if not eps > 0:
        raise ValueError("eps must be positive")
    r_lo = max(shell.r_D, math.e * (1 + 1e-9))
    smp = sample_shells(m, r_lo, shell.R)
    X = smp.X
    bx, bx_abs, tr, _, lmax = _chow_pieces(m, X)
    r2 = np.sum(X * X, axis=1)
    L = np.log(r2)
    corr = lmax * (1.0 + (1.0 + eps) / L)
    lhs = bx + 0.5 * tr - corr
    tol = MARGIN_RTOL * (1.0 + bx_abs + 0.5 * np.abs(tr) + np.abs(corr))
    lhs = np.where(np.abs(lhs) <= tol, 0.0, lhs)
    den = r2 * L ** (1.0 + eps)

    def run(sel, label):
        rep, _ = _lower_condition("chow_explosion", smp.radii, lhs[sel] / den[sel], smp.shell[sel], X[sel],
                                  lambda C: lhs[sel] - C * den[sel], shell.R, [f"sampled: {label}"])
        return rep

    rep = _by_side(m, smp, run)
    rep.region = _region_dict(r_lo, shell.R, eps=eps)
    return rep


def _values_and_lv(m, V, X, mc_samples=10_000):
    """V, LV and a cancellation-aware tolerance for expression or tabulated candidates."""
    if isinstance(V, TabulatedCandidate):
        x = X[:, 0]
        v = V.value(x)
        t1 = m.b(x) * V.d1(x)
        t2 = 0.5 * m.sigma2(x) * V.d2(x)
        return v, t1 + t2, MARGIN_RTOL * (1.0 + np.abs(t1) + np.abs(t2))
    Vx = _candidate_expr(V)
    gen = generator_apply(m, Vx, mc_samples=mc_samples)
    with np.errstate(all="ignore"):
        v = ex.evaluate_array(Vx, X, m.params)
    lv, scale, se = gen.evaluate_with_scale(X)
    return v, lv, MARGIN_RTOL * (1.0 + scale) + 3.0 * se


def _ball_sup(m, V, r_D):
    """sup of V over the closed ball of radius r_D (finite values only)."""
    radii = np.concatenate([np.geomspace(r_D * 1e-6, r_D, 61)])
    dirs = directions(m.dim)
    X = (radii[:, None, None] * dirs[None]).reshape(-1, m.dim)
    X = np.concatenate([X, np.zeros((1, m.dim))])
    X = X[m.domain.contains(X)]
    with np.errstate(all="ignore"):
        v = V.value(X[:, 0]) if isinstance(V, TabulatedCandidate) else ex.evaluate_array(_candidate_expr(V), X, m.params)
    v = v[np.isfinite(v)]
    return float(v.max()) if v.size else -math.inf


def _shell_inf(m, V, r, sides=None):
    X = r * directions(m.dim)
    X = X[m.domain.contains(X)]
    if sides is not None and m.dim == 1:
        X = X[np.sign(X[:, 0]) == sides]
    with np.errstate(all="ignore"):
        v = V.value(X[:, 0]) if isinstance(V, TabulatedCandidate) else ex.evaluate_array(_candidate_expr(V), X, m.params)
    return float(np.min(v))


def check_positive_explosion(m: SdeModel, V, regions: RegionSpec = RegionSpec(), mc_samples=10_000):
    """Bounded V with sup_D V < inf_Gamma V and LV >= C V (C > 0) outside D.

    If LV >= C V fails only near D, the inner radius is moved out to the
    first shell from which it holds (Gamma moves with it) and the move is
    reported.
    """
    smp = sample_shells(m, regions.r_D, regions.R)
    X = smp.X
    v, lv, tol = _values_and_lv(m, V, X, mc_samples)
    bad = ~(v > 0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise CandidateNotPositive(f"candidate is not positive at {X[i].tolist()}", witness=X[i].tolist())
    vmax = _per_shell(v, smp.shell, len(smp.radii), "max")
    if upper_trend(smp.radii, vmax, regions.R) == "growing" or _radial_growth(smp.radii, vmax, regions.R) == YES:
        raise UnboundedCandidate("sup of V outside D diverges; K1 would be infinite")
    lv_c = np.where(np.abs(lv) <= tol, 0.0, lv)
    ratio = lv_c / v

    def run(sel, label):
        rep, j = _lower_condition("positive_explosion", smp.radii, ratio[sel], smp.shell[sel], X[sel],
                                  lambda C: lv_c[sel] - C * v[sel], regions.R, [f"sampled: {label}"])
        rep.extra["_start"] = j
        rep.extra["_side"] = 1.0 if label == "positive side" else (-1.0 if label == "negative side" else None)
        return rep

    rep = _by_side(m, smp, run)
    j = rep.extra.pop("_start", None)
    side = rep.extra.pop("_side", None)
    K1 = float(np.nanmax(v))
    rep.constants["K1_sampled"] = K1
    meta = dict(V.meta) if isinstance(V, LyapunovCandidate) else {}
    rep.constants["K1"] = max(K1, meta["K"]) if "K" in meta else K1
    r_D, r_G = regions.r_D, regions.r_Gamma
    if rep.yes and j:
        r_new = float(smp.radii[j])
        r_G = r_new * regions.r_Gamma / regions.r_D
        rep.notes.append(f"LV >= C V fails near D; inner radius moved from {regions.r_D:g} to {r_new:.6g}"
                         f" and Gamma to {r_G:.6g}")
        r_D = r_new
    if rep.yes:
        K2 = _ball_sup(m, V, r_D)
        K3 = _shell_inf(m, V, r_G, side)
        rep.constants.update({"K2": K2, "K3": K3})
        rep.subverdicts["K2_lt_K3"] = YES if K2 < K3 else NO
        if not K2 < K3:
            rep.holds = NO
            rep.notes.append("sup of V over D is not below inf of V over Gamma")
    rep.region = _region_dict(regions.r_D, regions.R, r_D_used=r_D, r_Gamma_used=r_G)
    return rep


def ellipticity_check(m: SdeModel, region: RegionSpec = RegionSpec(), tol=1e-12):
    """(elliptic, c0): c0 = inf |sigma| in 1-D, inf lambda_min(sigma sigma^T) otherwise,
    over a sample of the ball of radius R intersected with the domain."""
    R = region.R
    radii = np.concatenate([[0.0], np.geomspace(1e-6, R, 121), np.linspace(0, min(R, 10.0), 201)])
    dirs = directions(m.dim)
    X = (radii[:, None, None] * dirs[None]).reshape(-1, m.dim)
    X = X[m.domain.contains(X)]
    if m.dim == 1:
        with np.errstate(all="ignore"):
            s = np.sqrt(np.abs(m.sigma2(X[:, 0])))
        c0 = float(np.nanmin(s))
    else:
        with np.errstate(all="ignore"):
            ev = jacobi_eigenvalues(m.a_at(X))
        c0 = float(np.nanmin(ev.min(axis=1)))
    c0 = max(c0, 0.0) if c0 > -tol else c0
    return bool(c0 > tol), c0


def check_as_explosion(m: SdeModel, regions: RegionSpec = RegionSpec()):
    """Almost sure explosion in 1-D with V = int_1^x 1/b:
    (i) the Osgood integral converges, (ii) K0 = inf V outside D is positive,
    (iii) LV = 1 - sigma^2 b' / (2 b^2) >= C V for some C > 0, and
    (iv) ellipticity, which makes the return to Gamma certain."""
    if m.dim != 1:
        raise DimensionError("almost-sure explosion check is 1-D")
    if m.jumps is not None:
        raise JumpsUnsupported("almost-sure explosion check does not cover jumps")
    xs = np.geomspace(1.0, regions.R, 241)
    bv = m.b(xs)
    if not np.all(bv > 0):
        raise DriftNotPositive(f"drift is not positive at x = {xs[np.argmax(~(bv > 0))]:g}")
    if np.any(np.diff(bv) < -1e-12 * np.abs(bv[1:])):
        raise DriftNotMonotone("drift is not increasing on [1, inf)")
    notes = ["D^c is taken on the positive side, where V is defined"]
    osg = quad.integrate_improper(lambda y: 1.0 / m.b(y), 1.0)
    sub = {"osgood": osg.status}
    if not osg.convergent:
        holds = NO if osg.divergent else INCONCLUSIVE
        return ConditionReport("as_explosion", holds, subverdicts=sub,
                               notes=notes + ["Osgood integral does not converge, so V is unbounded"],
                               region=_region_dict(regions.r_D, regions.R))
    V = drift_integral_candidate(m)
    K1 = V.limit
    radii = shell_radii(regions.r_D, regions.R)
    v = V.value(radii)
    db = ex.differentiate(m.drift[0], 0)
    with np.errstate(all="ignore"):
        g = ex.evaluate_array(db, radii[:, None], m.params) / m.b(radii) ** 2
    lv = 1.0 - 0.5 * m.sigma2(radii) * g
    ratio = lv / v
    trend_g = "to_zero" if abs(g[-1]) <= abs(g[np.searchsorted(radii, regions.R / 100)]) and abs(g[-1]) < 1e-3 else "unclear"
    sub["b_prime_over_b2"] = trend_g
    j = _positive_from(radii, ratio)
    r_D, r_G = regions.r_D, regions.r_Gamma
    if j is None:
        sub["LV_ge_CV"] = NO
        return ConditionReport("as_explosion", NO, constants={"K1": K1}, subverdicts=sub,
                               notes=notes + ["LV is not positive on the outer shells"],
                               region=_region_dict(regions.r_D, regions.R),
                               shells=[(float(r), float(x)) for r, x in zip(radii, ratio)])
    if j:
        r_D = float(radii[j])
        r_G = r_D * regions.r_Gamma / regions.r_D
        notes.append(f"LV >= C V fails near D; inner radius moved to {r_D:.6g}")
    C = float(np.min(ratio[j:]))
    K0 = float(V.value(np.array([r_D]))[0])
    K2 = K0                       # V increases, so sup over [1, r_D] is V(r_D)
    K3 = float(V.value(np.array([r_G]))[0])
    ell, c0 = ellipticity_check(m, regions)
    sub.update({"K0_positive": YES if K0 > 0 else NO, "LV_ge_CV": YES if C > 0 else NO,
                "ellipticity": YES if ell else NO, "K2_lt_K3": YES if K2 < K3 else NO})
    if K0 > 0 and C > 0 and K2 < K3 and trend_g == "to_zero":
        holds = YES if ell else INCONCLUSIVE
        if not ell:
            notes.append("ellipticity fails, so the return to Gamma is not certified")
    else:
        holds = INCONCLUSIVE
    mg = lv[j:] - C * v[j:]
    i = int(np.argmin(mg))
    return ConditionReport("as_explosion", holds, C=C, worst_margin=float(mg[i]), witness=[float(radii[j + i])],
                           constants={"K0": K0, "K1": K1, "K2": K2, "K3": K3, "c0": c0},
                           region=_region_dict(regions.r_D, regions.R, r_D_used=r_D, r_Gamma_used=r_G),
                           subverdicts=sub, notes=notes,
                           shells=[(float(r), float(x)) for r, x in zip(radii, ratio)])


# -- boundary avoidance ---------------------------------------------------------------

def reciprocal_candidate():
    """V = 1/x, singular at the origin."""
    return LyapunovCandidate(ex.BinOp("/", ex.ONE, ex.Var(0)), "reciprocal", singular_points=((0.0,),))


def avoidance_bound(C, t, n, x0):
    """P(tau_n <= t) <= exp(C t) / (n x0)."""
    return math.exp(C * t) / (n * x0)


def _sup_ratio(gfun, lo=1e-8, hi=1e8, n=4001):
    """sup of gfun over (0, inf) via a log grid plus bounded refinement."""
    xs = np.geomspace(lo, hi, n)
    with np.errstate(all="ignore"):
        g = gfun(xs)
    if not np.any(np.isfinite(g)):
        raise SupremumDiverges("ratio LV/V is not finite anywhere on the grid")
    i = int(np.nanargmax(g))
    for edge, inward in ((0, 200), (n - 1, n - 201)):
        if i == edge and g[edge] > 0 and g[edge] > g[inward] * (1 + 1e-2) + 1e-12:
            where = "0+" if edge == 0 else "infinity"
            raise SupremumDiverges(f"sup of LV/V diverges towards {where}")
    if 0 < i < n - 1:
        res = minimize_scalar(lambda t: -float(gfun(np.array([math.exp(t)]))[0]),
                              bounds=(math.log(xs[i - 1]), math.log(xs[i + 1])), method="bounded",
                              options={"xatol": 1e-12})
        return -float(res.fun), math.exp(res.x)
    return float(g[i]), float(xs[i])


def boundary_avoidance_check(m: SdeModel, V=None, n_max=10**4, t=1.0, x0=1.0):
    """C = sup_{x>0} LV/V for a candidate singular at 0, and the bound table
    P(tau_n <= t) <= exp(C t) / (n x0) for n = 10, 100, ..., n_max."""
    if m.dim != 1:
        raise DimensionError("boundary avoidance check is 1-D")
    if m.domain.kind != "positive_half_line":
        raise PreconditionError("boundary avoidance needs the positive half-line domain")
    V = V or reciprocal_candidate()
    Vx = _candidate_expr(V)
    gen = generator_apply(m, Vx)

    def g(x):
        X = np.asarray(x, dtype=float)[:, None]
        v = ex.evaluate_array(Vx, X, m.params)
        return gen.evaluate(X) / v

    C, x_star = _sup_ratio(g)
    ns = [10 ** k for k in range(1, int(round(math.log10(n_max))) + 1)]
    table = [{"n": n, "level": 1.0 / n, "bound": avoidance_bound(C, t, n, x0)} for n in ns]
    return ConditionReport("boundary_avoidance", YES, C=C, constants={"C": C, "argmax_x": x_star},
                           region={"x": "(0, inf)", "t": t, "x0": x0},
                           notes=[f"LV <= C V with C = sup LV/V attained near x = {x_star:.6g}"],
                           extra={"bounds": table, "generator": ex.render(gen.lv)})
