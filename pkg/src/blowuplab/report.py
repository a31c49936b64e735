"""Combine Osgood, Feller, Lyapunov and Monte Carlo evidence into one verdict.

Precedence:
  * an almost-sure explosion certificate subsumes positive-probability ones;
  * analytic non-explosion and analytic explosion findings together are a
    contradiction, and the final verdict is then Inconclusive;
  * Monte Carlo never changes the final verdict; it only adds caveats or
    contradiction flags.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import feller as fl
from . import lyapunov as ly
from .errors import BlowupError
from .mc import (HIT_BOUNDARY, McEstimate, SimConfig, estimate_event, estimate_explosion_prob,
                 mc_advisory, run_paths)
from .model import RegionSpec, SdeModel, Verdict, log_reciprocal, log_squared_norm, squared_norm
from .quad import IntegralVerdict

SCHEMA_VERSION = "1.0"
log = logging.getLogger(__name__)

_EXPLOSIVE = (Verdict.AS_EXPLOSION, Verdict.POSITIVE_PROBABILITY_EXPLOSION)


@dataclass(frozen=True)
class Finding:
    source: str
    kind: str
    status: str
    claim: Verdict | None = None

    def to_dict(self):
        return {"source": self.source, "kind": self.kind, "status": self.status,
                "claim": None if self.claim is None else str(self.claim)}


@dataclass
class EvidenceReport:
    subreports: dict
    findings: list
    final: Verdict
    contradictions: list = field(default_factory=list)
    caveats: list = field(default_factory=list)
    model_digest: str = ""
    model_name: str = ""

    @property
    def contradicted(self):
        return bool(self.contradictions)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "model_digest": self.model_digest,
            "model_name": self.model_name,
            "subreports": {k: _as_dict(v) for k, v in self.subreports.items()},
            "findings": [f.to_dict() for f in self.findings],
            "final": str(self.final),
            "contradictions": list(self.contradictions),
            "caveats": list(self.caveats),
        }


def _as_dict(r):
    return r.to_dict() if hasattr(r, "to_dict") else r


def _finding(name, r) -> Finding | None:
    if isinstance(r, fl.FellerReport):
        claim = r.verdict if r.verdict != Verdict.INCONCLUSIVE else None
        return Finding(name, "feller", str(r.verdict), claim)
    if isinstance(r, ly.ConditionReport):
        return Finding(name, r.condition, r.holds, r.verdict)
    if isinstance(r, IntegralVerdict):
        return Finding(name, "osgood", r.status)
    if isinstance(r, McEstimate):
        return Finding(name, "mc", f"p_hat={r.p_hat:.6g} CI=[{r.ci_low:.6g}, {r.ci_high:.6g}]")
    return None


def combine(evidence, model_digest: str = "", model_name: str = "", caveats=()) -> EvidenceReport:
    """Final verdict from named sub-reports (a mapping or (name, report) pairs).

    The result does not depend on the order of the sub-reports.
    """
    items = list(evidence.items()) if isinstance(evidence, dict) else list(evidence)
    if not items:
        raise ValueError("combine needs at least one sub-report")
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise ValueError("sub-report names must be unique")
    items.sort(key=lambda p: p[0])
    subreports = dict(items)
    findings = [f for f in (_finding(n, r) for n, r in items) if f is not None]
    cav = sorted(set(caveats))

    claims = {}
    for f in findings:
        if f.claim is not None:
            claims.setdefault(f.claim, []).append(f.source)
    non = claims.get(Verdict.AS_NON_EXPLOSION, [])
    boom = sorted(s for v in _EXPLOSIVE for s in claims.get(v, []))
    contradictions = []
    if non and boom:
        contradictions.append(
            "non-explosion certified by " + ", ".join(non)
            + " while explosion certified by " + ", ".join(boom))
        final = Verdict.INCONCLUSIVE
    elif Verdict.AS_EXPLOSION in claims:
        final = Verdict.AS_EXPLOSION
    elif non:
        final = Verdict.AS_NON_EXPLOSION
    elif Verdict.POSITIVE_PROBABILITY_EXPLOSION in claims:
        final = Verdict.POSITIVE_PROBABILITY_EXPLOSION
    else:
        final = Verdict.INCONCLUSIVE

    for name, r in items:
        if isinstance(r, fl.FellerReport):
            cav.extend(f"{name}: {c}" for c in r.caveats)
        if not isinstance(r, McEstimate):
            continue
        if r.advisory:
            cav.append(f"{name}: advisory only ({r.advisory})")
        cav.extend(f"{name}: {k} on {v} paths" for k, v in r.caveats)
        if non and r.excludes_zero:
            msg = (f"{name}: Monte Carlo {r.event} fraction {r.p_hat:.4g} has a CI excluding 0"
                   f" while {', '.join(non)} certified non-explosion")
            if r.advisory:
                cav.append(msg)
            else:
                contradictions.append(msg)
    return EvidenceReport(subreports, findings, final, sorted(contradictions), sorted(set(cav)),
                          model_digest, model_name)


def verdict_label(v: Verdict, domain_kind: str = "full_line") -> str:
    """Short human label; non-explosion on (0, inf) reads as staying inside."""
    if v == Verdict.AS_NON_EXPLOSION and domain_kind == "positive_half_line":
        return "stays in (0,inf)"
    return {
        Verdict.AS_EXPLOSION: "a.s. explosion",
        Verdict.AS_NON_EXPLOSION: "a.s. non-explosion",
        Verdict.POSITIVE_PROBABILITY_EXPLOSION: "positive-probability",
        Verdict.INCONCLUSIVE: "inconclusive",
    }[v]


# -- running the engines -------------------------------------------------------

NAMED_CANDIDATES = {
    "squared_norm": lambda m, K, eps: squared_norm(m.dim),
    "log_squared_norm": lambda m, K, eps: log_squared_norm(m.dim),
    "log_reciprocal": lambda m, K, eps: log_reciprocal(m.dim, K, eps),
}


def _block(m, key):
    v = m.analysis.get(key)
    return v if isinstance(v, dict) else {}


def sim_config_from(m: SdeModel, seed=None, n_paths=None, horizon=None, overrides=None):
    """SimConfig from the model's ``mc`` block, with optional overrides."""
    blk = dict(_block(m, "mc"))
    blk.update(overrides or {})
    x0 = blk.get("x0", [1.0] * m.dim)
    kw = {"x0": tuple(float(v) for v in (x0 if isinstance(x0, (list, tuple)) else [x0]))}
    for key, cast in (("T", float), ("dt0", float), ("eta", float), ("B", float),
                      ("n_paths", int), ("seed", int), ("max_steps", int)):
        if key in blk:
            kw[key] = cast(blk[key])
    if seed is not None:
        kw["seed"] = int(seed)
    if n_paths is not None:
        kw["n_paths"] = int(n_paths)
    if horizon is not None:
        kw["T"] = float(horizon)
    return SimConfig(**kw)


def gather_evidence(m: SdeModel, run_mc: bool | None = None, sim: SimConfig | None = None):
    """Run every applicable engine; returns (sub-reports, caveats).

    Engines whose preconditions fail are skipped with a caveat.  Monte Carlo
    runs when ``run_mc`` is true, or when it is None and the model's config
    has an ``mc`` block.
    """
    subs, caveats = {}, []
    lyb = _block(m, "lyapunov")
    try:
        regions = RegionSpec(float(lyb.get("r_D", 3.0)), float(lyb.get("r_Gamma", 4.0)),
                             float(lyb.get("R", 1e6)))
    except ValueError as err:
        regions = RegionSpec()
        caveats.append(f"lyapunov region ignored: {err}")
    K, eps = float(lyb.get("K", 2.0)), float(lyb.get("eps", 0.5))

    def attempt(name, fn):
        try:
            subs[name] = fn()
        except BlowupError as err:
            caveats.append(f"{name} skipped: {type(err).__name__}: {err}")
        except ValueError as err:
            caveats.append(f"{name} skipped: {err}")

    one_d = m.dim == 1
    if one_d and m.jumps is None:
        anchor = _block(m, "feller").get("anchor")
        attempt("feller", lambda: fl.classify_feller(m, anchor))
        if m.domain.kind in ("full_line",):
            xi = float(_block(m, "osgood").get("xi", 1.0))
            attempt("osgood", lambda: fl.osgood_test(m, xi))
            attempt("lyapunov.as_explosion", lambda: ly.check_as_explosion(m, regions))
    if m.jumps is None and m.domain.kind in ("full_line", "full_space"):
        attempt("lyapunov.chow_nonexplosion", lambda: ly.chow_nonexplosion_condition(m, regions))
        attempt("lyapunov.chow_explosion", lambda: ly.chow_explosion_condition(m, regions, eps))
    if m.domain.kind in ("full_line", "full_space"):
        names = lyb.get("candidates", ["squared_norm", "log_squared_norm"])
        for cname in names:
            if cname not in NAMED_CANDIDATES:
                caveats.append(f"unknown Lyapunov candidate {cname!r} ignored")
                continue
            V = NAMED_CANDIDATES[cname](m, K, eps)
            attempt(f"lyapunov.nonexplosion[{cname}]",
                    lambda V=V: ly.check_nonexplosion(m, V, regions, lyb.get("include_interior")))
        if m.jumps is None:
            attempt("lyapunov.positive_explosion[log_reciprocal]",
                    lambda: ly.check_positive_explosion(m, log_reciprocal(m.dim, K, eps), regions))
    if one_d and m.domain.kind == "positive_half_line":
        x0 = _block(m, "mc").get("x0", 1.0)
        x0 = float(x0[0] if isinstance(x0, (list, tuple)) else x0)
        attempt("lyapunov.boundary_avoidance", lambda: ly.boundary_avoidance_check(m, x0=x0))

    if run_mc is None:
        run_mc = "mc" in m.analysis
    if run_mc:
        try:
            cfg = sim or sim_config_from(m)
            batch = run_paths(m, cfg)
            subs["mc.explosion"] = estimate_explosion_prob(m, cfg, batch)
            if m.domain.kind not in ("full_line", "full_space"):
                subs["mc.domain_exit"] = estimate_event(
                    batch, (batch.outcome == HIT_BOUNDARY) & (batch.which >= 2),
                    "domain exit", mc_advisory(m))
        except (BlowupError, ValueError) as err:
            caveats.append(f"mc skipped: {err}")
    return subs, caveats


def classify(m: SdeModel, run_mc: bool | None = None, sim: SimConfig | None = None) -> EvidenceReport:
    """Run all applicable engines on ``m`` and combine their findings."""
    subs, caveats = gather_evidence(m, run_mc, sim)
    if not subs:
        caveats.append("no engine was applicable")
        return EvidenceReport({}, [], Verdict.INCONCLUSIVE, [], sorted(caveats),
                              m.digest(), m.name)
    return combine(subs, m.digest(), m.name, caveats)
