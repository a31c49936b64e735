"""Adaptive-step Euler–Maruyama simulation with explosion and boundary detection.

Paths are advanced in lockstep blocks. Every path owns a counter-based
random stream keyed by (seed, path index), and all per-step arithmetic is
elementwise, so a path's trajectory is bit-identical whichever block or
worker thread simulates it.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import NormalDist

import numpy as np

from . import expr as ex
from .errors import PreconditionError
from .model import SdeModel
from .rng import PathStreams

EXPLODED, HIT_BOUNDARY, SURVIVED = 0, 1, 2
OUTCOME_NAMES = ("Exploded", "HitBoundary", "Survived")

# caveat codes attached to individual paths
NO_CAVEAT, STEP_UNDERFLOW, NON_FINITE, STEP_LIMIT = 0, 1, 2, 3
CAVEAT_NAMES = (None, "step_underflow", "non_finite_state", "step_limit")

# boundary codes for HitBoundary
WHICH_NAMES = (None, "lower_level", "domain_left", "domain_right")

UNDERFLOW_RATIO = 1e-12
WILSON_Z = NormalDist().inv_cdf(0.975)
# noise growing faster than |x|^2 forces vanishing steps under the step rule
ADVISORY_NOISE_EXPONENT = 2.0


@dataclass(frozen=True)
class SimConfig:
    x0: tuple
    T: float = 1.0
    dt0: float = 1e-2
    eta: float = 0.5
    B: float = 1e8
    lower_level: float | None = None
    n_paths: int = 1000
    seed: int = 0
    max_steps: int = 5_000_000
    record: tuple = ()
    block_size: int = 4096
    workers: int | None = None

    def __post_init__(self):
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        object.__setattr__(self, "x0", x0)
        if not all(math.isfinite(v) for v in x0):
            raise ValueError("x0 must be finite")
        if not self.dt0 > 0:
            raise ValueError("dt0 must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not self.B > math.sqrt(sum(v * v for v in x0)):
            raise ValueError("explosion threshold B must exceed |x0|")
        if not (isinstance(self.n_paths, int) and self.n_paths >= 1):
            raise ValueError("n_paths must be a positive integer")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")


@dataclass(frozen=True)
class PathResult:
    outcome: str
    time: float
    state: tuple
    which: str | None
    steps: int
    jumps: int
    caveat: str | None = None

    def to_dict(self):
        return {"outcome": self.outcome, "time": self.time, "state": list(self.state),
                "which": self.which, "steps": self.steps, "jumps": self.jumps,
                "caveat": self.caveat}


@dataclass
class SimBatch:
    """Per-path outcomes for paths 0..n-1, in path-index order."""

    outcome: np.ndarray
    time: np.ndarray
    state: np.ndarray
    which: np.ndarray
    steps: np.ndarray
    jumps: np.ndarray
    caveat: np.ndarray
    trajectories: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.outcome)

    def path(self, i) -> PathResult:
        return PathResult(OUTCOME_NAMES[self.outcome[i]], float(self.time[i]),
                          tuple(float(v) for v in self.state[i]), WHICH_NAMES[self.which[i]],
                          int(self.steps[i]), int(self.jumps[i]), CAVEAT_NAMES[self.caveat[i]])

    def caveat_counts(self) -> dict:
        return {CAVEAT_NAMES[c]: int(np.sum(self.caveat == c))
                for c in range(1, len(CAVEAT_NAMES)) if np.any(self.caveat == c)}


@dataclass(frozen=True)
class McEstimate:
    p_hat: float
    ci_low: float
    ci_high: float
    n_paths: int
    successes: int
    mean_steps: float
    mean_jumps: float = 0.0
    event: str = "explosion"
    caveats: tuple = ()
    advisory: str | None = None

    @property
    def halfwidth(self):
        return 0.5 * (self.ci_high - self.ci_low)

    @property
    def excludes_zero(self):
        return self.ci_low > 0

    def to_dict(self):
        return {"event": self.event, "p_hat": self.p_hat, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "n_paths": self.n_paths, "successes": self.successes,
                "mean_steps": self.mean_steps, "mean_jumps": self.mean_jumps,
                "caveats": dict(self.caveats), "advisory": self.advisory}


def wilson_interval(k: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval for k successes out of n."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n and n >= 1")
    p = k / n
    z2 = z * z
    denom = 1 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, min(p, centre - half))
    hi = 1.0 if k == n else min(1.0, max(p, centre + half))
    return lo, hi


def _worker_count(cfg: SimConfig) -> int:
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    cap = os.environ.get("BLOWUPLAB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, min(n, 8))


def _check_start(m: SdeModel, cfg: SimConfig):
    if len(cfg.x0) != m.dim:
        raise ValueError(f"x0 has {len(cfg.x0)} entries, model has dim {m.dim}")
    if not bool(m.domain.contains(np.array(cfg.x0))[0]):
        raise PreconditionError("x0 must lie in the interior of the state domain")
    if cfg.lower_level is not None and not cfg.x0[0] > cfg.lower_level:
        raise PreconditionError("x0 must start above the hitting level")


def _coefficients(m: SdeModel):
    drift = ex.compile_vector(m.drift, m.params)
    flat = ex.compile_vector([e for row in m.diffusion for e in row], m.params)
    shape = (m.dim, m.noise_dim)
    return drift, lambda X: flat(X).reshape(X.shape[:-1] + shape)


def _simulate_block(m: SdeModel, cfg: SimConfig, paths: np.ndarray, record: set) -> SimBatch:
    n, k_noise = len(paths), m.noise_dim
    drift_fn, diff_fn = _coefficients(m)
    streams = PathStreams(cfg.seed, paths)
    X = np.tile(np.array(cfg.x0), (n, 1))
    t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    jumps = np.zeros(n, dtype=np.int64)
    outcome = np.full(n, SURVIVED, dtype=np.int8)
    which = np.zeros(n, dtype=np.int8)
    caveat = np.zeros(n, dtype=np.int8)
    alive = np.ones(n, dtype=bool)
    lam = m.jumps.intensity if m.jumps is not None else 0.0
    next_jump = np.full(n, math.inf)
    rows_all = np.arange(n)
    if lam > 0:
        next_jump = -np.log(streams.uniform(rows_all, 1)[:, 0]) / lam
    dt_floor = cfg.dt0 * UNDERFLOW_RATIO
    dom = m.domain
    rec_rows = {int(r): int(p) for r, p in zip(rows_all, paths) if int(p) in record}
    traj = {p: [(0.0, *cfg.x0)] for p in rec_rows.values()}

    def finish(rows, code, cav=NO_CAVEAT, wh=0):
        outcome[rows] = code
        caveat[rows] = cav
        which[rows] = wh
        alive[rows] = False

    with np.errstate(all="ignore"):
        while True:
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            x = X[idx]
            b = drift_fn(x)
            S = diff_fn(x)
            nx = np.sqrt(np.sum(x * x, axis=1))
            nb = np.sqrt(np.sum(b * b, axis=1))
            ns2 = np.sum(S * S, axis=(1, 2))
            bad = ~(np.all(np.isfinite(b), axis=1) & np.isfinite(ns2))
            rule = cfg.dt0 * np.minimum(
                1.0, np.minimum(cfg.eta * (1 + nx) / (1 + nb),
                                cfg.eta ** 2 * (1 + nx) ** 2 / (1 + ns2)))
            under = ~bad & (rule < dt_floor)
            if np.any(bad):
                finish(idx[bad], EXPLODED, NON_FINITE)
            if np.any(under):
                finish(idx[under], EXPLODED, STEP_UNDERFLOW)
            go = ~(bad | under)
            idx, x, b, S, rule = idx[go], x[go], b[go], S[go], rule[go]
            if idx.size == 0:
                continue
            t0 = t[idx]
            to_end = cfg.T - t0
            to_jump = next_jump[idx] - t0
            dt = np.minimum(rule, np.minimum(to_end, to_jump))
            lands_end = to_end <= np.minimum(rule, to_jump)
            lands_jump = ~lands_end & (to_jump <= rule)
            dW = streams.normal(idx, k_noise) * np.sqrt(dt)[:, None]
            xn = x + b * dt[:, None] + np.sum(S * dW[:, None, :], axis=2)
            tn = np.where(lands_end, cfg.T, np.where(lands_jump, next_jump[idx], t0 + dt))
            if np.any(lands_jump):
                jr = np.flatnonzero(lands_jump)
                rows = idx[jr]
                Y = m.jumps.sample(streams.normal(rows, 1)[:, 0])
                xn[jr] = m.jumps.apply_to(xn[jr], Y)
                jumps[rows] += 1
                next_jump[rows] += -np.log(streams.uniform(rows, 1)[:, 0]) / lam
            X[idx] = xn
            t[idx] = tn
            steps[idx] += 1
            if rec_rows:
                for j in np.flatnonzero(np.isin(idx, list(rec_rows))):
                    traj[rec_rows[int(idx[j])]].append((float(tn[j]), *map(float, xn[j])))

            nxn = np.sqrt(np.sum(xn * xn, axis=1))
            nonfinite = ~np.all(np.isfinite(xn), axis=1)
            boom = ~nonfinite & (nxn >= cfg.B)
            if np.any(nonfinite):
                finish(idx[nonfinite], EXPLODED, NON_FINITE)
            if np.any(boom):
                finish(idx[boom], EXPLODED)
            open_ = ~(nonfinite | boom)
            x1 = xn[:, 0]
            if cfg.lower_level is not None:
                hit = open_ & (x1 <= cfg.lower_level)
                finish(idx[hit], HIT_BOUNDARY, wh=1)
                open_ &= ~hit
            if dom.kind != "full_space":
                left = open_ & (x1 <= dom.l)
                right = open_ & (x1 >= dom.r)
                finish(idx[left], HIT_BOUNDARY, wh=2)
                finish(idx[right], HIT_BOUNDARY, wh=3)
                open_ &= ~(left | right)
            done = open_ & (tn >= cfg.T)
            finish(idx[done], SURVIVED)
            capped = open_ & ~done & (steps[idx] >= cfg.max_steps)
            finish(idx[capped], SURVIVED, STEP_LIMIT)

    return SimBatch(outcome, t, X, which, steps, jumps, caveat, traj)


def run_paths(m: SdeModel, cfg: SimConfig) -> SimBatch:
    """Simulate paths 0..n_paths-1; results do not depend on worker count."""
    _check_start(m, cfg)
    n = cfg.n_paths
    blocks = [np.arange(s, min(n, s + cfg.block_size)) for s in range(0, n, cfg.block_size)]
    record = {int(i) for i in cfg.record}
    workers = min(_worker_count(cfg), len(blocks))
    if workers == 1:
        parts = [_simulate_block(m, cfg, blk, record) for blk in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda blk: _simulate_block(m, cfg, blk, record), blocks))
    traj = {}
    for p in parts:
        traj.update(p.trajectories)
    return SimBatch(*(np.concatenate([getattr(p, f) for p in parts])
                      for f in ("outcome", "time", "state", "which", "steps", "jumps", "caveat")),
                    trajectories=dict(sorted(traj.items())))


def simulate_path(m: SdeModel, cfg: SimConfig, path_index: int) -> PathResult:
    """Simulate a single path; identical to the same index inside a batch run."""
    if path_index < 0:
        raise ValueError("path index must be non-negative")
    _check_start(m, cfg)
    batch = _simulate_block(m, cfg, np.array([path_index]), {int(i) for i in cfg.record})
    return batch.path(0)


def noise_growth_exponent(m: SdeModel, r_lo: float = 1e2, r_hi: float = 1e4) -> float:
    """Log-log slope of the largest Frobenius noise norm between two radii."""
    from .lyapunov import directions

    dirs = directions(m.dim)
    if m.domain.kind == "positive_half_line":
        dirs = dirs[dirs[:, 0] > 0]
    with np.errstate(all="ignore"):
        vals = []
        for r in (r_lo, r_hi):
            S = m.diffusion_at(r * dirs)
            vals.append(np.nanmax(np.sqrt(np.sum(S * S, axis=(1, 2)))))
    lo, hi = vals
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo <= 0 or hi <= 0:
        return 0.0 if (lo == 0 and hi == 0) else math.inf
    return float(math.log(hi / lo) / math.log(r_hi / r_lo))


def mc_advisory(m: SdeModel) -> str | None:
    """Reason why simulation results for ``m`` are advisory only, if any.

    An explicit ``mc.advisory`` entry in the model's config wins; otherwise
    noise growing faster than |x|^2 is flagged.
    """
    note = (m.analysis.get("mc") or {}).get("advisory") if isinstance(m.analysis.get("mc"), dict) else None
    if note:
        return str(note)
    k = noise_growth_exponent(m)
    if k > ADVISORY_NOISE_EXPONENT:
        return (f"simulation unreliable: noise grows like |x|^{k:.3g}, so the step rule "
                "needs vanishing steps at large |x|")
    return None


def estimate_event(batch: SimBatch, mask: np.ndarray, event: str, advisory=None) -> McEstimate:
    """Wilson estimate for the paths selected by ``mask``."""
    n = len(batch)
    k = int(np.sum(mask))
    lo, hi = wilson_interval(k, n)
    return McEstimate(k / n, lo, hi, n, k, float(np.mean(batch.steps)),
                      float(np.mean(batch.jumps)), event,
                      tuple(sorted(batch.caveat_counts().items())), advisory)


def estimate_explosion_prob(m: SdeModel, cfg: SimConfig, batch: SimBatch | None = None) -> McEstimate:
    """Fraction of paths reaching |X| >= B before T, with a Wilson interval."""
    batch = batch if batch is not None else run_paths(m, cfg)
    return estimate_event(batch, batch.outcome == EXPLODED, "explosion", mc_advisory(m))


def boundary_hit_prob(m: SdeModel, cfg: SimConfig, level: float) -> McEstimate:
    """Fraction of paths with X <= level before T (one-dimensional, x > 0)."""
    if m.dim != 1 or m.domain.kind != "positive_half_line":
        raise PreconditionError("boundary_hit_prob needs a 1-D model on (0, inf)")
    if not level > 0:
        raise PreconditionError("level must be positive")
    if not cfg.x0[0] > level:
        raise PreconditionError("x0 must start above the hitting level")
    batch = run_paths(m, replace(cfg, lower_level=float(level)))
    hit = (batch.outcome == HIT_BOUNDARY) & ((batch.which == 1) | (batch.which == 2))
    return estimate_event(batch, hit, f"hit level {level:g}", mc_advisory(m))


def threshold_sensitivity(m: SdeModel, cfg: SimConfig, thresholds=(1e6, 1e8, 1e10)) -> dict:
    """Explosion fraction for several thresholds B on shared seeds."""
    return {float(B): estimate_explosion_prob(m, replace(cfg, B=float(B))).p_hat
            for B in thresholds if B > math.sqrt(sum(v * v for v in cfg.x0))}


@dataclass(frozen=True)
class MartingaleReport:
    mean: float
    stderr: float
    passed: bool
    n_paths: int
    n_steps: int
    T: float

    def to_dict(self):
        return {"mean": self.mean, "stderr": self.stderr, "passed": self.passed,
                "n_paths": self.n_paths, "n_steps": self.n_steps, "T": self.T}


def martingale_check(integrand, T: float = 1.0, n_paths: int = 10_000, seed: int = 0,
                     n_steps: int = 1000, params=None) -> MartingaleReport:
    """Simulate I_T = sum integrand(W_k) (W_{k+1} - W_k) over Brownian paths.

    ``integrand`` is an expression in x1, read as the current Brownian value.
    Passes iff |mean| <= 3 * stderr.
    """
    if isinstance(integrand, str):
        integrand = ex.parse(integrand, params=params or {}, dim=1)
    if n_paths < 2 or n_steps < 1 or not T > 0:
        raise ValueError("need n_paths >= 2, n_steps >= 1 and T > 0")
    dt = T / n_steps
    streams = PathStreams(seed, np.arange(n_paths))
    rows = np.arange(n_paths)
    W = np.zeros(n_paths)
    I = np.zeros(n_paths)
    chunk = 100
    for start in range(0, n_steps, chunk):
        k = min(chunk, n_steps - start)
        dW = streams.normal(rows, k) * math.sqrt(dt)
        for j in range(k):
            I += ex.evaluate_array(integrand, W[:, None], params) * dW[:, j]
            W = W + dW[:, j]
    mean = float(np.mean(I))
    stderr = float(np.std(I, ddof=1) / math.sqrt(n_paths))
    return MartingaleReport(mean, stderr, abs(mean) <= 3 * stderr, n_paths, n_steps, T)
