"""SDE problem instances, state domains, regions and Lyapunov candidates."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from . import expr as ex
from .errors import BlowupError, ConfigError, ParseError

DOMAIN_KINDS = ("full_line", "interval", "positive_half_line", "full_space")
DISTRIBUTIONS = ("lognormal", "normal", "point_mass")
JUMP_MODES = ("additive", "merton")


@dataclass(frozen=True)
class StateDomain:
    kind: str = "full_line"
    l: float = -math.inf
    r: float = math.inf

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not self.l < self.r:
            raise ValueError("domain requires l < r")

    @classmethod
    def make(cls, kind, l=None, r=None):
        if kind == "interval":
            if l is None or r is None:
                raise ValueError("interval domain needs l and r")
            return cls(kind, float(l), float(r))
        if kind == "positive_half_line":
            return cls(kind, 0.0, math.inf)
        return cls(kind)

    @property
    def bounded(self):
        return math.isfinite(self.l) and math.isfinite(self.r)

    def contains(self, X):
        """Mask of states strictly inside the domain (1-D kinds test x1)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "full_space":
            return np.all(np.isfinite(X), axis=-1)
        x1 = X[..., 0]
        return (x1 > self.l) & (x1 < self.r)


@dataclass(frozen=True)
class JumpSpec:
    """Constant-intensity jumps: at rate ``intensity`` apply a random size Y.

    ``additive`` sets x <- x + Y; ``merton`` sets x <- x * Y.
    """

    intensity: float
    dist: str
    dist_params: tuple
    apply: str = "additive"

    def __post_init__(self):
        if not self.intensity > 0:
            raise ValueError("jump intensity must be positive")
        if self.dist not in DISTRIBUTIONS:
            raise ValueError(f"unknown jump distribution {self.dist!r}")
        if self.apply not in JUMP_MODES:
            raise ValueError(f"unknown jump mode {self.apply!r}")
        p = dict(self.dist_params)
        if self.dist in ("lognormal", "normal"):
            if set(p) != {"mu", "sigma"}:
                raise ValueError(f"{self.dist} needs parameters mu and sigma")
            if not p["sigma"] > 0:
                raise ValueError("jump size sigma must be positive")
        else:
            if set(p) != {"y"}:
                raise ValueError("point_mass needs parameter y")

    @property
    def params(self):
        return dict(self.dist_params)

    def moment(self, k):
        """E[Y^k] for integer k >= 0."""
        p = self.params
        if self.dist == "point_mass":
            return p["y"] ** k
        mu, s = p["mu"], p["sigma"]
        if self.dist == "lognormal":
            return math.exp(k * mu + 0.5 * k * k * s * s)
        # normal: E[(mu + s Z)^k] = sum_j C(k, j) mu^(k-j) s^j E[Z^j]
        total = 0.0
        for j in range(0, k + 1, 2):
            double_fact = math.prod(range(j - 1, 0, -2)) if j > 0 else 1
            total += math.comb(k, j) * mu ** (k - j) * s ** j * double_fact
        return total

    def sample(self, z):
        """Map standard normals ``z`` to jump sizes."""
        p = self.params
        if self.dist == "point_mass":
            return np.full_like(np.asarray(z, dtype=float), p["y"])
        y = p["mu"] + p["sigma"] * np.asarray(z, dtype=float)
        return np.exp(y) if self.dist == "lognormal" else y

    def apply_to(self, X, Y):
        Y = np.asarray(Y, dtype=float)[..., None]
        return X * Y if self.apply == "merton" else X + Y


@dataclass(frozen=True)
class RegionSpec:
    """Balls D (radius r_D) inside Gamma (r_Gamma) inside the truncation R."""

    r_D: float = 3.0
    r_Gamma: float = 4.0
    R: float = 1e6

    def __post_init__(self):
        if not 0 < self.r_D < self.r_Gamma < self.R:
            raise ValueError("region requires 0 < r_D < r_Gamma < R")


@dataclass(frozen=True)
class LyapunovCandidate:
    v: ex.Expr
    name: str
    singular_points: tuple = ()
    meta: tuple = ()

    def __post_init__(self):
        if not isinstance(self.v, ex.Expr):
            raise TypeError("candidate must be an expression")


class Verdict(str, Enum):
    """Classification outcome shared by the analytic engines and the report."""

    AS_NON_EXPLOSION = "AlmostSureNonExplosion"
    POSITIVE_PROBABILITY_EXPLOSION = "PositiveProbabilityExplosion"
    AS_EXPLOSION = "AlmostSureExplosion"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SdeModel:
    dim: int
    drift: tuple
    diffusion: tuple
    jumps: JumpSpec | None = None
    domain: StateDomain = StateDomain()
    params: dict = field(default_factory=dict, hash=False, compare=True)
    name: str = ""
    analysis: dict = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if len(self.drift) != self.dim:
            raise ValueError("drift length must equal dim")
        if len(self.diffusion) != self.dim:
            raise ValueError("diffusion must have dim rows")
        widths = {len(row) for row in self.diffusion}
        if len(widths) != 1 or 0 in widths:
            raise ValueError("diffusion rows must have equal positive length")
        for e in self.all_exprs():
            bad = [i for i in ex.variables(e) if i >= self.dim]
            if bad:
                raise ValueError(f"expression {e} references x{bad[0] + 1} beyond dim {self.dim}")
            missing = ex.parameters(e) - set(self.params)
            if missing:
                raise ValueError(f"unbound parameters {sorted(missing)}")
        if self.dim > 1 and self.domain.kind not in ("full_space",):
            raise ValueError("multi-dimensional models use the full_space domain")

    @property
    def noise_dim(self):
        return len(self.diffusion[0])

    def all_exprs(self):
        yield from self.drift
        for row in self.diffusion:
            yield from row

    # vectorised coefficient evaluation; X has shape (n, d)
    def drift_at(self, X):
        X = np.asarray(X, dtype=float)
        return np.stack([ex.evaluate_array(e, X, self.params) for e in self.drift], axis=-1)

    def diffusion_at(self, X):
        X = np.asarray(X, dtype=float)
        rows = [np.stack([ex.evaluate_array(e, X, self.params) for e in row], axis=-1)
                for row in self.diffusion]
        return np.stack(rows, axis=-2)

    def a_at(self, X):
        """A = sigma sigma^T, computed on demand."""
        S = self.diffusion_at(X)
        return S @ np.swapaxes(S, -1, -2)

    # 1-D conveniences on plain arrays of positions
    def b(self, x):
        return self.drift_at(np.asarray(x, dtype=float)[..., None])[..., 0]

    def sigma2(self, x):
        return self.a_at(np.asarray(x, dtype=float)[..., None])[..., 0, 0]

    def a_exprs(self):
        """Symbolic entries of A = sigma sigma^T."""
        d, m = self.dim, self.noise_dim
        out = []
        for i in range(d):
            row = []
            for j in range(d):
                acc = None
                for k in range(m):
                    t = ex.BinOp("*", self.diffusion[i][k], self.diffusion[j][k])
                    acc = t if acc is None else ex.BinOp("+", acc, t)
                row.append(ex.simplify(acc))
            out.append(tuple(row))
        return tuple(out)

    def to_dict(self):
        d = {
            "name": self.name,
            "dim": self.dim,
            "params": dict(sorted(self.params.items())),
            "drift": [ex.render(e) for e in self.drift],
            "diffusion": [[ex.render(e) for e in row] for row in self.diffusion],
            "domain": {"kind": self.domain.kind, "l": _jnum(self.domain.l), "r": _jnum(self.domain.r)},
        }
        if self.jumps is not None:
            d["jumps"] = {"lambda": self.jumps.intensity, "dist": self.jumps.dist,
                          "dist_params": self.jumps.params, "apply": self.jumps.apply}
        return d

    def digest(self):
        blob = json.dumps({k: v for k, v in self.to_dict().items() if k != "name"}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jnum(v):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


# -- configuration ------------------------------------------------------------

_TOP_KEYS = {"name", "citation", "dim", "params", "drift", "diffusion", "domain", "jumps",
             "feller", "lyapunov", "mc", "osgood", "expect"}


def load_model(config):
    """Build a validated :class:`SdeModel` from YAML text or a mapping.

    Raises :class:`ConfigError` naming the offending key.
    """
    if isinstance(config, (str, bytes)):
        try:
            config = yaml.safe_load(config)
        except yaml.YAMLError as err:
            raise ConfigError(f"not valid YAML: {err}") from None
    if not isinstance(config, dict):
        raise ConfigError("top level must be a mapping")
    unknown = set(config) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", key=sorted(unknown)[0])

    dim = config.get("dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1 or dim > 9:
        raise ConfigError("must be an integer between 1 and 9", key="dim")

    params = config.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("must be a mapping of name to number", key="params")
    try:
        params = {str(k): float(v) for k, v in params.items()}
    except (TypeError, ValueError):
        raise ConfigError("values must be numbers", key="params") from None

    def parse(src, key):
        if isinstance(src, (int, float)) and not isinstance(src, bool):
            src = repr(float(src))
        if not isinstance(src, str):
            raise ConfigError("expression must be a string", key=key)
        try:
            return ex.parse(src, params=params, dim=dim)
        except ParseError as err:
            raise ConfigError(str(err), key=key) from None

    if "drift" not in config:
        raise ConfigError("missing", key="drift")
    drift = config["drift"]
    if not isinstance(drift, list):
        drift = [drift]
    if len(drift) != dim:
        raise ConfigError(f"expected {dim} entries, got {len(drift)}", key="drift")
    drift = tuple(parse(s, f"drift[{i}]") for i, s in enumerate(drift))

    if "diffusion" not in config:
        raise ConfigError("missing", key="diffusion")
    diff = config["diffusion"]
    if not isinstance(diff, list):
        diff = [[diff]]
    elif dim == 1 and diff and not isinstance(diff[0], list):
        diff = [diff]
    if len(diff) != dim or not all(isinstance(r, list) for r in diff):
        raise ConfigError(f"expected {dim} rows", key="diffusion")
    if len({len(r) for r in diff}) != 1 or len(diff[0]) == 0:
        raise ConfigError("rows must have equal positive length", key="diffusion")
    diffusion = tuple(tuple(parse(s, f"diffusion[{i}][{j}]") for j, s in enumerate(row))
                      for i, row in enumerate(diff))

    dom = config.get("domain") or {"kind": "full_line" if dim == 1 else "full_space"}
    if not isinstance(dom, dict) or "kind" not in dom:
        raise ConfigError("must be a mapping with a kind", key="domain")
    try:
        domain = StateDomain.make(dom["kind"], dom.get("l"), dom.get("r"))
    except (ValueError, TypeError) as err:
        raise ConfigError(str(err), key="domain") from None

    jumps = None
    if config.get("jumps") is not None:
        j = config["jumps"]
        if not isinstance(j, dict):
            raise ConfigError("must be a mapping", key="jumps")
        for k in ("lambda", "dist", "dist_params"):
            if k not in j:
                raise ConfigError("missing", key=f"jumps.{k}")
        try:
            dp = tuple(sorted((str(k), float(v)) for k, v in dict(j["dist_params"]).items()))
            jumps = JumpSpec(float(j["lambda"]), str(j["dist"]), dp, str(j.get("apply", "additive")))
        except (ValueError, TypeError) as err:
            raise ConfigError(str(err), key="jumps") from None

    analysis = {k: config[k] for k in ("feller", "lyapunov", "mc", "osgood", "expect", "citation")
                if k in config}
    try:
        return SdeModel(dim, drift, diffusion, jumps, domain, params,
                        str(config.get("name", "")), analysis)
    except ValueError as err:
        raise ConfigError(str(err), key="model") from None


def load_model_file(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}", key=str(path)) from None
    return load_model(text)


def region_from(cfg, default=None):
    cfg = cfg or {}
    base = default or RegionSpec()
    try:
        return RegionSpec(float(cfg.get("r_D", base.r_D)), float(cfg.get("r_Gamma", base.r_Gamma)),
                          float(cfg.get("R", base.R)))
    except ValueError as err:
        raise ConfigError(str(err), key="lyapunov.region") from None


# -- built-in Lyapunov candidates ---------------------------------------------

def squared_norm(dim):
    terms = [ex.Pow(ex.Var(i), ex.Const(2.0)) for i in range(dim)]
    v = terms[0]
    for t in terms[1:]:
        v = ex.BinOp("+", v, t)
    return LyapunovCandidate(v, "squared_norm")


def log_squared_norm(dim):
    v = ex.Func("ln", ex.Pow(ex.Norm(), ex.Const(2.0)))
    return LyapunovCandidate(v, "log_squared_norm", singular_points=(tuple([0.0] * dim),))


def log_reciprocal(dim, K=2.0, eps=0.5):
    """V = K - 1/ln(|x|)^eps; bounded above by K, defined for |x| > 1."""
    v = ex.BinOp("-", ex.Const(float(K)),
                 ex.BinOp("/", ex.ONE, ex.Pow(ex.Func("ln", ex.Norm()), ex.Const(float(eps)))))
    return LyapunovCandidate(v, "log_reciprocal", singular_points=(tuple([0.0] * dim),),
                             meta=(("K", float(K)), ("eps", float(eps))))


def builtin_candidates(m, K=2.0, eps=0.5):
    """The four standard families; the drift-integral one only for 1-D models
    whose drift is positive on [1, inf)."""
    cands = [squared_norm(m.dim), log_squared_norm(m.dim), log_reciprocal(m.dim, K, eps)]
    if m.dim == 1 and m.jumps is None:
        from .lyapunov import drift_integral_candidate

        try:
            cands.append(drift_integral_candidate(m))
        except BlowupError:  # drift not positive/integrable on [1, inf): family unavailable
            pass
    return cands
