"""Small expression language for drift, diffusion and Lyapunov candidates.

Expressions are immutable trees of frozen dataclasses.  They can be parsed from
text, rendered back, evaluated (vectorised over many states at once) and
differentiated symbolically.  Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | atom ('^' power)?
    power  := number | '-' number | param | '(' expr ')'      # constant only
    atom   := number | ident | func '(' expr ')' | 'norm' '(' 'x' ')' | '(' expr ')'

Identifiers are ``x`` (alias of ``x1``), ``x1`` ... ``x9`` and user parameter
names.  Unary minus binds looser than ``^``, so ``-x^2`` is ``-(x^2)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import EvalDomainError, NonDifferentiable, ParseError

FUNCTIONS = ("exp", "ln", "sqrt", "abs")
RESERVED = set(FUNCTIONS) | {"norm", "x"} | {f"x{i}" for i in range(1, 10)}


class Expr:
    """Base class; supports Python operators for building trees by hand."""

    def __add__(self, other):
        return BinOp("+", self, _wrap(other))

    def __radd__(self, other):
        return BinOp("+", _wrap(other), self)

    def __sub__(self, other):
        return BinOp("-", self, _wrap(other))

    def __rsub__(self, other):
        return BinOp("-", _wrap(other), self)

    def __mul__(self, other):
        return BinOp("*", self, _wrap(other))

    def __rmul__(self, other):
        return BinOp("*", _wrap(other), self)

    def __truediv__(self, other):
        return BinOp("/", self, _wrap(other))

    def __rtruediv__(self, other):
        return BinOp("/", _wrap(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, k):
        return Pow(self, _wrap(k))

    def __str__(self):
        return render(self)


def _wrap(v):
    if isinstance(v, Expr):
        return v
    return Const(float(v))


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Norm(Expr):
    """Euclidean norm of the full state vector."""


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Expr  # constant subtree: numbers and parameters only

    def __post_init__(self):
        if not is_constant(self.exponent):
            raise ValueError("exponent must be a constant expression")


ZERO = Const(0.0)
ONE = Const(1.0)


def exp(e):
    return Func("exp", _wrap(e))


def ln(e):
    return Func("ln", _wrap(e))


def sqrt(e):
    return Func("sqrt", _wrap(e))


def x(i=1):
    """State variable ``x_i`` (1-based, as in the text syntax)."""
    return Var(i - 1)


@dataclass(frozen=True)
class EvalPoint:
    state: tuple
    params: Mapping[str, float]

    def __post_init__(self):
        vals = list(self.state) + list(self.params.values())
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("evaluation point must be finite")


# -- structural queries -------------------------------------------------------

def children(e):
    if isinstance(e, (Neg, Func)):
        return (e.arg,)
    if isinstance(e, BinOp):
        return (e.left, e.right)
    if isinstance(e, Pow):
        return (e.base, e.exponent)
    return ()


def walk(e):
    yield e
    for c in children(e):
        yield from walk(c)


def variables(e):
    """Indices of state variables referenced (``norm`` references none)."""
    return {n.index for n in walk(e) if isinstance(n, Var)}


def parameters(e):
    return {n.name for n in walk(e) if isinstance(n, Param)}


def uses_norm(e):
    return any(isinstance(n, Norm) for n in walk(e))


def is_constant(e):
    return not any(isinstance(n, (Var, Norm)) for n in walk(e))


def depth(e):
    cs = children(e)
    return 1 + (max(depth(c) for c in cs) if cs else 0)


# -- parsing ------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(src):
    toks = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None:
            start = pos + len(src[pos:]) - len(src[pos:].lstrip())
            raise ParseError(f"unexpected character {src[start]!r}", start)
        kind = m.lastgroup
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(("end", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src, params, dim):
        self.toks = _tokenize(src)
        self.i = 0
        self.params = set(params)
        self.dim = dim

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value):
        kind, val, off = self.take()
        if val != value:
            what = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {what}", off)

    def parse(self):
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            if val == ")":
                raise ParseError("unbalanced parenthesis", off)
            raise ParseError(f"unexpected token {val!r}", off)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.factor())
        return e

    def factor(self):
        kind, val, off = self.peek()
        if kind == "op" and val == "-":
            self.take()
            nk, nv, _ = self.peek()
            # "-3" is a literal unless an exponent follows ("-3^2" is -(3^2))
            if nk == "num" and self.toks[self.i + 1][1] != "^":
                self.take()
                return Const(-float(nv))
            return Neg(self.factor())
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Pow(base, self.power())
        return base

    def power(self):
        kind, val, off = self.peek()
        if kind == "num":
            self.take()
            return Const(float(val))
        if kind == "op" and val == "-" and self.toks[self.i + 1][0] == "num":
            self.take()
            return Const(-float(self.take()[1]))
        if kind == "id" and val in self.params:
            self.take()
            return Param(val)
        if kind == "op" and val == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            if not is_constant(e):
                raise ParseError("exponent must be constant", off)
            return e
        raise ParseError("exponent must be a constant", off)

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "op" and val == "(":
            e = self.expr()
            k, v, o = self.peek()
            if v != ")":
                raise ParseError("unbalanced parenthesis", o)
            self.take()
            return e
        if kind == "id":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(val, arg)
            if val == "norm":
                self.expect("(")
                k, v, o = self.take()
                if v != "x":
                    raise ParseError("norm takes the state vector x", o)
                self.expect(")")
                return Norm()
            if val == "x" or re.fullmatch(r"x[1-9]", val):
                idx = 0 if val == "x" else int(val[1:]) - 1
                if self.dim is not None and idx >= self.dim:
                    raise ParseError(f"variable {val} exceeds dimension {self.dim}", off)
                return Var(idx)
            if val in self.params:
                return Param(val)
            raise ParseError(f"unknown identifier {val!r}", off)
        if kind == "end":
            raise ParseError("unexpected end of input", off)
        if val == ")":
            raise ParseError("unbalanced parenthesis", off)
        raise ParseError(f"unexpected token {val!r}", off)


def parse(src, params=(), dim=None):
    """Parse ``src`` into an expression tree.

    ``params`` lists the parameter names that may appear; any other
    identifier outside the grammar raises :class:`ParseError`.
    """
    clash = set(params) & RESERVED
    if clash:
        raise ParseError(f"parameter names clash with reserved words: {sorted(clash)}", 0)
    return _Parser(src, params, dim).parse()


# -- rendering ----------------------------------------------------------------

def _prec(e):
    if isinstance(e, BinOp):
        return 1 if e.op in "+-" else 2
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 3
    if isinstance(e, Pow):
        return 4
    return 5


def _num(v):
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def render(e):
    """Render to text that parses back to a structurally identical tree."""
    if isinstance(e, Const):
        if not math.isfinite(e.value):
            raise ValueError("cannot render non-finite constant")
        return _num(e.value)
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Norm):
        return "norm(x)"
    if isinstance(e, Func):
        return f"{e.name}({render(e.arg)})"
    if isinstance(e, Neg):
        a = e.arg
        if isinstance(a, Const) or _prec(a) < 4:
            return f"-({render(a)})"
        return f"-{render(a)}"
    if isinstance(e, Pow):
        b = render(e.base)
        if _prec(e.base) < 5:
            b = f"({b})"
        k = e.exponent
        if isinstance(k, Const) and k.value >= 0 and math.copysign(1.0, k.value) > 0:
            ks = _num(k.value)
        elif isinstance(k, Param):
            ks = k.name
        else:
            ks = f"({render(k)})"
        return f"{b}^{ks}"
    if isinstance(e, BinOp):
        p = _prec(e)
        lhs = render(e.left)
        if _prec(e.left) < p:
            lhs = f"({lhs})"
        rhs = render(e.right)
        if _prec(e.right) <= p:
            rhs = f"({rhs})"
        return f"{lhs} {e.op} {rhs}"
    raise TypeError(f"not an expression: {e!r}")


# -- evaluation ---------------------------------------------------------------

def as_states(state, dim=None):
    """Coerce input to a float array whose last axis indexes state components.

    A scalar or 1-D array of length != dim is treated as a batch of 1-D states.
    """
    a = np.asarray(state, dtype=float)
    if a.ndim == 0:
        return a.reshape(1)
    if a.ndim == 1 and dim is not None and dim == 1 and a.shape[0] != 1:
        return a[:, None]
    return a


def _eval(e, X, params, strict):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.index >= X.shape[-1]:
            raise EvalDomainError(f"state has no component x{e.index + 1}", e)
        return X[..., e.index]
    if isinstance(e, Param):
        try:
            return float(params[e.name])
        except KeyError:
            raise EvalDomainError(f"unbound parameter {e.name!r}", e) from None
    if isinstance(e, Norm):
        return np.sqrt(np.sum(X * X, axis=-1))
    if isinstance(e, Neg):
        return -_eval(e.arg, X, params, strict)
    if isinstance(e, Func):
        a = _eval(e.arg, X, params, strict)
        if e.name == "exp":
            return np.exp(a)
        if e.name == "abs":
            return np.abs(a)
        if e.name == "ln":
            if strict and np.any(np.asarray(a) <= 0):
                raise EvalDomainError("logarithm of non-positive value", e)
            return np.log(a)
        if e.name == "sqrt":
            if strict and np.any(np.asarray(a) < 0):
                raise EvalDomainError("square root of negative value", e)
            return np.sqrt(a)
        raise EvalDomainError(f"unknown function {e.name}", e)
    if isinstance(e, BinOp):
        a = _eval(e.left, X, params, strict)
        b = _eval(e.right, X, params, strict)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if strict and np.any(np.asarray(b) == 0):
            raise EvalDomainError("division by zero", e)
        return np.true_divide(a, b)
    if isinstance(e, Pow):
        a = _eval(e.base, X, params, strict)
        k = float(_eval(e.exponent, X, params, strict))
        if strict:
            arr = np.asarray(a)
            if k != int(k) and np.any(arr < 0):
                raise EvalDomainError("negative base with fractional exponent", e)
            if k < 0 and np.any(arr == 0):
                raise EvalDomainError("division by zero", e)
        if k != int(k):
            # pow(-inf, 0.5) is +inf in IEEE arithmetic; keep it undefined
            a = np.where(np.asarray(a) < 0, np.nan, a)
        return np.power(a, k)
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e, state, params=None):
    """Evaluate strictly; raises :class:`EvalDomainError` on undefined values.

    ``state`` may be a scalar (1-D model), a vector of length d, or an array of
    shape (..., d).  Results overflowing to +-inf are returned as such.
    """
    if isinstance(state, EvalPoint):
        state, params = state.state, state.params
    X = as_states(state)
    with np.errstate(all="ignore"):
        out = _eval(e, X, params or {}, True)
    out = np.asarray(out, dtype=float)
    if np.any(np.isnan(out)):
        raise EvalDomainError("undefined value", e)
    shape = X.shape[:-1]
    out = np.broadcast_to(out, shape) if out.shape != shape else out
    return float(out) if out.ndim == 0 else out


def evaluate_array(e, X, params=None):
    """Vectorised, non-raising evaluation: undefined entries become NaN.

    ``X`` has shape (n, d); returns shape (n,).
    """
    X = np.asarray(X, dtype=float)
    with np.errstate(all="ignore"):
        out = _eval(e, X, params or {}, False)
    return np.broadcast_to(np.asarray(out, dtype=float), X.shape[:-1]).copy()


def magnitude_array(e, X, params=None):
    """Rounding-scale bound: ``e`` evaluated with every sum and difference
    replaced by the sum of magnitudes.  Cancellation inside ``e`` leaves an
    error of order eps times this value."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    params = params or {}

    def val(n):
        return np.abs(np.broadcast_to(_eval(n, X, params, False), X.shape[:-1]))

    def mag(n):
        if isinstance(n, (Const, Param, Var, Norm, Func)):
            return val(n)
        if isinstance(n, Neg):
            return mag(n.arg)
        if isinstance(n, BinOp):
            if n.op in "+-":
                return mag(n.left) + mag(n.right)
            if n.op == "*":
                return mag(n.left) * mag(n.right)
            return mag(n.left) / val(n.right)
        if isinstance(n, Pow):
            k = float(_eval(n.exponent, X, params, False))
            return np.power(mag(n.base), k) if k >= 0 else val(n)
        raise TypeError(f"not an expression: {n!r}")

    with np.errstate(all="ignore"):
        return mag(e)


def _compile(e, params):
    """Closure ``f(ctx)`` with ``ctx = [X, cached_norm]``; matches the
    non-strict branch of :func:`_eval` operation for operation."""
    if is_constant(e) and not uses_norm(e):
        with np.errstate(all="ignore"):
            value = _eval(e, np.zeros((1, 1)), params, False)
        return lambda ctx: value
    if isinstance(e, Var):
        i = e.index
        return lambda ctx: ctx[0][..., i]
    if isinstance(e, Norm):
        def norm(ctx):
            if ctx[1] is None:
                X = ctx[0]
                ctx[1] = np.sqrt(np.sum(X * X, axis=-1))
            return ctx[1]
        return norm
    if isinstance(e, Neg):
        f = _compile(e.arg, params)
        return lambda ctx: -f(ctx)
    if isinstance(e, Func):
        f = _compile(e.arg, params)
        fn = {"exp": np.exp, "abs": np.abs, "ln": np.log, "sqrt": np.sqrt}[e.name]
        return lambda ctx: fn(f(ctx))
    if isinstance(e, BinOp):
        f, g = _compile(e.left, params), _compile(e.right, params)
        op = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.true_divide}[e.op]
        return lambda ctx: op(f(ctx), g(ctx))
    if isinstance(e, Pow):
        f = _compile(e.base, params)
        with np.errstate(all="ignore"):
            k = float(_eval(e.exponent, np.zeros((1, 1)), params, False))
        if k != int(k):
            def frac_pow(ctx):
                a = f(ctx)
                return np.power(np.where(np.asarray(a) < 0, np.nan, a), k)
            return frac_pow
        return lambda ctx: np.power(f(ctx), k)
    raise TypeError(f"not an expression: {e!r}")


def compile_vector(exprs, params=None):
    """Return ``f(X) -> (n, len(exprs))`` evaluating a list of expressions.

    Results equal :func:`evaluate_array` entry for entry; constant entries
    are folded once and the state norm is computed at most once per call.
    """
    exprs = list(exprs)
    params = dict(params or {})
    fns = [_compile(e, params) for e in exprs]

    def f(X):
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[:-1] + (len(fns),))
        ctx = [X, None]
        with np.errstate(all="ignore"):
            for j, fn in enumerate(fns):
                out[..., j] = fn(ctx)
        return out

    return f


# -- differentiation ----------------------------------------------------------

def differentiate(e, var):
    """Partial derivative with respect to ``x_{var+1}`` (0-based ``var``)."""
    return simplify(_d(e, var))


def _d(e, i):
    if isinstance(e, (Const, Param)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Norm):
        return BinOp("/", Var(i), Norm())
    if isinstance(e, Neg):
        return Neg(_d(e.arg, i))
    if isinstance(e, BinOp):
        u, v = e.left, e.right
        du, dv = _d(u, i), _d(v, i)
        if e.op in "+-":
            return BinOp(e.op, du, dv)
        if e.op == "*":
            return BinOp("+", BinOp("*", du, v), BinOp("*", u, dv))
        return BinOp("/", BinOp("-", BinOp("*", du, v), BinOp("*", u, dv)), Pow(v, Const(2.0)))
    if isinstance(e, Pow):
        k = e.exponent
        km1 = simplify(BinOp("-", k, ONE))
        return BinOp("*", BinOp("*", k, Pow(e.base, km1)), _d(e.base, i))
    if isinstance(e, Func):
        u = e.arg
        du = _d(u, i)
        if e.name == "exp":
            return BinOp("*", e, du)
        if e.name == "ln":
            return BinOp("/", du, u)
        if e.name == "sqrt":
            return BinOp("/", du, BinOp("*", Const(2.0), e))
        if e.name == "abs":
            if simplify(du) == ZERO:
                return ZERO
            raise NonDifferentiable("abs is not differentiable symbolically; use sqrt(u^2) away from 0")
    raise TypeError(f"not an expression: {e!r}")


# -- simplification -----------------------------------------------------------

def _fold(fn, *vals):
    with np.errstate(all="ignore"):
        try:
            r = float(fn(*vals))
        except (ZeroDivisionError, ValueError, OverflowError):
            return None
    return r if math.isfinite(r) else None


def simplify(e):
    """Constant folding and 0/1 identities; value-preserving on valid points."""
    if isinstance(e, Neg):
        a = simplify(e.arg)
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)
    if isinstance(e, Func):
        a = simplify(e.arg)
        if isinstance(a, Const):
            fn = {"exp": math.exp, "ln": math.log, "sqrt": math.sqrt, "abs": abs}[e.name]
            r = _fold(fn, a.value)
            if r is not None:
                return Const(r)
        return Func(e.name, a)
    if isinstance(e, Pow):
        b, k = simplify(e.base), simplify(e.exponent)
        if isinstance(k, Const):
            if k.value == 0:
                return ONE
            if k.value == 1:
                return b
            if isinstance(b, Const):
                r = _fold(lambda p, q: p ** q if not (p < 0 and q != int(q)) else math.nan, b.value, k.value)
                if r is not None:
                    return Const(r)
        return Pow(b, k)
    if isinstance(e, BinOp):
        a, b = simplify(e.left), simplify(e.right)
        ca = a.value if isinstance(a, Const) else None
        cb = b.value if isinstance(b, Const) else None
        op = e.op
        if ca is not None and cb is not None:
            fn = {"+": lambda p, q: p + q, "-": lambda p, q: p - q,
                  "*": lambda p, q: p * q, "/": lambda p, q: p / q}[op]
            r = _fold(fn, ca, cb)
            if r is not None:
                return Const(r)
        if op == "+":
            if ca == 0:
                return b
            if cb == 0:
                return a
        elif op == "-":
            if cb == 0:
                return a
            if ca == 0:
                return simplify(Neg(b))
        elif op == "*":
            if ca == 0 or cb == 0:
                return ZERO
            if ca == 1:
                return b
            if cb == 1:
                return a
            if ca == -1:
                return simplify(Neg(b))
            if cb == -1:
                return simplify(Neg(a))
            # collect constant factors: c1*(c2*u) -> (c1*c2)*u
            if ca is not None and isinstance(b, BinOp) and b.op == "*" and isinstance(b.left, Const):
                return simplify(BinOp("*", Const(ca * b.left.value), b.right))
        elif op == "/":
            if ca == 0 and cb != 0:
                return ZERO
            if cb == 1:
                return a
        return BinOp(op, a, b)
    return e


# -- polynomial view ----------------------------------------------------------

def poly_coeffs(e, var=0, params=None):
    """Coefficients {degree: value} if ``e`` is a polynomial in ``x_{var+1}``.

    Returns None for anything non-polynomial (norm, other variables, negative
    or fractional powers of the variable, transcendental functions of it).
    """
    params = params or {}

    def const_val(c):
        return float(_eval(c, np.zeros((1, var + 1)), params, True))

    def mul(p, q):
        out = {}
        for i, a in p.items():
            for j, b in q.items():
                out[i + j] = out.get(i + j, 0.0) + a * b
        return out

    def go(n):
        if is_constant(n):
            return {0: const_val(n)}
        if isinstance(n, Var):
            return {1: 1.0} if n.index == var else None
        if isinstance(n, Neg):
            p = go(n.arg)
            return None if p is None else {k: -v for k, v in p.items()}
        if isinstance(n, BinOp):
            p, q = go(n.left), go(n.right)
            if p is None or q is None:
                return None
            if n.op in "+-":
                s = 1.0 if n.op == "+" else -1.0
                out = dict(p)
                for k, v in q.items():
                    out[k] = out.get(k, 0.0) + s * v
                return out
            if n.op == "*":
                return mul(p, q)
            if set(q) == {0} and q[0] != 0:
                return {k: v / q[0] for k, v in p.items()}
            return None
        if isinstance(n, Pow):
            k = const_val(n.exponent)
            if k < 0 or k != int(k):
                return None
            p = go(n.base)
            if p is None:
                return None
            out = {0: 1.0}
            for _ in range(int(k)):
                out = mul(out, p)
            return out
        return None

    p = go(e)
    if p is None:
        return None
    return {k: v for k, v in sorted(p.items()) if v != 0.0}


def from_poly(coeffs, var=0):
    """Build an expression from {degree: coefficient}."""
    terms = []
    for k, c in sorted(coeffs.items()):
        if c == 0:
            continue
        if k == 0:
            terms.append(Const(c))
        else:
            mono = Var(var) if k == 1 else Pow(Var(var), Const(float(k)))
            terms.append(mono if c == 1 else BinOp("*", Const(c), mono))
    if not terms:
        return ZERO
    out = terms[0]
    for t in terms[1:]:
        out = BinOp("+", out, t)
    return out
