"""Scalar expressions over state variables.

Expressions are sympy trees restricted to a small grammar:

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?          exponent must be a rational constant
    atom   := NUMBER | IDENT | FUNC "(" expr ")" | "(" expr ")"
    FUNC   := sin | cos | tan | sec | exp | log | sqrt

Numeric literals (including decimals) become exact rationals. Symbols are
always created through :func:`sym` so that every module agrees on
assumptions.
"""

from __future__ import annotations

import enum
import functools
import re
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .config import DEFAULT, RunConfig

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "sec": sp.sec,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
}


def sym(name: str) -> sp.Symbol:
    return sp.Symbol(name, real=True)


def syms(names) -> list[sp.Symbol]:
    return [sym(n) for n in names]


class ExprSyntaxError(ValueError):
    def __init__(self, msg: str, text: str = "", pos: int = 0):
        self.pos = pos
        self.text = text
        super().__init__(f"{msg} at position {pos}" + (f" in {text!r}" if text else ""))


class UnknownIdentifier(ExprSyntaxError):
    pass


# --------------------------------------------------------------------- parsing

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)|([A-Za-z_][A-Za-z0-9_]*)|(.))")


def _tokenize(text: str):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        start = m.start(m.lastindex) if m.lastindex else pos
        if m.group(1) is not None:
            toks.append(("num", m.group(1), start))
        elif m.group(2) is not None:
            toks.append(("id", m.group(2), start))
        elif m.group(3) is not None:
            ch = m.group(3)
            if ch not in "+-*/^(),":
                raise ExprSyntaxError(f"unexpected character {ch!r}", text, start)
            toks.append(("op", ch, start))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, names):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.names = set(names)

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            what = tok[1] or "end of input"
            raise ExprSyntaxError(f"expected {value!r}, found {what!r}", self.text, tok[2])
        self.i += 1
        return tok

    def parse(self):
        if self.peek()[0] == "end":
            raise ExprSyntaxError("empty expression", self.text, 0)
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected {tok[1]!r}", self.text, tok[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            rhs = self.unary()
            if op == "*":
                e = e * rhs
            else:
                if rhs == 0:
                    raise ExprSyntaxError("division by zero", self.text, pos)
                e = e / rhs
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("-", "+"):
            self.take()
            e = self.unary()
            return -e if tok[1] == "-" else e
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            pos = self.peek()[2]
            ex = self.unary()
            if not ex.is_Rational:
                raise ExprSyntaxError("exponent must be a rational constant", self.text, pos)
            return base ** ex
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return sp.Rational(val)
        if kind == "id":
            if val in FUNCTIONS and self.peek()[1] == "(":
                self.take("(")
                arg = self.expr()
                self.take(")")
                return FUNCTIONS[val](arg)
            if val in FUNCTIONS:
                raise ExprSyntaxError(f"function {val!r} needs an argument", self.text, pos)
            if val not in self.names:
                raise UnknownIdentifier(f"unknown identifier {val!r}", self.text, pos)
            return sym(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.take(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", self.text, pos)


def parse_expr(text: str, names) -> sp.Expr:
    """Parse ``text``; every identifier must be listed in ``names``."""
    return _Parser(text, names).parse()


# -------------------------------------------------------------------- printing

_ADD, _MUL, _POW, _ATOM = 1, 2, 4, 5


def _prec(e) -> int:
    if e.is_Add:
        return _ADD
    if e.is_Mul:
        return _MUL
    if e.is_Rational and (e < 0 or not e.is_Integer):
        return _MUL
    if e.is_Pow:
        if e.exp == sp.Rational(1, 2):
            return _ATOM
        if e.exp.is_negative:
            return _MUL
        return _POW
    return _ATOM


def _wrap(e, min_prec: int) -> str:
    s = to_text(e)
    return f"({s})" if _prec(e) < min_prec else s


def _mul_text(e) -> str:
    coeff, factors = e.as_coeff_mul()
    sign = ""
    if coeff < 0:
        sign, coeff = "-", -coeff
    num, den = [], []
    if coeff.p != 1:
        num.append(str(coeff.p))
    if coeff.q != 1:
        den.append(sp.Integer(coeff.q))
    for f in factors:
        if f.is_Pow and f.exp.is_Rational and f.exp.is_negative:
            den.append(f.base ** (-f.exp))
        else:
            num.append(_wrap(f, _MUL + 1 if f.is_Mul else _MUL))
    numtxt = "*".join(num) if num else "1"
    if not den:
        return sign + numtxt
    if len(den) == 1 and _prec(den[0]) > _MUL:
        dentxt = to_text(den[0])
    else:
        dentxt = "(" + "*".join(_wrap(d, _MUL + 1) for d in den) + ")"
    return f"{sign}{numtxt}/{dentxt}"


def to_text(e) -> str:
    """Print in the input grammar; ``parse_expr(to_text(e))`` gives back ``e``."""
    e = sp.sympify(e)
    if e.is_Integer:
        return str(int(e))
    if e.is_Rational:
        return f"{e.p}/{e.q}"
    if e.is_Symbol:
        return e.name
    if e is sp.E:
        return "exp(1)"
    if e.is_Add:
        out = ""
        for k, t in enumerate(e.as_ordered_terms()):
            neg = t.as_coeff_Mul()[0].is_negative
            body = _wrap(-t if neg else t, _ADD + 1)
            if k == 0:
                out = ("-" if neg else "") + body
            else:
                out += (" - " if neg else " + ") + body
        return out
    if e.is_Mul:
        return _mul_text(e)
    if e.is_Pow:
        b, x = e.base, e.exp
        if not x.is_Rational:
            raise ValueError(f"non-constant exponent in {e}")
        if x.is_negative:
            return "1/" + _wrap(b ** (-x), _POW)
        if x == sp.Rational(1, 2):
            return f"sqrt({to_text(b)})"
        xs = str(int(x)) if x.is_Integer else f"({x.p}/{x.q})"
        return f"{_wrap(b, _ATOM)}^{xs}"
    if isinstance(e, sp.exp):
        return f"exp({to_text(e.args[0])})"
    for name, fn in FUNCTIONS.items():
        if isinstance(fn, type) and isinstance(e, fn):
            return f"{name}({to_text(e.args[0])})"
    raise ValueError(f"expression outside the supported grammar: {e}")


# -------------------------------------------------------------------- calculus


def differentiate(e, v, params=()) -> sp.Expr:
    """Partial derivative with respect to the state variable ``v``."""
    name = v if isinstance(v, str) else v.name
    if name in set(params):
        raise ValueError(f"{name} is a parameter and cannot be a differentiation variable")
    return sp.diff(sp.sympify(e), sym(name))


def _trig_to_sincos(e):
    return e.replace(sp.tan, lambda a: sp.sin(a) / sp.cos(a)).replace(
        sp.sec, lambda a: 1 / sp.cos(a)).replace(
        sp.cot, lambda a: sp.cos(a) / sp.sin(a)).replace(
        sp.csc, lambda a: 1 / sp.sin(a))


def _pythagoras(p):
    """Reduce sin(a)^k to degree <= 1 using sin^2 = 1 - cos^2."""
    for s in sorted(p.atoms(sp.sin), key=sp.default_sort_key):
        c = sp.cos(s.args[0])

        def red(x, s=s, c=c):
            k = int(x.exp)
            return s ** (k % 2) * (1 - c ** 2) ** (k // 2)

        p = p.replace(lambda x, s=s: x.is_Pow and x.base == s and x.exp.is_Integer and x.exp >= 2, red)
    return sp.expand(p)


@functools.lru_cache(maxsize=20000)
def simplify(e) -> sp.Expr:
    """Canonical rational form with the Pythagorean identity applied."""
    e = sp.sympify(e)
    if e.is_Atom:
        return e
    e = _trig_to_sincos(e)
    e = sp.cancel(e)
    if e.atoms(sp.sin) and e.atoms(sp.cos):
        n, d = sp.fraction(e)
        e = sp.cancel(_pythagoras(n) / _pythagoras(d))
    return e


# ------------------------------------------------------------------ evaluation


@dataclass
class Point:
    """State values plus parameter values. Only states are perturbed when sampling."""

    values: dict
    params: dict = field(default_factory=dict)

    @property
    def names(self) -> tuple:
        return tuple(self.values)

    @property
    def all_names(self) -> tuple:
        return tuple(self.values) + tuple(self.params)

    def array(self) -> np.ndarray:
        return np.array([float(v) for v in self.values.values()])

    def moved(self, arr) -> "Point":
        return Point(dict(zip(self.values, (float(a) for a in arr))), dict(self.params))

    def __str__(self):
        return "(" + ", ".join(f"{k}={v:.6g}" for k, v in self.values.items()) + ")"


@functools.lru_cache(maxsize=4096)
def _compiled(exprs: tuple, names: tuple):
    fn = sp.lambdify([sym(n) for n in names], list(exprs), modules="numpy", cse=True)
    return fn


def evaluate_many(exprs, point: Point, X: np.ndarray | None = None) -> np.ndarray:
    """Evaluate expressions at the rows of ``X`` (state coordinates).

    Returns an array of shape (len(exprs), N). Singular entries become nan.
    """
    exprs = tuple(sp.sympify(e) for e in exprs)
    if X is None:
        X = point.array()[None, :]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    if not exprs:
        return np.zeros((0, N))
    names = point.all_names
    cols = [X[:, i] for i in range(X.shape[1])] + [np.full(N, float(v)) for v in point.params.values()]
    fn = _compiled(exprs, names)
    with np.errstate(all="ignore"):
        raw = fn(*cols)
    out = np.empty((len(exprs), N))
    for i, r in enumerate(raw):
        r = np.asarray(r)
        if np.iscomplexobj(r):
            r = np.where(np.abs(r.imag) < 1e-14, r.real, np.nan)
        out[i] = np.broadcast_to(r.astype(float), (N,))
    out[~np.isfinite(out)] = np.nan
    return out


def evaluate(e, point: Point) -> float:
    return float(evaluate_many([e], point)[0, 0])


def project(constraints, point: Point, x0: np.ndarray, tol: float = 1e-12, maxit: int = 50):
    """Gauss-Newton projection of ``x0`` onto {c = 0}; returns None on failure."""
    if not constraints:
        return x0
    names = point.names
    J = tuple(sp.diff(c, sym(n)) for c in constraints for n in names)
    x = np.array(x0, dtype=float)
    k = len(constraints)
    for _ in range(maxit):
        r = evaluate_many(constraints, point, x[None, :])[:, 0]
        if not np.all(np.isfinite(r)):
            return None
        if np.max(np.abs(r)) < tol:
            return x
        Jv = evaluate_many(J, point, x[None, :])[:, 0].reshape(k, len(names))
        if not np.all(np.isfinite(Jv)):
            return None
        x = x - np.linalg.lstsq(Jv, r, rcond=None)[0]
    r = evaluate_many(constraints, point, x[None, :])[:, 0]
    return x if np.all(np.isfinite(r)) and np.max(np.abs(r)) < 1e-10 else None


@functools.lru_cache(maxsize=256)
def _ball(dim: int, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True) + 1e-300
    r = rng.random(n) ** (1.0 / max(dim, 1))
    return d * r[:, None]


def sample_points(point: Point, n: int, cfg: RunConfig = DEFAULT, constraints=()) -> np.ndarray:
    """The point itself followed by ``n - 1`` samples in the radius ball.

    With ``constraints`` the samples are projected onto the constraint set.
    """
    c = point.array()
    dim = len(c)
    pts = [c]
    if dim == 0 or n <= 1:
        return np.array(pts).reshape(len(pts), dim)
    offs = _ball(dim, n - 1, cfg.seed) * cfg.radius
    cons = tuple(constraints)
    for off in offs:
        x = c + off
        if cons:
            x = project(cons, point, x)
            if x is None:
                continue
        pts.append(x)
    return np.array(pts)


class ZeroStatus(enum.Enum):
    ZERO = "zero"
    NONZERO = "nonzero"
    UNKNOWN = "unknown"


@dataclass
class ZeroTest:
    status: ZeroStatus
    witness: Point | None = None
    numeric: bool = False
    diagnostic: str = ""

    @property
    def zero(self) -> bool:
        return self.status is ZeroStatus.ZERO

    @property
    def nonzero(self) -> bool:
        return self.status is ZeroStatus.NONZERO


def is_zero(e, around: Point, cfg: RunConfig = DEFAULT, constraints=(), structural: bool = True) -> ZeroTest:
    """Tri-state zero test: structural simplification, then dense sampling."""
    e = sp.sympify(e)
    if e == 0:
        return ZeroTest(ZeroStatus.ZERO)
    if e.is_number and not e.free_symbols:
        v = complex(e.evalf())
        if abs(v) > cfg.tol_nonzero:
            return ZeroTest(ZeroStatus.NONZERO, around)
    X = sample_points(around, cfg.zero_samples, cfg, constraints)
    vals = evaluate_many([e], around, X)[0]
    ok = np.isfinite(vals)
    big = ok & (np.abs(vals) > cfg.tol_nonzero)
    if big.any():
        k = int(np.argmax(big))
        return ZeroTest(ZeroStatus.NONZERO, around.moved(X[k]))
    if structural and simplify(e) == 0:
        return ZeroTest(ZeroStatus.ZERO)
    if not ok.any():
        return ZeroTest(ZeroStatus.UNKNOWN, diagnostic="evaluation singular at every sample")
    if np.all(np.abs(vals[ok]) < cfg.tol_zero):
        return ZeroTest(ZeroStatus.ZERO, numeric=True)
    return ZeroTest(ZeroStatus.UNKNOWN, diagnostic="samples between the zero and nonzero thresholds")


def nonzero_value(e, at: Point, cfg: RunConfig = DEFAULT) -> float | None:
    """Value of ``e`` at ``at`` when it certifies nonzero there, else None."""
    v = evaluate(e, at)
    if np.isfinite(v) and abs(v) > cfg.tol_nonzero:
        return v
    return None
