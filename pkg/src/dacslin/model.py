"""Nonlinear and linear DACS models, system/witness files, ex-fb verification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .config import DEFAULT, RunConfig
from .expr import ExprSyntaxError, Point, evaluate_many, parse_expr, sample_points, simplify, sym, to_text
from .symmat import CertificationError, evaluate_matrix, jacobian


class SystemFileError(ValueError):
    def __init__(self, msg: str, line: int | None = None, source: str = ""):
        self.line = line
        where = f"{source}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(where + msg)


@dataclass
class Dacs:
    """E(x) x' = F(x) + G(x) u around a working point."""

    states: list
    inputs: list
    E: sp.Matrix
    F: sp.Matrix
    G: sp.Matrix
    params: dict = field(default_factory=dict)   # name -> Rational
    point: dict = field(default_factory=dict)    # state name -> value
    name: str = "system"

    def __post_init__(self):
        self.F = sp.Matrix(self.F).reshape(len(self.F), 1) if len(self.F) else sp.zeros(self.E.rows, 1)
        if self.G.shape == (0, 0):
            self.G = sp.zeros(self.E.rows, len(self.inputs))
        l, n, m = self.E.rows, len(self.states), len(self.inputs)
        if self.E.cols != n:
            raise SystemFileError(f"E has {self.E.cols} columns, expected n={n}")
        if self.F.rows != l:
            raise SystemFileError(f"F has {self.F.rows} entries, expected l={l}")
        if self.G.shape != (l, m):
            raise SystemFileError(f"G is {self.G.rows}x{self.G.cols}, expected {l}x{m}")
        missing = [s for s in self.states if s not in self.point]
        if missing:
            raise SystemFileError(f"working point does not bind {missing}")
        allowed = {sym(s) for s in list(self.states) + list(self.params)}
        for M, label in ((self.E, "E"), (self.F, "F"), (self.G, "G")):
            extra = set().union(*[e.free_symbols for e in M]) - allowed if len(M) else set()
            if extra:
                raise SystemFileError(f"{label} uses undeclared names {sorted(map(str, extra))}")

    @property
    def l(self) -> int:
        return self.E.rows

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def m(self) -> int:
        return len(self.inputs)

    @property
    def at(self) -> Point:
        return Point({s: float(self.point[s]) for s in self.states},
                     {p: float(v) for p, v in self.params.items()})

    def names(self) -> list:
        return list(self.states) + list(self.params)

    def with_point(self, values: dict) -> "Dacs":
        return Dacs(list(self.states), list(self.inputs), self.E, self.F, self.G,
                    dict(self.params), dict(values), self.name)


@dataclass
class LinearDacs:
    """E x' = H x + L u with exact rational entries."""

    E: sp.Matrix
    H: sp.Matrix
    L: sp.Matrix

    def __post_init__(self):
        if self.E.shape != self.H.shape or self.L.rows != self.E.rows:
            raise ValueError(f"inconsistent shapes E{self.E.shape} H{self.H.shape} L{self.L.shape}")

    @property
    def l(self):
        return self.E.rows

    @property
    def n(self):
        return self.E.cols

    @property
    def m(self):
        return self.L.cols

    def to_dacs(self, name="linear", states=None, inputs=None, point=None) -> Dacs:
        xs = list(states) if states is not None else [f"x{i + 1}" for i in range(self.n)]
        us = list(inputs) if inputs is not None else [f"u{i + 1}" for i in range(self.m)]
        x = sp.Matrix([sym(s) for s in xs]) if xs else sp.zeros(0, 1)
        F = self.H * x if self.n else sp.zeros(self.l, 1)
        pt = point if point is not None else {s: 0.0 for s in xs}
        return Dacs(xs, us, sp.Matrix(self.E), F, sp.Matrix(self.L), {}, dict(pt), name)


@dataclass
class ExFbWitness:
    Q: sp.Matrix
    psi: sp.Matrix
    alpha_u: sp.Matrix
    beta_u: sp.Matrix


# ------------------------------------------------------------------ file I/O


def _sections(text: str, source: str):
    out, order = {}, []
    cur = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            cur = line[1:-1].strip()
            if cur in out:
                raise SystemFileError(f"duplicate section [{cur}]", no, source)
            out[cur] = []
            order.append(cur)
            continue
        if cur is None:
            raise SystemFileError("content before the first section", no, source)
        out[cur].append((no, line))
    return out


def _assignments(lines, source, names=()):
    vals = {}
    for no, line in lines:
        for tok in line.split():
            if "=" not in tok:
                raise SystemFileError(f"expected name=value, got {tok!r}", no, source)
            k, v = tok.split("=", 1)
            try:
                vals[k] = parse_expr(v, names)
            except ExprSyntaxError as e:
                raise SystemFileError(str(e), no, source) from None
    return vals


def _expr(text, names, no, source):
    try:
        return parse_expr(text.strip(), names)
    except ExprSyntaxError as e:
        raise SystemFileError(str(e), no, source) from None


def _matrix(lines, ncols, names, source, label):
    rows = []
    for no, line in lines:
        parts = [p for p in line.split(",")]
        if len(parts) != ncols:
            raise SystemFileError(f"[{label}] row has {len(parts)} entries, expected {ncols}", no, source)
        rows.append([_expr(p, names, no, source) for p in parts])
    return rows


def parse_system(text: str, source: str = "<string>") -> Dacs:
    sec = _sections(text, source)
    for req in ("states", "E", "F"):
        if req not in sec:
            raise SystemFileError(f"missing section [{req}]", None, source)
    name = "system"
    for no, line in sec.get("system", []):
        for tok in line.split():
            if tok.startswith("name="):
                name = tok[5:]
    states = " ".join(l for _, l in sec["states"]).split()
    inputs = " ".join(l for _, l in sec.get("inputs", [])).split()
    params = {k: sp.nsimplify(v) for k, v in _assignments(sec.get("params", []), source).items()}
    dup = set(states) & set(params) or set(states) & set(inputs)
    if dup:
        raise SystemFileError(f"names declared twice: {sorted(dup)}", None, source)
    psub = {sym(k): v for k, v in params.items()}
    point = {k: float(v.xreplace(psub)) for k, v in _assignments(sec.get("point", []), source, list(params)).items()}
    unknown = set(point) - set(states)
    if unknown:
        raise SystemFileError(f"[point] binds unknown states {sorted(unknown)}", None, source)
    names = states + list(params)
    n, m = len(states), len(inputs)
    E = _matrix(sec["E"], n, names, source, "E")
    l = len(E)
    F = [_expr(line, names, no, source) for no, line in sec["F"]]
    if len(F) != l:
        line = sec["F"][0][0] if sec["F"] else None
        raise SystemFileError(f"[F] has {len(F)} entries, expected l={l}", line, source)
    if m:
        if "G" not in sec:
            raise SystemFileError("missing section [G]", None, source)
        G = _matrix(sec["G"], m, names, source, "G")
        if len(G) != l:
            raise SystemFileError(f"[G] has {len(G)} rows, expected l={l}", sec["G"][0][0] if sec["G"] else None, source)
        Gm = sp.Matrix(G)
    else:
        Gm = sp.zeros(l, 0)
    try:
        return Dacs(states, inputs, sp.Matrix(E) if l else sp.zeros(0, n), sp.Matrix(F), Gm, params, point, name)
    except SystemFileError as e:
        raise SystemFileError(str(e), None, source) from None


def load_system(path) -> Dacs:
    with open(path) as fh:
        return parse_system(fh.read(), str(path))


def _fmt_rows(M: sp.Matrix) -> list:
    return [", ".join(to_text(M[i, j]) for j in range(M.cols)) for i in range(M.rows)]


def dump_system(d: Dacs) -> str:
    lines = ["[system]", f"name={d.name}", "[states]", " ".join(d.states), "[inputs]", " ".join(d.inputs)]
    if d.params:
        lines += ["[params]", " ".join(f"{k}={to_text(v)}" for k, v in d.params.items())]
    lines += ["[point]", " ".join(f"{k}={_num(d.point[k])}" for k in d.states)]
    lines += ["[E]"] + _fmt_rows(d.E)
    lines += ["[F]"] + [to_text(e) for e in d.F]
    if d.m:
        lines += ["[G]"] + _fmt_rows(d.G)
    return "\n".join(lines) + "\n"


def _num(v) -> str:
    return to_text(sp.nsimplify(v, rational=True)) if float(v) == int(v) else repr(float(v))


def parse_witness(text: str, d: Dacs, source: str = "<string>") -> ExFbWitness:
    sec = _sections(text, source)
    names = d.names()
    for req in ("Q", "psi"):
        if req not in sec:
            raise SystemFileError(f"missing section [{req}]", None, source)
    Q = sp.Matrix(_matrix(sec["Q"], d.l, names, source, "Q"))
    if Q.rows != d.l:
        raise SystemFileError(f"[Q] has {Q.rows} rows, expected {d.l}", None, source)
    psi = sp.Matrix([_expr(s, names, no, source) for no, s in sec["psi"]])
    if psi.rows != d.n:
        raise SystemFileError(f"[psi] has {psi.rows} entries, expected {d.n}", None, source)
    alpha = sp.Matrix([_expr(s, names, no, source) for no, s in sec.get("alpha_u", [])]) if d.m else sp.zeros(0, 1)
    if alpha.rows != d.m:
        raise SystemFileError(f"[alpha_u] has {alpha.rows} entries, expected {d.m}", None, source)
    beta = sp.Matrix(_matrix(sec.get("beta_u", []), d.m, names, source, "beta_u")) if d.m else sp.zeros(0, 0)
    if beta.shape != (d.m, d.m):
        raise SystemFileError(f"[beta_u] must be {d.m}x{d.m}", None, source)
    return ExFbWitness(Q, psi, alpha, beta)


def load_witness(path, d: Dacs) -> ExFbWitness:
    with open(path) as fh:
        return parse_witness(fh.read(), d, str(path))


def dump_witness(w: ExFbWitness) -> str:
    lines = ["[Q]"] + _fmt_rows(w.Q) + ["[psi]"] + [to_text(e) for e in w.psi]
    if w.alpha_u.rows:
        lines += ["[alpha_u]"] + [to_text(e) for e in w.alpha_u] + ["[beta_u]"] + _fmt_rows(w.beta_u)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------- verification


@dataclass
class RelationStatus:
    name: str
    passed: bool
    max_residual: float
    structural: bool = False
    detail: str = ""


@dataclass
class EquivalenceReport:
    relations: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.relations)

    def as_dict(self):
        return {r.name: {"passed": r.passed, "max_residual": r.max_residual,
                         "structural": r.structural, "detail": r.detail} for r in self.relations}


def check_identity(name: str, M: sp.Matrix, at: Point, cfg: RunConfig = DEFAULT, constraints=(),
                   structural: bool = True) -> RelationStatus:
    """M == 0 near ``at``: sampled residual first, structural zero as a bonus."""
    if len(M) == 0:
        return RelationStatus(name, True, 0.0, True)
    X = sample_points(at, cfg.verify_samples, cfg, constraints)
    vals = evaluate_many(list(M), at, X)
    ok = np.isfinite(vals).all(axis=0)
    if not ok.any():
        return RelationStatus(name, False, float("nan"), detail="singular at every sample")
    res = float(np.max(np.abs(vals[:, ok])))
    passed = res < cfg.tol_residual
    struct = False
    if passed and structural:
        struct = all(simplify(e) == 0 for e in M)
    detail = ""
    if not passed:
        k = int(np.argmax(np.max(np.abs(np.where(np.isfinite(vals), vals, 0)), axis=1)))
        detail = f"entry {divmod(k, M.cols)} residual {res:.3g}"
    return RelationStatus(name, passed, res, struct, detail)


def _certify_invertible(M: sp.Matrix, at: Point, label: str):
    if M.rows == 0:
        return
    v = evaluate_matrix(M, at)[0]
    if not np.all(np.isfinite(v)) or np.linalg.matrix_rank(v) < M.rows:
        raise CertificationError(f"{label} is not invertible at the working point")


def compose(M: sp.Matrix, states_b, psi) -> sp.Matrix:
    sub = {sym(s): p for s, p in zip(states_b, psi)}
    return M.xreplace(sub)


def verify_ex_fb_equivalence(a: Dacs, b: Dacs, w: ExFbWitness, cfg: RunConfig = DEFAULT,
                             structural: bool = True) -> EquivalenceReport:
    """Check Eb(psi) Jpsi = Q Ea, Fb(psi) = Q(Fa + Ga alpha), Gb(psi) = Q Ga beta."""
    if (a.l, a.n, a.m) != (b.l, b.n, b.m):
        raise ValueError("systems must have equal (l, n, m)")
    at = a.at
    J = jacobian(list(w.psi), a.states)
    _certify_invertible(w.Q, at, "Q")
    _certify_invertible(J, at, "Jacobian of psi")
    _certify_invertible(w.beta_u, at, "beta_u")
    Eb, Fb, Gb = (compose(M, b.states, w.psi) for M in (b.E, b.F, b.G))
    rels = [
        check_identity("E", Eb * J - w.Q * a.E, at, cfg, structural=structural),
        check_identity("F", Fb - w.Q * (a.F + a.G * w.alpha_u), at, cfg, structural=structural),
        check_identity("G", Gb - w.Q * a.G * w.beta_u, at, cfg, structural=structural),
    ]
    return EquivalenceReport(rels)


def invert_map(psi, states, at: Point, y: np.ndarray, x0: np.ndarray, tol: float = 1e-10, maxit: int = 60):
    """Damped Newton solve of psi(x) = y starting from x0."""
    psi = list(psi)
    J = jacobian(psi, states)
    x = np.array(x0, dtype=float)
    def resid(x):
        return evaluate_many(psi, at, x[None, :])[:, 0] - y
    r = resid(x)
    for _ in range(maxit):
        if np.max(np.abs(r)) < tol:
            return x
        Jv = evaluate_matrix(J, at, x[None, :])[0]
        step = np.linalg.solve(Jv, r)
        t = 1.0
        while t > 1e-6:
            xn = x - t * step
            rn = resid(xn)
            if np.all(np.isfinite(rn)) and np.linalg.norm(rn) < np.linalg.norm(r):
                break
            t /= 2
        x, r = xn, rn
    if np.max(np.abs(r)) < tol:
        return x
    raise CertificationError("Newton inversion of psi did not converge")


def verify_inverse_witness(a: Dacs, b: Dacs, w: ExFbWitness, cfg: RunConfig = DEFAULT) -> float:
    """Check the (b, a, w^-1) relations numerically at points sampled around psi(x_a).

    Returns the largest residual.
    """
    at = a.at
    J = jacobian(list(w.psi), a.states)
    y0 = evaluate_many(list(w.psi), at)[:, 0]
    bt = Point(dict(zip(b.states, y0)), dict(at.params))
    Y = sample_points(bt, cfg.verify_samples, cfg)
    x_prev = at.array()
    worst = 0.0
    for y in Y:
        x = invert_map(w.psi, a.states, at, y, x_prev)
        Jv = evaluate_matrix(J, at, x[None, :])[0]
        Qv = evaluate_matrix(w.Q, at, x[None, :])[0]
        Bv = evaluate_matrix(w.beta_u, at, x[None, :])[0] if a.m else np.zeros((0, 0))
        Av = evaluate_many(list(w.alpha_u), at, x[None, :])[:, 0] if a.m else np.zeros(0)
        Ea, Fa, Ga = (evaluate_matrix(M, at, x[None, :])[0] for M in (a.E, a.F, a.G))
        Eb, Fb, Gb = (evaluate_matrix(M, bt, y[None, :])[0] for M in (b.E, b.F, b.G))
        Qi, Ji = np.linalg.inv(Qv), np.linalg.inv(Jv)
        Bi = np.linalg.inv(Bv) if a.m else Bv
        alpha_inv = -Bi @ Av
        r1 = Ea @ Ji - Qi @ Eb
        r2 = Fa.ravel() - Qi @ (Fb.ravel() + Gb @ alpha_inv)
        r3 = Ga - Qi @ Gb @ Bi if a.m else np.zeros(1)
        worst = max(worst, np.max(np.abs(r1)), np.max(np.abs(r2)), np.max(np.abs(r3)) if r3.size else 0)
    return float(worst)
