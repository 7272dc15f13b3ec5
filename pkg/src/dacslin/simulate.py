"""Fixed-step RK4 simulation and solution-correspondence checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .config import DEFAULT, RunConfig
from .explicitation import Explicitation, SysFbWitness, explicitate
from .expr import Point, _compiled, evaluate_many, parse_expr, sample_points, sym
from .linearize import target_dacs
from .model import Dacs
from .reduction import ReductionError, Restriction, reduce, restrict
from .symmat import inverse

TIME = "t"


class SimulationError(RuntimeError):
    pass


@dataclass
class Trajectory:
    t: np.ndarray            # (N,)
    x: np.ndarray            # (N, n)
    u: np.ndarray            # (N, m)
    states: list
    inputs: list
    v: np.ndarray = None     # (N, s) driving variables, if any
    halving_error: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def header(self):
        h = [TIME] + list(self.states) + list(self.inputs)
        if self.v is not None:
            h += [f"v{i + 1}" for i in range(self.v.shape[1])]
        return h

    def rows(self):
        cols = [self.t[:, None], self.x, self.u] + ([self.v] if self.v is not None else [])
        return np.hstack(cols)

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.header())
        for r in self.rows():
            w.writerow([repr(float(x)) for x in r])


def parse_signal(text: str, states, params=()) -> sp.Expr:
    """Input signal: an expression in t, the states and the parameters."""
    if TIME in states:
        raise ValueError(f"state name {TIME!r} is reserved for time")
    return parse_expr(text, [TIME] + list(states) + list(params))


def _point_with_time(at: Point) -> Point:
    vals = {TIME: 0.0}
    vals.update(at.values)
    return Point(vals, at.params)


def _x0_array(e: Explicitation, x0) -> np.ndarray:
    if isinstance(x0, Point):
        return np.array([x0.values[s] for s in e.states], dtype=float)
    if isinstance(x0, dict):
        return np.array([float(x0[s]) for s in e.states], dtype=float)
    return np.asarray(x0, dtype=float)


def _signals(sig, k):
    if sig is None:
        return [sp.Integer(0)] * k
    sig = [sp.sympify(s) for s in sig]
    if len(sig) != k:
        raise ValueError(f"expected {k} signals, got {len(sig)}")
    return sig


def simulate_explicitation(e: Explicitation, x0, u_signal=None, v_signal=None, t_end: float | None = None,
                           step: float | None = None, cfg: RunConfig = DEFAULT,
                           check_every: int = 10) -> Trajectory:
    """Integrate x' = f + g_u u + g_v v with inputs given as expressions in t and x."""
    t_end = cfg.horizon if t_end is None else t_end
    h = cfg.step if step is None else step
    U = _signals(u_signal, e.m)
    V = _signals(v_signal, e.s)
    Um = sp.Matrix(U) if U else sp.zeros(0, 1)
    Vm = sp.Matrix(V) if V else sp.zeros(0, 1)
    rhs = e.f + (e.g_u * Um if e.m else sp.zeros(e.n, 1)) + (e.g_v * Vm if e.s else sp.zeros(e.n, 1))
    at = _point_with_time(e.at)
    exprs = list(rhs) + U + V
    n = e.n

    fn = _compiled(tuple(sp.sympify(x) for x in exprs), at.all_names)
    pvals = [float(v) for v in at.params.values()]

    def ev(t, x):
        with np.errstate(all="ignore"):
            out = np.array([complex(v).real if np.iscomplexobj(v) else float(v)
                            for v in fn(t, *x, *pvals)], dtype=float)
        if not np.all(np.isfinite(out)):
            raise SimulationError(f"evaluation failure at t={t:.6g}")
        return out

    def rk4(t, x, dt):
        k1 = ev(t, x)[:n]
        k2 = ev(t + dt / 2, x + dt / 2 * k1)[:n]
        k3 = ev(t + dt / 2, x + dt / 2 * k2)[:n]
        k4 = ev(t + dt, x + dt * k3)[:n]
        return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    N = int(round(t_end / h))
    ts = np.arange(N + 1) * h
    xs = np.empty((N + 1, n))
    ins = np.empty((N + 1, e.m + e.s))
    xs[0] = _x0_array(e, x0)
    worst = 0.0
    for k in range(N + 1):
        ins[k] = ev(ts[k], xs[k])[n:]
        if k == N:
            break
        xs[k + 1] = rk4(ts[k], xs[k], h)
        if check_every and k % check_every == 0:
            half = rk4(ts[k] + h / 2, rk4(ts[k], xs[k], h / 2), h / 2)
            worst = max(worst, float(np.max(np.abs(half - xs[k + 1]))) if n else 0.0)
        if n and np.max(np.abs(xs[k + 1])) > 1e6:
            raise SimulationError(f"blow-up at t={ts[k + 1]:.6g}")
    flags = []
    if worst > cfg.halving_tol:
        flags.append(f"step-halving difference {worst:.3g} exceeds {cfg.halving_tol:g}")
    return Trajectory(ts, xs, ins[:, :e.m], list(e.states), list(e.inputs),
                      ins[:, e.m:] if e.s else None, worst, flags)


def derivative(x: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central differences on interior points (two dropped at each end)."""
    if x.shape[0] < 5:
        raise SimulationError("trajectory too short for the 5-point stencil")
    return (-x[4:] + 8 * x[3:-1] - 8 * x[1:-3] + x[:-4]) / (12 * h)


def dacs_residual(d: Dacs, tr: Trajectory) -> float:
    """max_t |E x' - F - G u|_inf along the trajectory."""
    if list(tr.states) != list(d.states) or list(tr.inputs) != list(d.inputs):
        raise ValueError("trajectory variables do not match the system")
    xd = derivative(tr.x, tr.step)
    X = tr.x[2:-2]
    Uv = tr.u[2:-2]
    at = d.at
    E = evaluate_many(list(d.E), at, X).T.reshape(-1, d.l, d.n)
    F = evaluate_many(list(d.F), at, X).T.reshape(-1, d.l)
    G = evaluate_many(list(d.G), at, X).T.reshape(-1, d.l, d.m) if d.m else np.zeros((len(X), d.l, 0))
    r = np.einsum("kij,kj->ki", E, xd) - F - np.einsum("kij,kj->ki", G, Uv)
    return float(np.max(np.abs(r))) if r.size else 0.0


def map_to_original(tr: Trajectory, d: Dacs, R: Restriction) -> Trajectory:
    """Embed a restriction trajectory into the original variables (states and pinned inputs)."""
    at = Point({s: R.system.at.values[s] for s in R.z1}, d.at.params)
    if list(tr.states) != list(R.z1):
        raise ValueError("trajectory is not over the restricted coordinates")
    X = evaluate_many(R.embed([sym(s) for s in d.states]), at, tr.x).T
    ustar = [sym(s) for s in R.system.inputs]
    u_expr = list(R.alpha_pin + R.beta_pin * sp.Matrix(ustar)) if ustar else list(R.alpha_pin)
    at2 = Point({**at.values, **{s: 0.0 for s in R.system.inputs}}, at.params)
    Y = np.hstack([tr.x, tr.u])
    Uo = evaluate_many(u_expr, at2, Y).T if u_expr else np.zeros((len(tr.t), 0))
    return Trajectory(tr.t, X, Uo, list(d.states), list(d.inputs))


def constraint_drift(tr: Trajectory, d: Dacs, constraints) -> float:
    if not constraints:
        return 0.0
    vals = evaluate_many(list(constraints), d.at, tr.x)
    return float(np.max(np.abs(vals)))


@dataclass
class Correspondence:
    state_deviation: float
    input_residual: float
    flags: list = field(default_factory=list)

    @property
    def max_deviation(self):
        return max(self.state_deviation, self.input_residual)

    def as_dict(self):
        return {"state_deviation": self.state_deviation, "input_residual": self.input_residual,
                "flags": list(self.flags)}


def feedback_signals(w: SysFbWitness, u_tilde, v_tilde):
    """u = alpha_u + beta_u u~, v = alpha_v + lam u + beta_v v~ as expressions in t and x."""
    ut = sp.Matrix(u_tilde) if len(u_tilde) else sp.zeros(0, 1)
    vt = sp.Matrix(v_tilde) if len(v_tilde) else sp.zeros(0, 1)
    u = w.alpha_u + w.beta_u * ut
    v = w.alpha_v + w.lam * u + w.beta_v * vt
    return list(u), list(v)


def correspondence_check(a_traj: Trajectory, b_traj: Trajectory, w: SysFbWitness, at: Point) -> Correspondence:
    """max_t |psi(x_a) - x_b| and the residual of the input map along the two trajectories."""
    if a_traj.x.shape[0] != b_traj.x.shape[0]:
        raise ValueError("trajectories are on different grids")
    X = a_traj.x
    psi = evaluate_many(list(w.psi), at, X).T
    dev = float(np.max(np.abs(psi - b_traj.x))) if psi.size else 0.0
    m = a_traj.u.shape[1]
    s = a_traj.v.shape[1] if a_traj.v is not None else 0
    us = [sp.Symbol(f"_u{i}", real=True) for i in range(m)]
    vs = [sp.Symbol(f"_v{i}", real=True) for i in range(s)]
    um = sp.Matrix(us) if m else sp.zeros(0, 1)
    vm = sp.Matrix(vs) if s else sp.zeros(0, 1)
    # u~ = beta_u^-1 (u - alpha_u), v~ = beta_v^-1 (v - alpha_v - lam u)
    ut = inverse(w.beta_u) * (um - w.alpha_u) if m else sp.zeros(0, 1)
    vt = inverse(w.beta_v) * (vm - w.alpha_v - w.lam * um) if s else sp.zeros(0, 1)
    cols = [X, a_traj.u] + ([a_traj.v] if s else [])
    ordered = Point({**at.values, **{str(x): 0.0 for x in us + vs}}, at.params)
    got = evaluate_many(list(ut) + list(vt), ordered, np.hstack(cols)).T
    want = np.hstack([b_traj.u] + ([b_traj.v] if b_traj.v is not None else []))
    res = float(np.max(np.abs(got - want))) if got.size else 0.0
    return Correspondence(dev, res, list(a_traj.flags) + list(b_traj.flags))


def matched_simulation(a: Explicitation, b: Explicitation, w: SysFbWitness, x0, u_tilde, v_tilde,
                       cfg: RunConfig = DEFAULT, t_end=None, step=None):
    """Drive ``b`` with (u~, v~)(t) and ``a`` with the feedback that maps onto them."""
    x0a = _x0_array(a, x0)
    ua, va = feedback_signals(w, u_tilde, v_tilde)
    ta = simulate_explicitation(a, x0a, ua, va, t_end, step, cfg)
    base = Point(dict(zip(a.states, x0a)), a.at.params)
    x0b = evaluate_many(list(w.psi), base, x0a[None, :])[:, 0]
    tb = simulate_explicitation(b, x0b, list(u_tilde), list(v_tilde), t_end, step, cfg)
    return ta, tb, correspondence_check(ta, tb, w, a.at)


@dataclass
class CorrespondenceRun:
    x0: list
    correspondence: Correspondence
    dacs_residual: float

    def as_dict(self):
        return {"x0": list(self.x0), **self.correspondence.as_dict(), "dacs_residual": self.dacs_residual}


def solution_correspondence(d: Dacs, rep, cfg: RunConfig = DEFAULT, points: int = 3, spread: float = 0.05,
                            u_tilde=None, v_tilde=None) -> list:
    """Matched runs of the restriction explicitation and the canonical target of ``rep``.

    ``rep`` is a linearization report carrying a verified transform. Initial
    points are sampled within ``spread`` of the working point; default target
    signals are sin(t)/10 for inputs and cos(t)/5 for driving variables.
    """
    if rep.transform is None or rep.target_system is None:
        raise ValueError("report has no transform")
    t = reduce(d, cfg)
    if not t.admissible:
        raise ReductionError(f"point not admissible: {t.diagnostic}")
    R = restrict(d, t, cfg)
    e = explicitate(R.system, cfg)
    tr = rep.transform
    # the transform acts on the restriction, so the target is always the internal one
    td = target_dacs(rep.indices, tr.psi, e.at, tr.order, inputs=[f"w{i + 1}" for i in range(R.m_star)])
    lam = explicitate(td, cfg)
    names = td.states
    ut = list(u_tilde) if u_tilde is not None else [parse_signal("sin(t)/10", names)] * lam.m
    vt = list(v_tilde) if v_tilde is not None else [parse_signal("cos(t)/5", names)] * lam.s
    runs = []
    for x0 in sample_points(e.at, points, cfg.with_(radius=spread)):
        ta, _, corr = matched_simulation(e, lam, tr.witness, x0, ut, vt, cfg)
        res = dacs_residual(d, map_to_original(ta, d, R))
        runs.append(CorrespondenceRun([float(x) for x in x0], corr, res))
    return runs
