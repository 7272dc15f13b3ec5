"""Explicitation with driving variables and system-feedback equivalence."""

from __future__ import annotations

from dataclasses import dataclass

import sympy as sp

from .config import DEFAULT, RunConfig
from .expr import Point, sym, to_text
from .model import Dacs, EquivalenceReport, ExFbWitness, _certify_invertible, check_identity, compose
from .symmat import (inverse, NonConstantRank, certify_zero, jacobian, kernel_basis,
                     msimplify, numeric_rank, right_inverse, row_reduce)


@dataclass
class Explicitation:
    """x' = f + g_u u + g_v v,  y = h + l_u u."""

    states: list
    inputs: list
    f: sp.Matrix
    g_u: sp.Matrix
    g_v: sp.Matrix
    h: sp.Matrix
    l_u: sp.Matrix
    at: Point
    Q: sp.Matrix = None
    E1: sp.Matrix = None
    E1_pinv: sp.Matrix = None

    @property
    def n(self):
        return len(self.states)

    @property
    def m(self):
        return len(self.inputs)

    @property
    def s(self):
        return self.g_v.cols

    @property
    def p(self):
        return self.h.rows

    def dims(self):
        return (self.n, self.m, self.s, self.p)


def _random_invertible(k: int, rng) -> sp.Matrix:
    while True:
        M = sp.Matrix(k, k, lambda i, j: sp.Rational(int(rng.integers(-3, 4)), int(rng.integers(1, 3))))
        if k == 0 or M.det() != 0:
            return M


def _random(k1, k2, rng) -> sp.Matrix:
    return sp.Matrix(k1, k2, lambda i, j: sp.Integer(int(rng.integers(-2, 3))))


def explicitate(d: Dacs, cfg: RunConfig = DEFAULT, rng=None, verify: bool = True) -> Explicitation:
    """Split Q E = [E1; 0] and read off the driving-variable ODECS.

    With ``rng`` the row operations, right inverse and kernel basis are
    replaced by random members of the same class.
    """
    at = d.at
    ri = numeric_rank(d.E, at, cfg)
    if not ri.constant:
        raise NonConstantRank(f"rank E is not constant near the point: {ri.sample_ranks}")
    rr = row_reduce(d.E, at, cfg)
    r, l = rr.rank, d.l
    Q = rr.Q
    if rng is not None:
        R = _random_invertible(r, rng)
        T = _random_invertible(l - r, rng)
        mix = sp.zeros(l, l)
        mix[:r, :r] = R
        mix[:r, r:] = _random(r, l - r, rng)
        mix[r:, r:] = T
        Q = mix * Q
    QE = msimplify(Q * d.E)
    QF = msimplify(Q * d.F)
    QG = msimplify(Q * d.G)
    E1, F1, G1 = QE[:r, :], QF[:r, :], QG[:r, :]
    h, l_u = QF[r:, :], QG[r:, :]
    E1p = right_inverse(E1, at, cfg) if r else sp.zeros(d.n, 0)
    gv = kernel_basis(E1, at, cfg) if r else sp.eye(d.n)
    if rng is not None and gv.cols:
        gv = msimplify(gv * _random_invertible(gv.cols, rng))
        E1p = msimplify(E1p + gv * _random(gv.cols, r, rng))
    f = msimplify(E1p * F1) if r else sp.zeros(d.n, 1)
    gu = msimplify(E1p * G1) if r else sp.zeros(d.n, d.m)
    e = Explicitation(list(d.states), list(d.inputs), f, gu, gv, h, l_u, at, Q, E1, E1p)
    if verify and r:
        certify_zero(msimplify(E1 * gv), at, cfg, what="E1*g_v")
        certify_zero(msimplify(E1 * f - F1), at, cfg, what="E1*f - F1")
        certify_zero(msimplify(E1 * gu - G1), at, cfg, what="E1*g_u - G1")
    return e


@dataclass
class SysFbWitness:
    psi: sp.Matrix
    alpha_u: sp.Matrix
    beta_u: sp.Matrix
    alpha_v: sp.Matrix
    beta_v: sp.Matrix
    lam: sp.Matrix
    gamma: sp.Matrix
    eta: sp.Matrix


def identity_witness(e: Explicitation) -> SysFbWitness:
    n, m, s, p = e.dims()
    return SysFbWitness(sp.Matrix([sym(x) for x in e.states]), sp.zeros(m, 1), sp.eye(m),
                        sp.zeros(s, 1), sp.eye(s), sp.zeros(s, m), sp.zeros(n, p), sp.eye(p))


def sys_fb_sides(a: Explicitation, b: Explicitation, w: SysFbWitness):
    """Both sides of the block identity relating ``a`` to ``b`` through ``w``."""
    n, m, s, p = a.dims()
    psi = list(w.psi)
    J = jacobian(psi, a.states)
    cb = lambda M: compose(M, b.states, psi)
    top = sp.Matrix.hstack(cb(b.f), cb(b.g_u), cb(b.g_v))
    bot = sp.Matrix.hstack(cb(b.h), cb(b.l_u), sp.zeros(p, s))
    lhs = sp.Matrix.vstack(top, bot)
    left = sp.Matrix.vstack(sp.Matrix.hstack(J, J * w.gamma), sp.Matrix.hstack(sp.zeros(p, n), w.eta))
    mid = sp.Matrix.vstack(sp.Matrix.hstack(a.f, a.g_u, a.g_v),
                           sp.Matrix.hstack(a.h, a.l_u, sp.zeros(p, s)))
    right = sp.Matrix.vstack(
        sp.Matrix.hstack(sp.ones(1, 1), sp.zeros(1, m), sp.zeros(1, s)),
        sp.Matrix.hstack(w.alpha_u, w.beta_u, sp.zeros(m, s)),
        sp.Matrix.hstack(w.alpha_v + w.lam * w.alpha_u, w.lam * w.beta_u, w.beta_v))
    return lhs, left * mid * right


def verify_sys_fb_equivalence(a: Explicitation, b: Explicitation, w: SysFbWitness,
                              cfg: RunConfig = DEFAULT, structural: bool = False) -> EquivalenceReport:
    if a.dims() != b.dims():
        raise ValueError(f"dimension mismatch {a.dims()} vs {b.dims()}")
    n, m, s, p = a.dims()
    at = a.at
    _certify_invertible(jacobian(list(w.psi), a.states), at, "Jacobian of psi")
    _certify_invertible(w.beta_u, at, "beta_u")
    _certify_invertible(w.beta_v, at, "beta_v")
    _certify_invertible(w.eta, at, "eta")
    lhs, rhs = sys_fb_sides(a, b, w)
    R = lhs - rhs
    blocks = [("f", slice(0, n), slice(0, 1)), ("g_u", slice(0, n), slice(1, 1 + m)),
              ("g_v", slice(0, n), slice(1 + m, 1 + m + s)), ("h", slice(n, n + p), slice(0, 1)),
              ("l_u", slice(n, n + p), slice(1, 1 + m))]
    rels = [check_identity(name, R[rs, cs], at, cfg, structural=structural) for name, rs, cs in blocks]
    return EquivalenceReport(rels)


def left_inverse(A: sp.Matrix, at: Point, cfg: RunConfig = DEFAULT) -> sp.Matrix:
    return right_inverse(A.T, at, cfg).T


def class_witness(a: Explicitation, b: Explicitation, cfg: RunConfig = DEFAULT) -> SysFbWitness:
    """Witness relating two explicitations of the same DACS (identity diffeomorphism)."""
    if a.Q is None or b.Q is None:
        raise ValueError("provenance witnesses missing")
    n, m, s, p = a.dims()
    r = n - s
    at = a.at
    T = msimplify(b.Q * inverse(a.Q, at, cfg))
    certify_zero(T[r:, :r], at, cfg, what="lower-left block of Qb Qa^-1")
    T1, T2, T4 = T[:r, :r], T[:r, r:], T[r:, r:]
    gamma = msimplify(a.E1_pinv * inverse(T1, at, cfg) * T2) if r and p else sp.zeros(n, p)
    L = left_inverse(a.g_v, at, cfg) if s else sp.zeros(0, n)
    beta_v = msimplify(L * b.g_v) if s else sp.zeros(0, 0)
    alpha_v = msimplify(L * (b.f - a.f - gamma * a.h)) if s else sp.zeros(0, 1)
    lam = msimplify(L * (b.g_u - a.g_u - gamma * a.l_u)) if s else sp.zeros(0, m)
    return SysFbWitness(sp.Matrix([sym(x) for x in a.states]), sp.zeros(m, 1), sp.eye(m),
                        alpha_v, beta_v, lam, gamma, msimplify(T4))


def bridge_ex_fb(da: Dacs, db: Dacs, ea: Explicitation, eb: Explicitation, w: SysFbWitness) -> ExFbWitness:
    """DACS-level witness built from a system-feedback witness between explicitations.

    In the explicitation frames Q = [Q1, Q1 E1 gamma; 0, eta] with
    Q1 = E1b(psi) Jpsi E1a^+; the result is mapped back by the two row operations.
    """
    J = jacobian(list(w.psi), ea.states)
    r = ea.E1.rows
    p = ea.h.rows
    E1b = compose(eb.E1, eb.states, list(w.psi))
    Q1 = msimplify(E1b * J * ea.E1_pinv)
    top = sp.Matrix.hstack(Q1, msimplify(Q1 * ea.E1 * w.gamma) if p else sp.zeros(r, 0))
    bot = sp.Matrix.hstack(sp.zeros(p, r), w.eta)
    Qin = sp.Matrix.vstack(top, bot)
    Qb_psi = compose(eb.Q, eb.states, list(w.psi))
    Q = msimplify(inverse(Qb_psi, ea.at) * Qin * ea.Q)
    return ExFbWitness(Q, w.psi, w.alpha_u, w.beta_u)


def dump_explicitation(e: Explicitation) -> str:
    from .model import _fmt_rows
    lines = ["[states]", " ".join(e.states), "[inputs]", " ".join(e.inputs),
             "[point]", " ".join(f"{k}={v!r}" for k, v in e.at.values.items())]
    if e.at.params:
        lines += ["[params]", " ".join(f"{k}={v!r}" for k, v in e.at.params.items())]
    lines += ["[f]"] + [to_text(x) for x in e.f]
    for name, M in (("g_u", e.g_u), ("g_v", e.g_v), ("l_u", e.l_u)):
        if M.cols and M.rows:
            lines += [f"[{name}]"] + _fmt_rows(M)
    if e.h.rows:
        lines += ["[h]"] + [to_text(x) for x in e.h]
    return "\n".join(lines) + "\n"
