"""Locally maximal controlled invariant submanifold and the restricted DACS."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .config import DEFAULT, RunConfig
from .expr import Point, evaluate, is_zero, simplify, sym, to_text
from .model import Dacs
from .symmat import (NonConstantRank, evaluate_matrix, jacobian,
                     inverse, kernel_basis, left_annihilator, msimplify, numeric_rank, row_reduce)


class ReductionError(RuntimeError):
    pass


@dataclass
class ReductionStep:
    k: int
    constraints: list          # cumulative constraint functions of M_k
    new: list                  # constraints added at this step
    dim: int
    annihilator: sp.Matrix = None


@dataclass
class ReductionTrace:
    steps: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    k_star: int = 0
    admissible: bool = True
    fixed_point_reached: bool = False
    n: int = 0
    diagnostic: str = ""

    @property
    def n_star(self) -> int:
        return self.n - len(self.constraints)

    def as_dict(self):
        return {
            "admissible": self.admissible,
            "fixed_point_reached": self.fixed_point_reached,
            "k_star": self.k_star,
            "n_star": self.n_star,
            "steps": [{"k": s.k, "dim": s.dim, "new": [to_text(c) for c in s.new],
                       "constraints": [to_text(c) for c in s.constraints]} for s in self.steps],
            "diagnostic": self.diagnostic,
        }


def tangent_basis(constraints, d: Dacs, cfg: RunConfig = DEFAULT) -> sp.Matrix:
    if not constraints:
        return sp.eye(d.n)
    J = jacobian(constraints, d.states)
    return kernel_basis(J, d.at, cfg, tuple(constraints))


def _implied(c, constraints, d: Dacs, cfg: RunConfig) -> bool:
    """Does c vanish on the set cut out by ``constraints`` near the point?"""
    if constraints:
        sol = _solve_linear(constraints, d)
        if sol is not None and simplify(c.xreplace(sol)) == 0:
            return True
    return is_zero(c, d.at, cfg, tuple(constraints)).zero


def _elimination_order(constraints, d: Dacs, cfg: RunConfig):
    """Pick one state per constraint to eliminate, first listed state first."""
    chosen = []
    J = jacobian(constraints, d.states)
    Jv = evaluate_matrix(J, d.at)[0]
    for i in range(len(constraints)):
        for j, s in enumerate(d.states):
            if s in chosen:
                continue
            cols = [d.states.index(c) for c in chosen] + [j]
            sub = Jv[: i + 1, cols]
            if np.linalg.matrix_rank(sub, tol=cfg.tol_rank * max(1.0, np.abs(sub).max())) == i + 1:
                chosen.append(s)
                break
        else:
            raise ReductionError("no complementary coordinate subset gives an invertible Jacobian")
    return chosen


def _solve_linear(constraints, d: Dacs, elim=None):
    """Solve constraints for the eliminated states when they enter linearly."""
    if elim is None:
        try:
            elim = _elimination_order(constraints, d, DEFAULT)
        except ReductionError:
            return None
    vs = [sym(s) for s in elim]
    try:
        A, b = sp.linear_eq_to_matrix([sp.expand(c) for c in constraints], vs)
    except (sp.polys.polyerrors.PolynomialError, ValueError, TypeError):
        return None
    if any(e.has(*vs) for e in A) or A.det() == 0:
        return None
    sol = A.LUsolve(b)
    return {v: simplify(e) for v, e in zip(vs, sol)}


def reduce(d: Dacs, cfg: RunConfig = DEFAULT, max_steps: int | None = None) -> ReductionTrace:
    """Iterate M_k = {x in M_{k-1} : F in E T M_{k-1} + Im G} from M_0 = U."""
    tr = ReductionTrace(n=d.n)
    C: list = []
    tr.steps.append(ReductionStep(0, [], [], d.n))
    at = d.at
    limit = max_steps if max_steps is not None else d.n + 1
    for k in range(1, limit + 1):
        P = tangent_basis(C, d, cfg)
        A = (d.E * P).row_join(d.G)
        A = msimplify(A)
        W = left_annihilator(A, at, cfg, tuple(C)) if A.rows else sp.zeros(0, 0)
        new = []
        for c in (msimplify(W * d.F) if W.rows else []):
            if c == 0 or _implied(c, C + new, d, cfg):
                continue
            v = evaluate(c, at)
            if not np.isfinite(v) or abs(v) > cfg.tol_nonzero:
                tr.admissible = False
                tr.diagnostic = f"constraint {to_text(c)} is {v:.6g} at the working point"
                tr.steps.append(ReductionStep(k, C + new + [c], new + [c], d.n - len(C) - len(new) - 1, W))
                tr.constraints = C
                tr.k_star = k - 1
                return tr
            Jc = evaluate_matrix(jacobian(C + new + [c], d.states), at)[0]
            if np.linalg.matrix_rank(Jc, tol=cfg.tol_rank * max(1.0, np.abs(Jc).max())) < len(C) + len(new) + 1:
                raise ReductionError(
                    f"differential of constraint {to_text(c)} is dependent at the point; "
                    "constant rank assumption fails")
            new.append(c)
        if not new:
            tr.fixed_point_reached = True
            tr.k_star = k - 1
            tr.constraints = C
            return tr
        C = C + new
        tr.steps.append(ReductionStep(k, list(C), new, d.n - len(C), W))
    tr.constraints = C
    tr.k_star = limit
    tr.diagnostic = "no fixed point within n steps"
    return tr


@dataclass
class CRResult:
    r_star: int
    m_star: int
    ok: bool
    rank_EP: tuple = ()
    rank_EPG: tuple = ()


def check_cr(d: Dacs, t: ReductionTrace, cfg: RunConfig = DEFAULT) -> CRResult:
    """dim E T M* and dim(E T M* + Im G) constant along M* near the point."""
    if not t.admissible:
        raise ReductionError("trace is not admissible")
    P = tangent_basis(t.constraints, d, cfg)
    EP = msimplify(d.E * P)
    cons = tuple(t.constraints)
    r1 = numeric_rank(EP, d.at, cfg, cons)
    r2 = numeric_rank(EP.row_join(d.G), d.at, cfg, cons)
    return CRResult(r1.rank, d.m - (r2.rank - r1.rank), r1.constant and r2.constant,
                    r1.sample_ranks, r2.sample_ranks)


@dataclass
class Restriction:
    system: Dacs                 # (E*, F*, G*) over z1 with inputs u*
    z1: list
    eliminated: list
    embedding: dict              # state name -> expression in z1
    constraints: list
    Q: sp.Matrix                 # r* x l, E* = Q E(emb) J_emb
    pinned: list                 # names of inputs frozen by the pinning feedback
    alpha_pin: sp.Matrix         # u = alpha_pin + beta_pin u*
    beta_pin: sp.Matrix
    r_star: int
    n_star: int
    m_star: int
    Q_pin: sp.Matrix = None      # rows giving G2a u + F2a = 0 on M*
    Q_rest: sp.Matrix = None     # rows annihilating E, F and G on M*
    B22_inv: sp.Matrix = None    # inverse of the pinned input block

    def embed(self, exprs):
        sub = {sym(k): v for k, v in self.embedding.items()}
        return [sp.sympify(e).xreplace(sub) for e in exprs]


def restrict(d: Dacs, t: ReductionTrace, cfg: RunConfig = DEFAULT) -> Restriction:
    cr = check_cr(d, t, cfg)
    if not cr.ok:
        raise NonConstantRank("condition (CR) fails: dim E T M* or dim(E T M* + Im G) not constant")
    C = list(t.constraints)
    if C:
        elim = _elimination_order(C, d, cfg)
        sol = _solve_linear(C, d, elim)
        if sol is None:
            vs = [sym(s) for s in elim]
            found = sp.solve(C, vs, dict=True)
            x0 = d.at
            sol = None
            for cand in found:
                vals = [evaluate(cand[v], x0) for v in vs]
                if all(np.isfinite(vals)) and np.allclose(vals, [x0.values[s] for s in elim], atol=1e-8):
                    sol = {v: simplify(cand[v]) for v in vs}
                    break
            if sol is None:
                raise ReductionError("could not solve the constraints for the eliminated coordinates")
    else:
        elim, sol = [], {}
    z1 = [s for s in d.states if s not in elim]
    embedding = {s: sol.get(sym(s), sym(s)) for s in d.states}
    xe = sp.Matrix([embedding[s] for s in d.states])
    Jemb = jacobian(list(xe), z1)
    sub = {sym(s): embedding[s] for s in elim}
    E1 = msimplify(d.E.xreplace(sub) * Jemb)
    F1 = msimplify(d.F.xreplace(sub))
    G1 = msimplify(d.G.xreplace(sub))
    zpoint = Point({s: d.at.values[s] for s in z1}, dict(d.at.params))
    rr = row_reduce(E1, zpoint, cfg)
    r = rr.rank
    if r != cr.r_star:
        raise NonConstantRank(f"rank of restricted E is {r}, expected r* = {cr.r_star}")
    QF = msimplify(rr.Q * F1)
    QG = msimplify(rr.Q * G1)
    Qtop, Qbot = rr.Q[:r, :], rr.Q[r:, :]
    F2, G2 = QF[r:, :], QG[r:, :]
    mp = d.m - cr.m_star
    if G2.rows:
        rr2 = row_reduce(G2, zpoint, cfg) if G2.cols else None
        k2 = rr2.rank if rr2 else 0
        if k2 != mp:
            raise NonConstantRank(f"rank of the constraint input block is {k2}, expected {mp}")
        Q2 = rr2.Q if rr2 else sp.eye(G2.rows)
        F2r = msimplify(Q2 * F2)
        rest = F2r[k2:, :]
        for i in range(rest.rows):
            z = is_zero(rest[i, 0], zpoint, cfg)
            if not z.zero:
                raise ReductionError(f"residual constraint {to_text(rest[i, 0])} does not vanish on M*")
        G2a = (Q2 * G2)[:k2, :].applyfunc(simplify)
        F2a = F2r[:k2, :]
        Q2a = Q2[:k2, :]
        Q_pin = msimplify(Q2a * Qbot)
        Q_rest = msimplify(Q2[k2:, :] * Qbot)
    else:
        k2, G2a, F2a, Q2a = 0, sp.zeros(0, d.m), sp.zeros(0, 1), sp.zeros(0, 0)
        Q_pin, Q_rest = sp.zeros(0, d.l), sp.zeros(0, d.l)
    # pin inputs from the last column backwards
    pinned_idx = []
    if k2:
        Gv = evaluate_matrix(G2a, zpoint)[0]
        for j in reversed(range(d.m)):
            cols = pinned_idx + [j]
            if np.linalg.matrix_rank(Gv[:, cols]) == len(cols):
                pinned_idx = cols
            if len(pinned_idx) == k2:
                break
        if len(pinned_idx) != k2:
            raise ReductionError("no input permutation makes the pinned block invertible")
        pinned_idx.sort()
    free_idx = [j for j in range(d.m) if j not in pinned_idx]
    G1top = QG[:r, :]
    if k2:
        B22 = G2a.extract(list(range(k2)), pinned_idx)
        B22i = inverse(B22, zpoint, cfg)
        K = msimplify(G1top.extract(list(range(r)), pinned_idx) * B22i)
        Qr = msimplify(Qtop - K * Q2a * Qbot)
    else:
        B22i = sp.zeros(0, 0)
        Qr = Qtop
    Estar = rr.reduced[:r, :]
    Fstar = msimplify(Qr * F1)
    Gstar = msimplify((Qr * G1).extract(list(range(r)), free_idx)) if free_idx else sp.zeros(r, 0)
    alpha = sp.zeros(d.m, 1)
    beta = sp.zeros(d.m, len(free_idx))
    for k, j in enumerate(free_idx):
        beta[j, k] = 1
    if k2:
        a = msimplify(-B22i * F2a)
        b = msimplify(-B22i * G2a.extract(list(range(k2)), free_idx)) if free_idx else sp.zeros(k2, 0)
        for k, j in enumerate(pinned_idx):
            alpha[j, 0] = a[k, 0]
            if free_idx:
                beta[j, :] = b[k, :]
    inputs = [d.inputs[j] for j in free_idx]
    rs = Dacs(z1, inputs, Estar, Fstar, Gstar, dict(d.params),
              {s: d.point[s] for s in z1}, d.name + "_restricted")
    return Restriction(rs, z1, elim, embedding, C, Qr, [d.inputs[j] for j in pinned_idx],
                       alpha, beta, r, len(z1), len(free_idx), Q_pin, Q_rest, B22i)
