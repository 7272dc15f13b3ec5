"""Augmented Wong sequences and complete controllability of linear DACS."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from itertools import combinations

import sympy as sp

from .model import LinearDacs


def _basis(M: sp.Matrix, n: int) -> sp.Matrix:
    cols = M.columnspace() if M.cols else []
    return sp.Matrix.hstack(*cols) if cols else sp.zeros(n, 0)


def span_sum(A: sp.Matrix, B: sp.Matrix) -> sp.Matrix:
    return _basis(A.row_join(B), A.rows)


def preimage(A: sp.Matrix, S: sp.Matrix) -> sp.Matrix:
    """Basis of {x : A x in span S}."""
    n = A.cols
    if S.cols == 0:
        K = A.nullspace()
        return sp.Matrix.hstack(*K) if K else sp.zeros(n, 0)
    K = A.row_join(-S).nullspace()
    if not K:
        return sp.zeros(n, 0)
    return _basis(sp.Matrix.hstack(*[k[:n, :] for k in K]), n)


def intersect(A: sp.Matrix, B: sp.Matrix) -> sp.Matrix:
    n = A.rows
    if A.cols == 0 or B.cols == 0:
        return sp.zeros(n, 0)
    K = A.row_join(-B).nullspace()
    if not K:
        return sp.zeros(n, 0)
    return _basis(sp.Matrix.hstack(*[A * k[:A.cols, :] for k in K]), n)


@dataclass
class WongSequences:
    V: list = field(default_factory=list)       # V_0, V_1, ... basis matrices
    W: list = field(default_factory=list)       # W_0, W_1, ...
    W_hat: list = field(default_factory=list)   # W-hat_1, W-hat_2, ...

    @property
    def V_star(self):
        return self.V[-1]

    @property
    def W_star(self):
        return self.W[-1]

    def dims(self):
        return {"V": [v.cols for v in self.V], "W": [w.cols for w in self.W],
                "W_hat": [w.cols for w in self.W_hat]}


def wong_sequences(ld: LinearDacs) -> WongSequences:
    """Iterate until two consecutive members have equal dimension (nested, so equal)."""
    E, H, L = ld.E, ld.H, ld.L
    n = ld.n
    ImL = _basis(L, ld.l)
    ws = WongSequences()
    ws.V.append(sp.eye(n))
    for _ in range(n + 1):
        nxt = preimage(H, span_sum(E * ws.V[-1], ImL))
        ws.V.append(nxt)
        if nxt.cols == ws.V[-2].cols:
            break
    ws.W.append(sp.zeros(n, 0))
    for _ in range(n + 1):
        nxt = preimage(E, span_sum(H * ws.W[-1], ImL))
        ws.W.append(nxt)
        if nxt.cols == ws.W[-2].cols:
            break
    ws.W_hat.append(preimage(E, sp.zeros(ld.l, 0)))
    for _ in range(n + 1):
        nxt = preimage(E, span_sum(H * ws.W_hat[-1], ImL))
        ws.W_hat.append(nxt)
        if nxt.cols == ws.W_hat[-2].cols:
            break
    return ws


@dataclass
class Controllability:
    controllable: bool
    dim_intersection: int
    n: int
    lemma_ii: bool
    image_condition: bool
    pencil_condition: bool
    bad_lambda: list = field(default_factory=list)
    sequences: WongSequences = None

    @property
    def consistent(self) -> bool:
        return self.controllable == self.lemma_ii

    def as_dict(self):
        return {"controllable": self.controllable, "dim_V_star_cap_W_star": self.dim_intersection,
                "n": self.n, "rank_criterion": self.lemma_ii, "image_condition": self.image_condition,
                "pencil_condition": self.pencil_condition, "bad_lambda": [str(x) for x in self.bad_lambda],
                "wong_dims": self.sequences.dims() if self.sequences else {}}


_lam = sp.Symbol("lambda")


def _pencil_gcd(P: sp.Matrix, r: int):
    """gcd of all r x r minors of a polynomial matrix."""
    g = sp.Integer(0)
    for rows in combinations(range(P.rows), r):
        for cols in combinations(range(P.cols), r):
            d = sp.expand(P.extract(list(rows), list(cols)).det(method="berkowitz"))
            if d == 0:
                continue
            g = sp.gcd(g, d)
            if g.is_number:
                return sp.Integer(1)
    return g


def rank_criterion(ld: LinearDacs, samples: int = 8, seed: int = 0):
    """Im E + Im H + Im L = Im E + Im L and the same over C for every lambE - H."""
    E, H, L = ld.E, ld.H, ld.L
    full = E.row_join(H).row_join(L).rank()
    image_ok = full == E.row_join(L).rank()
    P = (_lam * E - H).row_join(L)
    bad = []
    r_gen = P.rank(simplify=True)
    pencil_ok = r_gen == full
    if pencil_ok and r_gen:
        g = _pencil_gcd(P, r_gen)
        if not g.is_number:
            bad = sorted(set(sp.Poly(g, _lam).all_roots()), key=lambda z: (sp.re(z), sp.im(z)))
            pencil_ok = False
    rng = random.Random(seed)
    for _ in range(samples):
        lv = sp.Rational(rng.randint(-50, 50), rng.randint(1, 7))
        if P.subs(_lam, lv).rank() != full:
            pencil_ok = False
            bad.append(lv)
    return image_ok and pencil_ok, image_ok, pencil_ok, bad


def is_completely_controllable(ld: LinearDacs) -> Controllability:
    ws = wong_sequences(ld)
    n = ld.n
    cap = intersect(ws.V_star, ws.W_star) if n else sp.zeros(0, 0)
    ok2, im_ok, pen_ok, bad = rank_criterion(ld)
    return Controllability(cap.cols == n, cap.cols, n, ok2, im_ok, pen_ok, bad, ws)


def block_diag(blocks) -> sp.Matrix:
    """Block diagonal that tolerates empty blocks."""
    R = sum(b.rows for b in blocks)
    C = sum(b.cols for b in blocks)
    M = sp.zeros(R, C)
    i = j = 0
    for b in blocks:
        M[i:i + b.rows, j:j + b.cols] = b
        i += b.rows
        j += b.cols
    return M

