"""Matrices over the expression field with point-certified elimination."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import sympy as sp

from .config import DEFAULT, RunConfig
from .expr import Point, ZeroStatus, evaluate_many, is_zero, nonzero_value, sample_points, simplify, sym


class CertificationError(RuntimeError):
    """A zero test came back Unknown where a decision was required."""


class NonConstantRank(RuntimeError):
    pass


def matrix(rows) -> sp.Matrix:
    return sp.Matrix(rows)


def msimplify(A: sp.Matrix) -> sp.Matrix:
    return A.applyfunc(simplify)


def jacobian(exprs, names) -> sp.Matrix:
    exprs = list(exprs)
    return sp.Matrix(len(exprs), len(names), lambda i, j: sp.diff(exprs[i], sym(names[j])))


def evaluate_matrix(A: sp.Matrix, at: Point, X=None) -> np.ndarray:
    """Evaluate at the rows of ``X``; shape (N, rows, cols)."""
    r, c = A.shape
    vals = evaluate_many(list(A), at, X)
    return vals.T.reshape(-1, r, c)


def _svd_rank(M: np.ndarray, tol: float) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


class RankInfo(NamedTuple):
    rank: int
    constant: bool
    sample_ranks: tuple


def numeric_rank(A: sp.Matrix, at: Point, cfg: RunConfig = DEFAULT, constraints=()) -> RankInfo:
    """SVD rank at ``at`` plus a constancy flag from nearby samples."""
    if A.rows == 0 or A.cols == 0:
        return RankInfo(0, True, (0,))
    X = sample_points(at, cfg.rank_samples, cfg, constraints)
    vals = evaluate_matrix(A, at, X)
    ranks = []
    for M in vals:
        ranks.append(_svd_rank(M, cfg.tol_rank) if np.all(np.isfinite(M)) else None)
    finite = [r for r in ranks if r is not None]
    if not finite:
        raise CertificationError("matrix evaluation singular at every sample")
    r0 = ranks[0] if ranks[0] is not None else finite[0]
    return RankInfo(r0, all(r == r0 for r in finite), tuple(ranks))


def zero_failures(A: sp.Matrix, at: Point, cfg: RunConfig = DEFAULT, constraints=()):
    """Entries of ``A`` that are not certified zero, as (i, j, ZeroTest)."""
    out = []
    for i in range(A.rows):
        for j in range(A.cols):
            t = is_zero(A[i, j], at, cfg, constraints)
            if not t.zero:
                out.append((i, j, t))
    return out


def certify_zero(A: sp.Matrix, at: Point, cfg: RunConfig = DEFAULT, constraints=(), what="matrix"):
    bad = zero_failures(A, at, cfg, constraints)
    for i, j, t in bad:
        if t.status is ZeroStatus.UNKNOWN:
            raise CertificationError(f"cannot certify rank near point: entry ({i},{j}) of {what}: {t.diagnostic}")
    if bad:
        i, j, t = bad[0]
        raise NonConstantRank(f"{what} entry ({i},{j}) is nonzero at {t.witness}")


@dataclass
class RowReduction:
    Q: sp.Matrix
    rows: list                 # indices of the independent rows kept on top
    pivots: list               # pivot columns of the independent block
    certificates: list = field(default_factory=list)  # (expr, value at point)
    reduced: sp.Matrix = None
    rank: int = 0
    inverse_block: sp.Matrix = None   # inverse of the pivot block of the top rows


def _pivot_columns(A: sp.Matrix, at: Point, cfg: RunConfig):
    """Markowitz-style pivot selection on a full-row-rank matrix.

    Prefers nonzero constants (sparsest column first), then the largest
    magnitude at the point. Returns pivot columns and certificates.
    """
    M = A.copy()
    rows_left = list(range(M.rows))
    cols_left = list(range(M.cols))
    pivots, certs = [], []
    for _ in range(M.rows):
        best = None
        for i in rows_left:
            for j in cols_left:
                e = M[i, j]
                if e == 0:
                    continue
                v = nonzero_value(e, at, cfg)
                if v is None:
                    continue
                nnz = sum(1 for k in rows_left if M[k, j] != 0)
                if e.is_number:
                    key = (0, nnz, 0.0, i, j)
                else:
                    key = (1, 0, -abs(v), i, j)
                if best is None or key < best[0]:
                    best = (key, i, j, v)
        if best is None:
            raise CertificationError("no pivot certified nonzero at the point")
        _, i, j, v = best
        pivots.append((i, j))
        certs.append((M[i, j], v))
        rows_left.remove(i)
        cols_left.remove(j)
        for k in rows_left:
            if M[k, j] != 0:
                fac = M[k, j] / M[i, j]
                M[k, :] = (M[k, :] - fac * M[i, :]).applyfunc(simplify)
    return pivots, certs


def _inverse(B: sp.Matrix, at: Point | None = None, cfg: RunConfig = DEFAULT) -> sp.Matrix:
    """Gauss-Jordan inverse; pivots are chosen nonzero at ``at`` (or structurally)."""
    k = B.rows
    if k == 0:
        return sp.zeros(0, 0)
    M = B.row_join(sp.eye(k)).as_mutable()
    for c in range(k):
        piv = None
        best = -1.0
        for i in range(c, k):
            e = M[i, c]
            if e == 0:
                continue
            if e.is_number:
                piv = i
                break
            v = nonzero_value(e, at, cfg) if at is not None else 1.0
            if v is not None and abs(v) > best:
                piv, best = i, abs(v)
        if piv is None:
            raise CertificationError("matrix is not invertible at the point")
        if piv != c:
            M.row_swap(piv, c)
        p = M[c, c]
        M[c, :] = (M[c, :] / p).applyfunc(simplify)
        for i in range(k):
            if i != c and M[i, c] != 0:
                M[i, :] = (M[i, :] - M[i, c] * M[c, :]).applyfunc(simplify)
    return M[:, k:]


def inverse(B: sp.Matrix, at: Point | None = None, cfg: RunConfig = DEFAULT) -> sp.Matrix:
    return _inverse(B, at, cfg)


def row_reduce(A: sp.Matrix, at: Point, cfg: RunConfig = DEFAULT, constraints=()) -> RowReduction:
    """Row operations Q with Q A = [A_S; 0] where A_S are independent rows of A."""
    l, n = A.shape
    vals = evaluate_matrix(A, at)[0] if l and n else np.zeros((l, n))
    if not np.all(np.isfinite(vals)):
        raise CertificationError("matrix is singular at the working point")
    rows = []
    for i in range(l):
        if _svd_rank(vals[rows + [i], :], cfg.tol_rank) > len(rows):
            rows.append(i)
    r = len(rows)
    AS = A.extract(rows, list(range(n))) if r else sp.zeros(0, n)
    pairs, certs = _pivot_columns(AS, at, cfg) if r else ([], [])
    pivots = [j for _, j in sorted(pairs)]
    Minv = _inverse(AS.extract(list(range(r)), pivots), at, cfg) if r else sp.zeros(0, 0)
    dep = [i for i in range(l) if i not in rows]
    Q = sp.zeros(l, l)
    for k, i in enumerate(rows):
        Q[k, i] = 1
    for k, i in enumerate(dep):
        Q[r + k, i] = 1
        if r and any(A[i, j] != 0 for j in range(n)):
            c = msimplify(A.extract([i], pivots) * Minv)
            for t, s in enumerate(rows):
                Q[r + k, s] = -c[0, t]
    reduced = msimplify(Q * A)
    if dep:
        certify_zero(reduced[r:, :], at, cfg, constraints, what="dependent rows")
        reduced[r:, :] = sp.zeros(len(dep), n)
    return RowReduction(Q=Q, rows=rows, pivots=pivots, certificates=certs,
                        reduced=reduced, rank=r, inverse_block=Minv)


def _require_full_row_rank(A, at, cfg, constraints=()):
    rr = row_reduce(A, at, cfg, constraints)
    if rr.rank != A.rows:
        raise CertificationError(f"matrix has rank {rr.rank} < {A.rows} rows at the point")
    return rr


def kernel_basis(A: sp.Matrix, at: Point, cfg: RunConfig = DEFAULT, constraints=()) -> sp.Matrix:
    """Columns spanning ker A near ``at``, ordered by free column index."""
    rr = row_reduce(A, at, cfg, constraints)
    n = A.cols
    AS = rr.reduced[: rr.rank, :]
    free = [j for j in range(n) if j not in rr.pivots]
    cols = []
    for f in free:
        x = [sp.Integer(0)] * n
        x[f] = sp.Integer(1)
        if rr.rank:
            sol = rr.inverse_block * AS.extract(list(range(rr.rank)), [f])
            for k, j in enumerate(rr.pivots):
                x[j] = simplify(-sol[k, 0])
        cols.append(_normalize(x, at, cfg))
    B = sp.Matrix.hstack(*[sp.Matrix(c) for c in cols]) if cols else sp.zeros(n, 0)
    if cols:
        certify_zero(msimplify(A * B), at, cfg, constraints, what="A*kernel")
    return B


def _normalize(x, at, cfg):
    """Clear denominators when certified nonzero; first nonzero entry positive."""
    dens = [sp.fraction(sp.together(e))[1] for e in x]
    mult = sp.Integer(1)
    for d in dens:
        if d != 1:
            mult = sp.lcm(mult, d)
    if mult != 1 and nonzero_value(mult, at, cfg) is not None:
        x = [simplify(e * mult) for e in x]
    for e in x:
        v = nonzero_value(e, at, cfg)
        if v is not None:
            if v < 0:
                x = [simplify(-t) for t in x]
            break
    return x


def right_inverse(A: sp.Matrix, at: Point, cfg: RunConfig = DEFAULT, constraints=()) -> sp.Matrix:
    """A† with A A† = I, supported on the pivot columns."""
    rr = _require_full_row_rank(A, at, cfg, constraints)
    r, n = A.rows, A.cols
    # rows were kept in order, so the pivot block is A[:, pivots]
    R = sp.zeros(n, r)
    for k, j in enumerate(rr.pivots):
        R[j, :] = rr.inverse_block[k, :]
    certify_zero(msimplify(A * R - sp.eye(r)), at, cfg, constraints, what="A*A^+ - I")
    return R


def left_annihilator(A: sp.Matrix, at: Point, cfg: RunConfig = DEFAULT, constraints=()) -> sp.Matrix:
    """Rows W spanning the left kernel of A near ``at`` (W A = 0)."""
    return kernel_basis(A.T, at, cfg, constraints).T
