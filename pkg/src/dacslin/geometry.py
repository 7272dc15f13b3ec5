"""Lie brackets and the linearizability distributions D_i and D-hat_i."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .config import DEFAULT, RunConfig
from .expr import Point, sample_points, simplify, sym
from .explicitation import Explicitation
from .symmat import CertificationError, _svd_rank, evaluate_matrix, jacobian, msimplify


def lie_bracket(f: sp.Matrix, g: sp.Matrix, states) -> sp.Matrix:
    """[f, g] = (dg/dx) f - (df/dx) g."""
    return msimplify(jacobian(list(g), states) * f - jacobian(list(f), states) * g)


def lie_derivative(h, X: sp.Matrix, states):
    return simplify(sum((sp.diff(h, sym(s)) * X[i] for i, s in enumerate(states)),
                        sp.Integer(0)))


class Verdict(enum.Enum):
    INVOLUTIVE = "involutive"
    NOT_INVOLUTIVE = "not involutive"
    UNKNOWN = "unknown"


@dataclass
class InvolutivityResult:
    verdict: Verdict
    witness: tuple = ()        # labels of the offending pair
    detail: str = ""


def _sample_ranks(cols, at: Point, cfg: RunConfig, X=None):
    if not cols:
        return np.zeros(1 if X is None else X.shape[0], dtype=int)
    M = sp.Matrix.hstack(*cols)
    if X is None:
        X = sample_points(at, cfg.rank_samples, cfg)
    vals = evaluate_matrix(M, at, X)
    return np.array([_svd_rank(v, cfg.tol_rank) if np.all(np.isfinite(v)) else -1 for v in vals])


def check_involutive(gens, states, at: Point, cfg: RunConfig = DEFAULT, labels=None,
                     cache: dict | None = None) -> InvolutivityResult:
    """Every pairwise bracket lies in the span of ``gens`` at the point and 16 samples."""
    gens = list(gens)
    cache = {} if cache is None else cache
    labels = labels or [f"X{i + 1}" for i in range(len(gens))]
    if len(gens) <= 1:
        return InvolutivityResult(Verdict.INVOLUTIVE)
    X = sample_points(at, cfg.rank_samples, cfg)
    base = _sample_ranks(gens, at, cfg, X)
    if np.any(base < 0):
        return InvolutivityResult(Verdict.UNKNOWN, detail="singular samples")
    k = int(base[0])
    if np.any(base != k):
        return InvolutivityResult(Verdict.UNKNOWN, detail="generators do not have constant rank")
    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            key = (labels[i], labels[j])
            if key not in cache:
                cache[key] = lie_bracket(gens[i], gens[j], states)
            br = cache[key]
            if all(e == 0 for e in br):
                continue
            rk = _sample_ranks(gens + [br], at, cfg, X)
            if np.any(rk < 0):
                return InvolutivityResult(Verdict.UNKNOWN, (labels[i], labels[j]), "singular samples")
            if np.any(rk > k):
                return InvolutivityResult(Verdict.NOT_INVOLUTIVE, (labels[i], labels[j]),
                                          f"[{labels[i]}, {labels[j]}] leaves the distribution")
    return InvolutivityResult(Verdict.INVOLUTIVE)


@dataclass
class Level:
    index: int
    labels: list                 # kept generators, earliest constructed first
    rank: int
    constant: bool
    sample_ranks: tuple = ()
    involutive: InvolutivityResult = None


@dataclass
class DistributionSequence:
    name: str
    levels: list = field(default_factory=list)

    def ranks(self):
        return [lv.rank for lv in self.levels]

    def level(self, i: int) -> Level:
        return self.levels[i - 1]


class FieldBank:
    """Vector fields by label with cached ad_f iterates."""

    def __init__(self, e: Explicitation):
        self.e = e
        self.fields = {}
        for j in range(e.g_u.cols):
            self.fields[self.label("u", j, 0)] = e.g_u[:, j]
        for j in range(e.g_v.cols):
            self.fields[self.label("v", j, 0)] = e.g_v[:, j]

    def label(self, kind, j, k):
        base = f"g_{kind}{j + 1}"
        if k == 0:
            return base
        return f"ad_f{'' if k == 1 else '^' + str(k)} {base}"

    @staticmethod
    def parse(lbl):
        if lbl.startswith("ad_f"):
            head, base = lbl.split(" ")
            k = 1 if head == "ad_f" else int(head.split("^")[1])
        else:
            base, k = lbl, 0
        return base[2], int(base[3:]) - 1, k

    def get(self, lbl) -> sp.Matrix:
        if lbl not in self.fields:
            kind, j, k = self.parse(lbl)
            prev = self.get(self.label(kind, j, k - 1))
            self.fields[lbl] = lie_bracket(self.e.f, prev, self.e.states)
        return self.fields[lbl]

    def ad(self, lbl) -> str:
        kind, j, k = self.parse(lbl)
        return self.label(kind, j, k + 1)


def _prune(labels, bank: FieldBank, at: Point, cfg: RunConfig):
    """Keep generators that raise the rank at the point, in order."""
    kept, cols = [], []
    n = bank.e.n
    for lb in labels:
        if len(kept) == n:
            break
        if lb in kept:
            continue
        v = bank.get(lb)
        if all(e == 0 for e in v):
            continue
        trial = cols + [v]
        M = evaluate_matrix(sp.Matrix.hstack(*trial), at)[0]
        if not np.all(np.isfinite(M)):
            raise CertificationError(f"{lb} is singular at the point")
        if _svd_rank(M, cfg.tol_rank) > len(cols):
            kept.append(lb)
            cols.append(v)
    return kept


def _make_level(i, labels, bank, at, cfg):
    cols = [bank.get(lb) for lb in labels]
    rk = _sample_ranks(cols, at, cfg) if cols else np.zeros(cfg.rank_samples, dtype=int)
    finite = [int(r) for r in rk if r >= 0]
    return Level(i, labels, len(labels), all(r == len(labels) for r in finite) and bool(finite),
                 tuple(int(r) for r in rk))


def build_sequences(e: Explicitation, n_star: int | None = None, cfg: RunConfig = DEFAULT,
                    involutivity: bool = True, bank: FieldBank | None = None):
    """D_1 = span{g_u, g_v}, D_{i+1} = D_i + [f, D_i]; D-hat_1 = span{g_v}, D-hat_{i+1} = D_i + [f, D-hat_i]."""
    if e.p:
        raise ValueError("distributions are defined for explicitations without outputs")
    n_star = e.n if n_star is None else n_star
    bank = bank or FieldBank(e)
    at = e.at
    D = DistributionSequence("D")
    Dh = DistributionSequence("D_hat")
    d_labels = _prune([bank.label("u", j, 0) for j in range(e.m)] +
                      [bank.label("v", j, 0) for j in range(e.s)], bank, at, cfg)
    dh_labels = _prune([bank.label("v", j, 0) for j in range(e.s)], bank, at, cfg)
    # one level past n*: with no driving variables D-hat_{n*} = D_{n*-1}, so TM* is reached at n*+1
    for i in range(1, n_star + 2):
        D.levels.append(_make_level(i, d_labels, bank, at, cfg))
        Dh.levels.append(_make_level(i, dh_labels, bank, at, cfg))
        nd = _prune(d_labels + [bank.ad(lb) for lb in d_labels], bank, at, cfg)
        nh = _prune(d_labels + [bank.ad(lb) for lb in dh_labels], bank, at, cfg)
        d_labels, dh_labels = nd, nh
    if involutivity:
        cache = {}
        for seq in (D, Dh):
            for lv in seq.levels:
                if lv.index <= n_star - 1:
                    lv.involutive = check_involutive([bank.get(lb) for lb in lv.labels], e.states, at, cfg,
                                                     lv.labels, cache)
    return D, Dh, bank


def sequences_table(D: DistributionSequence, Dh: DistributionSequence) -> list:
    rows = []
    for a, b in zip(Dh.levels, D.levels):
        for name, lv in (("D_hat", a), ("D", b)):
            rows.append({
                "distribution": f"{name}_{lv.index}",
                "rank": lv.rank,
                "constant_rank": lv.constant,
                "involutive": lv.involutive.verdict.value if lv.involutive else "not checked",
                "generators": list(lv.labels),
            })
    return rows
