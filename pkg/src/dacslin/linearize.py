"""Internal and external feedback linearizability: conditions, indices, transform, target."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import sympy as sp

from .config import DEFAULT, RunConfig
from .explicitation import Explicitation, SysFbWitness, bridge_ex_fb, explicitate, verify_sys_fb_equivalence
from .expr import evaluate, is_zero, parse_expr, sym, to_text, ExprSyntaxError
from .geometry import FieldBank, Verdict, build_sequences, lie_derivative, sequences_table
from .model import (Dacs, EquivalenceReport, ExFbWitness, LinearDacs, SystemFileError, _sections, dump_system,
                    verify_ex_fb_equivalence)
from .reduction import ReductionError, Restriction, check_cr, reduce, restrict
from .symmat import (CertificationError, NonConstantRank, _svd_rank, evaluate_matrix, inverse, jacobian,
                     msimplify, numeric_rank)
from .wong import block_diag


class Outcome(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    UNDECIDED = "UNDECIDED"


class ChainIndexError(RuntimeError):
    pass


class ConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainIndices:
    rho: tuple          # u-chain lengths, non-increasing
    rho_bar: tuple      # v-chain lengths, non-increasing

    @property
    def n(self):
        return sum(self.rho) + sum(self.rho_bar)

    def as_dict(self):
        return {"rho": list(self.rho), "rho_bar": list(self.rho_bar)}

    def __str__(self):
        fmt = lambda t: "(" + ",".join(map(str, t)) + ")"
        return f"rho={fmt(self.rho)}, rho_bar={fmt(self.rho_bar)}"


def _lengths(counts):
    """counts[i-1] = number of chains of length >= i."""
    counts = list(counts) + [0]
    out = []
    for i in range(1, len(counts)):
        if counts[i - 1] < counts[i] or counts[i - 1] < 0:
            raise ChainIndexError(f"chain counts are not non-increasing: {counts[:-1]}")
        out += [i] * (counts[i - 1] - counts[i])
    return tuple(sorted(out, reverse=True))


def chain_indices(D, Dh, m_star: int | None = None, s_star: int | None = None) -> ChainIndices:
    """Dual Brunovsky counting from the rank jumps of D_i and D-hat_i."""
    rD, rH = D.ranks(), Dh.ranks()
    cu = [rD[i] - rH[i] for i in range(len(rD))]
    cv = [rH[i] - (rD[i - 1] if i else 0) for i in range(len(rD))]
    idx = ChainIndices(_lengths(cu), _lengths(cv))
    if rD and idx.n != rD[-1]:
        raise ChainIndexError(f"chain lengths sum to {idx.n}, expected {rD[-1]}")
    if m_star is not None and len(idx.rho) != m_star:
        raise ChainIndexError(f"{len(idx.rho)} u-chains for m* = {m_star}")
    if s_star is not None and len(idx.rho_bar) != s_star:
        raise ChainIndexError(f"{len(idx.rho_bar)} v-chains for s* = {s_star}")
    return idx


# ---------------------------------------------------------------- canonical target

def _K(k):
    return sp.zeros(k - 1, 1).row_join(sp.eye(k - 1)) if k > 1 else sp.zeros(0, 1)


def _L(k):
    return sp.eye(k - 1).row_join(sp.zeros(k - 1, 1)) if k > 1 else sp.zeros(0, 1)


def _NT(k):
    M = sp.zeros(k, k)
    for i in range(k - 1):
        M[i, i + 1] = 1
    return M


def _e(k):
    v = sp.zeros(k, 1)
    v[k - 1] = 1
    return v


def target_states(idx: ChainIndices, order: str = "u-first") -> list:
    xs = [f"xi{i + 1}" for i in range(sum(idx.rho))]
    zs = [f"z{i + 1}" for i in range(sum(idx.rho_bar))]
    return xs + zs if order == "u-first" else zs + xs


def canonical_target(idx: ChainIndices, m: int | None = None, l: int | None = None,
                     order: str = "u-first") -> LinearDacs:
    """[I 0; 0 L_rb] x' = [N_r^T 0; 0 K_rb] x + [E_r; 0] u, padded for the external case.

    With ``m`` and ``l`` the extra inputs appear as rows 0 = u2 and zero rows
    pad to ``l`` equations. ``order="v-first"`` lists the v-chain block first.
    """
    if order not in ("u-first", "v-first"):
        raise ValueError(f"unknown order {order!r}")
    nu = sum(idx.rho)
    ms = len(idx.rho)
    Eu = sp.eye(nu)
    Hu = block_diag([_NT(k) for k in idx.rho])
    Lu = block_diag([_e(k) for k in idx.rho])
    Ev = block_diag([_L(k) for k in idx.rho_bar])
    Hv = block_diag([_K(k) for k in idx.rho_bar])
    Lv = sp.zeros(Ev.rows, ms)
    if order == "u-first":
        E = block_diag([Eu, Ev])
        H = block_diag([Hu, Hv])
        L = Lu.col_join(Lv)
    else:
        E = block_diag([Ev, Eu])
        H = block_diag([Hv, Hu])
        L = Lv.col_join(Lu)
    if m is None:
        return LinearDacs(E, H, L)
    extra = m - ms
    r = E.rows
    ll = l if l is not None else r + extra
    if extra < 0 or ll < r + extra:
        raise ValueError(f"cannot embed a target with {r} equations and {ms} inputs into l={ll}, m={m}")
    n = E.cols
    E2 = E.col_join(sp.zeros(ll - r, n))
    H2 = H.col_join(sp.zeros(ll - r, n))
    L2 = sp.zeros(ll, m)
    L2[:r, :ms] = L
    L2[r:r + extra, ms:] = sp.eye(extra)
    return LinearDacs(E2, H2, L2)


# ---------------------------------------------------------------- candidates

def candidate_pool(states, limit: int = 500) -> list:
    """Coordinates, pairwise sums, differences and products, squares."""
    xs = [sym(s) for s in states]
    pool = list(xs)
    for a, b in combinations(xs, 2):
        pool += [a + b, a - b, b - a, a * b]
    pool += [a ** 2 for a in xs]
    seen, out = set(), []
    for p in pool:
        if p not in seen:
            seen.add(p)
            out.append(p)
    out.sort(key=to_text)
    return out[:limit]


def parse_candidates(text: str, names, source: str = "<string>") -> dict:
    """Sections [h_u] and [h_v], one expression per line."""
    sec = _sections(text, source)
    unknown = set(sec) - {"h_u", "h_v"}
    if unknown:
        raise SystemFileError(f"unknown candidate section(s) {sorted(unknown)}", None, source)
    out = {"h_u": [], "h_v": []}
    for key in out:
        for no, line in sec.get(key, []):
            try:
                out[key].append(parse_expr(line, names))
            except ExprSyntaxError as e:
                raise SystemFileError(str(e), no, source) from None
    return out


def load_candidates(path, names) -> dict:
    with open(path) as fh:
        return parse_candidates(fh.read(), names, str(path))


def _annihilates(h, labels, bank: FieldBank, e: Explicitation, cfg: RunConfig):
    """First generator not annihilated by dh, or None when all are."""
    grad = sp.Matrix([[sp.diff(h, sym(s)) for s in e.states]])
    if all(g == 0 for g in grad):
        return "dh = 0"
    for lb in labels:
        v = (grad * bank.get(lb))[0, 0]
        if v == 0:
            continue
        if not is_zero(v, e.at, cfg).zero:
            return lb
    return None


@dataclass
class Transform:
    h_u: list
    h_v: list
    psi: sp.Matrix
    a_u: sp.Matrix
    b_u: sp.Matrix
    a_v: sp.Matrix
    b_v: sp.Matrix
    lam_tilde: sp.Matrix
    witness: SysFbWitness
    order: str = "u-first"
    verification: EquivalenceReport = None
    dacs_witness: ExFbWitness = None
    dacs_verification: EquivalenceReport = None

    @property
    def verified(self):
        ok = self.verification is not None and self.verification.passed
        if self.dacs_verification is not None:
            ok = ok and self.dacs_verification.passed
        return ok

    def as_dict(self):
        txt = lambda M: [[to_text(x) for x in M.row(i)] for i in range(M.rows)]
        out = {
            "order": self.order,
            "h_u": [to_text(h) for h in self.h_u],
            "h_v": [to_text(h) for h in self.h_v],
            "psi": [to_text(x) for x in self.psi],
            "a_u": [to_text(x) for x in self.a_u], "b_u": txt(self.b_u),
            "a_v": [to_text(x) for x in self.a_v], "b_v": txt(self.b_v),
            "lambda_tilde": txt(self.lam_tilde),
            "feedback": {"alpha_u": [to_text(x) for x in self.witness.alpha_u],
                         "beta_u": txt(self.witness.beta_u),
                         "alpha_v": [to_text(x) for x in self.witness.alpha_v],
                         "beta_v": txt(self.witness.beta_v), "lambda": txt(self.witness.lam)},
            "verified": self.verified,
            "verification": self.verification.as_dict() if self.verification else None,
        }
        if self.dacs_witness is not None:
            out["dacs_witness"] = {"Q": txt(self.dacs_witness.Q),
                                   "alpha": [to_text(x) for x in self.dacs_witness.alpha_u],
                                   "beta": txt(self.dacs_witness.beta_u)}
            out["dacs_verification"] = self.dacs_verification.as_dict() if self.dacs_verification else None
        return out


def _iterates(h, k, e: Explicitation):
    out = [h]
    for _ in range(k):
        out.append(lie_derivative(out[-1], e.f, e.states))
    return out


def _lgs(h, G: sp.Matrix, e: Explicitation):
    return [lie_derivative(h, G[:, k], e.states) for k in range(G.cols)]


def build_transform(e: Explicitation, idx: ChainIndices, h_u, h_v, cfg: RunConfig = DEFAULT,
                    order: str = "u-first") -> Transform:
    """psi from iterated Lie derivatives and the triangular feedback that yields Brunovsky form."""
    at = e.at
    psi_u, psi_v, a_u, a_v, Bu, Bv, Lt = [], [], [], [], [], [], []
    for h, k in zip(h_u, idx.rho):
        it = _iterates(h, k, e)
        psi_u += it[:k]
        a_u.append(it[k])
        Bu.append(_lgs(it[k - 1], e.g_u, e))
    for h, k in zip(h_v, idx.rho_bar):
        it = _iterates(h, k, e)
        psi_v += it[:k]
        a_v.append(it[k])
        Bv.append(_lgs(it[k - 1], e.g_v, e))
        Lt.append(_lgs(it[k - 1], e.g_u, e))
    m, s = e.m, e.s
    psi = sp.Matrix(psi_u + psi_v)
    Jv = evaluate_matrix(jacobian(list(psi), e.states), at)[0]
    if not np.all(np.isfinite(Jv)) or _svd_rank(Jv, cfg.tol_rank) < e.n:
        raise ConstructionError("Jacobian of psi is singular at the point")
    Bu = sp.Matrix(Bu) if m else sp.zeros(0, 0)
    Bv = sp.Matrix(Bv) if s else sp.zeros(0, 0)
    Lt = sp.Matrix(Lt) if s and m else sp.zeros(s, m)
    a_u = sp.Matrix(a_u) if m else sp.zeros(0, 1)
    a_v = sp.Matrix(a_v) if s else sp.zeros(0, 1)
    for name, B in (("b_u", Bu), ("b_v", Bv)):
        if B.rows:
            Bn = evaluate_matrix(B, at)[0]
            if not np.all(np.isfinite(Bn)) or _svd_rank(Bn, cfg.tol_rank) < B.rows:
                raise ConstructionError(f"decoupling matrix {name} is singular at the point")
    beta_u = inverse(Bu, at, cfg)
    beta_v = inverse(Bv, at, cfg)
    alpha_u = msimplify(-beta_u * a_u)
    alpha_v = msimplify(-beta_v * a_v)
    lam = msimplify(-beta_v * Lt)
    if order == "v-first":
        psi = sp.Matrix(psi_v + psi_u)
    w = SysFbWitness(psi, alpha_u, beta_u, alpha_v, beta_v, lam, sp.zeros(e.n, 0), sp.zeros(0, 0))
    return Transform(list(h_u), list(h_v), psi, a_u, Bu, a_v, Bv, Lt, w, order)


def target_dacs(idx: ChainIndices, psi, at, order="u-first", m=None, l=None, inputs=None) -> Dacs:
    """Canonical target with the working point mapped through psi."""
    T = canonical_target(idx, m, l, order)
    names = target_states(idx, order)
    pt = {s: float(evaluate(p, at)) for s, p in zip(names, psi)}
    ins = inputs or [f"w{i + 1}" for i in range(T.m)]
    return T.to_dacs("canonical_target", names, ins, pt)


def verify_transform(e: Explicitation, idx: ChainIndices, tr: Transform, cfg: RunConfig = DEFAULT):
    """Compare against the explicitation of the internal canonical target."""
    td = target_dacs(idx, tr.psi, e.at, tr.order)
    lam = explicitate(td, cfg)
    tr.verification = verify_sys_fb_equivalence(e, lam, tr.witness, cfg)
    return td, lam


def construct_transform(e: Explicitation, idx: ChainIndices, candidates_u=None, candidates_v=None,
                        cfg: RunConfig = DEFAULT, order: str = "u-first", bank: FieldBank | None = None,
                        D=None, Dh=None):
    """Select output functions satisfying the annihilation conditions, then build and verify.

    u-chain of length k: dh annihilates D-hat_k. v-chain of length k: dh
    annihilates D_{k-1}. With one chain of each kind the candidates are
    alternatives (built-in pool when none are given); otherwise one candidate
    per chain is required, listed by non-increasing chain length.
    """
    if D is None or Dh is None or bank is None:
        D, Dh, bank = build_sequences(e, idx.n, cfg, involutivity=False, bank=bank)
    single = len(idx.rho) <= 1 and len(idx.rho_bar) <= 1
    failures = []

    def conds_u(k):
        return Dh.level(k).labels

    def conds_v(k):
        return D.level(k - 1).labels if k > 1 else []

    if not single:
        cu, cv = list(candidates_u or []), list(candidates_v or [])
        if len(cu) != len(idx.rho) or len(cv) != len(idx.rho_bar):
            raise ConstructionError(
                f"construction needs user candidates: one per chain ({len(idx.rho)} for h_u, "
                f"{len(idx.rho_bar)} for h_v)")
        for h, k in zip(cu, idx.rho):
            bad = _annihilates(h, conds_u(k), bank, e, cfg)
            if bad:
                failures.append(f"h_u {to_text(h)}: <dh, {bad}> != 0")
        for h, k in zip(cv, idx.rho_bar):
            bad = _annihilates(h, conds_v(k), bank, e, cfg)
            if bad:
                failures.append(f"h_v {to_text(h)}: <dh, {bad}> != 0")
        if failures:
            raise ConstructionError("candidates fail the annihilation conditions: " + "; ".join(failures))
        tr = build_transform(e, idx, cu, cv, cfg, order)
        verify_transform(e, idx, tr, cfg)
        if not tr.verified:
            raise ConstructionError("constructed transform does not verify")
        return tr

    user = candidates_u is not None or candidates_v is not None
    pool = candidate_pool(e.states, 500)
    cu = sorted(candidates_u, key=to_text) if candidates_u else ([] if idx.rho == () else pool)
    cv = sorted(candidates_v, key=to_text) if candidates_v else ([] if idx.rho_bar == () else pool)
    if user and not candidates_u and idx.rho:
        cu = pool
    if user and not candidates_v and idx.rho_bar:
        cv = pool
    ok_u = [h for h in cu if not _check(h, conds_u(idx.rho[0]), bank, e, cfg, "h_u", failures)] if idx.rho else [None]
    ok_v = [h for h in cv if not _check(h, conds_v(idx.rho_bar[0]), bank, e, cfg, "h_v", failures)] \
        if idx.rho_bar else [None]
    if not ok_u or not ok_v:
        which = "h_u" if not ok_u else "h_v"
        msg = (f"construction needs user candidates: no {which} candidate satisfies the "
               f"annihilation conditions ({len(failures)} rejected)")
        if user:
            msg += ": " + "; ".join(failures[:3])
        raise ConstructionError(msg)
    for hu in ok_u:
        for hv in ok_v:
            try:
                tr = build_transform(e, idx, [hu] if hu is not None else [], [hv] if hv is not None else [],
                                     cfg, order)
            except (ConstructionError, CertificationError):
                continue
            verify_transform(e, idx, tr, cfg)
            if tr.verified:
                return tr
    raise ConstructionError("construction needs user candidates: no candidate pair gives an invertible "
                            "Jacobian, nonzero b_u, b_v and a verified transform")


def _check(h, labels, bank, e, cfg, tag, failures):
    bad = _annihilates(h, labels, bank, e, cfg)
    if bad:
        failures.append(f"{tag} {to_text(h)}: <dh, {bad}> != 0")
    return bad


# ---------------------------------------------------------------- conditions

@dataclass
class Condition:
    name: str
    outcome: Outcome
    evidence: dict = field(default_factory=dict)

    def as_dict(self):
        return {"name": self.name, "outcome": self.outcome.value, "evidence": self.evidence}


@dataclass
class LinearizationReport:
    mode: str
    system: str
    conditions: list = field(default_factory=list)
    indices: ChainIndices = None
    transform: Transform = None
    target: LinearDacs = None
    target_system: Dacs = None
    distributions: list = field(default_factory=list)
    reduction: dict = field(default_factory=dict)
    dims: dict = field(default_factory=dict)
    diagnostic: str = ""

    @property
    def verdict(self) -> Outcome:
        outs = [c.outcome for c in self.conditions]
        if Outcome.FAIL in outs:
            return Outcome.FAIL
        if not outs or Outcome.UNDECIDED in outs:
            return Outcome.UNDECIDED
        return Outcome.PASS

    @property
    def linearizable(self) -> bool:
        return self.verdict is Outcome.PASS and self.transform is not None and self.transform.verified

    def condition(self, name) -> Condition | None:
        for c in self.conditions:
            if c.name == name:
                return c
        return None

    def summary(self) -> str:
        kind = "externally" if self.mode == "external" else "internally"
        v = self.verdict
        if v is Outcome.FAIL:
            failed = [c.name for c in self.conditions if c.outcome is Outcome.FAIL]
            return f"not {kind} feedback linearizable (fails {', '.join(failed)})"
        if v is Outcome.UNDECIDED:
            return f"undecided: {self.diagnostic or 'a condition could not be certified'}"
        head = f"{kind} feedback linearizable, {self.indices}"
        if not self.linearizable:
            head += f"; transform not constructed: {self.diagnostic}"
        return head

    def as_dict(self):
        out = {
            "mode": self.mode,
            "system": self.system,
            "verdict": self.verdict.value,
            "linearizable": self.linearizable,
            "summary": self.summary(),
            "conditions": [c.as_dict() for c in self.conditions],
            "indices": self.indices.as_dict() if self.indices else None,
            "transform": self.transform.as_dict() if self.transform else None,
            "target": dump_system(self.target_system) if self.target_system is not None else None,
            "distributions": self.distributions,
            "reduction": self.reduction,
            "dims": self.dims,
            "diagnostic": self.diagnostic,
        }
        return out


def _fl_conditions(D, Dh, n_star):
    conds = []
    bad = [(lv.index, name, list(lv.sample_ranks)) for seq, name in ((D, "D"), (Dh, "D_hat"))
           for lv in seq.levels if lv.index <= n_star and not lv.constant]
    conds.append(Condition("FL1", Outcome.FAIL if bad else Outcome.PASS,
                           {"ranks_D": D.ranks(), "ranks_D_hat": Dh.ranks(),
                            "non_constant": [f"{nm}_{i}: {r}" for i, nm, r in bad]}))
    rD, rH, rH1 = D.level(n_star).rank, Dh.level(n_star).rank, Dh.level(n_star + 1).rank
    conds.append(Condition("FL2", Outcome.PASS if rD == rH1 == n_star else Outcome.FAIL,
                           {"rank_D_n": rD, "rank_D_hat_n": rH, "rank_D_hat_n+1": rH1, "n_star": n_star}))
    verdicts, offending = [], []
    for seq, name in ((D, "D"), (Dh, "D_hat")):
        for lv in seq.levels:
            if lv.involutive is None:
                continue
            verdicts.append(lv.involutive.verdict)
            if lv.involutive.verdict is not Verdict.INVOLUTIVE:
                offending.append({"distribution": f"{name}_{lv.index}", "verdict": lv.involutive.verdict.value,
                                  "bracket": list(lv.involutive.witness), "detail": lv.involutive.detail})
    if Verdict.NOT_INVOLUTIVE in verdicts:
        o3 = Outcome.FAIL
    elif Verdict.UNKNOWN in verdicts:
        o3 = Outcome.UNDECIDED
    else:
        o3 = Outcome.PASS
    conds.append(Condition("FL3", o3, {"checked_levels": n_star - 1, "offending": offending}))
    return conds


def _internal(d: Dacs, rep: LinearizationReport, cfg: RunConfig, construct: bool, candidates, order,
              restriction: Restriction | None = None):
    """Shared FL1-FL3 evaluation and construction; fills ``rep`` and returns (restriction, explicitation)."""
    if restriction is None:
        t = reduce(d, cfg)
        rep.reduction = t.as_dict()
        if not t.admissible:
            rep.conditions.append(Condition("admissible", Outcome.FAIL, {"diagnostic": t.diagnostic}))
            rep.diagnostic = t.diagnostic
            return None, None
        if not t.fixed_point_reached:
            rep.conditions.append(Condition("admissible", Outcome.UNDECIDED, {"diagnostic": t.diagnostic}))
            rep.diagnostic = t.diagnostic
            return None, None
        cr = check_cr(d, t, cfg)
        rep.conditions.append(Condition("CR", Outcome.PASS if cr.ok else Outcome.UNDECIDED,
                                        {"rank_E_TM": list(cr.rank_EP), "rank_E_TM_G": list(cr.rank_EPG)}))
        if not cr.ok:
            rep.diagnostic = "constant rank assumption (CR) fails; the conditions do not apply"
            return None, None
        restriction = restrict(d, t, cfg)
    R = restriction
    e = explicitate(R.system, cfg)
    n_star = R.n_star
    rep.dims = {"n_star": n_star, "r_star": R.r_star, "m_star": R.m_star, "s_star": e.s,
                "eliminated": list(R.eliminated), "pinned": list(R.pinned)}
    D, Dh, bank = build_sequences(e, n_star, cfg)
    rep.distributions = sequences_table(D, Dh)
    rep.conditions += _fl_conditions(D, Dh, n_star)
    if rep.verdict is not Outcome.PASS:
        return R, e
    try:
        rep.indices = chain_indices(D, Dh, R.m_star, e.s)
    except ChainIndexError as ex:
        rep.conditions.append(Condition("indices", Outcome.UNDECIDED, {"detail": str(ex)}))
        rep.diagnostic = str(ex)
        return R, e
    rep.target = canonical_target(rep.indices, order=order)
    if not construct:
        return R, e
    cu = cv = None
    if candidates:
        cu = candidates.get("h_u") or None
        cv = candidates.get("h_v") or None
    try:
        tr = construct_transform(e, rep.indices, cu, cv, cfg, order, bank, D, Dh)
    except ConstructionError as ex:
        rep.diagnostic = str(ex)
        return R, e
    td = target_dacs(rep.indices, tr.psi, e.at, order, inputs=[f"w{i + 1}" for i in range(R.m_star)])
    tr.dacs_witness = bridge_ex_fb(R.system, td, e, explicitate(td, cfg), tr.witness)
    tr.dacs_verification = verify_ex_fb_equivalence(R.system, td, tr.dacs_witness, cfg, structural=False)
    rep.transform = tr
    rep.target_system = td
    return R, e


def _guard(fn):
    def run(d, *a, **kw):
        mode = fn.__name__.split("_")[1]
        try:
            return fn(d, *a, **kw)
        except (CertificationError, NonConstantRank, ReductionError) as ex:
            rep = LinearizationReport(mode, d.name)
            rep.conditions.append(Condition("certification", Outcome.UNDECIDED, {"detail": str(ex)}))
            rep.diagnostic = f"{type(ex).__name__}: {ex}"
            return rep
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


@_guard
def check_internal(d: Dacs, cfg: RunConfig = DEFAULT, construct: bool = True, candidates: dict | None = None,
                   order: str = "u-first") -> LinearizationReport:
    """FL1-FL3 on an explicitation of the M*-restriction, then the transform when they pass."""
    rep = LinearizationReport("internal", d.name)
    _internal(d, rep, cfg, construct, candidates, order)
    return rep


@_guard
def check_external(d: Dacs, cfg: RunConfig = DEFAULT, construct: bool = True, candidates: dict | None = None,
                   order: str = "u-first") -> LinearizationReport:
    """EFL1 (constant ranks), EFL2 (F in Im E + Im G) and EFL3 via FL1-FL3."""
    rep = LinearizationReport("external", d.name)
    at = d.at
    rE = numeric_rank(d.E, at, cfg)
    EG = d.E.row_join(d.G)
    rEG = numeric_rank(EG, at, cfg)
    rep.conditions.append(Condition("EFL1", Outcome.PASS if rE.constant and rEG.constant else Outcome.FAIL,
                                    {"rank_E": rE.rank, "rank_EG": rEG.rank,
                                     "samples_E": list(rE.sample_ranks), "samples_EG": list(rEG.sample_ranks)}))
    rEGF = numeric_rank(EG.row_join(d.F), at, cfg)
    pairs = list(zip(rEG.sample_ranks, rEGF.sample_ranks))
    bad = [i for i, (a, b) in enumerate(pairs) if a is not None and b is not None and a != b]
    ev = {"rank_EG": list(rEG.sample_ranks), "rank_EGF": list(rEGF.sample_ranks)}
    if bad:
        t = reduce(d, cfg, max_steps=1)
        if t.steps[-1].new:
            ev["constraint"] = [to_text(c) for c in t.steps[-1].new]
        ev["first_violation_sample"] = bad[0]
    rep.conditions.append(Condition("EFL2", Outcome.FAIL if bad else Outcome.PASS, ev))
    if rep.verdict is Outcome.FAIL:
        rep.diagnostic = "EFL1/EFL2 fail; EFL3 not evaluated"
        return rep
    sub = LinearizationReport("internal", d.name)
    R, e = _internal(d, sub, cfg, construct, candidates, order)
    rep.reduction, rep.dims, rep.distributions = sub.reduction, sub.dims, sub.distributions
    rep.indices, rep.diagnostic = sub.indices, sub.diagnostic
    inner = sub.verdict
    rep.conditions.append(Condition("EFL3", inner, {"conditions": [c.as_dict() for c in sub.conditions]}))
    if inner is not Outcome.PASS or rep.indices is None:
        return rep
    rep.target = canonical_target(rep.indices, d.m, d.l, order)
    if sub.transform is None:
        return rep
    tr = sub.transform
    w_int = tr.dacs_witness
    Qext, alpha, beta = _external_witness(d, R, w_int)
    ins = [f"w{i + 1}" for i in range(d.m)]
    td = target_dacs(rep.indices, tr.psi, e.at, order, d.m, d.l, ins)
    wext = ExFbWitness(Qext, tr.psi, alpha, beta)
    tr.dacs_witness = wext
    tr.dacs_verification = verify_ex_fb_equivalence(d, td, wext, cfg, structural=False)
    rep.transform = tr
    rep.target_system = td
    return rep


def _external_witness(d: Dacs, R: Restriction, w: ExFbWitness):
    """Lift an ex-fb witness of the restriction to the full system (M* = U).

    Rows: Q_int Q_r for the dynamics, Q_pin for the pinned inputs (0 = u2),
    the remaining rows vanish identically.
    """
    Q = sp.Matrix.vstack(msimplify(w.Q * R.Q), R.Q_pin, R.Q_rest)
    ms = R.m_star
    pinned = [d.inputs.index(p) for p in R.pinned]
    alpha = msimplify(R.alpha_pin + R.beta_pin * w.alpha_u)
    beta = sp.zeros(d.m, d.m)
    if ms:
        beta[:, :ms] = msimplify(R.beta_pin * w.beta_u)
    for k, j in enumerate(pinned):
        for c in range(len(pinned)):
            beta[j, ms + c] = R.B22_inv[k, c]
    return Q, alpha, beta
