"""Command-line entry point.

Exit codes: 0 decisive pass, 1 decisive fail, 2 undecided, 3 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import RunConfig
from .explicitation import dump_explicitation, explicitate
from .expr import ExprSyntaxError, to_text
from .geometry import build_sequences, sequences_table
from .linearize import Outcome, check_external, check_internal, load_candidates
from .model import SystemFileError, load_system, load_witness, verify_ex_fb_equivalence
from .reduction import ReductionError, check_cr, reduce, restrict
from .simulate import (SimulationError, constraint_drift, dacs_residual, map_to_original, parse_signal,
                       simulate_explicitation, solution_correspondence)
from .symmat import CertificationError, NonConstantRank, numeric_rank

EXIT_PASS, EXIT_FAIL, EXIT_UNDECIDED, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    kw = {}
    for flag, key in (("seed", "seed"), ("radius", "radius"), ("tol_zero", "tol_zero"), ("tol_rank", "tol_rank"),
                      ("step", "step"), ("horizon", "horizon"), ("candidates", "candidates")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[key] = v
    try:
        return RunConfig(**kw)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _emit(args, report: dict, text: str):
    print(text)
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _candidates(args, d, cfg):
    if not cfg.candidates:
        return None
    return load_candidates(cfg.candidates, d.names())


# ---------------------------------------------------------------- subcommands

def cmd_check(args, cfg):
    d = load_system(args.system)
    at = d.at
    rE = numeric_rank(d.E, at, cfg)
    rEG = numeric_rank(d.E.row_join(d.G), at, cfg)
    rep = {"command": "check", "system": d.name, "l": d.l, "n": d.n, "m": d.m,
           "states": d.states, "inputs": d.inputs, "point": {k: float(v) for k, v in at.values.items()},
           "rank_E": rE.rank, "rank_E_constant": rE.constant,
           "rank_EG": rEG.rank, "rank_EG_constant": rEG.constant}
    text = (f"{d.name}: l={d.l} n={d.n} m={d.m}, point {at}\n"
            f"rank E = {rE.rank}{'' if rE.constant else ' (not constant)'}, "
            f"rank [E,G] = {rEG.rank}{'' if rEG.constant else ' (not constant)'}")
    _emit(args, rep, text)
    return EXIT_PASS


def cmd_reduce(args, cfg):
    d = load_system(args.system)
    t = reduce(d, cfg)
    rep = {"command": "reduce", "system": d.name, **t.as_dict()}
    lines = [f"M_{s.k}: dim {s.dim}" + (f", new {', '.join(to_text(c) for c in s.new)}" if s.new else "")
             for s in t.steps]
    if t.admissible and t.fixed_point_reached:
        cr = check_cr(d, t, cfg)
        rep.update({"r_star": cr.r_star, "m_star": cr.m_star, "cr": cr.ok})
        lines.append(f"k* = {t.k_star}, n* = {t.n_star}, r* = {cr.r_star}, m* = {cr.m_star}, "
                     f"(CR) {'holds' if cr.ok else 'fails'}")
        code = EXIT_PASS if cr.ok else EXIT_UNDECIDED
    elif not t.admissible:
        lines.append(f"point not admissible: {t.diagnostic}")
        code = EXIT_FAIL
    else:
        lines.append(t.diagnostic)
        code = EXIT_UNDECIDED
    _emit(args, rep, "\n".join(lines))
    return code


def _restricted_explicitation(d, cfg):
    t = reduce(d, cfg)
    if not t.admissible:
        raise ReductionError(f"point not admissible: {t.diagnostic}")
    R = restrict(d, t, cfg)
    return R, explicitate(R.system, cfg)


def cmd_explicitate(args, cfg):
    d = load_system(args.system)
    if args.restricted:
        _, e = _restricted_explicitation(d, cfg)
    else:
        rng = np.random.default_rng(cfg.seed) if args.randomize else None
        e = explicitate(d, cfg, rng)
    text = dump_explicitation(e)
    _emit(args, {"command": "explicitate", "system": d.name, "explicitation": text}, text.rstrip())
    return EXIT_PASS


def cmd_distributions(args, cfg):
    d = load_system(args.system)
    R, e = _restricted_explicitation(d, cfg)
    D, Dh, _ = build_sequences(e, R.n_star, cfg)
    rows = sequences_table(D, Dh)
    text = "\n".join(f"{r['distribution']:>9}: rank {r['rank']}, "
                     f"{'constant' if r['constant_rank'] else 'NOT constant'}, {r['involutive']}"
                     for r in rows)
    _emit(args, {"command": "distributions", "system": d.name, "n_star": R.n_star, "levels": rows}, text)
    return EXIT_PASS


def _report_text(rep) -> str:
    lines = [rep.summary()]
    for c in rep.conditions:
        lines.append(f"  {c.name}: {c.outcome.value}")
        if c.outcome is not Outcome.PASS:
            for k, v in sorted(c.evidence.items()):
                lines.append(f"    {k}: {v}")
    if rep.transform is not None:
        lines.append("  psi = (" + ", ".join(to_text(p) for p in rep.transform.psi) + ")")
    if rep.target_system is not None:
        from .model import dump_system
        lines.append("  target:")
        lines += ["    " + ln for ln in dump_system(rep.target_system).splitlines()]
    return "\n".join(lines)


def _run_linearize(args, cfg, d):
    cands = _candidates(args, d, cfg)
    fn = check_external if args.mode == "external" else check_internal
    return fn(d, cfg, candidates=cands, order=args.order)


def cmd_linearize(args, cfg):
    d = load_system(args.system)
    rep = _run_linearize(args, cfg, d)
    out = {"command": "linearize", **rep.as_dict()}
    _emit(args, out, _report_text(rep))
    if rep.verdict is Outcome.FAIL:
        return EXIT_FAIL
    if rep.verdict is Outcome.PASS and rep.linearizable:
        return EXIT_PASS
    return EXIT_UNDECIDED


def _parse_x0(text, e):
    vals = dict(e.at.values)
    for tok in (text or "").replace(",", " ").split():
        k, _, v = tok.partition("=")
        if k not in vals:
            raise UsageError(f"unknown state {k!r} in --x0")
        vals[k] = float(v)
    return vals


def _parse_signals(specs, k, names, params, what):
    if not specs:
        return None
    sig = [parse_signal(s, names, params) for s in specs]
    if len(sig) != k:
        raise UsageError(f"{what} needs {k} signal(s), got {len(sig)}")
    return sig


def cmd_simulate(args, cfg):
    d = load_system(args.system)
    R, e = _restricted_explicitation(d, cfg)
    params = list(d.params)
    u = _parse_signals(args.u, e.m, e.states, params, "--u")
    v = _parse_signals(args.v, e.s, e.states, params, "--v")
    tr = simulate_explicitation(e, _parse_x0(args.x0, e), u, v, cfg=cfg)
    mapped = map_to_original(tr, d, R)
    res = dacs_residual(d, mapped)
    drift = constraint_drift(mapped, d, R.constraints)
    if args.csv:
        with open(args.csv, "w") as fh:
            tr.write_csv(fh)
    rep = {"command": "simulate", "system": d.name, "samples": len(tr.t), "step": cfg.step,
           "horizon": cfg.horizon, "dacs_residual": res, "constraint_drift": drift,
           "halving_error": tr.halving_error, "flags": tr.flags}
    text = (f"{len(tr.t)} samples, step {cfg.step:g}, horizon {cfg.horizon:g}\n"
            f"dacs residual {res:.3g}, constraint drift {drift:.3g}, step-halving difference {tr.halving_error:.3g}")
    if not args.csv and not args.out:
        tr.write_csv(sys.stdout)
    _emit(args, rep, text)
    return EXIT_PASS if not tr.flags else EXIT_UNDECIDED


def cmd_verify_equivalence(args, cfg):
    a = load_system(args.system)
    b = load_system(args.target)
    w = load_witness(args.witness, a)
    rep = verify_ex_fb_equivalence(a, b, w, cfg, structural=not args.numeric)
    text = "\n".join(f"{r.name}: {'PASS' if r.passed else 'FAIL'} (max residual {r.max_residual:.3g})"
                     for r in rep.relations)
    _emit(args, {"command": "verify-equivalence", "passed": rep.passed, "relations": rep.as_dict()}, text)
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_verify_correspondence(args, cfg):
    d = load_system(args.system)
    args.mode = "internal"
    rep = _run_linearize(args, cfg, d)
    if not rep.linearizable:
        _emit(args, {"command": "verify-correspondence", "summary": rep.summary()}, rep.summary())
        return EXIT_FAIL if rep.verdict is Outcome.FAIL else EXIT_UNDECIDED
    tnames = rep.target_system.states
    ut = _parse_signals(args.u, len(rep.indices.rho), tnames, [], "--u")
    vt = _parse_signals(args.v, len(rep.indices.rho_bar), tnames, [], "--v")
    runs = [r.as_dict() for r in solution_correspondence(d, rep, cfg, args.points, args.spread, ut, vt)]
    dev = max(max(r["state_deviation"], r["input_residual"]) for r in runs)
    res = max(r["dacs_residual"] for r in runs)
    ok = dev <= args.tol_deviation and res <= args.tol_dacs
    text = (f"{len(runs)} runs: max deviation {dev:.3g} (<= {args.tol_deviation:g}), "
            f"max dacs residual {res:.3g} (<= {args.tol_dacs:g}): {'PASS' if ok else 'FAIL'}")
    _emit(args, {"command": "verify-correspondence", "runs": runs, "max_deviation": dev,
                 "max_dacs_residual": res, "passed": ok}, text)
    return EXIT_PASS if ok else EXIT_FAIL


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="sampling seed")
    common.add_argument("--radius", type=float, help="sampling neighborhood radius")
    common.add_argument("--tol-zero", type=float, dest="tol_zero", help="zero-test tolerance")
    common.add_argument("--tol-rank", type=float, dest="tol_rank", help="relative SVD rank tolerance")
    common.add_argument("--step", type=float, help="integrator step")
    common.add_argument("--horizon", type=float, help="integration horizon")
    common.add_argument("--candidates", help="file with [h_u] / [h_v] candidate output functions")
    common.add_argument("--out", help="write the structured report (JSON) here")

    p = _Parser(prog="dacslin", description="Feedback linearizability of nonlinear DACS E(x)x' = F(x) + G(x)u.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("check", parents=[common], help="validate a system file and report ranks")
    s.add_argument("system")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("reduce", parents=[common], help="geometric reduction to M*")
    s.add_argument("system")
    s.set_defaults(func=cmd_reduce)

    s = sub.add_parser("explicitate", parents=[common], help="explicitation with driving variables")
    s.add_argument("system")
    s.add_argument("--restricted", action="store_true", help="explicitate the M*-restriction")
    s.add_argument("--randomize", action="store_true", help="random member of the class (uses --seed)")
    s.set_defaults(func=cmd_explicitate)

    s = sub.add_parser("distributions", parents=[common], help="D_i and D-hat_i of the restriction")
    s.add_argument("system")
    s.set_defaults(func=cmd_distributions)

    s = sub.add_parser("linearize", parents=[common], help="decide internal/external linearizability")
    s.add_argument("system")
    s.add_argument("--mode", choices=("internal", "external"), default="internal")
    s.add_argument("--order", choices=("u-first", "v-first"), default="u-first",
                   help="block order of the canonical target")
    s.set_defaults(func=cmd_linearize)

    s = sub.add_parser("simulate", parents=[common], help="RK4 simulation of the restriction explicitation")
    s.add_argument("system")
    s.add_argument("--u", action="append", help="input signal in t and states (repeat per input)")
    s.add_argument("--v", action="append", help="driving-variable signal (repeat per v)")
    s.add_argument("--x0", help="initial state, e.g. 'x1=1.01 x2=0'")
    s.add_argument("--csv", help="write the trajectory CSV here (stdout if neither --csv nor --out)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify-equivalence", parents=[common], help="check an ex-fb witness between two systems")
    s.add_argument("system")
    s.add_argument("target")
    s.add_argument("witness")
    s.add_argument("--numeric", action="store_true", help="skip the structural (symbolic) check")
    s.set_defaults(func=cmd_verify_equivalence)

    s = sub.add_parser("verify-correspondence", parents=[common],
                       help="simulate the restriction and its canonical target from matched states")
    s.add_argument("system")
    s.add_argument("--order", choices=("u-first", "v-first"), default="u-first")
    s.add_argument("--u", action="append", help="target input signal u~ (repeat per input)")
    s.add_argument("--v", action="append", help="target driving signal v~ (repeat per v)")
    s.add_argument("--points", type=int, default=3)
    s.add_argument("--spread", type=float, default=0.05, help="radius for initial points")
    s.add_argument("--tol-deviation", type=float, default=1e-6, dest="tol_deviation")
    s.add_argument("--tol-dacs", type=float, default=1e-5, dest="tol_dacs")
    s.set_defaults(func=cmd_verify_correspondence)
    return p


def main(argv=None) -> int:
    p = build_parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as e:
        return e.code
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except (UsageError, SystemFileError, ExprSyntaxError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CertificationError, NonConstantRank, ReductionError, SimulationError) as e:
        print(f"undecided: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_UNDECIDED


if __name__ == "__main__":
    sys.exit(main())
