import pytest
import sympy as sp

from dacslin.explicitation import explicitate
from dacslin.expr import sym
from dacslin.linearize import (ChainIndexError, ChainIndices, ConstructionError, Outcome, _lengths, candidate_pool, canonical_target,
                               check_external, check_internal, construct_transform, parse_candidates,
                               target_states)
from dacslin.model import load_system, parse_system
from dacslin.wong import is_completely_controllable


def test_lengths_from_counts():
    assert _lengths([2, 1, 1]) == (3, 1)
    assert _lengths([1, 0, 0]) == (1,)
    assert _lengths([]) == ()
    with pytest.raises(ChainIndexError):
        _lengths([1, 2])


def test_chain_indices_str():
    idx = ChainIndices((2,), (3,))
    assert idx.n == 5
    assert str(idx) == "rho=(2), rho_bar=(3)"


def test_canonical_target_u_first():
    t = canonical_target(ChainIndices((1,), (2,)))
    assert t.E == sp.Matrix([[1, 0, 0], [0, 1, 0]])
    assert t.H == sp.Matrix([[0, 0, 0], [0, 0, 1]])
    assert t.L == sp.Matrix([[1], [0]])


def test_canonical_target_external_padding():
    t = canonical_target(ChainIndices((1,), (2,)), m=2, l=3)
    assert t.E == sp.Matrix([[1, 0, 0], [0, 1, 0], [0, 0, 0]])
    assert t.L == sp.Matrix([[1, 0], [0, 0], [0, 1]])
    with pytest.raises(ValueError):
        canonical_target(ChainIndices((1,), (2,)), m=0)


def test_canonical_target_v_first():
    t = canonical_target(ChainIndices((2,), (3,)), order="v-first")
    assert t.E.shape == (4, 5)
    assert t.E[:2, :3] == sp.Matrix([[1, 0, 0], [0, 1, 0]])
    assert t.H[:2, :3] == sp.Matrix([[0, 1, 0], [0, 0, 1]])
    assert t.L == sp.Matrix([0, 0, 0, 1])
    assert target_states(ChainIndices((2,), (3,)), "v-first") == ["z1", "z2", "z3", "xi1", "xi2"]


@pytest.mark.parametrize("rho,rho_bar", [((1,), ()), ((2, 1), (1,)), ((3,), (2, 2)), ((), (2,)), ((1, 1), ())])
def test_canonical_targets_are_controllable(rho, rho_bar):
    c = is_completely_controllable(canonical_target(ChainIndices(rho, rho_bar)))
    assert c.controllable and c.consistent


def test_candidate_pool_is_sorted_and_capped():
    pool = candidate_pool(["x1", "x2", "x3"])
    assert sym("x1") * sym("x2") in pool and sym("x1") + sym("x3") in pool
    assert len(pool) == len(set(pool))
    assert len(candidate_pool(["x1", "x2", "x3"], limit=4)) == 4
    assert pool == candidate_pool(["x1", "x2", "x3"])


def test_parse_candidates():
    c = parse_candidates("[h_u]\nx1*x2\n[h_v]\nx1 + x3\n", ["x1", "x2", "x3"])
    assert c["h_u"] == [sym("x1") * sym("x2")]
    with pytest.raises(ValueError):
        parse_candidates("[h_w]\nx1\n", ["x1"])


def test_example51_external(ex51):
    rep = check_external(ex51)
    assert rep.verdict is Outcome.PASS and rep.linearizable
    assert [c.name for c in rep.conditions] == ["EFL1", "EFL2", "EFL3"]
    assert rep.indices == ChainIndices((1,), (2,))
    x1, x2, x3 = map(sym, ("x1", "x2", "x3"))
    assert x1 * x2 in list(rep.transform.psi) and x1 + x3 in list(rep.transform.psi)
    w = rep.transform.dacs_witness
    assert w.Q == sp.Matrix([[1, 1, 0], [0, 0, 1], [0, 1, 0]])
    assert w.beta_u == sp.Matrix([[sp.Rational(1, 2), 0], [-sp.Rational(1, 2), 1]])


def test_example51_internal_without_construction(ex51):
    rep = check_internal(ex51, construct=False)
    assert rep.verdict is Outcome.PASS
    assert not rep.linearizable
    assert rep.target == canonical_target(ChainIndices((1,), (2,)))


def test_example52_external_fails_at_efl2(ex52):
    rep = check_external(ex52)
    assert rep.verdict is Outcome.FAIL
    c = rep.condition("EFL2")
    assert c.outcome is Outcome.FAIL
    assert c.evidence["constraint"] == ["x1 - y1"]
    assert rep.condition("EFL3") is None


def test_construction_without_suitable_candidates(ex51):
    from dacslin.reduction import reduce, restrict
    e = explicitate(restrict(ex51, reduce(ex51)).system)
    with pytest.raises(ConstructionError) as info:
        construct_transform(e, ChainIndices((1,), (2,)), [sym("x2")], [sym("x2")])
    assert "h_u x2" in str(info.value)


@pytest.mark.parametrize("name,verdict,failed", [
    ("ode_chain", Outcome.PASS, None),
    ("ode_noninvolutive", Outcome.FAIL, "FL3"),
    ("ode_uncontrollable", Outcome.FAIL, "FL2"),
])
def test_ode_fixtures(fixtures_dir, name, verdict, failed):
    rep = check_internal(load_system(fixtures_dir / f"{name}.dacs"))
    assert rep.verdict is verdict
    if failed:
        assert rep.condition(failed).outcome is Outcome.FAIL
    else:
        assert rep.linearizable and rep.indices == ChainIndices((3,), ())


def test_inadmissible_point_fails():
    d = parse_system("[states]\nx1 x2\n[point]\nx1=1 x2=0\n[E]\n1, 0\n0, 0\n[F]\nx2\nx1\n")
    rep = check_internal(d)
    assert rep.verdict is Outcome.FAIL
    assert rep.condition("admissible").outcome is Outcome.FAIL


def test_nonconstant_rank_is_undecided():
    d = parse_system("[states]\nx1 x2\n[inputs]\nu\n[point]\nx1=0 x2=0\n[E]\n1, 0\n0, 1\n"
                     "[F]\nx2\n0\n[G]\n0\nx1\n")
    rep = check_internal(d)
    assert rep.verdict is not Outcome.PASS
