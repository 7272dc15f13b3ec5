import sympy as sp

from dacslin.explicitation import explicitate
from dacslin.expr import Point, sym
from dacslin.geometry import FieldBank, Verdict, build_sequences, check_involutive, lie_bracket, lie_derivative
from dacslin.model import load_system
from dacslin.reduction import reduce, restrict
from dacslin.symmat import msimplify

x1, x2, x3 = sym("x1"), sym("x2"), sym("x3")
S = ["x1", "x2", "x3"]


def test_bracket_of_coordinate_fields():
    f = sp.Matrix([x2, 0, 0])
    g = sp.Matrix([0, 1, 0])
    assert lie_bracket(f, g, S) == sp.Matrix([-1, 0, 0])
    assert lie_bracket(g, f, S) == sp.Matrix([1, 0, 0])
    assert lie_bracket(f, f, S) == sp.zeros(3, 1)


def test_lie_derivative():
    assert lie_derivative(x1 * x2, sp.Matrix([1, x1, 0]), S) == x2 + x1 ** 2


def test_involutivity_verdicts():
    at = Point({"x1": 1.0, "x2": 0.0, "x3": 0.0})
    e1, e3 = sp.Matrix([1, 0, 0]), sp.Matrix([0, 0, 1])
    assert check_involutive([e1, e3], S, at).verdict is Verdict.INVOLUTIVE
    g2 = sp.Matrix([0, x1, 1])
    res = check_involutive([e1, g2], S, at, labels=["a", "b"])
    assert res.verdict is Verdict.NOT_INVOLUTIVE and res.witness == ("a", "b")
    # rank drops at x1 = 0, so the question is not decided there
    at0 = Point({"x1": 0.0, "x2": 0.0, "x3": 0.0})
    res = check_involutive([sp.Matrix([0, x1, 0]), e3], S, at0)
    assert res.verdict is Verdict.UNKNOWN


def test_example51_sequences(ex51):
    e = explicitate(restrict(ex51, reduce(ex51)).system)
    D, Dh, bank = build_sequences(e, 3)
    assert Dh.ranks()[:3] == [1, 3, 3]
    assert D.ranks()[:3] == [2, 3, 3]
    for seq in (D, Dh):
        for lv in seq.levels[:2]:
            assert lv.constant
            assert lv.involutive is None or lv.involutive.verdict is Verdict.INVOLUTIVE
    adf = bank.get("ad_f g_v1")
    assert msimplify(adf - sp.Matrix([0, 0, 3 * x1 ** 3 + x1 + 2 * x2 ** 2])) == sp.zeros(3, 1)


def test_example52_sequences(ex52):
    R = restrict(ex52, reduce(ex52))
    e = explicitate(R.system)
    D, Dh, _ = build_sequences(e, R.n_star)
    assert Dh.ranks()[:3] == [1, 3, 5]
    assert D.ranks()[:3] == [2, 4, 5]
    assert all(lv.involutive.verdict is Verdict.INVOLUTIVE for seq in (D, Dh) for lv in seq.levels
               if lv.involutive is not None)


def test_ode_hat_sequence_lags_by_one(fixtures_dir):
    e = explicitate(load_system(fixtures_dir / "ode_chain.dacs"))
    D, Dh, _ = build_sequences(e, 3)
    assert D.ranks() == [1, 2, 3, 3]
    assert Dh.ranks() == [0, 1, 2, 3]


def test_bank_labels_round_trip(ex51):
    bank = FieldBank(explicitate(restrict(ex51, reduce(ex51)).system))
    for lbl in ("g_u1", "ad_f g_v1", "ad_f^3 g_u1"):
        assert bank.label(*bank.parse(lbl)) == lbl
