import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
import sympy as sp

from dacslin.config import RunConfig
from dacslin.expr import (ExprSyntaxError, Point, UnknownIdentifier, ZeroStatus, differentiate, evaluate, is_zero,
                          parse_expr, sample_points, simplify, sym, to_text)

NAMES = ["x1", "x2", "th"]


@pytest.mark.parametrize("text,expected", [
    ("x1 + 2*x2", sym("x1") + 2 * sym("x2")),
    ("x1^2 - x1^3", sym("x1") ** 2 - sym("x1") ** 3),
    ("-x1^2", -sym("x1") ** 2),
    ("2^-1", sp.Rational(1, 2)),
    ("0.25*x1", sym("x1") / 4),
    ("sin(th)/cos(th)", sp.sin(sym("th")) / sp.cos(sym("th"))),
    ("sqrt(2)*x2", sp.sqrt(2) * sym("x2")),
    ("log(1 + x1^2)", sp.log(1 + sym("x1") ** 2)),
])
def test_parse(text, expected):
    assert sp.simplify(parse_expr(text, NAMES) - expected) == 0


def test_power_is_right_associative():
    assert parse_expr("x1^2^3", NAMES) == sym("x1") ** 8


@pytest.mark.parametrize("text", ["x1 +", "(x1", "x1 ** 2", "sin x1", "x1^x2", "3 $ 4", ""])
def test_syntax_errors(text):
    with pytest.raises(ExprSyntaxError):
        parse_expr(text, NAMES)


def test_unknown_identifier_is_reported():
    with pytest.raises(UnknownIdentifier) as info:
        parse_expr("x1 + y", NAMES)
    assert "y" in str(info.value)


@pytest.mark.parametrize("text", [
    "x1*x2 - x1^3 + x2^2", "sin(th)*cos(th)^2", "(x1 + 1)/(x2 - 3)", "-x1/2", "exp(-x1)*x2",
    "sqrt(1 + x1^2) - log(2 + th)", "x1^(1/2)", "-(x1 + x2)^3", "tan(th) + sec(th)",
])
def test_print_parse_round_trip(text):
    e = parse_expr(text, NAMES)
    assert parse_expr(to_text(e), NAMES) == e


def test_printer_is_deterministic():
    e = parse_expr("x2^2 + x1 - x1^3", NAMES)
    assert to_text(e) == to_text(sp.sympify(e))
    assert to_text(e) == "-x1^3 + x1 + x2^2"


def test_differentiate():
    e = parse_expr("x1^2*sin(th)", NAMES)
    assert simplify(differentiate(e, "th") - sym("x1") ** 2 * sp.cos(sym("th"))) == 0
    with pytest.raises(ValueError):
        differentiate(e, "m", params=["m"])


def test_simplify_uses_pythagoras():
    th = sym("th")
    assert simplify(sp.sin(th) ** 2 + sp.cos(th) ** 2 - 1) == 0
    assert simplify(sp.tan(th) * sp.cos(th) - sp.sin(th)) == 0


def test_evaluate_with_params():
    at = Point({"x1": 2.0}, {"m": 3.0})
    e = parse_expr("m*x1^2", ["x1", "m"])
    assert evaluate(e, at) == pytest.approx(12.0)


def test_sample_points_are_seeded_and_in_radius():
    at = Point({"x1": 1.0, "x2": 0.0})
    cfg = RunConfig(radius=0.1)
    X = sample_points(at, 16, cfg)
    assert X.shape == (16, 2)
    assert np.allclose(X[0], [1.0, 0.0])
    assert np.all(np.linalg.norm(X - X[0], axis=1) <= 0.1 + 1e-12)
    assert np.array_equal(X, sample_points(at, 16, cfg))


def test_sample_points_respect_constraints():
    at = Point({"x1": 0.0, "x2": 0.0})
    X = sample_points(at, 8, RunConfig(), constraints=(sym("x1") - sym("x2"),))
    assert np.allclose(X[:, 0], X[:, 1])


def test_zero_test_states():
    at = Point({"x1": 0.5, "th": 0.3})
    th = sym("th")
    assert is_zero(sp.sin(th) ** 2 + sp.cos(th) ** 2 - 1, at).zero
    t = is_zero(sym("x1") - sp.Rational(1, 2), at)
    assert not t.zero
    # nonzero near the point but zero at it: the witness is a nearby sample
    assert t.nonzero and t.witness is not None


def test_zero_test_unknown_when_singular():
    at = Point({"x1": 0.0})
    assert is_zero(sp.sqrt(-1 - sym("x1") ** 2), at).status is ZeroStatus.UNKNOWN


_leaf = st.sampled_from(["x1", "x2", "th", "2", "1/3", "0.5"])


def _node(children):
    un = st.builds(lambda f, a: f"{f}({a})", st.sampled_from(["sin", "cos", "exp"]), children)
    bi = st.builds(lambda a, op, b: f"({a}) {op} ({b})", children, st.sampled_from(["+", "-", "*"]), children)
    pw = st.builds(lambda a, k: f"({a})^{k}", children, st.integers(2, 3))
    return un | bi | pw


@settings(max_examples=60, deadline=None)
@given(st.recursive(_leaf, _node, max_leaves=6))
def test_round_trip_property(text):
    e = parse_expr(text, NAMES)
    assert parse_expr(to_text(e), NAMES) == e
