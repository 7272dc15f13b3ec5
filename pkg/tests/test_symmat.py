import pytest
import sympy as sp

from dacslin.expr import Point, simplify, sym
from dacslin.symmat import (CertificationError, NonConstantRank, certify_zero, inverse, kernel_basis,
                            left_annihilator, msimplify, numeric_rank, right_inverse, row_reduce)

x1, x2, x3 = sym("x1"), sym("x2"), sym("x3")
AT = Point({"x1": 1.0, "x2": 0.0, "x3": 0.0})


def test_numeric_rank_constant_and_not():
    A = sp.Matrix([[x2, x1, 0], [0, 0, 0], [1, 0, 1]])
    info = numeric_rank(A, AT)
    assert info.rank == 2 and info.constant
    B = sp.Matrix([[x1 - 1, 0], [0, 1]])
    info = numeric_rank(B, AT)
    assert info.rank == 1 and not info.constant


def test_row_reduce_moves_dependent_rows_down():
    A = sp.Matrix([[x1, x2], [2 * x1, 2 * x2], [0, 1]])
    rr = row_reduce(A, AT)
    assert rr.rank == 2
    assert rr.reduced[2, :] == sp.zeros(1, 2)
    assert msimplify(rr.Q * A - rr.reduced) == sp.zeros(3, 2)
    assert rr.Q.det() != 0


def test_row_reduce_rejects_nonconstant_rank():
    A = sp.Matrix([[1, 0], [0, x1 - 1]])
    with pytest.raises(NonConstantRank):
        row_reduce(A, AT)


def test_kernel_and_annihilator():
    A = sp.Matrix([[x2, x1, 0], [1, 0, 1]])
    K = kernel_basis(A, AT)
    assert K.shape == (3, 1)
    assert msimplify(A * K) == sp.zeros(2, 1)
    W = left_annihilator(A.T, AT)
    assert msimplify(W * A.T) == sp.zeros(1, 2)


def test_right_inverse():
    A = sp.Matrix([[x2, x1, 0], [1, 0, 1]])
    R = right_inverse(A, AT)
    assert msimplify(A * R) == sp.eye(2)


def test_inverse_with_symbolic_pivots():
    B = sp.Matrix([[x1, 1], [x2, 2 + x1 ** 2]])
    Bi = inverse(B, AT)
    assert msimplify(B * Bi) == sp.eye(2)
    assert inverse(sp.zeros(0, 0)).shape == (0, 0)


def test_inverse_of_singular_matrix():
    with pytest.raises(CertificationError):
        inverse(sp.Matrix([[x1 - 1, 0], [0, 1]]), AT)


def test_certify_zero_distinguishes_outcomes():
    th = sym("x3")
    certify_zero(sp.Matrix([sp.sin(th) ** 2 + sp.cos(th) ** 2 - 1]), AT)
    with pytest.raises(NonConstantRank):
        certify_zero(sp.Matrix([x3]), AT)
    with pytest.raises(CertificationError):
        certify_zero(sp.Matrix([sp.sqrt(-1 - x1 ** 2)]), AT)


def test_trig_entries():
    th = sym("x3")
    A = sp.Matrix([[sp.cos(th), -sp.sin(th)], [sp.sin(th), sp.cos(th)]])
    Ai = inverse(A, AT)
    assert msimplify(Ai - A.T) == sp.zeros(2, 2)
    assert simplify(A.det()) == 1
