import sympy as sp

from dacslin.linearize import ChainIndices, canonical_target
from dacslin.model import LinearDacs
from dacslin.wong import block_diag, intersect, is_completely_controllable, preimage, rank_criterion, wong_sequences


def _N(k):
    M = sp.zeros(k, k)
    for i in range(k - 1):
        M[i, i + 1] = 1
    return M


def test_subspace_helpers():
    A = sp.Matrix([[1, 0, 0], [0, 0, 0]])
    P = preimage(A, sp.zeros(2, 0))
    assert P.cols == 2
    X = sp.Matrix([[1, 0], [0, 1], [0, 0]])
    Y = sp.Matrix([[0], [1], [1]])
    assert intersect(X, Y).cols == 0
    assert intersect(X, sp.Matrix([[1], [1], [0]])).cols == 1


def test_ode_integrator_is_controllable():
    c = is_completely_controllable(LinearDacs(sp.eye(2), _N(2), sp.Matrix([[0], [1]])))
    assert c.controllable and c.lemma_ii and c.consistent


def test_uncontrolled_ode():
    c = is_completely_controllable(LinearDacs(sp.eye(2), sp.zeros(2, 2), sp.zeros(2, 0)))
    assert not c.controllable and not c.lemma_ii


def test_nilpotent_pencil():
    # N x' = x has only the zero solution
    c = is_completely_controllable(LinearDacs(_N(3), sp.eye(3), sp.zeros(3, 0)))
    ws = c.sequences
    assert ws.V_star.cols == 0
    assert ws.W_star.cols == 3
    assert not c.controllable and c.consistent


def test_free_algebraic_variable_is_controllable():
    # x1' = u, 0 = 0 * x2: x2 is an unconstrained free variable
    c = is_completely_controllable(LinearDacs(sp.Matrix([[1, 0]]), sp.zeros(1, 2), sp.Matrix([[1]])))
    assert c.controllable and c.consistent


def test_example51_target_controllable():
    idx = ChainIndices((1,), (2,))
    ld = canonical_target(idx, m=2, l=3)
    c = is_completely_controllable(ld)
    assert c.controllable and c.consistent
    assert c.sequences.dims()["V"] == [3, 3]
    assert c.sequences.dims()["W"] == [0, 2, 3, 3]


def test_rank_criterion_reports_bad_lambda():
    ld = LinearDacs(sp.eye(2), sp.Matrix([[2, 0], [0, 0]]), sp.Matrix([[0], [1]]))
    ok, image_ok, pencil_ok, bad = rank_criterion(ld)
    assert image_ok and not pencil_ok and not ok
    assert 2 in bad


def test_block_diag_empty_blocks():
    M = block_diag([sp.eye(1), sp.zeros(0, 2), sp.Matrix([[5]])])
    assert M.shape == (2, 4)
    assert M[1, 3] == 5


def test_wong_sequences_are_nested():
    ld = LinearDacs(sp.Matrix([[1, 0, 0], [0, 1, 0], [0, 0, 0]]), sp.Matrix([[0, 1, 0], [0, 0, 1], [1, 0, 0]]),
                    sp.Matrix([[0], [0], [1]]))
    ws = wong_sequences(ld)
    for a, b in zip(ws.V, ws.V[1:]):
        assert sp.Matrix.hstack(a, b).rank() == a.cols
    for a, b in zip(ws.W, ws.W[1:]):
        assert sp.Matrix.hstack(a, b).rank() == b.cols
