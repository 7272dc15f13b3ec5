import numpy as np
import pytest
import sympy as sp

from dacslin.explicitation import (bridge_ex_fb, class_witness, explicitate, identity_witness,
                                   verify_sys_fb_equivalence)
from dacslin.expr import sym
from dacslin.model import parse_system, verify_ex_fb_equivalence
from dacslin.reduction import reduce, restrict
from dacslin.symmat import NonConstantRank, msimplify


def test_example51_dims(ex51):
    e = explicitate(ex51)
    assert e.dims() == (3, 2, 1, 1)
    assert msimplify(e.E1 * e.g_v) == sp.zeros(2, 1)


def test_example52_restriction_dims(ex52):
    R = restrict(ex52, reduce(ex52))
    e = explicitate(R.system)
    assert e.dims() == (5, 1, 1, 0)


def test_identity_witness_verifies(ex51):
    e = explicitate(ex51)
    assert verify_sys_fb_equivalence(e, e, identity_witness(e)).passed


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_randomized_members_are_related(ex51, seed):
    a = explicitate(ex51, rng=np.random.default_rng(seed))
    b = explicitate(ex51, rng=np.random.default_rng(seed + 100))
    w = class_witness(a, b)
    assert verify_sys_fb_equivalence(a, b, w).passed


def test_bridge_gives_dacs_witness(ex51):
    a = explicitate(ex51)
    b = explicitate(ex51, rng=np.random.default_rng(7))
    w = class_witness(a, b)
    dw = bridge_ex_fb(ex51, ex51, a, b, w)
    assert verify_ex_fb_equivalence(ex51, ex51, dw).passed


def test_wrong_witness_is_rejected(ex51):
    a = explicitate(ex51)
    w = identity_witness(a)
    w.alpha_v = w.alpha_v + sp.Matrix([sym("x1")])
    rep = verify_sys_fb_equivalence(a, a, w)
    assert not rep.passed
    failed = {r.name for r in rep.relations if not r.passed}
    assert failed == {"f"}


def test_nonconstant_rank_E():
    d = parse_system("""
[states]
x1 x2
[point]
x1=0 x2=0
[E]
x1, 0
0, 1
[F]
0
0
""")
    with pytest.raises(NonConstantRank):
        explicitate(d)
