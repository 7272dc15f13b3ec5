import io

import numpy as np
import pytest

from dacslin.config import RunConfig
from dacslin.explicitation import explicitate
from dacslin.linearize import check_internal
from dacslin.model import load_system, parse_system
from dacslin.reduction import reduce, restrict
from dacslin.simulate import (SimulationError, Trajectory, dacs_residual, derivative, map_to_original,
                              parse_signal, simulate_explicitation, solution_correspondence)

DECAY = parse_system("[states]\nx\n[inputs]\nu\n[point]\nx=1\n[E]\n1\n[F]\n-x\n[G]\n1\n")


def test_rk4_matches_exact_solution():
    e = explicitate(DECAY)
    tr = simulate_explicitation(e, [1.0], t_end=1.0, step=1e-2)
    assert tr.x[-1, 0] == pytest.approx(np.exp(-1.0), abs=1e-9)
    assert tr.halving_error < 1e-9 and not tr.flags


def test_signal_in_time_and_state():
    e = explicitate(DECAY)
    u = parse_signal("x + 1", e.states)
    tr = simulate_explicitation(e, [0.0], [u], t_end=0.5, step=1e-3)
    # x' = 1 gives x = t
    assert np.allclose(tr.x[:, 0], tr.t)
    assert np.allclose(tr.u[:, 0], tr.t + 1)


def test_time_name_is_reserved():
    with pytest.raises(ValueError):
        parse_signal("t", ["t"])


def test_blow_up_is_reported():
    d = parse_system("[states]\nx\n[point]\nx=1\n[E]\n1\n[F]\nx^2\n")
    with pytest.raises(SimulationError):
        simulate_explicitation(explicitate(d), [1.0], t_end=2.0, step=1e-3)


def test_step_halving_flag():
    e = explicitate(DECAY)
    tr = simulate_explicitation(e, [1.0], [parse_signal("50*sin(200*t)", e.states)], t_end=0.2, step=2e-2,
                                cfg=RunConfig(halving_tol=1e-8))
    assert tr.flags


def test_derivative_stencil():
    t = np.linspace(0, 1, 201)
    x = np.sin(t)[:, None]
    d = derivative(x, t[1] - t[0])
    assert np.max(np.abs(d[:, 0] - np.cos(t[2:-2]))) < 1e-8
    with pytest.raises(SimulationError):
        derivative(x[:3], 0.1)


def test_csv_header_and_rows():
    e = explicitate(DECAY)
    tr = simulate_explicitation(e, [1.0], t_end=0.01, step=1e-3)
    buf = io.StringIO()
    tr.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,x,u"
    assert len(lines) == 12


def test_example52_mapped_trajectory_solves_the_dacs(ex52):
    cfg = RunConfig(horizon=0.1)
    R = restrict(ex52, reduce(ex52))
    e = explicitate(R.system)
    tr = simulate_explicitation(e, e.at.values, [parse_signal("sin(t)", e.states)],
                                [parse_signal("cos(t)", e.states)], cfg=cfg)
    mapped = map_to_original(tr, ex52, R)
    assert isinstance(mapped, Trajectory) and mapped.states == ex52.states
    assert dacs_residual(ex52, mapped) < 1e-5


def test_correspondence_on_ode_chain(fixtures_dir):
    d = load_system(fixtures_dir / "ode_chain.dacs")
    rep = check_internal(d)
    runs = solution_correspondence(d, rep, RunConfig(horizon=0.2), points=2)
    assert len(runs) == 2
    for r in runs:
        assert r.correspondence.max_deviation < 1e-6
        assert r.dacs_residual < 1e-5
