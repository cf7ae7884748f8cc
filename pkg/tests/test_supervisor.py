import io
import math

import numpy as np
import pytest

from oracles import exact_supervised_risk, random_mdp
from safevisor import (
    SINK,
    FiniteMdp,
    HistorySupervisor,
    SupervisorState,
    Verdict,
    build_grid,
    check_input,
    quantize,
    step,
    value_iteration,
)
from safevisor.harness import ControllerSpec, simulate_mdp
from safevisor.supervisor import SupervisorError, serve


def toy_table(toy_mdp, rho):
    return value_iteration(toy_mdp, rho, max_horizon=2)


@pytest.mark.parametrize("x,cell", [(19.0005, 0), (21.5, SINK), (19.001, 1), (19.0, 0),
                                    (20.9999999, 1999), (21.0, SINK), (18.9999, SINK)])
def test_quantize(temperature, x, cell):
    assert quantize(build_grid(temperature, 1e-3), x) == cell


def test_check_input_values(toy_mdp):
    table = toy_table(toy_mdp, 0.15)
    sup = SupervisorState(table.rho, table.horizon)
    assert check_input(sup, toy_mdp, table, 0, 0) == pytest.approx(0.855)
    assert check_input(sup, toy_mdp, table, 0, 1) == pytest.approx(0.9025)


def test_perfectly_safe_continuation_returns_product():
    mdp = FiniteMdp.from_dense(np.array([[[1.0, 0.0]]]))
    table = value_iteration(mdp, 0.1, max_horizon=3)
    sup = SupervisorState(0.1, 3, k=1, product=0.97)
    assert check_input(sup, mdp, table, 0, 0) == 0.97


def test_accept_at_loose_tolerance(toy_mdp):
    table = toy_table(toy_mdp, 0.15)
    sup = SupervisorState(table.rho, table.horizon)
    d = step(sup, toy_mdp, table, 0.5, 0.0)
    assert d.verdict is Verdict.ACCEPTED and d.applied_input == 0
    assert d.certified_quantity == pytest.approx(0.855)
    assert sup.product == pytest.approx(0.9) and sup.k == 1


def test_override_at_tight_tolerance(toy_mdp):
    table = value_iteration(toy_mdp, 0.10)
    assert table.horizon == 2
    sup = SupervisorState(table.rho, table.horizon)
    d = step(sup, toy_mdp, table, 0.5, 0.0)
    assert d.verdict is Verdict.OVERRIDDEN and d.applied_input == 1
    assert sup.product == pytest.approx(0.95)


def test_leaving_safe_set_terminates(toy_mdp):
    table = toy_table(toy_mdp, 0.15)
    sup = SupervisorState(table.rho, table.horizon)
    d = step(sup, toy_mdp, table, 3.0, 0.0)
    assert d.verdict is Verdict.TERMINATED and d.applied_input is None
    assert sup.terminated and sup.k == 0
    with pytest.raises(SupervisorError):
        step(sup, toy_mdp, table, 0.5, 0.0)
    with pytest.raises(SupervisorError):
        check_input(sup, toy_mdp, table, 0, 0)


def test_terminates_at_horizon(toy_mdp):
    sup = HistorySupervisor(toy_mdp, toy_table(toy_mdp, 0.15))
    sup.step(0.5, 1.0)
    sup.step(0.5, 1.0)
    assert sup.state.terminated and sup.state.k == 2
    with pytest.raises(SupervisorError):
        sup.step(0.5, 1.0)
    sup.reset()
    assert sup.state.k == 0 and sup.state.product == 1.0 and not sup.state.terminated


def test_off_grid_proposal_is_quantized(toy_mdp):
    sup = HistorySupervisor(toy_mdp, toy_table(toy_mdp, 0.15))
    d = sup.step(0.5, 0.8)
    assert d.applied_input == 1 and sup.applied_value(d) == 1.0


def test_check_input_rejects_bad_indices(toy_mdp):
    table = toy_table(toy_mdp, 0.15)
    sup = SupervisorState(table.rho, table.horizon)
    for state, u in [(1, 0), (-1, 0), (0, 2)]:
        with pytest.raises(SupervisorError):
            check_input(sup, toy_mdp, table, state, u)
    sup.k = 2
    with pytest.raises(SupervisorError):
        check_input(sup, toy_mdp, table, 0, 0)


@pytest.mark.parametrize("seed", range(10))
def test_advisor_fallback_admissible_at_start(seed):
    rng = np.random.default_rng(seed)
    mdp = FiniteMdp.from_dense(random_mdp(rng, 5, 3, sink_scale=0.02))
    rho = 0.2
    table = value_iteration(mdp, rho, max_horizon=50)
    sup = SupervisorState(rho, table.horizon)
    for s in range(5):
        assert check_input(sup, mdp, table, s, int(table.policy[0, s])) >= 1 - rho


def test_accepted_quantity_reevaluates(temperature_mdp, temperature_table):
    sup = HistorySupervisor(temperature_mdp, temperature_table)
    rng = np.random.default_rng(0)
    x = 20.0
    while not sup.state.terminated:
        k, before = sup.state.k, sup.state.product
        state = quantize(temperature_mdp.grid, x)
        d = sup.step(x, float(rng.uniform(0, 0.6)))
        if d.verdict is Verdict.TERMINATED:
            break
        again = SupervisorState(sup.state.rho, sup.state.horizon, k=k, product=before)
        u = temperature_mdp.inputs.nearest(sup.applied_value(d)) if d.verdict is Verdict.ACCEPTED else None
        if u is not None:
            assert check_input(again, temperature_mdp, temperature_table, state, u) == d.certified_quantity
            assert d.certified_quantity >= 1 - sup.state.rho
        assert sup.state.product <= before
        x = float(temperature_mdp.grid.representatives[state] + rng.normal(0, 0.05))


def test_serve_protocol(toy_mdp):
    sup = HistorySupervisor(toy_mdp, toy_table(toy_mdp, 0.15))
    out = io.StringIO()
    served = serve(sup, io.StringIO("0.5 0\n\nbogus\n0.5 1\nreset\n7 0\n"), out)
    lines = out.getvalue().splitlines()
    assert served == 3
    assert lines[0].split()[0] == "accepted" and float(lines[0].split()[1]) == 0.0
    assert float(lines[0].split()[2]) == pytest.approx(0.855)
    assert lines[1].startswith("error")
    assert lines[2].split()[0] == "accepted"
    assert lines[3] == "ok"
    assert lines[4].split()[0] == "terminated"


def gap_mdp():
    """Four states: start, a spend-the-budget state, a forced-risk state, and a safe trap.

    Input 1 at the start branches evenly to the two middle states; the gate
    accepts it because the averaged continuation fits within rho, and then
    accepts a further risky step in the budget state because the path
    product only remembers that one branch.
    """
    s0, y1, y2, z, sink = range(5)
    P = np.zeros((4, 2, 5))
    P[s0, 0, z] = 1.0
    P[s0, 1, [sink, y1, y2]] = [0.05, 0.475, 0.475]
    P[y1, 0, z] = 1.0
    P[y1, 1, [sink, z]] = [0.05, 0.95]
    P[y2, :, sink], P[y2, :, z] = 0.1, 0.9
    P[z, :, z] = 1.0
    return P


def test_history_gate_can_exceed_tolerance():
    P = gap_mdp()
    mdp = FiniteMdp.from_dense(P)
    table = value_iteration(mdp, 0.1, max_horizon=2)
    assert table.horizon == 2 and table.values[2].max() <= 0.1
    risk = exact_supervised_risk(P, table, 0, lambda k, s: 1)
    assert risk == pytest.approx(0.05 + 0.475 * 0.05 + 0.475 * 0.1)
    assert risk > table.rho
    unsafe, _ = simulate_mdp(mdp, table, ControllerSpec("constant", {"value": 1.0}), 0, 40_000, seed=1)
    assert abs(unsafe - risk) < 4 * math.sqrt(risk * (1 - risk) / 40_000)
