import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DESK6_LOAD, two_bus
from ddurso.cases import random_desk
from ddurso.core import DG, ESS, Line, Scenario, ScenarioSet
from ddurso.recourse import (
    build_recourse_lp,
    default_volt_bigm,
    expected_cost,
    recourse_template,
    resilience_indices,
    solve_expected,
)


def test_intact_two_bus_sheds_nothing():
    case = two_bus()
    assert expected_cost(case.network, case.scenarios, [1]) == pytest.approx(0.0, abs=1e-9)


def test_isolated_load_is_shed_at_priority_weight():
    case = two_bus(load=10.0, rho=3.0, n_periods=2)
    assert expected_cost(case.network, case.scenarios, [0]) == pytest.approx(60.0)


def test_leaf_line_index_is_weighted_load():
    case = two_bus(load=7.0, rho=2.5)
    assert resilience_indices(case.network, case.scenarios) == {"L1-2": pytest.approx(17.5)}


def test_zero_load_indices_vanish(desk):
    zero = ScenarioSet(tuple(Scenario(s.probability, 0 * s.pd, 0 * s.qd, s.e0) for s in desk.scenarios))
    ind = resilience_indices(desk.network, zero)
    assert all(abs(v) < 1e-9 for v in ind.values())


def test_storage_energy_limit():
    # isolated bus: the ESS may deliver at most eta * e0 = 2 kWh over the horizon
    case = two_bus(load=10.0, rho=3.0, n_periods=2)
    net = dataclasses.replace(case.network, ess=(ESS("E", "N2", 5.0, 5.0, eta=0.5, capacity=10.0),))
    s = case.scenarios[0]
    scen = ScenarioSet((Scenario(1.0, s.pd, s.qd, [4.0]),))
    assert expected_cost(net, scen, [0]) == pytest.approx(3.0 * (20.0 - 2.0))


def test_vulnerable_dg_output_follows_damage():
    case = two_bus(load=10.0, rho=3.0)
    net = dataclasses.replace(case.network, dgs=case.network.dgs + (DG("DG1", "N2", 4.0),), vulnerable_dgs=("DG1",))
    assert expected_cost(net, case.scenarios, [0, 1]) == pytest.approx(18.0)
    assert expected_cost(net, case.scenarios, [0, 0]) == pytest.approx(30.0)


def test_voltage_drop_limits_transfer():
    # r = x = 5 pu on 1000 kVA: drop = 5 (P + Q) / 1000 <= 0.05
    case = two_bus(load=10.0, rho=3.0)
    line = Line("N1", "N2", 5.0, 5.0, 100.0, 100.0)
    net = dataclasses.replace(case.network, lines=(line,), vulnerable_lines=(line.name,))
    # reactive shedding is free, so all active load is served
    assert expected_cost(net, case.scenarios, [1]) == pytest.approx(0.0, abs=1e-7)
    tpl = recourse_template(net, couple_reactive=True)
    # with shedding at constant power factor: 6.5 P / 1000 <= 0.05
    served = 0.05 * 1000 / 6.5
    assert expected_cost(net, case.scenarios, [1], tpl) == pytest.approx(3.0 * (10.0 - served))


def test_open_line_decouples_voltages():
    case = two_bus()
    m = build_recourse_lp(case.network, case.scenarios[0], [0])
    assert m.n_rows > 0
    assert default_volt_bigm(case.network) >= 0.1


def test_expected_solution_and_duals(desk):
    net = desk.network
    u = np.ones(net.n_comps)
    u[[1, 4]] = 0
    sol, dp = solve_expected(net, desk.scenarios, u, check=True)
    tpl = recourse_template(net)
    assert dp.objective(tpl, desk.scenarios, u) == pytest.approx(sol.expected_cost, rel=1e-7)
    assert dp.audit(tpl, desk.scenarios) <= 1e-6
    assert sol.expected_load == pytest.approx(DESK6_LOAD)
    assert 0 <= sol.shedding_ratio <= 1
    assert "expected cost" in sol.to_table()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 500), data=st.data())
def test_more_damage_never_reduces_cost(seed, data):
    case = random_desk(seed)
    net = case.network
    n = net.n_comps
    u_big = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    extra = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    u_small = u_big * extra
    c_small = expected_cost(net, case.scenarios, u_small)
    c_big = expected_cost(net, case.scenarios, u_big)
    assert c_small >= c_big - 1e-8
