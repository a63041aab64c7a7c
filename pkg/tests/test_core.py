import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddurso.cases import random_desk
from ddurso.core import (
    AlgorithmConfig,
    CapExceededError,
    ContingencyScenario,
    DduConfig,
    HardeningDecision,
    Line,
    Network,
    Node,
    Scenario,
    ScenarioSet,
    ValidationError,
    check_budget,
    count_hardening,
    count_uncertainty,
    enumerate_uncertainty,
    iter_hardening_vectors,
    iter_uncertainty_vectors,
    membership,
    validate_network,
    validate_scenarios,
)


def test_desk_case_is_valid(desk):
    assert validate_network(desk.network) == []
    assert validate_scenarios(desk.network, desk.scenarios) == []


def test_component_order_lines_then_dgs(desk):
    assert desk.network.component_names == ("L1-2", "L2-3", "L3-4", "L2-5", "L5-6", "DG1", "DG2")


def test_cycle_is_rejected():
    nodes = tuple(Node(f"N{i}") for i in (1, 2, 3))
    lines = (Line("N1", "N2", 0.1, 0.1, 1, 1), Line("N2", "N3", 0.1, 0.1, 1, 1), Line("N3", "N1", 0.1, 0.1, 1, 1))
    probs = validate_network(Network(nodes, "N1", lines))
    assert any("not a tree" in p for p in probs)


def test_disconnected_and_unknown_node_rejected():
    nodes = tuple(Node(f"N{i}") for i in (1, 2, 3, 4))
    lines = (Line("N1", "N2", 0.1, 0.1, 1, 1), Line("N3", "N4", 0.1, 0.1, 1, 1), Line("N3", "N4", 0.1, 0.1, 1, 1))
    assert any("cycle" in p or "disconnected" in p for p in validate_network(Network(nodes, "N1", lines)))
    bad = Network(nodes[:2], "N1", (Line("N1", "N9", 0.1, 0.1, 1, 1),))
    assert any("unknown node" in p for p in validate_network(bad))


def test_probabilities_rejected_unless_normalized():
    s = Scenario(0.4, np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(0))
    with pytest.raises(ValidationError):
        ScenarioSet((s, s))
    norm = ScenarioSet.normalized((s, s))
    assert norm.probabilities.tolist() == [0.5, 0.5]


def test_config_validation():
    with pytest.raises(ValidationError):
        DduConfig(1, 0)
    with pytest.raises(ValidationError):
        DduConfig(1, 0, budget=1.0, max_hardened=1)
    with pytest.raises(ValidationError):
        AlgorithmConfig(gap_tol=0.0)
    with pytest.raises(ValidationError):
        AlgorithmConfig(enhancement_weight=1.0)


def test_count_matches_binomial(desk):
    cfg = DduConfig(2, 1, max_hardened=2)
    x = np.zeros(7, dtype=int)
    assert count_uncertainty(x, cfg, desk.network) == (1 + 5 + 10) * (1 + 2)
    x[[0, 5]] = 1
    assert count_uncertainty(x, cfg, desk.network) == (1 + 4 + 6) * (1 + 1)


def test_enumeration_cap_refuses(desk):
    cfg = DduConfig(2, 1, max_hardened=2)
    with pytest.raises(CapExceededError) as err:
        list(iter_uncertainty_vectors(np.zeros(7, dtype=int), cfg, desk.network, cap=10))
    assert err.value.count == 48


def test_hardening_enumeration(desk):
    cfg = DduConfig(2, 0, max_hardened=2)
    xs = list(iter_hardening_vectors(cfg, desk.network))
    assert len(xs) == count_hardening(cfg, desk.network) == 1 + 7 + 21
    assert len({x.tobytes() for x in xs}) == len(xs)


def test_cost_budget_mode(desk):
    cfg = DduConfig(1, 0, budget=1.5)
    xs = list(iter_hardening_vectors(cfg, desk.network))
    assert len(xs) == 1 + 7
    assert check_budget(HardeningDecision.from_names(desk.network, ["L1-2"]), cfg, desk.network)
    assert not check_budget(HardeningDecision.from_names(desk.network, ["L1-2", "DG1"]), cfg, desk.network)


def test_decision_round_trip(desk):
    net = desk.network
    x = HardeningDecision.from_names(net, ["L2-3", "DG2"])
    assert x.vector(net).tolist() == [0, 1, 0, 0, 0, 0, 1]
    u = ContingencyScenario.from_damaged(net, ["L1-2"])
    assert u.damaged() == ["L1-2"]
    with pytest.raises(ValidationError):
        HardeningDecision({"L1-2": 2}, {}).vector(net)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), data=st.data())
def test_enumeration_is_exactly_the_ddu_set(seed, data):
    case = random_desk(seed % 200)
    net, cfg = case.network, case.ddu
    n = net.n_comps
    x = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), dtype=int)
    xd = HardeningDecision.from_vector(net, x)
    us = [c.vector(net).astype(np.int64) for c in enumerate_uncertainty(xd, cfg, net)]
    keys = {u.tobytes() for u in us}
    assert len(keys) == len(us) == count_uncertainty(x, cfg, net)
    for u in us:
        # hardened components never appear damaged
        assert np.all(u >= x)
    # every binary vector outside the list violates membership
    for bits in range(min(2**n, 256)):
        u = np.array([(bits >> i) & 1 for i in range(n)], dtype=np.int64)
        inside = membership(ContingencyScenario.from_vector(net, u), xd, cfg, net)
        assert inside == (u.tobytes() in keys)
