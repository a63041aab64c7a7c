import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DESK6_GAMMA
from ddurso.cases import random_desk
from ddurso.core import AlgorithmConfig, DduConfig
from ddurso.ddu import (
    component_groups,
    condition_anchor,
    emit_ou_block,
    greedy_selection,
    selection_lp,
    solve_block_alone,
    solve_subproblem,
    tie_safe_epsilon,
)
from ddurso.oracle import RecourseMemo, inner_max
from ddurso.recourse import resilience_indices


def test_subproblem_matches_reference_at_no_hardening(desk):
    res = solve_subproblem(desk.network, desk.scenarios, np.zeros(7, dtype=int), DduConfig(2, 0, max_hardened=0))
    assert res.value == pytest.approx(DESK6_GAMMA[(2, 0, 0)], rel=1e-6)
    assert sorted(res.contingency(desk.network).damaged()) == ["L1-2", "L5-6"]
    assert res.audit_gap <= 1e-5 * max(1.0, res.value)


@pytest.mark.parametrize("hardened", [[], ["L1-2"], ["L2-3", "L2-5"], ["L1-2", "DG2"]])
@pytest.mark.parametrize("k", [(1, 0), (2, 1)])
def test_subproblem_matches_enumeration(desk, hardened, k):
    net = desk.network
    cfg = DduConfig(*k, max_hardened=2)
    x = np.array([1 if c in hardened else 0 for c in net.component_names])
    res = solve_subproblem(net, desk.scenarios, x, cfg)
    best, _ = inner_max(x, cfg, RecourseMemo(net, desk.scenarios))
    assert res.value == pytest.approx(best, rel=1e-6, abs=1e-6)
    assert np.all(res.u >= x)


def test_enhanced_subproblem_reports_unperturbed_value(desk):
    net = desk.network
    cfg = DduConfig(2, 1, max_hardened=2)
    ind = resilience_indices(net, desk.scenarios)
    xi = np.array([ind[c] for c in net.component_names])
    x = np.zeros(7, dtype=int)
    plain = solve_subproblem(net, desk.scenarios, x, cfg)
    enh = solve_subproblem(net, desk.scenarios, x, cfg, xi=xi)
    assert enh.enhanced
    assert enh.value == pytest.approx(plain.value, rel=1e-6)


def test_small_dual_bound_is_repaired_or_reported(desk):
    net = desk.network
    cfg = DduConfig(2, 0, max_hardened=0)
    alg = AlgorithmConfig(dual_bound_scale=1e-3, audit_retries=12)
    res = solve_subproblem(net, desk.scenarios, np.zeros(7, dtype=int), cfg, alg)
    assert res.attempts > 1
    assert res.value == pytest.approx(DESK6_GAMMA[(2, 0, 0)], rel=1e-6)
    from ddurso.backend import SolverError

    with pytest.raises(SolverError, match="dual bound too small"):
        solve_subproblem(net, desk.scenarios, np.zeros(7, dtype=int), cfg, AlgorithmConfig(dual_bound_scale=1e-3, audit_retries=0))


def brute_max(c, x, net, cfg):
    best = -np.inf
    for bits in itertools.product((0, 1), repeat=net.n_comps):
        u = np.array(bits)
        if np.any(u < x):
            continue
        ok = all((1 - u[g]).sum() <= k for g, k in zip(component_groups(net), (cfg.k_lines, cfg.k_dgs)))
        if ok:
            best = max(best, float(c @ u))
    return best


def _instance(seed, draw):
    case = random_desk(seed)
    net = case.network
    n = net.n_comps
    c = np.array(draw(st.lists(st.floats(-1, 1, allow_nan=False), min_size=n, max_size=n)))
    x = np.array(draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    return case, net, c, x


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 300), data=st.data())
def test_greedy_selection_is_exact(seed, data):
    case, net, c, x = _instance(seed, data.draw)
    u, val = greedy_selection(c, x, net, case.ddu)
    assert val == pytest.approx(brute_max(c, x, net, case.ddu), abs=1e-12)
    assert np.all(u >= x)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 300), data=st.data())
def test_selection_relaxation_is_integral(seed, data):
    case, net, c, x = _instance(seed, data.draw)
    u = selection_lp(c, x, net, case.ddu)
    assert np.abs(u - np.rint(u)).max(initial=0) <= 1e-6
    assert float(c @ u) == pytest.approx(greedy_selection(c, x, net, case.ddu)[1], abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 300), data=st.data())
def test_kkt_block_pins_the_argmax(seed, data):
    case, net, c, x = _instance(seed, data.draw)
    if not len(c):
        return
    block = emit_ou_block(c, net, case.ddu)
    best = greedy_selection(block.c, x, net, case.ddu)[1]
    lo = solve_block_alone(block, x, "min")
    hi = solve_block_alone(block, x, "max")
    assert float(block.c @ lo) == pytest.approx(best, abs=1e-6)
    assert float(block.c @ hi) == pytest.approx(best, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 300), data=st.data())
def test_conditioned_anchor_shrinks_the_argmax(seed, data):
    case, net, c, x = _instance(seed, data.draw)
    if not len(c):
        return
    worst, _ = greedy_selection(c, x, net, case.ddu)
    cc = condition_anchor(c, worst, 1e-4)
    assert np.all(np.abs(cc) >= 1e-4 - 1e-15)
    # the worst case stays optimal and becomes the unique maximizer
    assert float(cc @ worst) == pytest.approx(brute_max(cc, x, net, case.ddu), abs=1e-12)
    for bits in itertools.product((0, 1), repeat=net.n_comps):
        u = np.array(bits)
        if np.any(u < x) or not all((1 - u[g]).sum() <= k for g, k in zip(component_groups(net), (case.ddu.k_lines, case.ddu.k_dgs))):
            continue
        if not np.array_equal(u, worst):
            assert cc @ u < cc @ worst


def test_tie_safe_epsilon_keeps_order():
    c = np.array([-0.5, -0.5, -0.2, 0.0, -0.9])
    groups = [np.arange(5)]
    eps = tie_safe_epsilon(c, groups)
    assert eps < 0
    xi = np.array([1.0, 0.2, 0.0, 0.5, 0.3])
    ct = c + eps * xi
    for i, j in itertools.combinations(range(5), 2):
        if abs(c[i] - c[j]) > 1e-3:
            assert np.sign(ct[i] - ct[j]) == np.sign(c[i] - c[j])
    # the tie between the first two is broken towards the larger index
    assert ct[0] < ct[1]
