import numpy as np
import pytest

from conftest import DESK6_GAMMA, two_bus
from ddurso.core import CapExceededError, DduConfig, iter_uncertainty_vectors
from ddurso.oracle import RecourseMemo, inner_max, solve_exhaustive
from ddurso.recourse import expected_cost


def test_no_damage_no_budget_is_nominal_cost(desk):
    rep = solve_exhaustive(desk.network, desk.scenarios, DduConfig(0, 0, max_hardened=0))
    assert rep.gamma == pytest.approx(expected_cost(desk.network, desk.scenarios, np.ones(7)))


def test_single_line_is_hardened():
    case = two_bus()
    rep = solve_exhaustive(case.network, case.scenarios, DduConfig(1, 0, max_hardened=1))
    assert rep.hardening.hardened() == ["L1-2"]
    assert rep.gamma == pytest.approx(0.0, abs=1e-9)
    assert rep.termination == "exhaustive"


def test_reference_values(desk):
    for key, val in DESK6_GAMMA.items():
        rep = solve_exhaustive(desk.network, desk.scenarios, DduConfig(key[0], key[1], max_hardened=key[2]))
        assert rep.gamma == pytest.approx(val, rel=1e-9)


def test_budget_monotonicity(desk):
    vals = [solve_exhaustive(desk.network, desk.scenarios, DduConfig(2, 1, max_hardened=b)).gamma for b in range(4)]
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_inner_max_bounds_every_member(desk):
    memo = RecourseMemo(desk.network, desk.scenarios)
    cfg = DduConfig(1, 1, max_hardened=1)
    x = np.array([0, 1, 0, 0, 0, 0, 0])
    best, arg = inner_max(x, cfg, memo)
    for u in iter_uncertainty_vectors(x, cfg, desk.network):
        assert best >= memo(u) - 1e-12
    assert memo.solves == len(memo.table)


def test_cap_refusal(desk):
    with pytest.raises(CapExceededError):
        solve_exhaustive(desk.network, desk.scenarios, DduConfig(2, 1, max_hardened=2), cap_x=5)
    with pytest.raises(CapExceededError):
        solve_exhaustive(desk.network, desk.scenarios, DduConfig(2, 1, max_hardened=2), cap_u=5)
