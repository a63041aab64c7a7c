"""Brute-force reference solver for desk-scale instances."""
from __future__ import annotations

import time

import numpy as np

from .core import (
    CapExceededError,
    ContingencyScenario,
    DduConfig,
    HardeningDecision,
    Network,
    ScenarioSet,
    count_hardening,
    count_uncertainty,
    iter_hardening_vectors,
    iter_uncertainty_vectors,
)
from .pccg import SolveReport
from .recourse import expected_cost, recourse_template


class RecourseMemo:
    """Expected recourse cost keyed by damage state."""

    def __init__(self, net: Network, scenarios: ScenarioSet):
        self.net = net
        self.scenarios = scenarios
        self.tpl = recourse_template(net)
        self.table: dict[bytes, float] = {}
        self.solves = 0

    def __call__(self, u) -> float:
        key = np.asarray(u, dtype=np.int8).tobytes()
        val = self.table.get(key)
        if val is None:
            val = expected_cost(self.net, self.scenarios, u, self.tpl)
            self.table[key] = val
            self.solves += 1
        return val


def inner_max(x, cfg: DduConfig, memo: RecourseMemo, cap_u: int = 4096) -> tuple[float, np.ndarray]:
    best, arg = -np.inf, None
    for u in iter_uncertainty_vectors(x, cfg, memo.net, cap_u):
        v = memo(u)
        if v > best:
            best, arg = v, u
    return best, arg


def solve_exhaustive(
    net: Network,
    scenarios: ScenarioSet,
    cfg: DduConfig,
    cap_x: int = 4096,
    cap_u: int = 4096,
    memo: RecourseMemo | None = None,
) -> SolveReport:
    """Exact min over X of max over U(x) of the expected recourse cost, by enumeration."""
    t0 = time.perf_counter()
    cfg.check_against(net)
    nx = count_hardening(cfg, net)
    if nx > cap_x:
        raise CapExceededError("hardening set", nx, cap_x)
    # the largest U(x) is the one with nothing hardened
    nu = count_uncertainty(np.zeros(net.n_comps, dtype=int), cfg, net)
    if nu > cap_u:
        raise CapExceededError("uncertainty set", nu, cap_u)
    memo = memo or RecourseMemo(net, scenarios)
    best, best_x, best_u = np.inf, None, None
    for x in iter_hardening_vectors(cfg, net, cap_x):
        val, u = inner_max(x, cfg, memo, cap_u)
        if val < best - 1e-12:
            best, best_x, best_u = val, x, u
    return SolveReport(
        engine="oracle",
        hardening=HardeningDecision.from_vector(net, best_x),
        worst_case=ContingencyScenario.from_vector(net, best_u),
        gamma=best,
        expected_load=scenarios.expected_weighted_load(net),
        lb=best,
        ub=best,
        iterations=nx,
        termination="exhaustive",
        wall_time=time.perf_counter() - t0,
    )
