import dataclasses

import numpy as np
import pytest

from conftest import DESK6_GAMMA
from ddurso.baseline import run_basic
from ddurso.core import AlgorithmConfig, DduConfig, count_hardening
from ddurso.oracle import solve_exhaustive
from ddurso.pccg import CutPool, ccg_loop, converged, make_cut, relative_gap, run, solve_master
from ddurso.recourse import recourse_template


def test_gap_definitions():
    assert relative_gap(0.0, 5.0) == pytest.approx(5e9)
    assert relative_gap(2.0, 3.0) == pytest.approx(0.5)
    assert relative_gap(1.0, np.inf) == np.inf
    assert converged(0.0, 1e-10, 1e-4)
    assert converged(100.0, 100.005, 1e-4)
    assert not converged(100.0, 100.1, 1e-4)


def check_hygiene(rep, net, cfg):
    lbs = [r.lb for r in rep.trace]
    ubs = [r.ub for r in rep.trace]
    assert all(b >= a - 1e-8 for a, b in zip(lbs, lbs[1:]))
    assert all(b <= a + 1e-8 for a, b in zip(ubs, ubs[1:]))
    assert rep.iterations <= count_hardening(cfg, net) + rep.certifications
    xs = [tuple(r.hardened) for r in rep.trace]
    for i in range(1, len(xs)):
        if xs[i] == xs[i - 1]:
            assert i == len(xs) - 1 or rep.certifications


@pytest.mark.parametrize("engine", ["pccg", "pccg-enhanced", "basic-ccg"])
@pytest.mark.parametrize("key", [(2, 0, 2), (2, 1, 2), (1, 1, 1)])
def test_engines_reach_reference_optimum(desk, engine, key):
    cfg = DduConfig(key[0], key[1], max_hardened=key[2])
    alg = desk.algorithm
    if engine == "basic-ccg":
        rep = run_basic(desk.network, desk.scenarios, cfg, alg)
    else:
        rep = run(desk.network, desk.scenarios, cfg, dataclasses.replace(alg, enhance=engine == "pccg-enhanced"))
    assert rep.engine == engine
    assert rep.gamma == pytest.approx(DESK6_GAMMA[key], rel=1e-6)
    check_hygiene(rep, desk.network, cfg)
    assert rep.termination in ("gap", "repeat")


def test_optimal_plan_matches_oracle(desk):
    cfg = DduConfig(2, 0, max_hardened=2)
    rep = run(desk.network, desk.scenarios, cfg, desk.algorithm)
    assert sorted(rep.hardening.hardened()) == ["L1-2", "L2-5"]
    assert sorted(rep.worst_case.damaged()) == ["L2-3", "L3-4"]
    d = rep.to_dict()
    assert d["hardened"] == ["L1-2", "L2-5"] and "wall_time" not in d
    assert "wall_time" in rep.to_dict(timings=True)


def test_cost_budget_mode_matches_oracle(desk):
    cfg = DduConfig(2, 0, budget=2.5)
    ref = solve_exhaustive(desk.network, desk.scenarios, cfg)
    rep = run(desk.network, desk.scenarios, cfg, desk.algorithm)
    assert rep.gamma == pytest.approx(ref.gamma, rel=1e-6)


def test_zero_budget_terminates_after_repeat(desk):
    cfg = DduConfig(2, 0, max_hardened=0)
    rep = run(desk.network, desk.scenarios, cfg, desk.algorithm)
    assert rep.gamma == pytest.approx(DESK6_GAMMA[(2, 0, 0)], rel=1e-6)
    assert rep.iterations == 1
    assert rep.termination == "gap"


def test_iteration_stream_and_lp_dump(desk, tmp_path):
    seen = []
    alg = dataclasses.replace(desk.algorithm, dump_dir=str(tmp_path))
    rep = run(desk.network, desk.scenarios, DduConfig(2, 0, max_hardened=1), alg, on_iteration=seen.append)
    assert [r.iteration for r in seen] == list(range(1, len(rep.trace) + 1))
    assert "LB" in seen[0].line()
    assert len(list(tmp_path.glob("master_*.lp"))) == len(rep.trace)


def test_parametric_cut_dominates_basic_cut(desk):
    net, scen = desk.network, desk.scenarios
    cfg = DduConfig(2, 1, max_hardened=2)
    alg = desk.algorithm
    tpl = recourse_template(net)
    states = []
    ccg_loop(net, scen, cfg, alg, "parametric", "pccg", on_state=lambda pool, sp: states.append(sp))
    basic = CutPool([make_cut("basic", sp, net, cfg, alg) for sp in states])
    param = CutPool([make_cut("parametric", sp, net, cfg, alg) for sp in states])
    for n in range(1, len(states) + 1):
        _, vb = solve_master(CutPool(basic.cuts[:n]), net, scen, cfg, alg, tpl)
        _, vp = solve_master(CutPool(param.cuts[:n]), net, scen, cfg, alg, tpl)
        assert vp >= vb - 1e-8


def test_iteration_cap_reports_cap(desk):
    alg = AlgorithmConfig(max_iterations=1, gap_tol=1e-8)
    rep = run(desk.network, desk.scenarios, DduConfig(2, 0, max_hardened=2), alg)
    assert rep.termination == "cap"
    assert rep.ub >= DESK6_GAMMA[(2, 0, 2)] - 1e-6
