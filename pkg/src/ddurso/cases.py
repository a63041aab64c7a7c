"""Built-in test systems, a load-scenario sampler and a random desk-instance generator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DG,
    ESS,
    AlgorithmConfig,
    DduConfig,
    Line,
    Network,
    Node,
    Scenario,
    ScenarioSet,
)


@dataclass(frozen=True)
class Case:
    network: Network
    scenarios: ScenarioSet
    ddu: DduConfig
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    notes: str = ""


def sample_scenarios(
    net: Network,
    base_pd: np.ndarray,
    base_qd: np.ndarray,
    base_e0: np.ndarray,
    n_scenarios: int,
    seed: int = 0,
    spread: float = 0.2,
) -> ScenarioSet:
    """Equiprobable scenarios with loads and initial storage drawn uniformly within +/- spread.

    Initial storage is clipped at each unit's nominal capacity.
    """
    rng = np.random.default_rng(seed)
    base_pd = np.asarray(base_pd, dtype=float)
    base_qd = np.asarray(base_qd, dtype=float)
    base_e0 = np.asarray(base_e0, dtype=float)
    caps = np.array([e.capacity for e in net.ess], dtype=float)
    out = []
    for _ in range(n_scenarios):
        f = rng.uniform(1 - spread, 1 + spread, size=base_pd.shape)
        e0 = np.minimum(base_e0 * rng.uniform(1 - spread, 1 + spread, size=base_e0.shape), caps)
        out.append(Scenario(1.0 / n_scenarios, base_pd * f, base_qd * f, e0))
    # the probabilities above sum to one only up to rounding
    return ScenarioSet.normalized(out)


def desk6() -> Case:
    """Six-bus radial feeder with two vulnerable DGs and one ESS, used as the reference desk case."""
    names = [f"N{i}" for i in range(1, 7)]
    rho = {"N1": 1.0, "N2": 1.0, "N3": 1.5, "N4": 1.0, "N5": 2.0, "N6": 1.2}
    nodes = tuple(Node(n, rho[n], 0.95, 1.05) for n in names)
    lines = (
        Line("N1", "N2", 0.010, 0.008, 600.0, 400.0),
        Line("N2", "N3", 0.020, 0.015, 300.0, 200.0),
        Line("N3", "N4", 0.030, 0.020, 200.0, 150.0),
        Line("N2", "N5", 0.025, 0.020, 300.0, 200.0),
        Line("N5", "N6", 0.030, 0.025, 200.0, 150.0),
    )
    load_p = np.array([0.0, 80.0, 120.0, 60.0, 100.0, 90.0])
    load_q = 0.5 * load_p
    dgs = (
        DG("SUB", "N1", 600.0, theta_min=-math.acos(0.8), theta_max=math.acos(0.8), cost=0.0),
        DG("DG1", "N4", 50.0),
        DG("DG2", "N6", 70.0),
    )
    ess = (ESS("ESS1", "N3", 40.0, 20.0, eta=0.95, capacity=60.0),)
    net = Network(
        nodes=nodes,
        substation="N1",
        lines=lines,
        dgs=dgs,
        ess=ess,
        vulnerable_lines=tuple(ln.name for ln in lines),
        vulnerable_dgs=("DG1", "DG2"),
        u0=1.0,
        base_kva=1000.0,
        n_periods=2,
        name="desk6",
    )
    profile = np.array([1.0, 0.85])
    pd = np.outer(load_p, profile)
    qd = np.outer(load_q, profile)
    scen = sample_scenarios(net, pd, qd, np.array([50.0]), 3, seed=6)
    notes = "Synthetic six-bus feeder; every number is defined here and nowhere else."
    return Case(net, scen, DduConfig(k_lines=2, k_dgs=0, max_hardened=2), AlgorithmConfig(gap_tol=1e-8), notes)


# IEEE 33-bus feeder: (from, to, R ohm, X ohm)
IEEE33_BRANCHES = (
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864), (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188), (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400), (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450), (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565), (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373), (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337), (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630), (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
)

# nodal loads (kW, kvar), node 1 is the substation
IEEE33_LOADS = {
    2: (100, 60), 3: (90, 40), 4: (120, 80), 5: (60, 30), 6: (60, 20), 7: (200, 100), 8: (200, 100),
    9: (60, 20), 10: (60, 20), 11: (45, 30), 12: (60, 35), 13: (60, 35), 14: (120, 80), 15: (60, 10),
    16: (60, 20), 17: (60, 20), 18: (90, 40), 19: (90, 40), 20: (90, 40), 21: (90, 40), 22: (90, 40),
    23: (90, 50), 24: (420, 200), 25: (420, 200), 26: (60, 25), 27: (60, 25), 28: (60, 20), 29: (120, 70),
    30: (200, 600), 31: (150, 70), 32: (210, 100), 33: (60, 40),
}

IEEE33_DG_NODES = (4, 11, 14, 18, 33)
IEEE33_ESS_NODES = (21, 25, 30)


def ieee33(
    n_periods: int = 1,
    n_scenarios: int = 2,
    seed: int = 33,
    k_lines: int = 5,
    k_dgs: int = 1,
    max_hardened: int = 4,
) -> Case:
    """Reconstructed 33-bus feeder with five 500 kW DGs and three 500 kW / 1500 kWh ESS units."""
    kv, mva = 12.66, 10.0
    zbase = kv**2 / mva
    base_kva = mva * 1000.0
    n = 33
    nodes = tuple(Node(f"N{i}", 1.0, 0.90, 1.05) for i in range(1, n + 1))
    lines = tuple(Line(f"N{a}", f"N{b}", r / zbase, x / zbase, 5000.0, 5000.0) for a, b, r, x in IEEE33_BRANCHES)
    total_p = sum(p for p, _ in IEEE33_LOADS.values())
    dgs = (DG("SUB", "N1", 1.5 * total_p, theta_min=-math.acos(0.8), theta_max=math.acos(0.8), cost=0.0),) + tuple(
        DG(f"DG{i + 1}", f"N{b}", 500.0) for i, b in enumerate(IEEE33_DG_NODES)
    )
    ess = tuple(ESS(f"ESS{i + 1}", f"N{b}", 500.0, 250.0, eta=0.95, capacity=1800.0) for i, b in enumerate(IEEE33_ESS_NODES))
    net = Network(
        nodes=nodes,
        substation="N1",
        lines=lines,
        dgs=dgs,
        ess=ess,
        vulnerable_lines=tuple(ln.name for ln in lines),
        vulnerable_dgs=tuple(g.name for g in dgs[1:]),
        u0=1.0,
        base_kva=base_kva,
        n_periods=n_periods,
        name="ieee33",
    )
    load_p = np.array([IEEE33_LOADS.get(i, (0, 0))[0] for i in range(1, n + 1)], dtype=float)
    load_q = np.array([IEEE33_LOADS.get(i, (0, 0))[1] for i in range(1, n + 1)], dtype=float)
    profile = np.linspace(1.0, 0.8, n_periods) if n_periods > 1 else np.ones(1)
    scen = sample_scenarios(
        net, np.outer(load_p, profile), np.outer(load_q, profile), np.full(len(ess), 1500.0), n_scenarios, seed
    )
    notes = (
        "Loads and impedances from the standard IEEE 33-bus feeder; DG/ESS ratings per the case description. "
        "ESS placement, priority weights, horizon, scenario draws and flow ratings are reconstructed "
        "and non-authoritative."
    )
    return Case(net, scen, DduConfig(k_lines=k_lines, k_dgs=k_dgs, max_hardened=max_hardened), AlgorithmConfig(), notes)


def random_desk(seed: int) -> Case:
    """Random small instance: <= 8 buses, <= 6 vulnerable lines, <= 2 vulnerable DGs, N_S <= 3, T <= 3."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    names = [f"N{i}" for i in range(1, n + 1)]
    nodes = tuple(
        Node(nm, 1.0 if i == 0 else float(rng.choice([0.5, 1.0, 1.5, 2.0, 3.0])), 0.95, 1.05)
        for i, nm in enumerate(names)
    )
    lines = []
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        lines.append(
            Line(
                names[parent],
                names[i],
                float(rng.uniform(0.005, 0.04)),
                float(rng.uniform(0.005, 0.04)),
                float(rng.choice([150.0, 250.0, 400.0])),
                float(rng.choice([100.0, 200.0, 300.0])),
                cost=float(rng.choice([1.0, 2.0])),
            )
        )
    lines = tuple(lines)
    n_vl = int(rng.integers(1, min(6, len(lines)) + 1))
    vul_lines = tuple(lines[i].name for i in sorted(rng.choice(len(lines), n_vl, replace=False)))
    T = int(rng.integers(1, 4))
    load_p = np.concatenate([[0.0], rng.uniform(20.0, 120.0, n - 1).round(1)])
    load_q = (load_p * rng.uniform(0.2, 0.6, n)).round(1)
    total = load_p.sum()
    n_dg = int(rng.integers(0, 3))
    dg_nodes = rng.choice(np.arange(1, n), size=min(n_dg, n - 1), replace=False) if n_dg else []
    dgs = [DG("SUB", names[0], float(1.2 * total), theta_min=-math.acos(0.8), theta_max=math.acos(0.8), cost=0.0)]
    for i, j in enumerate(dg_nodes):
        dgs.append(DG(f"DG{i + 1}", names[int(j)], round(float(rng.uniform(20.0, 80.0)), 1)))
    n_vdg = int(rng.integers(0, len(dgs)))  # vulnerable DGs among the non-substation ones
    vul_dgs = tuple(g.name for g in dgs[1 : 1 + n_vdg])
    ess = []
    if rng.random() < 0.5:
        j = int(rng.integers(1, n))
        cap = round(float(rng.uniform(20.0, 80.0)), 1)
        ess.append(ESS("ESS1", names[j], round(float(rng.uniform(10.0, 40.0)), 1), 15.0, 0.9, cap))
    net = Network(
        nodes=nodes,
        substation=names[0],
        lines=lines,
        dgs=tuple(dgs),
        ess=tuple(ess),
        vulnerable_lines=vul_lines,
        vulnerable_dgs=vul_dgs,
        base_kva=1000.0,
        n_periods=T,
        name=f"random{seed}",
    )
    profile = rng.uniform(0.8, 1.0, T)
    n_s = int(rng.integers(1, 4))
    e0 = np.array([0.8 * e.capacity for e in ess])
    scen = sample_scenarios(net, np.outer(load_p, profile), np.outer(load_q, profile), e0, n_s, seed=seed + 1)
    k_l = int(rng.integers(0, min(2, n_vl) + 1))
    k_g = int(rng.integers(0, min(1, len(vul_dgs)) + 1))
    ddu = DduConfig(k_lines=k_l, k_dgs=k_g, max_hardened=int(rng.integers(0, 3)))
    return Case(net, scen, ddu, AlgorithmConfig(gap_tol=1e-8), f"random desk instance, seed {seed}")
