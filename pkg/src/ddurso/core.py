"""Problem data model: radial network, stochastic scenarios, decisions and configs.

Every type here is immutable once constructed. Component vectors used by the
engines follow one fixed ordering: vulnerable lines (network order) followed
by vulnerable DGs (network order).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Iterator, Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs violate a data-model invariant."""


class CapExceededError(RuntimeError):
    """Raised when an enumeration would exceed its configured cap."""

    def __init__(self, what: str, count: int, cap: int):
        super().__init__(f"{what}: {count} elements exceeds cap {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class Node:
    name: str
    rho: float = 1.0
    u_min: float = 0.95
    u_max: float = 1.05


@dataclass(frozen=True)
class Line:
    from_node: str
    to_node: str
    r: float
    x: float
    p_max: float
    q_max: float
    cost: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", f"L{_short(self.from_node)}-{_short(self.to_node)}")


@dataclass(frozen=True)
class DG:
    name: str
    node: str
    p_max: float
    p_min: float = 0.0
    theta_min: float = -math.acos(0.9)
    theta_max: float = math.acos(0.9)
    cost: float = 1.0


@dataclass(frozen=True)
class ESS:
    name: str
    node: str
    p_max: float
    q_max: float
    eta: float = 0.95
    capacity: float = 0.0


def _short(node: str) -> str:
    return node[1:] if node.startswith("N") and node[1:].isdigit() else node


@dataclass(frozen=True)
class Network:
    """Radial distribution grid.

    Flows, DG and ESS ratings are in kW/kvar; r, x are per unit on
    ``base_kva``. The substation import is modelled as a (never vulnerable)
    DG placed at the root node.
    """

    nodes: tuple[Node, ...]
    substation: str
    lines: tuple[Line, ...]
    dgs: tuple[DG, ...] = ()
    ess: tuple[ESS, ...] = ()
    vulnerable_lines: tuple[str, ...] = ()
    vulnerable_dgs: tuple[str, ...] = ()
    u0: float = 1.0
    base_kva: float = 1000.0
    n_periods: int = 1
    name: str = "network"

    def __post_init__(self):
        for attr in ("nodes", "lines", "dgs", "ess", "vulnerable_lines", "vulnerable_dgs"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {n.name: i for i, n in enumerate(self.nodes)}

    @cached_property
    def line_index(self) -> dict[str, int]:
        return {ln.name: i for i, ln in enumerate(self.lines)}

    @cached_property
    def dg_index(self) -> dict[str, int]:
        return {g.name: i for i, g in enumerate(self.dgs)}

    @cached_property
    def vulnerable_line_idx(self) -> np.ndarray:
        """Line indices of the vulnerable lines, in network order."""
        vul = set(self.vulnerable_lines)
        return np.array([i for i, ln in enumerate(self.lines) if ln.name in vul], dtype=int)

    @cached_property
    def vulnerable_dg_idx(self) -> np.ndarray:
        vul = set(self.vulnerable_dgs)
        return np.array([i for i, g in enumerate(self.dgs) if g.name in vul], dtype=int)

    @property
    def n_line_comps(self) -> int:
        return len(self.vulnerable_line_idx)

    @property
    def n_dg_comps(self) -> int:
        return len(self.vulnerable_dg_idx)

    @property
    def n_comps(self) -> int:
        return self.n_line_comps + self.n_dg_comps

    @cached_property
    def component_names(self) -> tuple[str, ...]:
        return tuple(self.lines[i].name for i in self.vulnerable_line_idx) + tuple(
            self.dgs[i].name for i in self.vulnerable_dg_idx
        )

    @cached_property
    def component_costs(self) -> np.ndarray:
        return np.array(
            [self.lines[i].cost for i in self.vulnerable_line_idx]
            + [self.dgs[i].cost for i in self.vulnerable_dg_idx],
            dtype=float,
        )


@dataclass(frozen=True)
class Scenario:
    """One stochastic load/storage realization.

    ``pd``/``qd`` have shape (n_nodes, n_periods); ``e0`` has one entry per ESS.
    """

    probability: float
    pd: np.ndarray
    qd: np.ndarray
    e0: np.ndarray

    def __post_init__(self):
        for attr in ("pd", "qd", "e0"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple[Scenario, ...]

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise ValidationError("scenario set is empty")
        probs = self.probabilities
        if np.any(probs <= 0):
            raise ValidationError("scenario probabilities must be positive")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValidationError(
                f"scenario probabilities sum to {probs.sum():.12g}, expected 1 "
                "(use ScenarioSet.normalized to rescale explicitly)"
            )

    @classmethod
    def normalized(cls, scenarios: Sequence[Scenario]) -> "ScenarioSet":
        """Build a set after explicitly rescaling probabilities to sum to one."""
        total = sum(s.probability for s in scenarios)
        if total <= 0:
            raise ValidationError("cannot normalize nonpositive probability mass")
        return cls(tuple(Scenario(s.probability / total, s.pd, s.qd, s.e0) for s in scenarios))

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios], dtype=float)

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, i: int) -> Scenario:
        return self.scenarios[i]

    def expected_weighted_load(self, net: Network) -> float:
        rho = np.array([n.rho for n in net.nodes])
        return float(sum(s.probability * (rho @ s.pd.sum(axis=1)) for s in self.scenarios))


def _binary_map(values: Mapping[str, int], keys: Sequence[str], what: str) -> dict[str, int]:
    if set(values) != set(keys):
        missing = sorted(set(keys) - set(values))
        extra = sorted(set(values) - set(keys))
        raise ValidationError(f"{what} index mismatch: missing={missing} unexpected={extra}")
    out = {}
    for k in keys:
        v = int(round(values[k]))
        if v not in (0, 1):
            raise ValidationError(f"{what}[{k}] = {values[k]!r} is not binary")
        out[k] = v
    return out


@dataclass(frozen=True)
class HardeningDecision:
    """Binary hardening plan: ``z`` over vulnerable lines, ``r`` over vulnerable DGs (1 = hardened)."""

    z: Mapping[str, int]
    r: Mapping[str, int]

    @classmethod
    def none(cls, net: Network) -> "HardeningDecision":
        return cls.from_vector(net, np.zeros(net.n_comps))

    @classmethod
    def from_vector(cls, net: Network, vec) -> "HardeningDecision":
        vec = np.rint(np.asarray(vec, dtype=float)).astype(int)
        names = net.component_names
        nl = net.n_line_comps
        return cls(dict(zip(names[:nl], vec[:nl].tolist())), dict(zip(names[nl:], vec[nl:].tolist())))

    @classmethod
    def from_names(cls, net: Network, hardened: Sequence[str]) -> "HardeningDecision":
        unknown = set(hardened) - set(net.component_names)
        if unknown:
            raise ValidationError(f"not vulnerable components: {sorted(unknown)}")
        return cls.from_vector(net, [1 if c in hardened else 0 for c in net.component_names])

    def vector(self, net: Network) -> np.ndarray:
        names = net.component_names
        nl = net.n_line_comps
        z = _binary_map(self.z, names[:nl], "z")
        r = _binary_map(self.r, names[nl:], "r")
        return np.array([z[n] for n in names[:nl]] + [r[n] for n in names[nl:]], dtype=int)

    def hardened(self) -> list[str]:
        return [k for k, v in {**self.z, **self.r}.items() if v]


@dataclass(frozen=True)
class ContingencyScenario:
    """Damage state: ``omega`` over vulnerable lines, ``nu`` over vulnerable DGs (0 = damaged)."""

    omega: Mapping[str, int]
    nu: Mapping[str, int]

    @classmethod
    def intact(cls, net: Network) -> "ContingencyScenario":
        return cls.from_vector(net, np.ones(net.n_comps))

    @classmethod
    def from_vector(cls, net: Network, vec) -> "ContingencyScenario":
        vec = np.rint(np.asarray(vec, dtype=float)).astype(int)
        names = net.component_names
        nl = net.n_line_comps
        return cls(dict(zip(names[:nl], vec[:nl].tolist())), dict(zip(names[nl:], vec[nl:].tolist())))

    @classmethod
    def from_damaged(cls, net: Network, damaged: Sequence[str]) -> "ContingencyScenario":
        unknown = set(damaged) - set(net.component_names)
        if unknown:
            raise ValidationError(f"not vulnerable components: {sorted(unknown)}")
        return cls.from_vector(net, [0 if c in damaged else 1 for c in net.component_names])

    def vector(self, net: Network) -> np.ndarray:
        names = net.component_names
        nl = net.n_line_comps
        om = _binary_map(self.omega, names[:nl], "omega")
        nu = _binary_map(self.nu, names[nl:], "nu")
        return np.array([om[n] for n in names[:nl]] + [nu[n] for n in names[nl:]], dtype=int)

    def damaged(self) -> list[str]:
        return [k for k, v in {**self.omega, **self.nu}.items() if not v]


@dataclass(frozen=True)
class DduConfig:
    """N-k damage limits and the hardening budget.

    Exactly one of ``budget`` (cost mode) or ``max_hardened`` (cardinality
    mode) is set.
    """

    k_lines: int
    k_dgs: int = 0
    budget: float | None = None
    max_hardened: int | None = None

    def __post_init__(self):
        if (self.budget is None) == (self.max_hardened is None):
            raise ValidationError("set exactly one of budget or max_hardened")
        if self.k_lines < 0 or self.k_dgs < 0:
            raise ValidationError("damage limits must be nonnegative")
        if self.budget is not None and self.budget < 0:
            raise ValidationError("budget must be nonnegative")
        if self.max_hardened is not None and self.max_hardened < 0:
            raise ValidationError("max_hardened must be nonnegative")

    @property
    def cardinality_mode(self) -> bool:
        return self.max_hardened is not None

    def check_against(self, net: Network) -> None:
        if self.k_lines > net.n_line_comps:
            raise ValidationError(f"k_lines={self.k_lines} exceeds |B^v|={net.n_line_comps}")
        if self.k_dgs > net.n_dg_comps:
            raise ValidationError(f"k_dgs={self.k_dgs} exceeds |N^vdg|={net.n_dg_comps}")


ENGINES = ("pccg", "pccg-enhanced", "basic-ccg", "oracle")


@dataclass(frozen=True)
class AlgorithmConfig:
    """Solver knobs shared by the decomposition engines.

    Big-M values left as ``None`` are derived from the data. ``dual_bound_scale``
    multiplies the derived dual bounds of the subproblem; it doubles
    on every failed primal audit, up to ``audit_retries`` times.
    """

    gap_tol: float = 1e-4
    max_iterations: int = 200
    dual_bound_scale: float = 4.0
    comp_bigm: float | None = None
    volt_bigm: float | None = None
    enhance: bool = False
    enhancement_weight: float | None = None
    anchor: str = "raw"
    anchor_margin: float = 1e-4
    seed: int = 0
    threads: int = 1
    mip_rel_gap: float = 1e-9
    time_limit: float | None = None
    audit_retries: int = 4
    debug_audit: bool = False
    dump_dir: str | None = None

    def __post_init__(self):
        if self.gap_tol <= 0:
            raise ValidationError("gap_tol must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        for name in ("dual_bound_scale", "comp_bigm", "volt_bigm"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.enhancement_weight is not None and self.enhancement_weight >= 0:
            raise ValidationError("enhancement_weight must be negative")
        if not 0.0 <= self.anchor_margin < 0.5:
            raise ValidationError("anchor_margin must lie in [0, 0.5)")
        if self.anchor not in ("raw", "modified"):
            raise ValidationError("anchor must be 'raw' or 'modified'")


# -- operations ---------------------------------------------------------------


def validate_network(net: Network) -> list[str]:
    """Return a description of every violated Network invariant (empty if valid)."""
    problems: list[str] = []
    names = [n.name for n in net.nodes]
    if len(set(names)) != len(names):
        problems.append("duplicate node names")
    idx = {n: i for i, n in enumerate(names)}
    if net.substation not in idx:
        problems.append(f"substation {net.substation!r} is not a node")
    if len({ln.name for ln in net.lines}) != len(net.lines):
        problems.append("duplicate line names")

    for ln in net.lines:
        for end in (ln.from_node, ln.to_node):
            if end not in idx:
                problems.append(f"line {ln.name}: unknown node {end!r}")
        for attr in ("r", "x", "p_max", "q_max", "cost"):
            if getattr(ln, attr) < 0:
                problems.append(f"line {ln.name}: negative {attr}")

    if len(net.lines) != len(net.nodes) - 1:
        problems.append(
            f"not a tree: {len(net.lines)} lines for {len(net.nodes)} nodes (expected {len(net.nodes) - 1})"
        )
    elif net.substation in idx and all(ln.from_node in idx and ln.to_node in idx for ln in net.lines):
        parent = list(range(len(names)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for ln in net.lines:
            a, b = find(idx[ln.from_node]), find(idx[ln.to_node])
            if a == b:
                problems.append(f"not a tree: line {ln.name} closes a cycle")
                break
            parent[a] = b
        else:
            if len({find(i) for i in range(len(names))}) != 1:
                problems.append("not a tree: network is disconnected")

    line_names = {ln.name for ln in net.lines}
    for v in net.vulnerable_lines:
        if v not in line_names:
            problems.append(f"vulnerable line {v!r} is not a line")
    dg_names = [g.name for g in net.dgs]
    if len(set(dg_names)) != len(dg_names):
        problems.append("duplicate DG names")
    for v in net.vulnerable_dgs:
        if v not in dg_names:
            problems.append(f"vulnerable DG {v!r} is not a DG")

    for g in net.dgs:
        if g.node not in idx:
            problems.append(f"DG {g.name}: unknown node {g.node!r}")
        if g.p_max < 0 or g.p_min < 0 or g.cost < 0:
            problems.append(f"DG {g.name}: negative rating or cost")
        if g.p_min > g.p_max:
            problems.append(f"DG {g.name}: p_min > p_max")
        if g.theta_min > g.theta_max:
            problems.append(f"DG {g.name}: theta_min > theta_max")
        if not (-math.pi / 2 < g.theta_min and g.theta_max < math.pi / 2):
            problems.append(f"DG {g.name}: power-factor angles outside (-pi/2, pi/2)")
    for e in net.ess:
        if e.node not in idx:
            problems.append(f"ESS {e.name}: unknown node {e.node!r}")
        if e.p_max < 0 or e.q_max < 0 or e.capacity < 0:
            problems.append(f"ESS {e.name}: negative rating or capacity")
        if not (0 < e.eta <= 1):
            problems.append(f"ESS {e.name}: discharge efficiency outside (0, 1]")
    for n in net.nodes:
        if n.rho < 0:
            problems.append(f"node {n.name}: negative priority weight")
        if n.u_min > n.u_max:
            problems.append(f"node {n.name}: u_min > u_max")
    if net.u0 <= 0 or net.base_kva <= 0:
        problems.append("u0 and base_kva must be positive")
    if net.n_periods < 1:
        problems.append("n_periods must be >= 1")
    return problems


def validate_scenarios(net: Network, scenarios: ScenarioSet) -> list[str]:
    problems = []
    shape = (len(net.nodes), net.n_periods)
    caps = np.array([e.capacity for e in net.ess])
    for s_id, s in enumerate(scenarios):
        if s.pd.shape != shape or s.qd.shape != shape:
            problems.append(f"scenario {s_id}: load arrays must have shape {shape}")
            continue
        if s.e0.shape != (len(net.ess),):
            problems.append(f"scenario {s_id}: e0 must have {len(net.ess)} entries")
            continue
        if np.any(s.pd < 0) or np.any(s.qd < 0) or np.any(s.e0 < 0):
            problems.append(f"scenario {s_id}: negative load or storage")
        if np.any(s.e0 > caps + 1e-9):
            problems.append(f"scenario {s_id}: initial storage exceeds ESS capacity")
    return problems


def check_budget(x: HardeningDecision, cfg: DduConfig, net: Network) -> bool:
    vec = x.vector(net)
    if cfg.cardinality_mode:
        return int(vec.sum()) <= cfg.max_hardened
    return float(net.component_costs @ vec) <= cfg.budget + 1e-9


def membership(u: ContingencyScenario, x: HardeningDecision, cfg: DduConfig, net: Network) -> bool:
    """True iff ``u`` lies in the decision-dependent set U(x)."""
    uv, xv = u.vector(net), x.vector(net)
    nl = net.n_line_comps
    if (1 - uv[:nl]).sum() > cfg.k_lines or (1 - uv[nl:]).sum() > cfg.k_dgs:
        return False
    return bool(np.all(uv >= xv))


def count_uncertainty(x_vec, cfg: DduConfig, net: Network) -> int:
    x_vec = np.asarray(x_vec)
    nl = net.n_line_comps
    free_l = int(nl - x_vec[:nl].sum())
    free_g = int(net.n_dg_comps - x_vec[nl:].sum())
    cl = sum(math.comb(free_l, k) for k in range(min(cfg.k_lines, free_l) + 1))
    cg = sum(math.comb(free_g, k) for k in range(min(cfg.k_dgs, free_g) + 1))
    return cl * cg


def iter_uncertainty_vectors(x_vec, cfg: DduConfig, net: Network, cap: int | None = 100_000) -> Iterator[np.ndarray]:
    """Yield every u in U(x) as a 0/1 component vector, each exactly once."""
    x_vec = np.asarray(x_vec, dtype=int)
    count = count_uncertainty(x_vec, cfg, net)
    if cap is not None and count > cap:
        raise CapExceededError("uncertainty set", count, cap)
    nl = net.n_line_comps
    free_l = [i for i in range(nl) if not x_vec[i]]
    free_g = [nl + i for i in range(net.n_dg_comps) if not x_vec[nl + i]]
    line_sets = [c for k in range(min(cfg.k_lines, len(free_l)) + 1) for c in combinations(free_l, k)]
    dg_sets = [c for k in range(min(cfg.k_dgs, len(free_g)) + 1) for c in combinations(free_g, k)]
    for dl in line_sets:
        for dg in dg_sets:
            u = np.ones(net.n_comps, dtype=int)
            u[list(dl) + list(dg)] = 0
            yield u


def enumerate_uncertainty(
    x: HardeningDecision, cfg: DduConfig, net: Network, cap: int | None = 100_000
) -> Iterator[ContingencyScenario]:
    for u in iter_uncertainty_vectors(x.vector(net), cfg, net, cap):
        yield ContingencyScenario.from_vector(net, u)


def iter_hardening_vectors(cfg: DduConfig, net: Network, cap: int | None = 4096) -> Iterator[np.ndarray]:
    """Yield every budget-feasible hardening vector."""
    n = net.n_comps
    if cfg.cardinality_mode:
        kmax = min(cfg.max_hardened, n)
        count = sum(math.comb(n, k) for k in range(kmax + 1))
        if cap is not None and count > cap:
            raise CapExceededError("hardening set", count, cap)
        for k in range(kmax + 1):
            for c in combinations(range(n), k):
                v = np.zeros(n, dtype=int)
                v[list(c)] = 1
                yield v
        return
    if cap is not None and 2**n > cap * 64:
        raise CapExceededError("hardening candidates", 2**n, cap * 64)
    costs = net.component_costs
    found = 0
    for k in range(n + 1):
        for c in combinations(range(n), k):
            if costs[list(c)].sum() <= cfg.budget + 1e-9:
                found += 1
                if cap is not None and found > cap:
                    raise CapExceededError("hardening set", found, cap)
                v = np.zeros(n, dtype=int)
                v[list(c)] = 1
                yield v


def count_hardening(cfg: DduConfig, net: Network) -> int:
    if cfg.cardinality_mode:
        return sum(math.comb(net.n_comps, k) for k in range(min(cfg.max_hardened, net.n_comps) + 1))
    return sum(1 for _ in iter_hardening_vectors(cfg, net, cap=None))
