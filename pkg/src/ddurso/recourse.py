"""Second-stage dispatch LP: load shedding after a contingency, per load scenario.

The LP is compiled once per network into a scenario- and damage-independent
matrix template

    min  c^T y
    s.t. E y = e_s                 (power balance, dual lambda free)
         G y >= g_s + d * u[k]     (every bound, dual theta >= 0)

where each inequality row depends on at most one vulnerable component ``k``
with coefficient ``d``. The engines in ``ddu`` and ``pccg`` work directly
with this template; ``build_recourse_lp`` instantiates it for a fixed u.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .backend import Model, SolverError, audit_lp, solve_lp
from .core import ContingencyScenario, Network, Scenario, ScenarioSet

DUAL_FEAS_TOL = 1e-6


@dataclass(frozen=True)
class VarLayout:
    """Offsets of the per-period variable families inside y."""

    n_nodes: int
    n_lines: int
    n_dgs: int
    n_ess: int
    n_periods: int

    def _sizes(self):
        n, b, g, e = self.n_nodes, self.n_lines, self.n_dgs, self.n_ess
        return [("pc", n), ("qc", n), ("p", g), ("q", g), ("gp", e), ("gq", e), ("U", n), ("P", b), ("Q", b)]

    @property
    def offsets(self) -> dict[str, tuple[int, int]]:
        out, off = {}, 0
        for name, cnt in self._sizes():
            out[name] = (off, cnt)
            off += cnt * self.n_periods
        return out

    @property
    def size(self) -> int:
        return sum(cnt for _, cnt in self._sizes()) * self.n_periods

    def index(self, family: str, i, t):
        off, _ = self.offsets[family]
        return off + np.asarray(i) * self.n_periods + np.asarray(t)

    def block(self, y: np.ndarray, family: str) -> np.ndarray:
        off, cnt = self.offsets[family]
        return y[off : off + cnt * self.n_periods].reshape(cnt, self.n_periods)


class _RowBuilder:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.n = 0
        self.meta: list[tuple] = []

    def add(self, cols, vals, meta) -> int:
        r = self.n
        self.rows.extend([r] * len(cols))
        self.cols.extend(int(c) for c in cols)
        self.vals.extend(float(v) for v in vals)
        self.meta.append(meta)
        self.n += 1
        return r

    def matrix(self, ncols: int) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n, ncols))


@dataclass(frozen=True, eq=False)
class RecourseTemplate:
    """Matrix form of the recourse LP for one network.

    ``ge_kind`` tags how each inequality row's base rhs is built from a
    scenario: 0 constant, 1 minus the active load, 2 minus the reactive load,
    3 minus the initial storage. ``ge_base`` holds the constant part and
    ``ge_ref`` the (node, period) or ESS index used by kinds 1-3.
    """

    net: Network
    layout: VarLayout
    E: sp.csr_matrix
    G: sp.csr_matrix
    c: np.ndarray
    ge_base: np.ndarray
    ge_kind: np.ndarray
    ge_ref: np.ndarray
    ge_comp: np.ndarray
    ge_d: np.ndarray
    ge_labels: tuple
    eq_labels: tuple
    volt_bigm: float
    couple_reactive: bool

    @property
    def n_y(self) -> int:
        return self.layout.size

    @property
    def dependent_rows(self) -> np.ndarray:
        return np.flatnonzero((self.ge_comp >= 0) & (self.ge_d != 0))

    def eq_matrix(self, s: Scenario) -> sp.csr_matrix:
        """Equality rows for scenario ``s`` (the reactive coupling rows depend on its loads)."""
        if not self.couple_reactive:
            return self.E
        lay = self.layout
        T = lay.n_periods
        rows, cols, vals = [], [], []
        r = 0
        for j in range(lay.n_nodes):
            for t in range(T):
                # qc * PD - pc * QD = 0
                rows += [r, r]
                cols += [int(lay.index("qc", j, t)), int(lay.index("pc", j, t))]
                vals += [s.pd[j, t], -s.qd[j, t]]
                r += 1
        C = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.n_y))
        return sp.vstack([self.E, C]).tocsr()

    def eq_rhs(self, s: Scenario) -> np.ndarray:
        lay = self.layout
        T = lay.n_periods
        e = np.concatenate([s.pd.reshape(-1), s.qd.reshape(-1)])
        if self.couple_reactive:
            e = np.concatenate([e, np.zeros(lay.n_nodes * T)])
        return e

    def ge_static_rhs(self, s: Scenario) -> np.ndarray:
        g = self.ge_base.copy()
        k1 = self.ge_kind == 1
        k2 = self.ge_kind == 2
        k3 = self.ge_kind == 3
        g[k1] = -s.pd.reshape(-1)[self.ge_ref[k1]]
        g[k2] = -s.qd.reshape(-1)[self.ge_ref[k2]]
        g[k3] = -s.e0[self.ge_ref[k3]]
        return g

    def ge_rhs(self, s: Scenario, u) -> np.ndarray:
        """Right-hand side g_s + D u for a numeric component vector u."""
        u = np.asarray(u, dtype=float)
        g = self.ge_static_rhs(s)
        dep = self.ge_comp >= 0
        g[dep] += self.ge_d[dep] * u[self.ge_comp[dep]]
        return g

    def anchor_coefficients(self, theta: np.ndarray) -> np.ndarray:
        """Map an aggregated inequality dual to per-component objective weights D^T theta."""
        out = np.zeros(self.net.n_comps)
        dep = self.ge_comp >= 0
        np.add.at(out, self.ge_comp[dep], self.ge_d[dep] * theta[dep])
        return out


def default_volt_bigm(net: Network) -> float:
    """Smallest constant that always deactivates the voltage-drop relation of an open line."""
    umax = max([n.u_max for n in net.nodes] + [net.u0])
    umin = min([n.u_min for n in net.nodes] + [net.u0])
    drop = max(((ln.r * ln.p_max + ln.x * ln.q_max) / (net.u0 * net.base_kva) for ln in net.lines), default=0.0)
    return (umax - umin) + drop


def volt_row_scale(net: Network, line) -> float:
    """Row scaling that turns the voltage-drop rows into price-scale units."""
    m = max(line.r, line.x)
    if m <= 0:
        return 1.0
    return net.u0 * net.base_kva / m


@lru_cache(maxsize=32)
def recourse_template(net: Network, volt_bigm: float | None = None, couple_reactive: bool = False) -> RecourseTemplate:
    T = net.n_periods
    nidx = net.node_index
    lay = VarLayout(len(net.nodes), len(net.lines), len(net.dgs), len(net.ess), T)
    ix = lay.index
    root = nidx[net.substation]
    M = default_volt_bigm(net) if volt_bigm is None else float(volt_bigm)

    line_comp = {int(l): k for k, l in enumerate(net.vulnerable_line_idx)}
    dg_comp = {int(g): net.n_line_comps + k for k, g in enumerate(net.vulnerable_dg_idx)}

    eq = _RowBuilder()
    for fam, pc, gen, ess in (("P", "pc", "p", "gp"), ("Q", "qc", "q", "gq")):
        for j in range(lay.n_nodes):
            for t in range(T):
                cols, vals = [], []
                for b, ln in enumerate(net.lines):
                    if nidx[ln.to_node] == j:
                        cols.append(ix(fam, b, t)), vals.append(1.0)
                    elif nidx[ln.from_node] == j:
                        cols.append(ix(fam, b, t)), vals.append(-1.0)
                cols.append(ix(pc, j, t)), vals.append(1.0)
                for g, dg in enumerate(net.dgs):
                    if nidx[dg.node] == j:
                        cols.append(ix(gen, g, t)), vals.append(1.0)
                for e, st in enumerate(net.ess):
                    if nidx[st.node] == j:
                        cols.append(ix(ess, e, t)), vals.append(1.0)
                eq.add(cols, vals, (f"bal{fam}", net.nodes[j].name, t))

    ge = _RowBuilder()
    base, kind, ref, comp, dcoef = [], [], [], [], []

    def row(cols, vals, label, b=0.0, k=0, r=0, cmp=-1, d=0.0):
        ge.add(cols, vals, label)
        base.append(b), kind.append(k), ref.append(r), comp.append(cmp), dcoef.append(d)

    for j, node in enumerate(net.nodes):
        for t in range(T):
            row([ix("pc", j, t)], [1.0], ("pc_lo", node.name, t))
            row([ix("pc", j, t)], [-1.0], ("pc_hi", node.name, t), k=1, r=j * T + t)
            row([ix("qc", j, t)], [1.0], ("qc_lo", node.name, t))
            row([ix("qc", j, t)], [-1.0], ("qc_hi", node.name, t), k=2, r=j * T + t)

    for g, dg in enumerate(net.dgs):
        k = dg_comp.get(g, -1)
        qlo = dg.p_max * math.tan(dg.theta_min)
        qhi = dg.p_max * math.tan(dg.theta_max)
        for t in range(T):
            for lab, col, sign, bound in (
                ("p_lo", "p", 1.0, dg.p_min),
                ("p_hi", "p", -1.0, -dg.p_max),
                ("q_lo", "q", 1.0, qlo),
                ("q_hi", "q", -1.0, -qhi),
            ):
                if k >= 0:
                    row([ix(col, g, t)], [sign], (lab, dg.name, t), cmp=k, d=bound)
                else:
                    row([ix(col, g, t)], [sign], (lab, dg.name, t), b=bound)

    for e, st in enumerate(net.ess):
        for t in range(T):
            row([ix("gp", e, t)], [1.0], ("gp_lo", st.name, t))
            row([ix("gp", e, t)], [-1.0], ("gp_hi", st.name, t), b=-st.p_max)
            row([ix("gq", e, t)], [1.0], ("gq_lo", st.name, t))
            row([ix("gq", e, t)], [-1.0], ("gq_hi", st.name, t), b=-st.q_max)
            row(
                [ix("gp", e, tau) for tau in range(t + 1)],
                [-1.0 / st.eta] * (t + 1),
                ("energy", st.name, t),
                k=3,
                r=e,
            )

    for j, node in enumerate(net.nodes):
        lo, hi = (net.u0, net.u0) if j == root else (node.u_min, node.u_max)
        for t in range(T):
            row([ix("U", j, t)], [1.0], ("U_lo", node.name, t), b=lo)
            row([ix("U", j, t)], [-1.0], ("U_hi", node.name, t), b=-hi)

    for b, ln in enumerate(net.lines):
        k = line_comp.get(b, -1)
        i, j = nidx[ln.from_node], nidx[ln.to_node]
        kappa = volt_row_scale(net, ln)
        cr = ln.r / (net.u0 * net.base_kva)
        cx = ln.x / (net.u0 * net.base_kva)
        for t in range(T):
            for fam, cap in (("P", ln.p_max), ("Q", ln.q_max)):
                for lab, sign in ((f"{fam}_lo", 1.0), (f"{fam}_hi", -1.0)):
                    if k >= 0:
                        row([ix(fam, b, t)], [sign], (lab, ln.name, t), cmp=k, d=-cap)
                    else:
                        row([ix(fam, b, t)], [sign], (lab, ln.name, t), b=-cap)
            cols = [ix("U", i, t), ix("U", j, t), ix("P", b, t), ix("Q", b, t)]
            vals = np.array([1.0, -1.0, -cr, -cx]) * kappa
            for lab, sign in (("volt_lo", 1.0), ("volt_hi", -1.0)):
                if k >= 0:
                    row(cols, sign * vals, (lab, ln.name, t), b=-kappa * M, cmp=k, d=kappa * M)
                else:
                    row(cols, sign * vals, (lab, ln.name, t))

    c = np.zeros(lay.size)
    rho = np.array([n.rho for n in net.nodes])
    for j in range(lay.n_nodes):
        c[ix("pc", j, np.arange(T))] = rho[j]

    return RecourseTemplate(
        net=net,
        layout=lay,
        E=eq.matrix(lay.size),
        G=ge.matrix(lay.size),
        c=c,
        ge_base=np.array(base, dtype=float),
        ge_kind=np.array(kind, dtype=int),
        ge_ref=np.array(ref, dtype=int),
        ge_comp=np.array(comp, dtype=int),
        ge_d=np.array(dcoef, dtype=float),
        ge_labels=tuple(ge.meta),
        eq_labels=tuple(eq.meta),
        volt_bigm=M,
        couple_reactive=couple_reactive,
    )


def _u_vector(net: Network, u) -> np.ndarray:
    if isinstance(u, ContingencyScenario):
        return u.vector(net).astype(float)
    u = np.asarray(u, dtype=float)
    if u.shape != (net.n_comps,):
        raise ValueError(f"component vector must have length {net.n_comps}")
    return u


def build_recourse_lp(net: Network, scenario: Scenario, u, tpl: RecourseTemplate | None = None) -> Model:
    """Dispatch LP for one scenario with the damage state u fixed as data."""
    tpl = tpl or recourse_template(net)
    uv = _u_vector(net, u)
    m = Model(name="recourse")
    y = m.add_vars(tpl.n_y, lb=-np.inf, ub=np.inf, name="y")
    m.add_matrix(tpl.eq_matrix(scenario), y, tpl.eq_rhs(scenario), tpl.eq_rhs(scenario), name="bal")
    m.add_matrix(tpl.G, y, tpl.ge_rhs(scenario, uv), np.inf, name="bnd")
    m.set_objective(y, tpl.c, sense="min")
    return m


@dataclass
class ScenarioDispatch:
    probability: float
    cost: float
    pc: np.ndarray
    qc: np.ndarray
    p: np.ndarray
    q: np.ndarray
    gp: np.ndarray
    gq: np.ndarray
    U: np.ndarray
    P: np.ndarray
    Q: np.ndarray


@dataclass
class RecourseSolution:
    dispatch: list[ScenarioDispatch]
    expected_cost: float
    expected_load: float
    node_names: tuple

    @property
    def shedding_ratio(self) -> float:
        return self.expected_cost / self.expected_load if self.expected_load > 0 else 0.0

    def to_table(self) -> str:
        """Per-node, per-period shed active power, one row per (scenario, node)."""
        buf = io.StringIO()
        T = self.dispatch[0].pc.shape[1] if self.dispatch else 0
        buf.write("scenario\tprob\tnode\t" + "\t".join(f"t{t}" for t in range(T)) + "\n")
        for s, d in enumerate(self.dispatch):
            for j, name in enumerate(self.node_names):
                vals = "\t".join(f"{v:.6f}" for v in d.pc[j])
                buf.write(f"{s}\t{d.probability:.6f}\t{name}\t{vals}\n")
        buf.write(f"# expected cost {self.expected_cost:.6f}, shedding ratio {self.shedding_ratio:.6f}\n")
        return buf.getvalue()


@dataclass
class DualPoint:
    """Probability-weighted recourse duals; ``lam[s]``/``theta_s[s]`` for scenario s."""

    lam: list[np.ndarray]
    theta_s: list[np.ndarray]

    @property
    def theta(self) -> np.ndarray:
        return np.sum(self.theta_s, axis=0)

    def objective(self, tpl: RecourseTemplate, scenarios: ScenarioSet, u) -> float:
        uv = _u_vector(tpl.net, u)
        return float(
            sum(
                tpl.eq_rhs(s) @ self.lam[i] + tpl.ge_rhs(s, uv) @ self.theta_s[i]
                for i, s in enumerate(scenarios)
            )
        )

    def audit(self, tpl: RecourseTemplate, scenarios: ScenarioSet, tol: float = DUAL_FEAS_TOL) -> float:
        """Return the worst violation of dual feasibility; raise if above ``tol``."""
        worst = 0.0
        for i, s in enumerate(scenarios):
            lam, th = self.lam[i], self.theta_s[i]
            resid = tpl.eq_matrix(s).T @ lam + tpl.G.T @ th - s.probability * tpl.c
            scale = max(1.0, np.abs(lam).max(initial=0.0), np.abs(th).max(initial=0.0))
            worst = max(worst, np.abs(resid).max(initial=0.0) / scale, -th.min(initial=0.0) / scale)
        if worst > tol:
            raise SolverError(f"dual point outside the dual feasible region (violation {worst:.3g})")
        return worst


def solve_scenario(net: Network, scenario: Scenario, u, tpl: RecourseTemplate | None = None, check: bool = False):
    tpl = tpl or recourse_template(net)
    m = build_recourse_lp(net, scenario, u, tpl)
    sol = solve_lp(m)
    if not sol.ok:
        raise SolverError(f"recourse LP status {sol.status}: {sol.message}")
    if check:
        audit_lp(m, sol)
    return sol


def solve_expected(
    net: Network,
    scenarios: ScenarioSet,
    u,
    tpl: RecourseTemplate | None = None,
    check: bool = False,
) -> tuple[RecourseSolution, DualPoint]:
    """Solve every scenario LP at damage state u and aggregate with the probabilities."""
    tpl = tpl or recourse_template(net)
    lay = tpl.layout
    n_eq = tpl.eq_rhs(scenarios[0]).shape[0]
    dispatch, lams, thetas = [], [], []
    total = 0.0
    for s_id, s in enumerate(scenarios):
        try:
            sol = solve_scenario(net, s, u, tpl, check=check)
        except SolverError as exc:
            raise SolverError(f"scenario {s_id}: {exc}") from exc
        y = sol.x
        blocks = {f: lay.block(y, f) for f in ("pc", "qc", "p", "q", "gp", "gq", "U", "P", "Q")}
        dispatch.append(ScenarioDispatch(s.probability, sol.objective, **blocks))
        total += s.probability * sol.objective
        lams.append(s.probability * sol.duals[:n_eq])
        thetas.append(np.maximum(s.probability * sol.duals[n_eq:], 0.0))
    rs = RecourseSolution(dispatch, total, scenarios.expected_weighted_load(net), tuple(n.name for n in net.nodes))
    dp = DualPoint(lams, thetas)
    if check:
        dp.audit(tpl, scenarios)
        if abs(dp.objective(tpl, scenarios, u) - total) > 1e-5 * max(1.0, abs(total)):
            raise SolverError("strong duality audit failed on the expected recourse cost")
    return rs, dp


def expected_cost(net: Network, scenarios: ScenarioSet, u, tpl: RecourseTemplate | None = None) -> float:
    tpl = tpl or recourse_template(net)
    total = 0.0
    for s in scenarios:
        total += s.probability * solve_scenario(net, s, u, tpl).objective
    return total


def resilience_indices(net: Network, scenarios: ScenarioSet, tpl: RecourseTemplate | None = None) -> dict[str, float]:
    """Expected shedding under the single outage of each vulnerable component."""
    tpl = tpl or recourse_template(net)
    out = {}
    for k, name in enumerate(net.component_names):
        u = np.ones(net.n_comps)
        u[k] = 0.0
        out[name] = expected_cost(net, scenarios, u, tpl)
    return out
