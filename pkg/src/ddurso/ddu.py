"""Worst-case contingency subproblem and the KKT block of the worst-case selection.

The subproblem maximizes the dual of the expected recourse LP jointly over
the binary damage state u and the per-scenario duals. Products u_k * theta_r
are linearized with one-sided McCormick envelopes: only the side the
maximization pushes against is needed, which keeps every restricted dual
value a valid lower bound on the recourse value.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .backend import INT_TOL, Model, SolverError, solve_lp, solve_milp
from .core import AlgorithmConfig, ContingencyScenario, DduConfig, Network, ScenarioSet
from .recourse import DualPoint, RecourseTemplate, expected_cost, recourse_template

AUDIT_TOL = 1e-5
NEAR_TIE = 4e-4


def component_groups(net: Network) -> list[np.ndarray]:
    """Index arrays of the line block and the DG block of the component vector."""
    nl = net.n_line_comps
    return [np.arange(nl), np.arange(nl, net.n_comps)]


def group_limits(net: Network, cfg: DduConfig) -> list[int]:
    return [cfg.k_lines, cfg.k_dgs]


def default_enhancement_weight(xi: np.ndarray) -> float:
    return -1e-4 / max(float(np.max(xi, initial=0.0)), 1.0)


def amplification(net: Network) -> float:
    """Spread of line impedances; bounds how far one kW can leverage shed load through voltages."""
    hi = max((max(ln.r, ln.x) for ln in net.lines), default=1.0)
    lo = min((min(ln.r, ln.x) for ln in net.lines if min(ln.r, ln.x) > 0), default=hi)
    return float(min(max(1.0, hi / lo), 1e3))


def dual_bounds(tpl: RecourseTemplate, scenarios: ScenarioSet, scale: float) -> list[np.ndarray]:
    """Bound on each damage-dependent inequality dual, per scenario."""
    rho_max = max((n.rho for n in tpl.net.nodes), default=1.0)
    amp = amplification(tpl.net)
    n_dep = len(tpl.dependent_rows)
    return [np.full(n_dep, scale * s.probability * max(rho_max, 1e-9) * amp) for s in scenarios]


def greedy_selection(c: np.ndarray, x: np.ndarray, net: Network, cfg: DduConfig) -> tuple[np.ndarray, float]:
    """Exact maximizer of c^T u over U(x): damage the most negative unhardened entries per group."""
    c = np.asarray(c, dtype=float)
    u = np.ones(net.n_comps, dtype=int)
    for grp, k in zip(component_groups(net), group_limits(net, cfg)):
        cand = [i for i in grp if not x[i] and c[i] < 0]
        cand.sort(key=lambda i: c[i])
        u[cand[:k]] = 0
    return u, float(c @ u)


@dataclass
class SubproblemResult:
    u: np.ndarray
    value: float
    primal_value: float
    duals: DualPoint
    theta: np.ndarray
    anchor: np.ndarray
    enhanced: bool
    audit_gap: float
    dual_bound_scale: float
    attempts: int
    wall_time: float

    def contingency(self, net: Network) -> ContingencyScenario:
        return ContingencyScenario.from_vector(net, self.u)


def _build_sp(
    tpl: RecourseTemplate,
    scenarios: ScenarioSet,
    x: np.ndarray,
    cfg: DduConfig,
    bounds: list[np.ndarray],
    enh: np.ndarray | None,
):
    net = tpl.net
    m = Model(name="subproblem", sense="max")
    u = m.add_vars(net.n_comps, lb=np.asarray(x, dtype=float), ub=1.0, integer=True, name="u")
    for grp, k in zip(component_groups(net), group_limits(net, cfg)):
        if len(grp):
            m.add_constraint({int(u[i]): 1.0 for i in grp}, ">=", len(grp) - k, name="nk")
    dep = tpl.dependent_rows
    comp = tpl.ge_comp[dep]
    d = tpl.ge_d[dep]
    neg = d < 0
    blocks = []
    for s_id, s in enumerate(scenarios):
        E = tpl.eq_matrix(s)
        lam = m.add_vars(E.shape[0], lb=-np.inf, ub=np.inf, name=f"lam{s_id}")
        th = m.add_vars(tpl.G.shape[0], lb=0.0, ub=np.inf, name=f"th{s_id}")
        w = m.add_vars(len(dep), lb=0.0, ub=np.inf, name=f"w{s_id}")
        A = sp.hstack([E.T, tpl.G.T]).tocsr()
        rhs = s.probability * tpl.c
        m.add_matrix(A, np.concatenate([lam, th]), rhs, rhs, name=f"dualfeas{s_id}")
        M = bounds[s_id]
        # d < 0: w >= theta - M (1 - u)   <=>   w - theta - M u >= -M
        idx = np.flatnonzero(neg)
        if len(idx):
            r = np.arange(len(idx))
            rows = np.concatenate([r, r, r])
            cols = np.concatenate([w[idx], th[dep[idx]], u[comp[idx]]])
            vals = np.concatenate([np.ones(len(idx)), -np.ones(len(idx)), -M[idx]])
            m.add_rows(rows, cols, vals, -M[idx], np.inf, name=f"mcc_lo{s_id}")
        # d > 0: w <= theta and w <= M u
        idx = np.flatnonzero(~neg)
        if len(idx):
            r = np.arange(len(idx))
            m.add_rows(
                np.concatenate([r, r]),
                np.concatenate([w[idx], th[dep[idx]]]),
                np.concatenate([np.ones(len(idx)), -np.ones(len(idx))]),
                -np.inf,
                0.0,
                name=f"mcc_hi{s_id}",
            )
            m.add_rows(
                np.concatenate([r, r]),
                np.concatenate([w[idx], u[comp[idx]]]),
                np.concatenate([np.ones(len(idx)), -M[idx]]),
                -np.inf,
                0.0,
                name=f"mcc_u{s_id}",
            )
        m.add_objective(lam, tpl.eq_rhs(s))
        m.add_objective(th, tpl.ge_static_rhs(s))
        m.add_objective(w, d)
        blocks.append((lam, th))
    if enh is not None:
        m.add_objective(u, enh)
    return m, u, blocks


def solve_subproblem(
    net: Network,
    scenarios: ScenarioSet,
    x,
    cfg: DduConfig,
    alg: AlgorithmConfig | None = None,
    xi: np.ndarray | None = None,
    tpl: RecourseTemplate | None = None,
) -> SubproblemResult:
    """Worst-case damage state for the hardening vector x and its recourse dual point.

    The returned value excludes the enhancement perturbation. Each solve is
    audited against a primal recourse solve at the returned u; if they
    disagree, or the dual anchor does not rank u as a worst case, the dual
    bounds are doubled and the solve repeated.
    """
    alg = alg or AlgorithmConfig()
    tpl = tpl or recourse_template(net, alg.volt_bigm)
    x = np.asarray(x.vector(net) if hasattr(x, "vector") else x, dtype=int)
    if x.shape != (net.n_comps,):
        raise ValueError(f"hardening vector must have length {net.n_comps}")
    enh = None
    if xi is not None:
        xi = np.asarray(xi, dtype=float)
        eps = alg.enhancement_weight if alg.enhancement_weight is not None else default_enhancement_weight(xi)
        enh = eps * xi
    scale = alg.dual_bound_scale
    t0 = time.perf_counter()
    last_gap = np.inf
    for attempt in range(alg.audit_retries + 1):
        bounds = dual_bounds(tpl, scenarios, scale)
        m, u_idx, blocks = _build_sp(tpl, scenarios, x, cfg, bounds, enh)
        sol = solve_milp(m, mip_rel_gap=alg.mip_rel_gap, time_limit=alg.time_limit)
        if not sol.ok:
            raise SolverError(f"subproblem MILP status {sol.status}: {sol.message}")
        u = np.rint(sol.x[u_idx]).astype(int)
        value = sol.objective - (float(enh @ u) if enh is not None else 0.0)
        lams = [sol.x[lam] for lam, _ in blocks]
        ths = [np.maximum(sol.x[th], 0.0) for _, th in blocks]
        dp = DualPoint(lams, ths)
        theta = dp.theta
        anchor = tpl.anchor_coefficients(theta)
        primal = expected_cost(net, scenarios, u, tpl)
        gap = abs(value - primal)
        _, best = greedy_selection(anchor, x, net, cfg)
        anchor_ok = anchor @ u >= best - 1e-6 * max(1.0, np.abs(anchor).sum())
        if gap <= AUDIT_TOL * max(1.0, abs(primal)) and anchor_ok:
            return SubproblemResult(
                u=u,
                value=value,
                primal_value=primal,
                duals=dp,
                theta=theta,
                anchor=anchor,
                enhanced=enh is not None,
                audit_gap=gap,
                dual_bound_scale=scale,
                attempts=attempt + 1,
                wall_time=time.perf_counter() - t0,
            )
        last_gap = gap
        scale *= 2.0
    raise SolverError(
        f"dual bound too small: subproblem audit gap {last_gap:.3g} after {alg.audit_retries + 1} attempts"
    )


# -- KKT block of the worst-case selection ------------------------------------


@dataclass
class OuBlock:
    """KKT description of argmax{c^T u : u in U'(x)} for a fixed anchor c.

    ``c`` is stored normalized to max|c| = 1 so one big-M bounds every
    multiplier. ``add_to`` instantiates the block in a model, linked to that
    model's hardening variables.
    """

    c: np.ndarray
    groups: list
    limits: list
    comp_bigm: float = 4.0
    scale: float = 1.0
    raw: np.ndarray = field(default=None, repr=False)

    def add_to(self, m: Model, x_idx, tag: str = "ou") -> np.ndarray:
        n = len(self.c)
        x_idx = np.asarray(x_idx)
        M = self.comp_bigm
        u = m.add_vars(n, lb=0.0, ub=1.0, name=f"{tag}_u")
        g = m.add_vars(n, lb=0.0, ub=M, name=f"{tag}_g")
        tau = m.add_binaries(n, name=f"{tag}_tau")
        beta = m.add_binaries(n, name=f"{tag}_beta")
        a_of = np.zeros(n, dtype=np.int64)
        has_a = np.zeros(n, dtype=bool)
        for grp, k in zip(self.groups, self.limits):
            if not len(grp):
                continue
            a = m.add_vars(1, lb=0.0, ub=M, name=f"{tag}_a")[0]
            sig = m.add_binaries(1, name=f"{tag}_sig")[0]
            a_of[grp] = a
            has_a[grp] = True
            terms = {int(u[i]): 1.0 for i in grp}
            # primal: sum u >= n - k
            m.add_constraint(terms, ">=", len(grp) - k, name=f"{tag}_nk")
            # a > 0 only if the cardinality row is tight
            m.add_constraint({int(a): 1.0, int(sig): -M}, "<=", 0.0, name=f"{tag}_ca")
            slack = dict(terms)
            slack[int(sig)] = float(k)
            m.add_constraint(slack, "<=", len(grp), name=f"{tag}_cs")
        r = np.arange(n)
        # primal linking u >= x
        m.add_rows(np.concatenate([r, r]), np.concatenate([u, x_idx]), np.r_[np.ones(n), -np.ones(n)], 0.0, np.inf, f"{tag}_ux")
        # g > 0 only if u = x
        m.add_rows(np.concatenate([r, r]), np.concatenate([g, tau]), np.r_[np.ones(n), -M * np.ones(n)], -np.inf, 0.0, f"{tag}_cg")
        m.add_rows(
            np.concatenate([r, r, r]),
            np.concatenate([u, x_idx, tau]),
            np.r_[np.ones(n), -np.ones(n), np.ones(n)],
            -np.inf,
            1.0,
            f"{tag}_cgs",
        )
        # stationarity: b = c + a + g >= 0, and b > 0 only if u = 1
        rows_b = [r, r]
        cols_b = [g, beta]
        vals_b = [np.ones(n), -M * np.ones(n)]
        rows_f = [r]
        cols_f = [g]
        vals_f = [np.ones(n)]
        if has_a.any():
            ra = r[has_a]
            rows_b.append(ra), cols_b.append(a_of[has_a]), vals_b.append(np.ones(len(ra)))
            rows_f.append(ra), cols_f.append(a_of[has_a]), vals_f.append(np.ones(len(ra)))
        m.add_rows(np.concatenate(rows_f), np.concatenate(cols_f), np.concatenate(vals_f), -self.c, np.inf, f"{tag}_df")
        m.add_rows(np.concatenate(rows_b), np.concatenate(cols_b), np.concatenate(vals_b), -np.inf, -self.c, f"{tag}_cb")
        m.add_rows(np.concatenate([r, r]), np.concatenate([u, beta]), np.r_[np.ones(n), -np.ones(n)], 0.0, np.inf, f"{tag}_cbs")
        return u


def tie_safe_epsilon(c: np.ndarray, groups, cap: float = 1e-2) -> float:
    """Perturbation size that breaks ties in c without reordering clearly distinct entries.

    Entries closer than ``NEAR_TIE`` count as tied: the MILP tolerances cannot
    separate them inside the complementarity constraints anyway.
    """
    gaps = [abs(v) for v in c if abs(v) > NEAR_TIE]
    for grp in groups:
        vals = np.sort(c[grp])
        diffs = np.diff(vals)
        gaps.extend(diffs[diffs > NEAR_TIE].tolist())
    dmin = min(gaps) if gaps else np.inf
    return -min(0.25 * dmin, cap)


def condition_anchor(c: np.ndarray, worst, margin: float) -> np.ndarray:
    """Shift c by ``margin`` towards ``worst`` and keep every entry at least ``margin`` from zero."""
    up = np.asarray(worst) == 1
    out = np.where(up, c + margin, c - margin)
    small = np.abs(out) < margin
    out[small & up] = margin
    out[small & ~up] = -margin
    return out


def emit_ou_block(
    anchor: np.ndarray,
    net: Network,
    cfg: DduConfig,
    xi: np.ndarray | None = None,
    comp_bigm: float | None = None,
    damaged: np.ndarray | None = None,
    worst: np.ndarray | None = None,
    margin: float = 0.0,
) -> OuBlock:
    """KKT block for the worst-case selection driven by the anchor c = D^T theta.

    With ``xi`` the anchor is perturbed towards damaging components with high
    resilience indices, only among exact ties. With ``damaged`` (the
    subproblem's worst case) those entries are pushed below every other entry,
    which makes the block's optimum track the anchored contingency.

    With ``worst`` and a positive ``margin`` every entry is moved by ``margin``
    in the direction that favours ``worst`` and kept at least ``margin`` away
    from zero. Entries u*_k = 1 only increase and entries u*_k = 0 only
    decrease, so ``worst`` becomes the unique maximizer at the current x and
    the argmax set elsewhere can only shrink inside the original one, while
    every multiplier the block needs stays well above the MILP tolerances.
    The margin is raised above the perturbation size when ``xi`` is given.
    """
    anchor = np.asarray(anchor, dtype=float)
    top = float(np.abs(anchor).max(initial=0.0))
    c = anchor / top if top > 1e-12 else np.zeros_like(anchor)
    groups = component_groups(net)
    if damaged is not None:
        c = c.copy()
        c[np.asarray(damaged, dtype=bool)] = -2.0
    eps = 0.0
    if xi is not None and len(c):
        xi = np.asarray(xi, dtype=float)
        xt = xi / max(float(xi.max(initial=0.0)), 1e-12)
        eps = tie_safe_epsilon(c, groups)
        c = c + eps * xt
    if worst is not None and margin > 0:
        # a margin above the perturbation keeps the anchored worst case the unique maximizer
        c = condition_anchor(c, worst, max(margin, 2.0 * abs(eps)))
    span = float(np.abs(c).max(initial=0.0))
    M = comp_bigm if comp_bigm is not None else 4.0 * max(1.0, span)
    return OuBlock(c=c, groups=groups, limits=group_limits(net, cfg), comp_bigm=M, scale=top, raw=anchor)


def solve_block_alone(block: OuBlock, x, sense: str = "min") -> np.ndarray:
    """Solve the block with x fixed, optimizing c^T u in ``sense``; used to probe that the block pins argmax."""
    x = np.asarray(x, dtype=float)
    m = Model(name="ou-alone", sense=sense)
    xv = m.add_vars(len(x), lb=x, ub=x, name="x")
    u = block.add_to(m, xv)
    m.set_objective(u, block.c, sense=sense)
    sol = solve_milp(m)
    if not sol.ok:
        raise SolverError(f"OU block alone status {sol.status}")
    return sol.x[u]


def selection_lp(c: np.ndarray, x, net: Network, cfg: DduConfig, strict: bool = True) -> np.ndarray:
    """Vertex of the LP relaxation max{c^T u : u in U'(x)}.

    With ``strict`` a fractional vertex raises, since the KKT block relies on
    the relaxation being integral.
    """
    x = np.asarray(x, dtype=float)
    m = Model(name="selection", sense="max")
    u = m.add_vars(net.n_comps, lb=x, ub=1.0, name="u")
    for grp, k in zip(component_groups(net), group_limits(net, cfg)):
        if len(grp):
            m.add_constraint({int(u[i]): 1.0 for i in grp}, ">=", len(grp) - k, name="nk")
    m.set_objective(u, c)
    sol = solve_lp(m)
    if not sol.ok:
        raise SolverError(f"selection LP status {sol.status}")
    val = sol.x[u]
    frac = np.abs(val - np.rint(val)).max(initial=0.0)
    if strict and frac > INT_TOL:
        raise SolverError(f"fractional vertex in the worst-case selection (deviation {frac:.3g})")
    return val
