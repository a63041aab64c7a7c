"""Thin LP/MILP modelling layer over scipy's HiGHS interfaces.

Constraints are stored row-blockwise in COO form as ``lo <= A x <= hi``.
LP duals are reported as sensitivities d(objective)/d(rhs): for a
minimisation, ``>=`` rows carry nonnegative duals and ``<=`` rows
nonpositive ones.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

FEAS_TOL = 1e-6
INT_TOL = 1e-6
DUALITY_TOL = 1e-5

BACKENDS = ("highs",)


def selected_backend() -> str:
    name = os.environ.get("DDURSO_BACKEND", "highs").lower()
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {', '.join(BACKENDS)}")
    return name


class SolverError(RuntimeError):
    pass


@dataclass
class Solution:
    status: str  # optimal | infeasible | unbounded | limit | error
    objective: float = float("nan")
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    wall_time: float = 0.0
    message: str = ""
    mip_gap: float | None = None
    dual_bound: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class Model:
    name: str = "model"
    sense: str = "min"
    _lb: list = field(default_factory=list)
    _ub: list = field(default_factory=list)
    _int: list = field(default_factory=list)
    _vnames: list = field(default_factory=list)
    _nvars: int = 0
    _rows: list = field(default_factory=list)
    _cols: list = field(default_factory=list)
    _vals: list = field(default_factory=list)
    _lo: list = field(default_factory=list)
    _hi: list = field(default_factory=list)
    _rnames: list = field(default_factory=list)
    _nrows: int = 0
    _obj: dict = field(default_factory=dict)
    obj_constant: float = 0.0

    # -- variables ---------------------------------------------------------
    def add_vars(self, n: int, lb=0.0, ub=np.inf, integer: bool = False, name: str = "v") -> np.ndarray:
        lb = np.broadcast_to(np.asarray(lb, dtype=float), (n,)).copy()
        ub = np.broadcast_to(np.asarray(ub, dtype=float), (n,)).copy()
        if integer and np.any(lb > ub):
            raise ValueError("integer variable with empty bounds")
        idx = np.arange(self._nvars, self._nvars + n)
        self._lb.append(lb)
        self._ub.append(ub)
        self._int.append(np.full(n, bool(integer)))
        self._vnames.append((name, n))
        self._nvars += n
        return idx

    def add_binaries(self, n: int, name: str = "b") -> np.ndarray:
        return self.add_vars(n, 0.0, 1.0, integer=True, name=name)

    @property
    def n_vars(self) -> int:
        return self._nvars

    @property
    def n_rows(self) -> int:
        return self._nrows

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._lb:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(self._lb), np.concatenate(self._ub)

    def set_bounds(self, idx, lb=None, ub=None) -> None:
        lbs, ubs = self.bounds()
        idx = np.atleast_1d(idx)
        if lb is not None:
            lbs[idx] = lb
        if ub is not None:
            ubs[idx] = ub
        self._lb, self._ub = [lbs], [ubs]

    @property
    def integrality(self) -> np.ndarray:
        return np.concatenate(self._int) if self._int else np.zeros(0, dtype=bool)

    @property
    def has_integers(self) -> bool:
        return bool(self.integrality.any())

    # -- constraints ---------------------------------------------------------
    def add_rows(self, rows, cols, vals, lo, hi, name: str = "c") -> np.ndarray:
        """Add a block of rows ``lo <= A x <= hi`` given COO triplets with local row ids."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        rows = np.asarray(rows, dtype=np.int64)
        m = max(len(lo), len(hi), int(rows.max()) + 1 if rows.size else 0)
        lo = np.broadcast_to(lo, (m,)).copy()
        hi = np.broadcast_to(hi, (m,)).copy()
        cols = np.asarray(cols, dtype=np.int64)
        if cols.size and (cols.min() < 0 or cols.max() >= self._nvars):
            raise ValueError(f"constraint block {name!r} references unregistered variables")
        if rows.size and (rows.min() < 0 or rows.max() >= m):
            raise ValueError(f"constraint block {name!r} has row ids outside the block")
        self._rows.append(rows + self._nrows)
        self._cols.append(cols)
        self._vals.append(np.asarray(vals, dtype=float))
        self._lo.append(lo)
        self._hi.append(hi)
        self._rnames.append((name, m))
        idx = np.arange(self._nrows, self._nrows + m)
        self._nrows += m
        return idx

    def add_matrix(self, A, cols, lo, hi, name: str = "c") -> np.ndarray:
        """Add rows ``lo <= A @ x[cols] <= hi`` for a sparse/dense block A."""
        A = sp.coo_matrix(A)
        cols = np.asarray(cols, dtype=np.int64)
        return self.add_rows(A.row, cols[A.col], A.data, lo, hi, name)

    def add_constraint(self, terms: Mapping[int, float], sense: str, rhs: float, name: str = "c") -> int:
        cols = np.fromiter(terms.keys(), dtype=np.int64, count=len(terms))
        vals = np.fromiter(terms.values(), dtype=float, count=len(terms))
        lo, hi = _sense_bounds(sense, rhs)
        return int(self.add_rows(np.zeros(len(cols), dtype=np.int64), cols, vals, lo, hi, name)[0])

    # -- objective -----------------------------------------------------------
    def set_objective(self, cols, coefs, sense: str | None = None, constant: float = 0.0) -> None:
        self._obj = {}
        self.add_objective(cols, coefs)
        self.obj_constant = constant
        if sense is not None:
            self.sense = sense

    def add_objective(self, cols, coefs) -> None:
        cols = np.atleast_1d(cols)
        coefs = np.broadcast_to(np.asarray(coefs, dtype=float), cols.shape)
        for c, v in zip(cols.tolist(), coefs.tolist()):
            self._obj[c] = self._obj.get(c, 0.0) + v

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self._nvars)
        for k, v in self._obj.items():
            c[k] += v
        return c

    # -- assembly -----------------------------------------------------------
    def matrix(self) -> sp.csr_matrix:
        if not self._rows:
            return sp.csr_matrix((0, self._nvars))
        return sp.csr_matrix(
            (np.concatenate(self._vals), (np.concatenate(self._rows), np.concatenate(self._cols))),
            shape=(self._nrows, self._nvars),
        )

    def row_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._lo:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(self._lo), np.concatenate(self._hi)

    def var_names(self) -> list[str]:
        out = []
        for name, n in self._vnames:
            out.extend(f"{name}_{i}" for i in range(n))
        return out

    def row_names(self) -> list[str]:
        out = []
        for name, n in self._rnames:
            out.extend(f"{name}_{i}" for i in range(n))
        return out


def _sense_bounds(sense: str, rhs: float) -> tuple[float, float]:
    if sense in ("<=", "le"):
        return -np.inf, rhs
    if sense in (">=", "ge"):
        return rhs, np.inf
    if sense in ("==", "=", "eq"):
        return rhs, rhs
    raise ValueError(f"unknown constraint sense {sense!r}")


_STATUS = {0: "optimal", 1: "limit", 2: "infeasible", 3: "unbounded"}


def solve_lp(m: Model, check: bool = False) -> Solution:
    """Solve an LP with HiGHS dual simplex and return primal values plus row duals."""
    selected_backend()
    if m.has_integers:
        raise SolverError("solve_lp called on a model with integer variables")
    sign = 1.0 if m.sense == "min" else -1.0
    c = sign * m.objective_vector()
    A = m.matrix()
    lo, hi = m.row_bounds()
    eq = np.isfinite(lo) & np.isfinite(hi) & (np.abs(hi - lo) <= 1e-12)
    up = np.isfinite(hi) & ~eq
    dn = np.isfinite(lo) & ~eq
    A_ub = sp.vstack([A[up], -A[dn]]).tocsr() if (up.any() or dn.any()) else None
    b_ub = np.concatenate([hi[up], -lo[dn]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = lo[eq] if eq.any() else None
    lb, ub = m.bounds()
    bounds = np.column_stack([np.where(np.isfinite(lb), lb, -np.inf), np.where(np.isfinite(ub), ub, np.inf)])
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b) for a, b in bounds]
    t0 = time.perf_counter()
    if m.n_vars == 0:
        return Solution("optimal", m.obj_constant, np.zeros(0), np.zeros(m.n_rows), np.zeros(0), 0.0)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs-ds")
    wall = time.perf_counter() - t0
    status = _STATUS.get(res.status, "error")
    if status != "optimal":
        return Solution(status, wall_time=wall, message=res.message)
    duals = np.zeros(m.n_rows)
    n_up = int(up.sum())
    if A_ub is not None:
        mu = res.ineqlin.marginals
        duals[np.flatnonzero(up)] += mu[:n_up]
        duals[np.flatnonzero(dn)] -= mu[n_up:]
    if A_eq is not None:
        duals[np.flatnonzero(eq)] += res.eqlin.marginals
    rc = res.lower.marginals + res.upper.marginals
    sol = Solution(
        "optimal",
        float(sign * res.fun + m.obj_constant),
        np.asarray(res.x),
        sign * duals,
        sign * rc,
        wall,
    )
    if check:
        audit_lp(m, sol)
    return sol


def audit_lp(m: Model, sol: Solution, tol: float = FEAS_TOL) -> None:
    """Check primal feasibility, dual sign conventions and strong duality."""
    A = m.matrix()
    lo, hi = m.row_bounds()
    ax = A @ sol.x
    scale = 1.0 + np.abs(np.concatenate([lo[np.isfinite(lo)], hi[np.isfinite(hi)], [0.0]])).max()
    if np.any(ax < lo - tol * scale) or np.any(ax > hi + tol * scale):
        raise SolverError("LP solution violates row bounds")
    sign = 1.0 if m.sense == "min" else -1.0
    y = sign * sol.duals
    d = sign * sol.reduced_costs
    if np.any(y[np.isinf(hi)] < -tol) or np.any(y[np.isinf(lo)] > tol):
        raise SolverError("LP duals have wrong sign")
    lb, ub = m.bounds()
    rhs = np.where(y >= 0, lo, hi)
    rhs = np.where(np.isfinite(rhs), rhs, 0.0)
    vb = np.where(d >= 0, lb, ub)
    vb = np.where(np.isfinite(vb), vb, 0.0)
    dual_obj = sign * (y @ rhs + d @ vb) + m.obj_constant
    if abs(dual_obj - sol.objective) > DUALITY_TOL * max(1.0, abs(sol.objective)):
        raise SolverError(f"duality gap {dual_obj - sol.objective:.3g} exceeds tolerance")


def solve_milp(m: Model, mip_rel_gap: float = 1e-9, time_limit: float | None = None) -> Solution:
    """Solve a MILP with HiGHS branch-and-bound; integers are rounded before return."""
    selected_backend()
    sign = 1.0 if m.sense == "min" else -1.0
    c = sign * m.objective_vector()
    lb, ub = m.bounds()
    integ = m.integrality
    if m.n_vars == 0:
        return Solution("optimal", m.obj_constant, np.zeros(0), wall_time=0.0)
    cons = []
    if m.n_rows:
        lo, hi = m.row_bounds()
        cons = [LinearConstraint(m.matrix(), lo, hi)]
    opts = {"mip_rel_gap": mip_rel_gap, "presolve": True}
    if time_limit is not None:
        opts["time_limit"] = time_limit
    t0 = time.perf_counter()
    res = milp(c, constraints=cons, integrality=integ.astype(int), bounds=Bounds(lb, ub), options=opts)
    wall = time.perf_counter() - t0
    status = _STATUS.get(res.status, "error")
    if res.x is None:
        return Solution("error" if status == "optimal" else status, wall_time=wall, message=res.message)
    x = np.asarray(res.x, dtype=float).copy()
    frac = np.abs(x[integ] - np.rint(x[integ]))
    if frac.size and frac.max() > INT_TOL:
        return Solution("error", wall_time=wall, message=f"integrality violated by {frac.max():.3g}")
    x[integ] = np.rint(x[integ])
    dual_bound = getattr(res, "mip_dual_bound", None)
    return Solution(
        status,
        float(sign * res.fun + m.obj_constant),
        x,
        wall_time=wall,
        message=res.message,
        mip_gap=getattr(res, "mip_gap", None),
        dual_bound=None if dual_bound is None else float(sign * dual_bound + m.obj_constant),
    )


def write_lp(m: Model, path) -> None:
    """Dump the model in CPLEX LP text format."""
    names = m.var_names()
    c = m.objective_vector()

    def expr(idx, vals):
        parts = []
        for j, v in zip(idx, vals):
            if v == 0:
                continue
            parts.append(f"{'-' if v < 0 else '+'} {abs(v):.12g} {names[j]}")
        return " ".join(parts) if parts else "0 " + (names[0] if names else "")

    lines = [f"\\ {m.name}", "Minimize" if m.sense == "min" else "Maximize"]
    nz = np.flatnonzero(c)
    lines.append(" obj: " + expr(nz, c[nz]))
    lines.append("Subject To")
    A = m.matrix().tocsr()
    lo, hi = m.row_bounds()
    rnames = m.row_names()
    for r in range(m.n_rows):
        row = A.getrow(r)
        e = expr(row.indices, row.data)
        if np.isfinite(lo[r]) and np.isfinite(hi[r]) and lo[r] == hi[r]:
            lines.append(f" {rnames[r]}: {e} = {lo[r]:.12g}")
            continue
        if np.isfinite(lo[r]):
            lines.append(f" {rnames[r]}_lo: {e} >= {lo[r]:.12g}")
        if np.isfinite(hi[r]):
            lines.append(f" {rnames[r]}_hi: {e} <= {hi[r]:.12g}")
    lines.append("Bounds")
    lb, ub = m.bounds()
    for j, name in enumerate(names):
        a = "-inf" if not np.isfinite(lb[j]) else f"{lb[j]:.12g}"
        b = "+inf" if not np.isfinite(ub[j]) else f"{ub[j]:.12g}"
        lines.append(f" {a} <= {name} <= {b}")
    ints = [names[j] for j in np.flatnonzero(m.integrality)]
    if ints:
        lines.append("Generals")
        lines.extend(f" {n}" for n in ints)
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
