"""Basic C&CG over the static N-k set with hardening overriding damage."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import AlgorithmConfig, DduConfig, Network, ScenarioSet
from .pccg import IterationRecord, SolveReport, ccg_loop


def override(u_star, x) -> np.ndarray:
    """Damage state seen by the recourse once hardening x is applied: u* + x - u* o x."""
    u_star = np.asarray(u_star, dtype=int)
    x = np.asarray(x, dtype=int)
    return u_star + x - u_star * x


def run_basic(
    net: Network,
    scenarios: ScenarioSet,
    cfg: DduConfig,
    alg: AlgorithmConfig | None = None,
    on_iteration: Callable[[IterationRecord], None] | None = None,
) -> SolveReport:
    """Basic C&CG: each cut fixes the subproblem's worst case, with hardened entries restored."""
    alg = alg or AlgorithmConfig()
    return ccg_loop(net, scenarios, cfg, alg, "basic", "basic-ccg", enhance=False, on_iteration=on_iteration)
