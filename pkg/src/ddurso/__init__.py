"""Proactive hardening of radial distribution grids under decision-dependent contingencies."""
from .core import (
    DG,
    ESS,
    AlgorithmConfig,
    CapExceededError,
    ContingencyScenario,
    DduConfig,
    HardeningDecision,
    Line,
    Network,
    Node,
    Scenario,
    ScenarioSet,
    ValidationError,
    check_budget,
    enumerate_uncertainty,
    membership,
    validate_network,
    validate_scenarios,
)

__version__ = "0.1.0"
