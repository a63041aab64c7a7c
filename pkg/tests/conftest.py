import numpy as np
import pytest

from ddurso.cases import Case, desk6
from ddurso.core import DG, AlgorithmConfig, DduConfig, Line, Network, Node, Scenario, ScenarioSet

# Reference values produced by brute-force enumeration (ddurso.oracle) on the desk case.
DESK6_GAMMA = {
    (2, 0, 0): 690.8723956335964,
    (2, 0, 1): 512.282028898787,
    (2, 0, 2): 289.56787623954773,
    (2, 1, 2): 443.54581031956553,
    (1, 1, 1): 553.5370678292848,
}
DESK6_LOAD = 1153.0153097286004


@pytest.fixture(scope="session")
def desk():
    return desk6()


def two_bus(load=10.0, rho=3.0, n_periods=1, vulnerable=True) -> Case:
    """Substation bus feeding one load bus over a single line."""
    nodes = (Node("N1"), Node("N2", rho=rho))
    line = Line("N1", "N2", 0.01, 0.01, 100.0, 100.0)
    net = Network(
        nodes=nodes,
        substation="N1",
        lines=(line,),
        dgs=(DG("SUB", "N1", 100.0),),
        vulnerable_lines=(line.name,) if vulnerable else (),
        n_periods=n_periods,
    )
    pd = np.zeros((2, n_periods))
    pd[1] = load
    scen = ScenarioSet((Scenario(1.0, pd, 0.3 * pd, np.zeros(0)),))
    return Case(net, scen, DduConfig(1, 0, max_hardened=1), AlgorithmConfig())


# One line per acceptance criterion, filled by test_acceptance and echoed in the terminal summary.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
