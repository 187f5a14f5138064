import pytest

from lastlook import experiments, hjb
from lastlook.config import Protocol, default_grid, preset


@pytest.fixture(scope="session")
def grid():
    return default_grid()


@pytest.fixture(scope="session")
def feedback_solution(grid):
    """Unconstrained protocol with reputation feedback (rho_g = 0.1)."""
    return hjb.solve_horizon(preset("feedback_rho01"), grid)


@pytest.fixture(scope="session")
def fair_feedback_solution(grid):
    params = experiments.with_protocol(preset("feedback_rho01"), Protocol.FAIR)
    return hjb.solve_horizon(params, grid)


@pytest.fixture(scope="session")
def fair_stationary(grid):
    """Stationary exact policy for the simulation preset."""
    return hjb.solve_stationary(preset("simulation_fair"), grid)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
