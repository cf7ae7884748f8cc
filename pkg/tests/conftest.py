import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from safevisor import (  # noqa: E402
    FiniteMdp,
    build_abstraction,
    build_grid,
    discretize_inputs,
    temperature_model,
    traffic_model,
    value_iteration,
)


@pytest.fixture
def toy_mdp():
    """One safe state; input 0 stays w.p. 0.9, input 1 stays w.p. 0.95."""
    P = np.array([[[0.9, 0.1], [0.95, 0.05]]])
    return FiniteMdp.from_dense(P)


@pytest.fixture(scope="session")
def temperature():
    return temperature_model()


@pytest.fixture(scope="session")
def traffic():
    return traffic_model()


@pytest.fixture(scope="session")
def temperature_mdp(temperature):
    grid = build_grid(temperature, 1e-3)
    inputs = discretize_inputs(temperature, 2.4e-2)
    return build_abstraction(temperature, grid, inputs, truncation_sigmas=6.0)


@pytest.fixture(scope="session")
def temperature_table(temperature_mdp):
    return value_iteration(temperature_mdp, 0.01)


@pytest.fixture(scope="session")
def coarse_temperature(temperature):
    """Temperature system on a 200-cell grid, for fast end-to-end tests."""
    mdp = build_abstraction(temperature, build_grid(temperature, 1e-2),
                            discretize_inputs(temperature, 2.4e-2))
    return mdp, value_iteration(mdp, 0.01)


def pytest_configure(config):
    config.acceptance_log = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config.acceptance_log:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_log, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
