import numpy as np
import pytest

from drrrt.cli import bundled_scenario
from drrrt.dynamics import double_integrator
from drrrt.environment import Environment, Obstacle, Polytope
from drrrt.scenario import load_scenario

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def benchmark():
    return load_scenario(bundled_scenario())


@pytest.fixture
def di():
    return double_integrator()


def box_env(obstacles=(), size=10.0, goal=None, **kw) -> Environment:
    """Square workspace [0, size]^2 over the 4-d double-integrator state."""
    obs = [Obstacle(Polytope.box(lo, hi, 4)) for lo, hi in obstacles]
    g = None if goal is None else Polytope.box(goal[0], goal[1], 4)
    return Environment(Polytope.box([0, 0], [size, size], 4), obs, goal=g, **kw)


def random_spd(rng, n, scale=1.0):
    M = rng.normal(size=(n, n))
    return scale * (M @ M.T / n + 1e-3 * np.eye(n))
