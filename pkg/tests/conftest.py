"""Shared fixtures: default parameter sets and the expensive closed-loop runs."""
import time

import numpy as np
import pytest

from pcs_mpc.config import RunConfig
from pcs_mpc.model import ModelParameters, build_matrices
from pcs_mpc.pcs import PcsProperties, TankGeometry

# one-line outcomes of the acceptance criteria, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def props():
    return PcsProperties()


@pytest.fixture(scope="session")
def geom():
    return TankGeometry()


@pytest.fixture(scope="session")
def ss():
    return build_matrices(ModelParameters())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _timed_run(scenario, cfg):
    from pcs_mpc.harness import run_closed_loop

    t0 = time.perf_counter()
    res = run_closed_loop(scenario, cfg)
    res.wall_s = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def spring():
    from pcs_mpc.scenario import spring_scenario

    return spring_scenario(seed=0)


@pytest.fixture(scope="session")
def mpc_run(spring):
    """Four-day MPC run on the acceptance scenario (about 20 s)."""
    return _timed_run(spring, RunConfig())


@pytest.fixture(scope="session")
def rule_run(spring):
    return _timed_run(spring, RunConfig(controller_type="rule"))


@pytest.fixture(scope="session")
def one_day_run():
    """Single nominal day under MPC, shared by the fidelity and determinism checks."""
    from pcs_mpc.scenario import spring_scenario

    return _timed_run(spring_scenario(seed=3, days=1, day_weather=(1.0,)), RunConfig())
