import time
from pathlib import Path

import pytest

from pmaflow.pipeline import run_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

# acceptance lines collected during the session, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
# wall-clock seconds of each session run, keyed by scenario name
TIMINGS: dict[str, float] = {}


def scenario_path(name: str) -> Path:
    return SCENARIOS / f"{name}.toml"


def _run(name: str):
    start = time.perf_counter()
    outcome = run_scenario(scenario_path(name))
    TIMINGS[name] = time.perf_counter() - start
    return outcome


@pytest.fixture(scope="session")
def reference_run():
    return _run("lelong_reference")


@pytest.fixture(scope="session")
def damped_run():
    return _run("damped_double_pole")


@pytest.fixture(scope="session")
def fixed_point_run():
    return _run("fixed_point")


@pytest.fixture(scope="session")
def smooth_run():
    return _run("smooth_log")


@pytest.fixture(scope="session")
def two_poles_run():
    return _run("two_poles_planar")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
