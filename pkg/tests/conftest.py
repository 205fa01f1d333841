"""Session fixtures shared by the driver and acceptance tests.

Full evolutions take tens of seconds, so each is run once per session.
"""

import time

import pytest

from helpers import growth_problem, quiescent_problem
from viscofrac.driver import run_evolution


@pytest.fixture(scope="session")
def quiescent_timed():
    """Quiescent evolution with its wall-clock time, for the runtime criterion."""
    start = time.perf_counter()
    problem = quiescent_problem()
    ev = run_evolution(problem)
    return problem, ev, time.perf_counter() - start


@pytest.fixture(scope="session")
def quiescent_run(quiescent_timed):
    return quiescent_timed[:2]


@pytest.fixture(scope="session")
def growth_run():
    problem = growth_problem()
    return problem, run_evolution(problem)
