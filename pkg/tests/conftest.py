import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lrguard import build_susceptance, case3, case6, compute_ptdf, separation_case
from lrguard.cases import SEPARATION_TARGET

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def c3():
    return case3()


@pytest.fixture(scope="session")
def c6():
    return case6()


@pytest.fixture(scope="session")
def ptdf3(c3):
    return compute_ptdf(build_susceptance(c3))


@pytest.fixture(scope="session")
def ptdf6(c6):
    return compute_ptdf(build_susceptance(c6))


@pytest.fixture(scope="session")
def sep():
    case = separation_case()
    return case, compute_ptdf(build_susceptance(case)), SEPARATION_TARGET


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for name in sorted(results):
            terminalreporter.write_line(results[name])
