import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from smartlab.partition import Box, build_tree

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit_tree(depth, d=1, **kw):
    return build_tree(Box(np.zeros(d), np.ones(d)), depth, **kw)


@pytest.fixture(scope="session")
def tree10():
    return unit_tree(10)


@pytest.fixture(scope="session")
def tree12():
    return unit_tree(12)


# one summary line per acceptance criterion, printed after the run
_criteria: dict = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if name.startswith("test_criterion_") and (report.when == "call" or report.failed):
        _criteria.setdefault(name, "PASS" if report.passed else "FAIL")
        if report.failed:
            _criteria[name] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
            terminalreporter.write_line(f"{_criteria[name]} {name}")
