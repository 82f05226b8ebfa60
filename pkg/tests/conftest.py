import numpy as np
import pytest

from singopt.problems import build_problem

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def circle():
    return build_problem("circle")


@pytest.fixture(scope="session")
def newton_trap():
    return build_problem("newton_trap")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marks = report.keywords
    if "acceptance" not in marks:
        return
    label = getattr(report, "criterion", None)
    if label is None:
        return
    ok = _CRITERIA.get(label, True) and report.passed
    _CRITERIA[label] = ok


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is not None and mark.args:
        rep.criterion = str(mark.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: (len(s), s)):
        verdict = "PASS" if _CRITERIA[label] else "FAIL"
        terminalreporter.write_line(f"criterion {label}: {verdict}")
