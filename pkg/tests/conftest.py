import numpy as np
import pytest

from cpdss import numcore as nc


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with nc.precision(np.float64):
        yield


CRITERIA = {
    1: "equivariance suite",
    2: "gradient suite",
    3: "decoder overfit",
    4: "diffusion convergence",
    5: "end-to-end signal",
    6: "metric oracles",
    7: "schedule properties",
    8: "parser fixtures",
    9: "determinism",
}
_outcomes: dict[int, list[bool]] = {}


def _criterion(nodeid: str):
    name = nodeid.split("::")[-1]
    if "test_acceptance.py" not in nodeid or not name.startswith("test_criterion_"):
        return None
    return int(name.split("_")[2])


def pytest_runtest_logreport(report):
    n = _criterion(report.nodeid)
    if n is None:
        return
    if report.when == "call" or report.failed or (report.when == "setup" and report.skipped):
        _outcomes.setdefault(n, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _outcomes:
            continue
        status = "PASS" if all(_outcomes[n]) else "FAIL"
        terminalreporter.write_line(f"criterion {n} ({CRITERIA[n]}): {status}")
