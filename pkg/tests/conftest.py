"""Shared pytest hooks: print one PASS/FAIL line per acceptance criterion.

The lines are derived from actual test outcomes, so the summary cannot drift
from what the suite really verified.
"""

_RESULTS: dict[str, bool] = {}


def _is_criterion(nodeid: str) -> bool:
    return "test_acceptance.py::test_criterion_" in nodeid


def pytest_runtest_logreport(report):
    if not _is_criterion(report.nodeid):
        return
    if report.when == "call":
        _RESULTS[report.nodeid] = report.passed
    elif report.failed:          # setup/teardown error counts as failure
        _RESULTS[report.nodeid] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_RESULTS):
        name = nodeid.split("::")[-1].replace("test_criterion_", "")
        num, _, label = name.partition("_")
        status = "PASS" if _RESULTS[nodeid] else "FAIL"
        terminalreporter.write_line(
            f"{status} criterion {int(num)}: {label.replace('_', ' ')}")
