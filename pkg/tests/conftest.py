"""Acceptance reporting: one PASS/FAIL line per criterion at the end of the run."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = report.failed or (report.when == "call" and report.outcome != "passed")
    if report.when == "call" or failed:
        measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        prev = _RESULTS.get(n)
        status = "FAIL" if failed or (prev and prev[1] == "FAIL") else "PASS"
        _RESULTS[n] = (title, status, measured)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, status, measured = _RESULTS[n]
        line = f"criterion {n} [{status}] {title}"
        if measured:
            line += f" ({measured})"
        terminalreporter.write_line(line)
