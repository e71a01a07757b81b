"""Shared pytest setup: single-threaded BLAS and the acceptance summary."""

import pytest
from threadpoolctl import threadpool_limits

_LIMITS = threadpool_limits(1)
_RESULTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {"title": title, "passed": True, "ran": False, "notes": []})
    if report.when == "call" or report.failed or report.skipped:
        entry["ran"] = True
        if not report.passed:
            entry["passed"] = False
    if report.when == "call":
        entry["notes"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        status = "PASS" if entry["passed"] and entry["ran"] else "FAIL"
        notes = f"  ({', '.join(entry['notes'])})" if entry["notes"] else ""
        terminalreporter.write_line(f"AC{number} {status}  {entry['title']}{notes}")
