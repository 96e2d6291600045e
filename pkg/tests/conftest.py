"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_ACCEPTANCE: dict[str, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        key = f"{number:>2}"
        previous = _ACCEPTANCE.get(key)
        status = "FAIL" if failed or (previous and previous[0] == "FAIL") else "PASS"
        _ACCEPTANCE[key] = (status, title, report.duration + (previous[2] if previous else 0.0))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=int):
        status, title, duration = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {title}  ({duration:.1f}s)")
