"""Collects acceptance-suite outcomes and prints one PASS/FAIL line per criterion."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_c(\d+)_(\w+)")
_outcomes: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    number, title = int(m.group(1)), m.group(2).replace("_", " ")
    previous = _outcomes.get(number, (title, "PASS"))[1]
    # a criterion passes only if setup, call and teardown all pass
    failed = report.failed or previous == "FAIL"
    if report.when == "call" or report.failed:
        _outcomes[number] = (title, "FAIL" if failed else ("SKIP" if report.skipped else "PASS"))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        title, status = _outcomes[number]
        terminalreporter.write_line(f"criterion {number:2d} {title:<32} {status}")
