"""Shared pytest wiring.

Replays the acceptance pass/fail lines after the run so they stay visible
even though pytest captures per-test stdout.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None) if module else None
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(results, key=lambda item: item[0]):
        terminalreporter.write_line(line)
