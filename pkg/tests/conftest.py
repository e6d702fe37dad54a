"""Shared pytest hooks.

The acceptance tests register one scoreboard line per criterion; stdout is
captured during the run, so echo the verdicts in a summary section where
they stay visible.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "SCOREBOARD", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
