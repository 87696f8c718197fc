"""Shared pytest plumbing.

The acceptance tests append one formatted line per criterion to
ACCEPTANCE_LINES; the terminal-summary hook prints them after the test table
so every run ends with an explicit pass/fail line per criterion.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
