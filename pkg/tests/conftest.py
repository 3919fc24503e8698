"""Shared pytest plumbing.

Acceptance tests append one PASS/FAIL line each to ACCEPTANCE; the
summary hook prints them after the run so they are visible even though
pytest captures per-test stdout.
"""

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
