"""Shared fixtures and reporting hooks for the test suite."""

import pytest

# One line per acceptance check, printed in the terminal summary so the
# pass/fail verdicts are visible even when pytest captures stdout.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_record():
    """Append-and-print helper for acceptance verdict lines."""

    def record(line):
        print(line, flush=True)
        ACCEPTANCE_LINES.append(line)

    return record
