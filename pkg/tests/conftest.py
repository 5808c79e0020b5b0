"""Shared pytest hooks: collects acceptance-criterion verdict lines."""

import pytest

_criterion_lines = []


@pytest.fixture(scope="session")
def criterion_log():
    """Append one 'criterion N: PASS/FAIL (...)' line per criterion."""
    return _criterion_lines


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)
