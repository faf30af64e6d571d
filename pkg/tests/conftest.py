"""Shared pytest hooks: collect the acceptance verdict lines and repeat them in the summary."""
from __future__ import annotations

import pytest

VERDICTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def verdicts(request):
    """List of ``(criterion, passed, detail)`` tuples shown in the terminal summary."""
    return request.config.stash.setdefault(VERDICTS, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k, passed, detail in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(f"CRITERION {k}: {'PASS' if passed else 'FAIL'}  {detail}")
