"""Shared pytest plumbing for the acceptance suite.

test_acceptance.py registers one verdict per numbered criterion through the
`criterion` fixture; after the run the hook below prints a single pass/fail
line for each so the outcome is readable without scrolling through tracebacks.
"""

import pytest

N_CRITERIA = 9

_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    _RESULTS[number] = (title, bool(passed), detail)


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria")
    for num in range(1, N_CRITERIA + 1):
        if num in _RESULTS:
            title, ok, detail = _RESULTS[num]
            line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {title}"
            if detail:
                line += f"  [{detail}]"
        else:
            line = f"criterion {num}: NOT RUN"
        terminalreporter.write_line(line)
