"""Shared pytest plumbing: the acceptance-criteria summary block.

Tests append one line per criterion through the ``criterion`` fixture; the
lines are replayed after the run so the verdicts stay visible even when
pytest captures stdout.
"""

import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion():
    def record(num: int, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
        _LINES.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
