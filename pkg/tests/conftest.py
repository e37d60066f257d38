"""Collects one line per acceptance criterion and prints them after the run."""

import pytest

_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_KEY] = []


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records a PASS/FAIL line and returns ``ok``."""
    lines = request.config.stash[_KEY]

    def record(number: int, ok: bool, detail: str) -> bool:
        lines.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_KEY]
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)
