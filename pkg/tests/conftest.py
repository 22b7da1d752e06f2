import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""
    def add(criterion, passed, detail):
        _LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
        return passed
    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
