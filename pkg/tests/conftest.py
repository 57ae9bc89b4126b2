import pytest

_LINES = {}


@pytest.fixture
def criterion():
    """Record ``(id, passed, detail)`` for the acceptance summary."""

    def record(key, passed, detail):
        line = f"{key:<4} {'PASS' if passed else 'FAIL'}  {detail}"
        _LINES[key] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES, key=lambda k: int(k.lstrip("C"))):
        terminalreporter.write_line(_LINES[key])
