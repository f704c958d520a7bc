import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion_report(request):
    """Record one summary line per acceptance criterion; printed at session end."""

    def record(number, passed, detail):
        _ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_ACCEPTANCE_LINES[number])

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(_ACCEPTANCE_LINES[key])
