from __future__ import annotations

import pytest

from patchysl.grid import build_grid

BOX = ((-1.0, -1.0), (1.0, 1.0))


@pytest.fixture
def box():
    return BOX


@pytest.fixture
def grid21():
    return build_grid(*BOX, 21)


@pytest.fixture
def grid101():
    return build_grid(*BOX, 101)


@pytest.fixture
def grid50():
    return build_grid(*BOX, 50)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def _report(label: str, ok: bool, detail: str) -> bool:
        line = f"{label}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
