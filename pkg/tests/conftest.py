import numpy as np
import pytest

from wickprop.timebasis import TimeGrid


@pytest.fixture
def unit_grid():
    return TimeGrid(1.0, 64)


def quad(f, a, b, n=200_001):
    """Composite Simpson on [a, b] (n odd)."""
    x = np.linspace(a, b, n)
    y = f(x)
    h = (b - a) / (n - 1)
    return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


# acceptance outcomes, filled by test_acceptance and echoed at the end of the run
ACCEPTANCE = {}


def record(number: int, name: str, passed: bool, detail: str):
    ACCEPTANCE[number] = (name, bool(passed), detail)
    print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
