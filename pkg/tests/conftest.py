import numpy as np
import pytest

from braggsim.ladder import LadderParams


@pytest.fixture
def params():
    return LadderParams()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def two_level():
    """Ladder restricted to |0>, |1>: a resonant pulse rotates it exactly."""
    return LadderParams(n_min=0, n_max=1)


# one line per acceptance criterion, shown after the run whatever the capture mode
ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
