import numpy as np
import pytest

from fbm_averaging.fgn import TimeGrid


@pytest.fixture
def grid128():
    return TimeGrid(1.0, 128)


def identity_response(generator, grid, h, length):
    """Matrix ``A`` with ``increments = noise @ A.T`` for a linear generator."""
    eye = np.eye(length)
    return np.diff(generator(grid, h, eye).values, axis=-1).T


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
