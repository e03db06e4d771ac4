import numpy as np
import pytest

from textfield.field_gen import DirectionField

# (criterion, passed, detail) rows filled by the acceptance tests
ACCEPTANCE = []


@pytest.fixture
def acceptance():
    def record(name, passed, detail=""):
        ACCEPTANCE.append((name, bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


def field_from(vectors, shape):
    """Build a field from ``{(x, y): (vx, vy)}``."""
    vx = np.zeros(shape, dtype=np.float32)
    vy = np.zeros(shape, dtype=np.float32)
    for (x, y), (a, b) in vectors.items():
        vx[y, x] = a
        vy[y, x] = b
    return DirectionField(vx, vy)
