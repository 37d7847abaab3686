import numpy as np
import pytest

from vertexfuzz.fixtures import fixture_suite

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def suite():
    return fixture_suite()


class ToyBinary:
    """Scalar classifier built from a Python function of the coordinates."""

    def __init__(self, fn):
        self.fn = fn

    def evaluate_batch(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        return np.array([[self.fn(x)] for x in xs])

    def evaluate(self, x):
        return self.evaluate_batch([x])[0]


@pytest.fixture
def toy_binary():
    return ToyBinary


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
