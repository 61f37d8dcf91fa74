import numpy as np
import pytest

from stdan.autodiff import Tape
from stdan.config import ModelConfig

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro():
    return ModelConfig.micro()


def leaf_values(tape: Tape, **arrays):
    """Register arrays as gradient-receiving leaves on ``tape``."""
    return {k: tape.input(v, k) for k, v in arrays.items()}
