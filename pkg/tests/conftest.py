import numpy as np
import pytest

from headclip.config import ModelConfig
from headclip.model import HeadCLIPState


@pytest.fixture(scope="session")
def state():
    return HeadCLIPState.initialize(ModelConfig())


@pytest.fixture
def p(state):
    return state.tensors(track=False)


@pytest.fixture
def images():
    return np.random.default_rng(0).uniform(size=(2, 32, 32, 3))


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, name: str, passed: bool, detail: str) -> bool:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
