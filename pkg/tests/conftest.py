import sys

import numpy as np
import pytest

from predcbf import model, safempc


@pytest.fixture(scope="session")
def linear():
    return model.preset("linear-unstable")


@pytest.fixture(scope="session")
def pendulum():
    return model.preset("nonlinear-pendulum")


@pytest.fixture(scope="session")
def soft_linear(linear):
    return safempc.SafeMpcProblem.soft(linear)


@pytest.fixture(scope="session")
def soft_pendulum(pendulum):
    return safempc.SafeMpcProblem.soft(pendulum)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
