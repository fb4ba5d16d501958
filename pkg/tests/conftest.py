import numpy as np
import pytest

from mfomo.mdp import FiniteMdp

ACCEPTANCE_LINES = []


def random_mdp(rng, S, A, T, r_scale=1.0):
    P = rng.dirichlet(np.ones(S), size=(T, S, A)).transpose(0, 3, 1, 2)
    R = rng.uniform(-r_scale, r_scale, size=(T + 1, S, A))
    return FiniteMdp(rng.dirichlet(np.ones(S)), P, R)


def random_policy(rng, S, A, T):
    return rng.dirichlet(np.ones(A), size=(T + 1, S))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
