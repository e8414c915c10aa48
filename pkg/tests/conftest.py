import numpy as np
import pytest

from altmarl.model import ModelSpec, validate_model


def random_model(rng, n_agents=3, n_sg=2, n_sl=2, n_ag=2, n_al=2, gamma=0.9, dirichlet=1.0):
    """Random validated model with full-support kernels and rewards in [0, 1]."""
    pg = rng.dirichlet(np.full(n_sg, dirichlet), size=(n_sg, n_ag))
    pl = rng.dirichlet(np.full(n_sl, dirichlet), size=(n_sl, n_sg, n_al))
    rg = rng.random((n_sg, n_ag))
    rl = rng.random((n_sl, n_sg, n_al))
    return validate_model(ModelSpec(n_agents, n_sg, n_sl, n_ag, n_al, gamma, pg, pl, rg, rl))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_model():
    return random_model(np.random.default_rng(7))


#: one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
