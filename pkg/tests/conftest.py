import sys

import numpy as np
import pytest
from hypothesis import settings

from vac.instances import RingSpec, random_mdp, ring_mdp
from vac.mdp import FiniteMdp

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def ring5():
    return ring_mdp(RingSpec(5, 0.0, 0.95))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)


def bandit(r, gamma=0.5):
    """One state; every action loops back to it."""
    r = np.atleast_1d(np.asarray(r, float))
    return FiniteMdp(np.ones((len(r), 1, 1)), r[None, :], gamma)


@pytest.fixture
def mdp3():
    return random_mdp(3, 2, 0.9, seed=7)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
