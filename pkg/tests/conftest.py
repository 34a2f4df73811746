import numpy as np
import pytest
from hypothesis import settings

from cmdp_ac.core import CmdpModel
from cmdp_ac.envs import random_cmdp

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def cycle_model(gamma=0.5, num_actions=1, utilities=()):
    """Deterministic cycle s0 -> s1 -> s0 with r0(s0, .) = 1, r0(s1, .) = 0."""
    P = np.zeros((2, num_actions, 2))
    P[0, :, 1] = 1.0
    P[1, :, 0] = 1.0
    r = np.zeros((1 + len(utilities), 2, num_actions))
    r[0, 0, :] = 1.0
    for i, u in enumerate(utilities, start=1):
        r[i] = u
    return CmdpModel(P, r, np.zeros(len(utilities)), [1.0, 0.0], gamma)


def single_state(rewards, gamma=0.9, thresholds=()):
    """One state, ``len(rewards[0])`` actions, self-loop."""
    r = np.asarray(rewards, dtype=float)
    A = r.shape[-1]
    return CmdpModel(np.ones((1, A, 1)), r.reshape(-1, 1, A), list(thresholds), [1.0], gamma)


@pytest.fixture
def cycle():
    return cycle_model()


@pytest.fixture
def small_random():
    return random_cmdp(3, 2, 1, seed=3)


def random_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)
