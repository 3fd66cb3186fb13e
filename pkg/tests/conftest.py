import numpy as np
import pytest

from opshape.environments import build_env
from opshape.intrinsic import IMConfig
from opshape.mdp import Mdp


@pytest.fixture
def chest():
    return build_env("two_path_chest")


@pytest.fixture
def hack_im():
    """The never-decaying 0.6 bonus on the worse branch of two_path_chest."""
    return IMConfig(kind="count", beta=0.6, states=("R1",), noisy_states=("R1",))


def random_mdp(rng: np.random.Generator, S: int, A: int, N: int, gamma: float = 0.9,
               sparse: bool = False) -> Mdp:
    P = rng.random((S, A, S))
    if sparse:
        P *= rng.random((S, A, S)) < 0.5
        P[np.arange(S)[:, None], np.arange(A)[None, :], rng.integers(0, S, (S, A))] += 0.1
    P /= P.sum(axis=2, keepdims=True)
    R = rng.normal(size=(N, S, A, S))
    start = np.zeros(S)
    start[0] = 1.0
    return Mdp(S, A, start, P, R, gamma, N)


def mc_returns(mdp: Mdp, policy: np.ndarray, episodes: int, seed: int) -> np.ndarray:
    """Vectorized Monte-Carlo discounted extrinsic returns (terminal-aware)."""
    rng = np.random.default_rng(seed)
    S, A = mdp.num_states, mdp.num_actions
    s = rng.choice(S, size=episodes, p=mdp.start)
    alive = np.ones(episodes, dtype=bool)
    total = np.zeros(episodes)
    cum_p = np.cumsum(mdp.transition, axis=2)
    terminal = np.zeros(S, dtype=bool)
    terminal[list(mdp.terminal_states)] = True
    for t in range(mdp.horizon):
        cum_pi = np.cumsum(policy[t, s], axis=1)
        a = np.minimum((rng.random((episodes, 1)) > cum_pi).sum(axis=1), A - 1)
        s2 = np.minimum((rng.random((episodes, 1)) > cum_p[s, a]).sum(axis=1), S - 1)
        total += alive * mdp.gamma_e ** t * mdp.reward[t, s, a, s2]
        alive &= ~terminal[s2]
        s = s2
    return total
