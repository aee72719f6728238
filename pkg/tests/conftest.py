import numpy as np
import pytest

from mfppo.core import MfgModel, TabularPolicy


def one_state_model(horizon=3, reward=1.0, discount=1.0, mode="undiscounted", actions=1):
    return MfgModel(
        num_states=1,
        num_actions=actions,
        horizon=horizon,
        initial_dist=np.array([1.0]),
        transition=lambda s, a, mu: np.array([1.0]),
        reward=lambda s, a, mu: reward,
        discount=discount,
        discount_mode=mode,
    )


STAY_ACTION, RIGHT_ACTION = 0, 1


def chain_model(horizon=2, state_reward=(0.0, 0.0), discount=1.0, mode="undiscounted"):
    """Two states; RIGHT moves 0 -> 1, STAY stays, state 1 is absorbing."""

    def transition(s, a, mu):
        if s == 1 or a == RIGHT_ACTION:
            return np.array([0.0, 1.0])
        return np.array([1.0, 0.0])

    return MfgModel(
        num_states=2,
        num_actions=2,
        horizon=horizon,
        initial_dist=np.array([1.0, 0.0]),
        transition=transition,
        reward=lambda s, a, mu: state_reward[s],
        discount=discount,
        discount_mode=mode,
    )


def random_model(rng, num_states=None, num_actions=None, horizon=None):
    """Small model with mean-field dependent transitions and rewards."""
    S = num_states or int(rng.integers(1, 4))
    A = num_actions or int(rng.integers(1, 3))
    T = horizon if horizon is not None else int(rng.integers(1, 4))
    logits = rng.normal(size=(S, A, S))
    coupling = rng.normal(size=(S, A, S))
    base = rng.normal(size=(S, A))
    crowd = rng.uniform(0.0, 2.0, size=S)
    m0 = rng.dirichlet(np.ones(S))

    def transition(s, a, mu):
        z = logits[s, a] + coupling[s, a] * mu
        p = np.exp(z - z.max())
        return p / p.sum()

    def reward(s, a, mu):
        return base[s, a] - crowd[s] * np.log(mu[s] + 0.1)

    return MfgModel(
        num_states=S,
        num_actions=A,
        horizon=T,
        initial_dist=m0,
        transition=transition,
        reward=reward,
        discount=float(rng.uniform(0.5, 1.0)),
        discount_mode=str(rng.choice(["discounted", "undiscounted"])),
    )


def random_policy(rng, model):
    shape = (model.horizon + 1, model.num_states)
    return TabularPolicy(rng.dirichlet(np.ones(model.num_actions), size=shape))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
