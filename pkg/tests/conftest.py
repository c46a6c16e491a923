import numpy as np
import pytest

from nvipomdp.domains import tiger_domain, tiger_model
from nvipomdp.pomdp import ExplicitPomdp, GenerativeDomain


class ConstantDomain(GenerativeDomain):
    """Deterministic toy simulator: the state never changes and every step pays ``reward``."""

    domain_id = "constant"
    state_dim = 1
    hidden_sizes = (8,)

    def __init__(self, reward=1.0, n_actions=1, discount=0.9, max_episode_steps=400, start=0.0):
        self.reward = float(reward)
        self.actions = tuple(f"a{i}" for i in range(n_actions))
        self.observations = ("o",)
        self.discount = discount
        self.max_episode_steps = max_episode_steps
        self.start = start

    def sample_initial(self, n, rng):
        return np.full((n, 1), self.start)

    def step(self, states, action, rng):
        s = np.array(states, dtype=np.float64, copy=True)
        return s, np.zeros(len(s), dtype=np.int64), np.full(len(s), self.reward)

    def is_terminal(self, states):
        return np.asarray(states)[:, 0] < 0

    @property
    def reward_bounds(self):
        return self.reward, self.reward


def random_model(rng, n_states=3, n_actions=2, n_obs=2, discount=0.9):
    T = rng.random((n_states, n_actions, n_states)) + 0.05
    T /= T.sum(axis=2, keepdims=True)
    O = rng.random((n_actions, n_states, n_obs)) + 0.05
    O /= O.sum(axis=2, keepdims=True)
    R = rng.normal(size=(n_states, n_actions))
    return ExplicitPomdp(
        states=[f"s{i}" for i in range(n_states)],
        actions=[f"a{i}" for i in range(n_actions)],
        observations=[f"o{i}" for i in range(n_obs)],
        transition=T,
        observation_fn=O,
        reward=R,
        discount=discount,
        initial_belief=np.full(n_states, 1.0 / n_states),
    )


def random_belief(rng, n):
    b = rng.random(n)
    return b / b.sum()


@pytest.fixture
def tiger():
    return tiger_model()


@pytest.fixture
def tiger_gen():
    return tiger_domain()


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(n, name, ok, detail)`` prints and records one pass/fail line."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def report(n, name, ok, detail=""):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
