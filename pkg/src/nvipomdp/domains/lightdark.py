"""One-dimensional Light Dark localization problem.

The agent moves one unit left or right, or stops. Observations are the
position plus Gaussian noise whose scale grows with the distance from the
light at x = 10. Stopping inside the goal region |x| < 1 pays +100, stopping
anywhere else costs -100; either way the episode ends. Continuous
observations are mapped to a finite set by a k-means quantizer that is fit
once, at construction, from observations gathered under a uniform-random
policy.

State rows are ``[position, terminal]``.
"""

from __future__ import annotations

import numpy as np

from ..pomdp import GenerativeDomain
from ..rng import DOMAIN, substream
from .discretize import KMeansDiscretizer

LEFT, RIGHT, STOP = 0, 1, 2
LIGHT_POSITION = 10.0
GOAL_RADIUS = 1.0
CORRECT_REWARD = 100.0
WRONG_REWARD = -100.0
INITIAL_MEAN = 2.0
INITIAL_STD = 2.0


def noise_std(x):
    return np.abs(np.asarray(x, dtype=np.float64) - LIGHT_POSITION) / np.sqrt(2.0) + 0.01


class LightDark(GenerativeDomain):
    domain_id = "lightdark"
    hidden_sizes = (128, 64, 32)
    actions = ("left", "right", "stop")
    state_dim = 2

    def __init__(
        self,
        seed: int = 0,
        n_clusters: int = 20,
        n_fit_observations: int = 100_000,
        discount: float = 0.95,
        max_episode_steps: int = 200,
        quantizer: KMeansDiscretizer | None = None,
    ):
        self.seed = int(seed)
        self.n_clusters = int(n_clusters)
        self.discount = float(discount)
        self.max_episode_steps = int(max_episode_steps)
        if quantizer is None:
            samples = self.random_policy_observations(n_fit_observations, substream(self.seed, DOMAIN, 1))
            quantizer = KMeansDiscretizer(n_clusters=self.n_clusters, random_state=self.seed).fit(samples)
        self.quantizer = quantizer
        self.observations = tuple(f"cluster-{i}" for i in range(len(quantizer.cluster_centers_)))

    def sample_initial(self, n, rng):
        s = np.zeros((n, 2))
        s[:, 0] = rng.normal(INITIAL_MEAN, INITIAL_STD, size=n)
        return s

    def is_terminal(self, states):
        return np.asarray(states)[:, 1] > 0.5

    def step_raw(self, states, action, rng):
        """Like :meth:`step` but returns the continuous observation."""
        s = np.array(states, dtype=np.float64, copy=True)
        live = s[:, 1] < 0.5
        r = np.zeros(len(s))
        if action == LEFT:
            s[live, 0] -= 1.0
        elif action == RIGHT:
            s[live, 0] += 1.0
        elif action == STOP:
            at_goal = np.abs(s[:, 0]) < GOAL_RADIUS
            r[live] = np.where(at_goal[live], CORRECT_REWARD, WRONG_REWARD)
            s[live, 1] = 1.0
        else:
            raise ValueError(f"invalid action {action}")
        z = s[:, 0] + noise_std(s[:, 0]) * rng.standard_normal(len(s))
        return s, z, r

    def step(self, states, action, rng):
        s, z, r = self.step_raw(states, action, rng)
        return s, self.quantizer.transform(z), r

    def random_policy_observations(self, n: int, rng) -> np.ndarray:
        """Raw observations along uniform-random-action episodes."""
        out = []
        total = 0
        batch = 4096
        while total < n:
            s = self.sample_initial(batch, rng)
            for _ in range(self.max_episode_steps):
                live = ~self.is_terminal(s)
                if not live.any():
                    break
                s = s[live]
                acts = rng.integers(0, 3, size=len(s))
                nxt = np.empty_like(s)
                z = np.empty(len(s))
                for a in range(3):
                    rows = acts == a
                    nxt[rows], z[rows], _ = self.step_raw(s[rows], a, rng)
                out.append(z)
                total += len(z)
                s = nxt
                if total >= n:
                    break
        return np.concatenate(out)[:n]

    @property
    def reward_bounds(self):
        return WRONG_REWARD, CORRECT_REWARD

    @property
    def value_range(self):
        return WRONG_REWARD, CORRECT_REWARD

    def mdp_values(self, x):
        """Fully observable optimum: walk to the goal, then stop."""
        x = np.abs(np.asarray(x, dtype=np.float64))
        steps = np.where(x < GOAL_RADIUS, 0.0, np.floor(x))
        return CORRECT_REWARD * self.discount**steps

    def mdp_q(self, states):
        s = np.asarray(states)
        x = s[:, 0]
        g = self.discount
        q = np.empty((len(s), 3))
        q[:, LEFT] = g * self.mdp_values(x - 1.0)
        q[:, RIGHT] = g * self.mdp_values(x + 1.0)
        q[:, STOP] = np.where(np.abs(x) < GOAL_RADIUS, CORRECT_REWARD, WRONG_REWARD)
        q[self.is_terminal(s)] = 0.0
        return q

    def describe(self):
        return {
            "domain": self.domain_id,
            "seed": self.seed,
            "n_clusters": self.n_clusters,
            "centroids": self.quantizer.cluster_centers_[:, 0].tolist(),
        }


def lightdark(seed: int = 0, **kwargs) -> LightDark:
    return LightDark(seed=seed, **kwargs)
