"""RockSample(n, k): a rover collecting good rocks on an n x n grid.

State rows are ``[x, y, terminal, status_1, ..., status_k]`` with 1-based
grid coordinates and status 1 for a good rock.

Actions: north, east, south, west, sample, check-1 .. check-k.
Observations: good, bad, none. Checking rock ``i`` reports its status
correctly with probability ``0.5 * (1 + 2 ** (-d / d0))`` where ``d`` is the
Euclidean distance to the rock. Sampling a good rock pays +10 and turns it
bad; sampling a bad rock costs -10; sampling an empty cell does nothing.
Moving east off the grid pays +10 and ends the episode; other walls block.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..exceptions import InvalidConfiguration
from ..pomdp import GenerativeDomain
from ..rng import DOMAIN, substream

NORTH, EAST, SOUTH, WEST, SAMPLE = range(5)
GOOD, BAD, NONE = 0, 1, 2

ROCK_REWARD = 10.0
EXIT_REWARD = 10.0
BAD_ROCK_PENALTY = -10.0
HALF_EFFICIENCY_DISTANCE = 20.0
# exact MDP value iteration below this many fully observable states
EXACT_MDP_LIMIT = 2_000_000


def sensor_accuracy(d, d0=HALF_EFFICIENCY_DISTANCE):
    return 0.5 * (1.0 + np.power(2.0, -np.asarray(d, dtype=np.float64) / d0))


def random_rock_positions(n: int, k: int, seed: int) -> list[tuple[int, int]]:
    if k > n * n:
        raise InvalidConfiguration(f"cannot place {k} rocks on a {n}x{n} grid")
    rng = substream(seed, DOMAIN, 0)
    cells = rng.choice(n * n, size=k, replace=False)
    return [(int(c // n) + 1, int(c % n) + 1) for c in cells]


class RockSample(GenerativeDomain):
    domain_id = "rocksample"
    discrete_states = True
    hidden_sizes = (128, 64, 64)

    def __init__(
        self,
        n: int,
        k: int,
        rock_positions=None,
        seed: int = 0,
        start=(1, 1),
        discount: float = 0.95,
        max_episode_steps: int = 200,
    ):
        if n < 2 or k < 1:
            raise InvalidConfiguration(f"RockSample needs n >= 2 and k >= 1, got n={n}, k={k}")
        if rock_positions is None:
            rock_positions = random_rock_positions(n, k, seed)
        rocks = np.array([tuple(p) for p in rock_positions], dtype=np.int64).reshape(-1, 2)
        if len(rocks) != k:
            raise InvalidConfiguration(f"expected {k} rock positions, got {len(rocks)}")
        if ((rocks < 1) | (rocks > n)).any():
            raise InvalidConfiguration("rock positions must lie inside the grid")
        if len({tuple(r) for r in rocks.tolist()}) != k:
            raise InvalidConfiguration("rock positions must be distinct")
        sx, sy = start
        if not (1 <= sx <= n and 1 <= sy <= n):
            raise InvalidConfiguration("start position must lie inside the grid")
        self.n, self.k, self.seed = int(n), int(k), int(seed)
        self.rocks = rocks
        self.rocks.setflags(write=False)
        self.start = (int(sx), int(sy))
        self.discount = float(discount)
        self.max_episode_steps = int(max_episode_steps)
        self.state_dim = 3 + self.k
        self.actions = ("north", "east", "south", "west", "sample") + tuple(
            f"check-{i + 1}" for i in range(self.k)
        )
        self.observations = ("good", "bad", "none")
        rock_at = np.full((n + 2, n + 2), -1, dtype=np.int64)
        for i, (x, y) in enumerate(rocks):
            rock_at[x, y] = i
        self._rock_at = rock_at
        self._mdp_values = None

    # -- simulator ---------------------------------------------------------

    def sample_initial(self, n, rng):
        s = np.zeros((n, self.state_dim))
        s[:, 0], s[:, 1] = self.start
        s[:, 3:] = rng.random((n, self.k)) < 0.5
        return s

    def is_terminal(self, states):
        return np.asarray(states)[:, 2] > 0.5

    def vectorize(self, states):
        # one-hot column and row, terminal flag, rock statuses
        s = np.asarray(states, dtype=np.float64)
        m = len(s)
        f = np.zeros((m, 2 * self.n + 1 + self.k))
        rows = np.arange(m)
        f[rows, np.clip(s[:, 0].astype(np.int64), 1, self.n) - 1] = 1.0
        f[rows, self.n + np.clip(s[:, 1].astype(np.int64), 1, self.n) - 1] = 1.0
        f[:, 2 * self.n :] = s[:, 2:]
        return f

    def sample_states(self, n, rng):
        # uniform over cells and rock statuses; random walks from the start
        # rarely reach the far side of the grid
        s = np.zeros((n, self.state_dim))
        s[:, 0] = rng.integers(1, self.n + 1, size=n)
        s[:, 1] = rng.integers(1, self.n + 1, size=n)
        s[:, 3:] = rng.random((n, self.k)) < 0.5
        return s

    def step(self, states, action, rng):
        s = np.array(states, dtype=np.float64, copy=True)
        m = s.shape[0]
        term = s[:, 2] > 0.5
        live = ~term
        r = np.zeros(m)
        o = np.full(m, NONE, dtype=np.int64)
        x = s[:, 0].astype(np.int64)
        y = s[:, 1].astype(np.int64)
        if action == NORTH:
            s[live, 1] = np.minimum(y[live] + 1, self.n)
        elif action == SOUTH:
            s[live, 1] = np.maximum(y[live] - 1, 1)
        elif action == WEST:
            s[live, 0] = np.maximum(x[live] - 1, 1)
        elif action == EAST:
            exits = live & (x == self.n)
            s[live & ~exits, 0] = x[live & ~exits] + 1
            s[exits, 2] = 1.0
            r[exits] = EXIT_REWARD
        elif action == SAMPLE:
            idx = self._rock_at[x, y]
            on_rock = live & (idx >= 0)
            rows = np.nonzero(on_rock)[0]
            cols = 3 + idx[rows]
            good = s[rows, cols] > 0.5
            r[rows] = np.where(good, ROCK_REWARD, BAD_ROCK_PENALTY)
            s[rows, cols] = 0.0
        else:
            i = action - 5
            if not 0 <= i < self.k:
                raise ValueError(f"invalid action {action}")
            d = np.hypot(x - self.rocks[i, 0], y - self.rocks[i, 1])
            correct = rng.random(m) < sensor_accuracy(d)
            good = s[:, 3 + i] > 0.5
            o = np.where(good == correct, GOOD, BAD)
            o[term] = NONE
        return s, o, r

    # -- bounds --------------------------------------------------------------

    @property
    def reward_bounds(self):
        return BAD_ROCK_PENALTY, ROCK_REWARD

    @property
    def value_range(self):
        return BAD_ROCK_PENALTY / (1 - self.discount), ROCK_REWARD * self.k + EXIT_REWARD

    def _state_index(self, states):
        s = np.asarray(states)
        x = s[:, 0].astype(np.int64) - 1
        y = s[:, 1].astype(np.int64) - 1
        mask = (s[:, 3:] > 0.5).astype(np.int64) @ (1 << np.arange(self.k, dtype=np.int64))
        return x * self.n + y, mask

    def _solve_mdp(self):
        """Value iteration on the fully observable RockSample MDP."""
        n, k, g = self.n, self.k, self.discount
        masks = np.arange(1 << k)
        cells = np.arange(n * n)
        cx, cy = cells // n, cells % n
        north = cx * n + np.minimum(cy + 1, n - 1)
        south = cx * n + np.maximum(cy - 1, 0)
        west = np.maximum(cx - 1, 0) * n + cy
        east = np.minimum(cx + 1, n - 1) * n + cy
        exits = cx == n - 1
        rock = self._rock_at[cx + 1, cy + 1]
        has_rock = rock >= 0
        bit = np.where(has_rock, 1 << np.maximum(rock, 0), 0)
        good = (masks[None, :] & bit[:, None]) > 0
        sample_mask = np.where(good, masks[None, :] & ~bit[:, None], masks[None, :])
        sample_r = np.where(good, ROCK_REWARD, np.where(has_rock[:, None], BAD_ROCK_PENALTY, 0.0))
        V = np.full((n * n, 1 << k), (ROCK_REWARD * k + EXIT_REWARD) / (1 - g))
        rows = np.arange(n * n)[:, None]
        for _ in range(100_000):
            q_move = g * np.stack([V[north], V[south], V[west]])
            q_east = np.where(exits[:, None], EXIT_REWARD, g * V[east])
            q_sample = sample_r + g * V[rows, sample_mask]
            q_check = g * V
            V_new = np.maximum.reduce([q_move.max(axis=0), q_east, q_sample, q_check])
            delta = np.abs(V_new - V).max()
            V = V_new
            if delta < 1e-10:
                break
        return V

    def _next_index(self, cell, mask, action):
        n = self.n
        cx, cy = cell // n, cell % n
        if action == NORTH:
            return cx * n + np.minimum(cy + 1, n - 1), mask, 0.0
        if action == SOUTH:
            return cx * n + np.maximum(cy - 1, 0), mask, 0.0
        if action == WEST:
            return np.maximum(cx - 1, 0) * n + cy, mask, 0.0
        raise AssertionError

    def _upper_values(self, cell, mask):
        """Optimistic state values: every good rock and the exit reached by a shortest path."""
        if self._mdp_values is not None:
            return self._mdp_values[cell, mask]
        g, n = self.discount, self.n
        cx, cy = cell // n + 1, cell % n + 1
        v = EXIT_REWARD * g ** (n - cx)
        for i, (rx, ry) in enumerate(self.rocks):
            d = np.abs(cx - rx) + np.abs(cy - ry)
            v = v + np.where((mask >> i) & 1, ROCK_REWARD * g**d, 0.0)
        return v

    def mdp_q(self, states):
        if self._mdp_values is None and self.n * self.n * (1 << self.k) <= EXACT_MDP_LIMIT:
            self._mdp_values = self._solve_mdp()
        s = np.asarray(states)
        cell, mask = self._state_index(s)
        g, n = self.discount, self.n
        cx, cy = cell // n, cell % n
        q = np.empty((len(s), self.n_actions))
        for a in (NORTH, SOUTH, WEST):
            c2, m2, _ = self._next_index(cell, mask, a)
            q[:, a] = g * self._upper_values(c2, m2)
        q[:, EAST] = np.where(
            cx == n - 1, EXIT_REWARD, g * self._upper_values(np.minimum(cx + 1, n - 1) * n + cy, mask)
        )
        rock = self._rock_at[cx + 1, cy + 1]
        bit = np.where(rock >= 0, 1 << np.maximum(rock, 0), 0)
        good = (mask & bit) > 0
        m2 = np.where(good, mask & ~bit, mask)
        r = np.where(good, ROCK_REWARD, np.where(rock >= 0, BAD_ROCK_PENALTY, 0.0))
        q[:, SAMPLE] = r + g * self._upper_values(cell, m2)
        q[:, 5:] = (g * self._upper_values(cell, mask))[:, None]
        q[self.is_terminal(s)] = 0.0
        return q

    def describe(self):
        return {
            "domain": self.domain_id,
            "n": self.n,
            "k": self.k,
            "seed": self.seed,
            "rocks": self.rocks.tolist(),
            "start": list(self.start),
        }


def rocksample(n: int, k: int, rock_positions=None, seed: int = 0, **kwargs) -> RockSample:
    return RockSample(n, k, rock_positions=rock_positions, seed=seed, **kwargs)


def load_rocksample_instance(path) -> RockSample:
    """Read an instance file.

    JSON schema: ``{"n": 7, "k": 8, "seed": 3, "rocks": [[x, y], ...]}``;
    ``rocks`` may be omitted, in which case positions are drawn from ``seed``.
    """
    data = json.loads(Path(path).read_text())
    return RockSample(int(data["n"]), int(data["k"]), rock_positions=data.get("rocks"), seed=int(data.get("seed", 0)))


def save_rocksample_instance(domain: RockSample, path) -> None:
    d = domain.describe()
    data = {"n": d["n"], "k": d["k"], "seed": d["seed"], "rocks": d["rocks"]}
    Path(path).write_text(json.dumps(data) + "\n")
