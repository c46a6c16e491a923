"""POMDP model abstractions: explicit tabular models and generative simulators.

Explicit models hold dense tables and support exact belief arithmetic. Large
domains only expose a batched simulator (:class:`GenerativeDomain`). Any
explicit model can be wrapped as a simulator with :class:`ExplicitDomain`, so
every solver path runs on both kinds.

States of a generative domain are rows of a float array of fixed width
``state_dim``; all simulator methods are batched over rows.
"""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import InvalidModel, ZeroProbabilityObservation

PROB_TOL = 1e-12


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ExplicitPomdp:
    """Finite POMDP with dense tables.

    ``transition[s, a, s']``, ``observation_fn[a, s', o]`` and ``reward[s, a]``.
    """

    states: tuple[str, ...]
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    transition: np.ndarray
    observation_fn: np.ndarray
    reward: np.ndarray
    discount: float
    initial_belief: np.ndarray
    name: str = "explicit"

    def __post_init__(self):
        for attr in ("states", "actions", "observations"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        for attr in ("transition", "observation_fn", "reward", "initial_belief"):
            object.__setattr__(self, attr, _readonly(getattr(self, attr)))
        nS, nA, nO = len(self.states), len(self.actions), len(self.observations)
        T, O, R, b0 = self.transition, self.observation_fn, self.reward, self.initial_belief
        if min(nS, nA, nO) == 0:
            raise InvalidModel("states, actions and observations must be nonempty")
        if T.shape != (nS, nA, nS):
            raise InvalidModel(f"transition shape {T.shape} != {(nS, nA, nS)}")
        if O.shape != (nA, nS, nO):
            raise InvalidModel(f"observation_fn shape {O.shape} != {(nA, nS, nO)}")
        if R.shape != (nS, nA):
            raise InvalidModel(f"reward shape {R.shape} != {(nS, nA)}")
        if b0.shape != (nS,):
            raise InvalidModel(f"initial_belief shape {b0.shape} != {(nS,)}")
        if (T < 0).any() or (O < 0).any() or (b0 < 0).any():
            raise InvalidModel("probabilities must be non-negative")
        if np.abs(T.sum(axis=2) - 1.0).max() > PROB_TOL:
            raise InvalidModel("transition rows must sum to 1")
        if np.abs(O.sum(axis=2) - 1.0).max() > PROB_TOL:
            raise InvalidModel("observation rows must sum to 1")
        if abs(b0.sum() - 1.0) > PROB_TOL:
            raise InvalidModel("initial belief must sum to 1")
        if not np.isfinite(R).all():
            raise InvalidModel("rewards must be finite")
        if not 0.0 < self.discount < 1.0:
            raise InvalidModel(f"discount must lie in (0, 1), got {self.discount}")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    def predict_states(self, b, a: int) -> np.ndarray:
        """One-step predicted state distribution ``sum_s T(s, a, .) b(s)``."""
        return np.asarray(b, dtype=np.float64) @ self.transition[:, a, :]


def check_belief(b, n_states: int | None = None) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise ValueError(f"belief must be 1-D, got shape {b.shape}")
    if n_states is not None and b.shape[0] != n_states:
        raise ValueError(f"belief has {b.shape[0]} entries, model has {n_states} states")
    if (b < 0).any() or abs(b.sum() - 1.0) > 1e-9:
        raise ValueError("belief entries must be non-negative and sum to 1")
    return b


def obs_probability(model: ExplicitPomdp, b, a: int, o: int) -> float:
    """``Pr(o | b, a)``."""
    b = check_belief(b, model.n_states)
    return float(model.predict_states(b, a) @ model.observation_fn[a, :, o])


def belief_update(model: ExplicitPomdp, b, a: int, o: int) -> np.ndarray:
    """Bayes filter: posterior over next states after acting ``a`` and seeing ``o``."""
    b = check_belief(b, model.n_states)
    unnorm = model.observation_fn[a, :, o] * model.predict_states(b, a)
    z = unnorm.sum()
    if z <= 0.0:
        raise ZeroProbabilityObservation(
            f"observation {model.observations[o]!r} impossible after action {model.actions[a]!r}"
        )
    return unnorm / z


def belief_reward(model: ExplicitPomdp, b, a: int) -> float:
    b = check_belief(b, model.n_states)
    return float(b @ model.reward[:, a])


# --------------------------------------------------------------------------
# model files


def _index_table(spec, names: list[str]):
    if isinstance(spec, dict):
        return [spec[n] for n in names]
    return spec


def load_explicit_pomdp(path) -> ExplicitPomdp:
    """Load an explicit model from a JSON file.

    Schema::

        {
          "name": "tiger",                       # optional
          "states": ["tiger-left", ...],
          "actions": ["listen", ...],
          "observations": ["hear-left", ...],
          "discount": 0.95,
          "initial_belief": [0.5, 0.5],          # or {"state": prob}
          "transition":  [[[p(s'|s,a) for s'] for a] for s],
          "observation": [[[p(o|s',a) for o] for s'] for a],
          "reward":      [[r(s,a) for a] for s]
        }
    """
    data = json.loads(Path(path).read_text())
    states = list(data["states"])
    b0 = data.get("initial_belief")
    if b0 is None:
        b0 = [1.0 / len(states)] * len(states)
    elif isinstance(b0, dict):
        b0 = [float(b0.get(s, 0.0)) for s in states]
    return ExplicitPomdp(
        states=states,
        actions=data["actions"],
        observations=data["observations"],
        transition=data["transition"],
        observation_fn=data["observation"],
        reward=data["reward"],
        discount=float(data["discount"]),
        initial_belief=b0,
        name=data.get("name", Path(path).stem),
    )


def save_explicit_pomdp(model: ExplicitPomdp, path) -> None:
    data = {
        "name": model.name,
        "states": list(model.states),
        "actions": list(model.actions),
        "observations": list(model.observations),
        "discount": model.discount,
        "initial_belief": model.initial_belief.tolist(),
        "transition": model.transition.tolist(),
        "observation": model.observation_fn.tolist(),
        "reward": model.reward.tolist(),
    }
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


# --------------------------------------------------------------------------
# generative domains


class GenerativeDomain(abc.ABC):
    """Black-box POMDP simulator.

    Subclasses set ``actions``, ``observations``, ``discount``,
    ``max_episode_steps``, ``state_dim`` and ``domain_id`` and implement the
    batched methods below. ``step`` must be a pure function of its inputs and
    the generator state, which makes trajectories replayable.
    """

    actions: tuple[str, ...]
    observations: tuple[str, ...]
    discount: float
    max_episode_steps: int
    state_dim: int
    domain_id: str = "generative"
    # states are finitely many and hashable row-wise (enables exact belief
    # histograms for upper-bound interpolation)
    discrete_states: bool = False
    # per-domain MLP hidden sizes for alpha networks
    hidden_sizes: tuple[int, ...] = (128, 64, 32)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    @abc.abstractmethod
    def sample_initial(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` initial states, shape ``(n, state_dim)``."""

    @abc.abstractmethod
    def step(self, states: np.ndarray, action: int, rng: np.random.Generator):
        """Simulate ``action`` from every row; returns ``(next_states, obs, rewards)``."""

    @abc.abstractmethod
    def is_terminal(self, states: np.ndarray) -> np.ndarray:
        """Boolean mask of absorbing states."""

    def vectorize(self, states: np.ndarray) -> np.ndarray:
        """Network input features; identity by default."""
        return np.asarray(states, dtype=np.float64)

    @property
    def feature_dim(self) -> int:
        return self.vectorize(np.zeros((1, self.state_dim))).shape[1]

    def mdp_q(self, states: np.ndarray) -> np.ndarray | None:
        """Upper bound on the fully observable Q-values, shape ``(n, |A|)``.

        Domains without a cheap MDP heuristic return ``None``.
        """
        return None

    def sample_states(self, n: int, rng: np.random.Generator) -> np.ndarray | None:
        """``n`` non-terminal states spread over the whole state space.

        Used for training data when available; domains without such a
        sampler return ``None`` and states come from random-action rollouts.
        """
        return None

    @property
    def reward_bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def value_range(self) -> tuple[float, float]:
        """Bounds on any policy's expected discounted return."""
        lo, hi = self.reward_bounds
        g = self.discount
        return min(lo, 0.0) / (1 - g), max(hi, 0.0) / (1 - g)

    def describe(self) -> dict:
        """Parameters identifying the instance (written into policy headers)."""
        return {"domain": self.domain_id}


@dataclass(eq=False)
class ExplicitDomain(GenerativeDomain):
    """Sampling wrapper around an :class:`ExplicitPomdp`.

    A state row holds the state index. ``vectorize`` is one-hot unless a
    feature table of shape ``(|S|, d)`` is supplied.
    """

    model: ExplicitPomdp
    features: np.ndarray | None = None
    max_episode_steps: int = 200
    domain_id: str = "explicit"
    hidden_sizes: tuple[int, ...] = (32, 32)
    _cum_T: np.ndarray = field(init=False, repr=False)
    _cum_O: np.ndarray = field(init=False, repr=False)
    _cum_b0: np.ndarray = field(init=False, repr=False)

    discrete_states = True
    state_dim = 1

    def __post_init__(self):
        m = self.model
        self.actions = m.actions
        self.observations = m.observations
        self.discount = m.discount
        if self.features is None:
            self.features = np.eye(m.n_states)
        self.features = _readonly(self.features)
        if self.features.shape[0] != m.n_states:
            raise InvalidModel("feature table needs one row per state")
        self._cum_T = np.cumsum(m.transition, axis=2)
        self._cum_O = np.cumsum(m.observation_fn, axis=2)
        self._cum_b0 = np.cumsum(m.initial_belief)

    @staticmethod
    def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
        # cum: (n, k) rows of cumulative probabilities
        idx = (u[:, None] >= cum).sum(axis=1)
        return np.minimum(idx, cum.shape[1] - 1)

    def state_index(self, states) -> np.ndarray:
        return np.asarray(states, dtype=np.float64)[:, 0].astype(np.int64)

    def sample_initial(self, n, rng):
        u = rng.random(n)
        idx = self._draw(np.broadcast_to(self._cum_b0, (n, self.model.n_states)), u)
        return idx.astype(np.float64)[:, None]

    def step(self, states, action, rng):
        s = self.state_index(states)
        n = s.shape[0]
        u = rng.random((2, n))
        s2 = self._draw(self._cum_T[s, action, :], u[0])
        o = self._draw(self._cum_O[action, s2, :], u[1])
        r = self.model.reward[s, action].copy()
        return s2.astype(np.float64)[:, None], o, r

    def is_terminal(self, states):
        return np.zeros(len(states), dtype=bool)

    def vectorize(self, states):
        return self.features[self.state_index(states)]

    def mdp_q(self, states):
        from .exact import qmdp_bounds

        if not hasattr(self, "_q"):
            self._q = qmdp_bounds(self.model, 1e-9)
        return self._q[self.state_index(states)]

    @property
    def reward_bounds(self):
        return float(self.model.reward.min()), float(self.model.reward.max())

    def describe(self):
        return {"domain": self.domain_id}
