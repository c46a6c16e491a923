"""Unweighted particle beliefs and rejection-sampling filters for generative domains."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ObservationStarvation
from .pomdp import GenerativeDomain

STARVATION_RATE = 1e-4
TRIAL_BUDGET = 1_000_000

_KEY_WEIGHTS = np.random.default_rng(20240531).random(64) + 0.5


def unique_rows(X):
    """Distinct rows of ``X`` with inverse indices and counts.

    Rows are keyed by a fixed random projection so the sort is
    one-dimensional; a collision (checked exactly) falls back to a full
    lexicographic ``np.unique``. Row order is deterministic but not
    lexicographic.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    if d == 1:
        keys = X[:, 0]
    elif d <= len(_KEY_WEIGHTS):
        keys = X @ _KEY_WEIGHTS[:d]
    else:
        keys = None
    if keys is not None:
        _, first, inv, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
        rows = X[first]
        inv = inv.reshape(-1)
        if d == 1 or np.array_equal(rows[inv], X):
            return rows, inv, counts
    rows, inv, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    return rows, inv.reshape(-1), counts


@dataclass(frozen=True, eq=False)
class ParticleBelief:
    """A belief represented by an unweighted collection of states."""

    particles: np.ndarray
    depth: int = 0
    _unique: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        p = np.array(self.particles, dtype=np.float64, ndmin=2)
        if p.shape[0] == 0:
            raise ValueError("a particle belief needs at least one particle")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "particles", p)

    @classmethod
    def from_unique(cls, rows, counts, depth: int = 0) -> "ParticleBelief":
        """Rebuild from distinct rows (as returned by :meth:`unique`) and counts."""
        b = cls(np.repeat(rows, counts, axis=0), depth)
        object.__setattr__(b, "_unique", (rows, counts))
        return b

    def __len__(self):
        return self.particles.shape[0]

    def unique(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct particle rows and their counts."""
        if self._unique is None:
            rows, _, counts = unique_rows(self.particles)
            object.__setattr__(self, "_unique", (rows, counts))
        return self._unique

    @property
    def id(self) -> str:
        """Order-insensitive digest of the particle multiset."""
        rows, counts = self.unique()
        h = hashlib.blake2b(digest_size=16)
        h.update(np.ascontiguousarray(rows).tobytes())
        h.update(counts.astype(np.int64).tobytes())
        return h.hexdigest()


def initial_belief(domain: GenerativeDomain, nb_particle: int, rng) -> ParticleBelief:
    return ParticleBelief(domain.sample_initial(nb_particle, rng), depth=0)


def empirical_mean_value(b: ParticleBelief, f) -> float:
    """``(1/|b|) sum_s f(s)``; ``f`` maps a ``(n, d)`` state array to ``n`` values."""
    rows, counts = b.unique()
    vals = np.asarray(f(rows), dtype=np.float64)
    return float(counts @ vals / len(b))


def _proposals(domain, particles, action, rng, size):
    idx = rng.integers(0, len(particles), size=size)
    s2, o, r = domain.step(particles[idx], action, rng)
    return s2, o, r


def particle_filter(
    domain: GenerativeDomain,
    b: ParticleBelief,
    a: int,
    o: int,
    nb_particle: int,
    rng: np.random.Generator,
    trial_budget: int = TRIAL_BUDGET,
    chunk: int | None = None,
) -> ParticleBelief:
    """Posterior particles after action ``a`` and observation ``o``.

    States are drawn uniformly from ``b`` and simulated; a successor is kept
    when its simulated observation equals ``o``. Raises
    :class:`ObservationStarvation` when, after ``trial_budget`` proposals,
    the acceptance rate is below 1e-4. If the budget runs out with a higher
    rate but fewer than ``nb_particle`` acceptances, the accepted states are
    resampled with replacement up to ``nb_particle``.
    """
    children = expand(domain, b, a, nb_particle, rng, trial_budget, chunk, only=o)
    if o not in children.beliefs:
        raise ObservationStarvation(
            f"observation {o} after action {a}: acceptance rate below {STARVATION_RATE} "
            f"over {children.attempts} proposals"
        )
    return children.beliefs[o]


@dataclass
class Expansion:
    """Children of a belief under one action, keyed by observation."""

    beliefs: dict
    # empirical Pr(o | b, a) and mean reward from the first nb_particle proposals
    obs_probs: np.ndarray
    mean_reward: float
    attempts: int
    starved: tuple = ()


def expand(
    domain: GenerativeDomain,
    b: ParticleBelief,
    a: int,
    nb_particle: int,
    rng: np.random.Generator,
    trial_budget: int = TRIAL_BUDGET,
    chunk: int | None = None,
    only: int | None = None,
) -> Expansion:
    """Rejection-sample the posterior for every observation of action ``a`` at once.

    Proposals are shared between observations: each simulated successor is
    routed to the bucket of its observation. The first ``nb_particle``
    proposals also give the empirical observation frequencies and the mean
    immediate reward. Observations never seen in those proposals have
    probability zero and get no child.
    """
    if nb_particle < 1:
        raise ValueError("nb_particle must be at least 1")
    chunk = chunk or max(nb_particle, 4096)
    nO = domain.n_observations
    buckets: list[list[np.ndarray]] = [[] for _ in range(nO)]
    filled = np.zeros(nO, dtype=np.int64)
    seen = np.zeros(nO, dtype=np.int64)
    attempts = 0
    probs = None
    mean_r = 0.0
    wanted = np.ones(nO, dtype=bool) if only is None else (np.arange(nO) == only)
    while True:
        size = nb_particle if probs is None else chunk
        size = min(size, max(trial_budget - attempts, 0)) if probs is not None else size
        if size <= 0:
            break
        s2, o, r = _proposals(domain, b.particles, a, rng, size)
        attempts += size
        counts = np.bincount(o, minlength=nO)
        seen += counts
        if probs is None:
            probs = counts / size
            mean_r = float(r.mean())
            if only is None:
                wanted &= counts > 0
        for obs in np.nonzero(wanted & (filled < nb_particle) & (counts > 0))[0]:
            rows = s2[o == obs][: nb_particle - filled[obs]]
            buckets[obs].append(rows)
            filled[obs] += len(rows)
        if not (wanted & (filled < nb_particle)).any():
            break
    beliefs = {}
    starved = []
    for obs in np.nonzero(wanted)[0]:
        if filled[obs] == 0 or seen[obs] / attempts < STARVATION_RATE and filled[obs] < nb_particle:
            starved.append(int(obs))
            continue
        parts = np.concatenate(buckets[obs])
        if len(parts) < nb_particle:
            parts = parts[rng.integers(0, len(parts), size=nb_particle)]
        beliefs[int(obs)] = ParticleBelief(parts, depth=b.depth + 1)
    return Expansion(beliefs, probs, mean_r, attempts, tuple(starved))
