"""Exact tabular alpha-vector machinery for explicit POMDPs.

Point-based Bellman backups, PWLC value evaluation, QMDP upper bounds, blind
lower bounds and a brute-force expectimax oracle used to verify them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import BudgetExceeded, EmptySet
from .pomdp import ExplicitPomdp, check_belief

DUPLICATE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AlphaVector:
    values: np.ndarray
    action: int


class AlphaSet:
    """Immutable list of alpha-vectors stored as a ``(n, |S|)`` matrix."""

    def __init__(self, vectors, actions):
        vectors = np.array(vectors, dtype=np.float64, ndmin=2)
        actions = np.array(actions, dtype=np.int64).reshape(-1)
        if vectors.shape[0] != actions.shape[0]:
            raise ValueError("one action per vector required")
        if vectors.size and not np.isfinite(vectors).all():
            raise ValueError("alpha-vectors must be finite")
        vectors.setflags(write=False)
        actions.setflags(write=False)
        self.vectors = vectors
        self.actions = actions

    def __len__(self):
        return self.vectors.shape[0]

    def __getitem__(self, i) -> AlphaVector:
        return AlphaVector(self.vectors[i], int(self.actions[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def contains(self, values) -> bool:
        if not len(self):
            return False
        return bool((np.abs(self.vectors - values).max(axis=1) <= DUPLICATE_TOL).any())

    def add(self, alpha: AlphaVector) -> "AlphaSet":
        """Return the union with ``alpha``; unchanged when it duplicates a member."""
        if self.contains(alpha.values):
            return self
        return AlphaSet(np.vstack([self.vectors, alpha.values]), np.append(self.actions, alpha.action))

    def values_at(self, beliefs) -> np.ndarray:
        """``max_alpha b . alpha`` for each row of ``beliefs``."""
        return (np.atleast_2d(beliefs) @ self.vectors.T).max(axis=1)


def blind_alpha_set(model: ExplicitPomdp) -> AlphaSet:
    """One constant vector per action, ``min_s r(s, a) / (1 - gamma)``.

    Each is the value of repeating that action under the worst state, hence
    a valid lower bound. Value-identical vectors are kept once.
    """
    out = AlphaSet(np.empty((0, model.n_states)), [])
    worst = model.reward.min(axis=0) / (1.0 - model.discount)
    for a in range(model.n_actions):
        out = out.add(AlphaVector(np.full(model.n_states, worst[a]), a))
    return out


def value(gamma_set: AlphaSet, b) -> tuple[float, AlphaVector]:
    """PWLC value of ``b`` and the maximizing vector (lowest index on ties)."""
    if not len(gamma_set):
        raise EmptySet("alpha-vector set is empty")
    b = np.asarray(b, dtype=np.float64)
    scores = gamma_set.vectors @ b
    i = int(np.argmax(scores))
    return float(scores[i]), gamma_set[i]


def _projections(model: ExplicitPomdp, vectors: np.ndarray) -> np.ndarray:
    """``g[a, o, i, s] = sum_s' T(s, a, s') O(a, s', o) alpha_i(s')``."""
    # T: (s, a, s'), O: (a, s', o), alpha: (i, s')
    return np.einsum("sat,ato,it->aois", model.transition, model.observation_fn, vectors, optimize=True)


def backup(model: ExplicitPomdp, gamma_set: AlphaSet, b) -> AlphaSet:
    """Point-based Bellman backup at ``b``; returns ``gamma_set`` plus the new vector."""
    alpha = backup_vector(model, gamma_set, b)
    return gamma_set.add(alpha)


def backup_vector(model: ExplicitPomdp, gamma_set: AlphaSet, b) -> AlphaVector:
    if not len(gamma_set):
        raise EmptySet("alpha-vector set is empty")
    b = check_belief(b, model.n_states)
    g = _projections(model, gamma_set.vectors)
    # b . g[a, o, i] is proportional to tau(b, a, o) . alpha_i with the
    # positive factor Pr(o | b, a), so the argmax is unchanged. Impossible
    # observations score zero for every vector and pick index 0.
    scores = np.einsum("aois,s->aoi", g, b)
    best = scores.argmax(axis=2)
    nA, nO = best.shape
    chosen = g[np.arange(nA)[:, None], np.arange(nO)[None, :], best]  # (a, o, s)
    alpha_a = model.reward.T + model.discount * chosen.sum(axis=1)  # (a, s)
    a_star = int(np.argmax(alpha_a @ b))
    return AlphaVector(alpha_a[a_star].copy(), a_star)


@dataclass
class PbviResult:
    alpha_set: AlphaSet
    iterations: int
    residual: float
    history: list  # per sweep: values at the belief set after the sweep


def pbvi_solve(model: ExplicitPomdp, beliefs, epsilon: float = 1e-4, max_iters: int = 1000, initial=None) -> PbviResult:
    """Sweep backups over ``beliefs`` until values change by at most ``epsilon``."""
    B = np.atleast_2d(np.asarray(beliefs, dtype=np.float64))
    if B.shape[0] == 0:
        raise ValueError("belief set is empty")
    for b in B:
        check_belief(b, model.n_states)
    gamma_set = blind_alpha_set(model) if initial is None else initial
    values = gamma_set.values_at(B)
    history = [values]
    residual = math.inf
    it = 0
    while it < max_iters:
        it += 1
        for b in B:
            gamma_set = backup(model, gamma_set, b)
        new_values = gamma_set.values_at(B)
        residual = float(np.abs(new_values - values).max())
        values = new_values
        history.append(values)
        if residual <= epsilon:
            break
    return PbviResult(gamma_set, it, residual, history)


def reachable_beliefs(model: ExplicitPomdp, depth: int, b0=None, decimals: int = 12) -> np.ndarray:
    """Distinct beliefs reachable from ``b0`` within ``depth`` steps."""
    b0 = model.initial_belief if b0 is None else check_belief(b0, model.n_states)
    seen = {np.round(b0, decimals).tobytes(): b0}
    frontier = [b0]
    for _ in range(depth):
        nxt = []
        for b in frontier:
            pred = np.einsum("s,sat->at", b, model.transition)
            for a in range(model.n_actions):
                for o in range(model.n_observations):
                    un = model.observation_fn[a, :, o] * pred[a]
                    z = un.sum()
                    if z <= 0:
                        continue
                    bn = un / z
                    key = np.round(bn, decimals).tobytes()
                    if key not in seen:
                        seen[key] = bn
                        nxt.append(bn)
        frontier = nxt
    return np.array(list(seen.values()))


def qmdp_bounds(model: ExplicitPomdp, epsilon: float = 1e-6, max_iters: int = 100_000) -> np.ndarray:
    """Q-values of the fully observable MDP, ``Q[s, a]``.

    Iteration starts from ``max r / (1 - gamma)`` and the Bellman operator is
    monotone, so every iterate stays above the optimal Q-function; the result
    is an upper bound whatever the stopping residual.
    """
    g = model.discount
    Q = np.full((model.n_states, model.n_actions), model.reward.max() / (1 - g))
    for _ in range(max_iters):
        V = Q.max(axis=1)
        Q_new = model.reward + g * np.einsum("sat,t->sa", model.transition, V)
        residual = np.abs(Q_new - Q).max()
        Q = Q_new
        if residual <= epsilon:
            break
    return Q


def qmdp_upper_bound(Q: np.ndarray, b) -> float:
    return float((np.asarray(b) @ Q).max())


def controller_alpha_set(model: ExplicitPomdp, actions, edges) -> AlphaSet:
    """Exact alpha-vector of every controller node.

    ``actions[n]`` is node ``n``'s action and ``edges[n, o]`` its successor
    after observation ``o``. Solves the linear system
    ``alpha_n = r(., a_n) + gamma sum_o T_a diag(O_a[:, o]) alpha_{edges[n, o]}``.
    """
    actions = np.asarray(actions, dtype=np.int64)
    edges = np.asarray(edges, dtype=np.int64).reshape(len(actions), model.n_observations)
    N, nS = len(actions), model.n_states
    A = np.eye(N * nS)
    rhs = np.empty(N * nS)
    for n, a in enumerate(actions):
        rows = slice(n * nS, (n + 1) * nS)
        rhs[rows] = model.reward[:, a]
        for o in range(model.n_observations):
            m = edges[n, o]
            A[rows, m * nS:(m + 1) * nS] -= model.discount * model.transition[:, a, :] * model.observation_fn[a, :, o][None, :]
    return AlphaSet(np.linalg.solve(A, rhs).reshape(N, nS), actions)


def expectimax_oracle(model: ExplicitPomdp, b, depth: int, node_limit: int = 5_000_000, decimals: int = 12) -> float:
    """Optimal ``depth``-step value of ``b`` by exhaustive lookahead.

    Repeated (belief, depth) pairs are memoized on the belief rounded to
    ``decimals`` places. Raises :class:`BudgetExceeded` once more than
    ``node_limit`` distinct pairs have been expanded.
    """
    if depth < 0:
        raise ValueError("depth must be non-negative")
    b = check_belief(b, model.n_states)
    T, O, R, g = model.transition, model.observation_fn, model.reward, model.discount
    memo: dict[tuple[bytes, int], float] = {}

    def rec(belief, d):
        if d == 0:
            return 0.0
        key = (np.round(belief, decimals).tobytes(), d)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if len(memo) >= node_limit:
            raise BudgetExceeded(f"expectimax expanded more than {node_limit} nodes")
        pred = np.einsum("s,sat->at", belief, T)
        best = -math.inf
        for a in range(model.n_actions):
            q = float(belief @ R[:, a])
            if d > 1:
                joint = O[a] * pred[a][:, None]  # (s', o)
                p_o = joint.sum(axis=0)
                for o in np.nonzero(p_o > 0)[0]:
                    q += g * p_o[o] * rec(joint[:, o] / p_o[o], d - 1)
            best = max(best, q)
        memo[key] = best
        return best

    return rec(b, depth)


def save_alpha_set(gamma_set: AlphaSet, model: ExplicitPomdp, path) -> None:
    """Write one line per vector: the action label, then the values (tab-separated)."""
    lines = ["# action\t" + "\t".join(model.states)]
    for alpha in gamma_set:
        lines.append("\t".join([model.actions[alpha.action]] + [repr(float(v)) for v in alpha.values]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_alpha_set(model: ExplicitPomdp, path) -> AlphaSet:
    vectors, actions = [], []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        label, *vals = line.split("\t")
        actions.append(model.actions.index(label))
        vectors.append([float(v) for v in vals])
    return AlphaSet(np.array(vectors).reshape(len(vectors), model.n_states), actions)


class PBVISolver(BaseEstimator):
    """Point-based value iteration as an estimator.

    ``fit(model, beliefs)`` runs :func:`pbvi_solve`; ``predict`` maps belief
    rows to actions and ``value`` to PWLC values. When ``beliefs`` is omitted
    the set reachable from the initial belief within ``expansion_depth`` steps
    is used.
    """

    def __init__(self, epsilon=1e-4, max_iters=1000, expansion_depth=3):
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.expansion_depth = expansion_depth

    def fit(self, model: ExplicitPomdp, beliefs=None):
        if beliefs is None:
            beliefs = reachable_beliefs(model, self.expansion_depth)
        beliefs = check_array(beliefs, dtype=np.float64)
        res = pbvi_solve(model, beliefs, self.epsilon, self.max_iters)
        self.model_ = model
        self.alpha_set_ = res.alpha_set
        self.n_iter_ = res.iterations
        self.residual_ = res.residual
        return self

    def _scores(self, B):
        check_is_fitted(self, "alpha_set_")
        B = check_array(np.atleast_2d(B), dtype=np.float64)
        return B @ self.alpha_set_.vectors.T

    def value(self, B) -> np.ndarray:
        return self._scores(B).max(axis=1)

    def predict(self, B) -> np.ndarray:
        return self.alpha_set_.actions[self._scores(B).argmax(axis=1)]
