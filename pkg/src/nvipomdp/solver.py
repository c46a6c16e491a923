"""Neural value iteration.

The solver alternates two phases until the bound gap at the initial belief
closes:

* belief collection: a heuristic descent through a particle belief tree,
  guided by an upper bound (MDP heuristic refined by backed-up tree values)
  and the controller's lower bound;
* neural backups at the collected beliefs, deepest first, each of which may
  append one node to the finite-network controller.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .controller import Fnc, FscNode, blind_values, fnc_policy, fnc_to_fsc, node_is_unique
from .exceptions import InvalidConfiguration, MalformedTrace
from .neural import Mlp, TrainConfig, TrainReport, predict_batch, train_with_retry
from .particles import TRIAL_BUDGET, ParticleBelief, expand, initial_belief, particle_filter, unique_rows
from .pomdp import ExplicitDomain, GenerativeDomain, belief_reward, belief_update, obs_probability
from .rng import BACKUP, BELIEF, GENDATA, TRAIN, child_seed, substream

TRACE_COLUMNS = ("backup_index", "upper", "lower", "controller_size")
TIMING_COLUMNS = ("backup_index", "wall_seconds")

# explicit models up to this many states get corner-value refinement
CORNER_UPDATE_LIMIT = 64

CONVERGED = "converged"
BUDGET_EXCEEDED = "budget exceeded"
MAX_BACKUPS = "max backups"


@dataclass
class SolverConfig:
    nb_particle: int = 10_000
    nb_sim: int = 100
    nb_sample: int = 1000
    epsilon: float | None = None  # None: 1% of the domain's return range
    max_depth: int = 50
    time_budget: float = math.inf  # seconds
    max_backups: int | None = None
    seed: int = 0
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    hidden_sizes: tuple[int, ...] | None = None  # None: the domain's default
    rollout_steps: int | None = None  # None: the domain's max_episode_steps
    child_particles: int = 1000  # particles kept for unvisited continuous-state children
    trial_budget: int = TRIAL_BUDGET
    excess_stop: bool = True
    upper_bound: str = "auto"  # "auto" | "constant"

    def __post_init__(self):
        if isinstance(self.train_cfg, dict):
            self.train_cfg = TrainConfig(**self.train_cfg)
        if self.hidden_sizes is not None:
            self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.time_budget is None:
            self.time_budget = math.inf
        for name in ("nb_particle", "nb_sim", "nb_sample", "max_depth", "child_particles", "trial_budget"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfiguration(f"{name} must be a positive integer")
        if self.max_depth < 1:
            raise InvalidConfiguration("max_depth must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidConfiguration("epsilon must be positive")
        if self.time_budget < 0:
            raise InvalidConfiguration("time_budget must be non-negative")
        if self.max_backups is not None and self.max_backups < 0:
            raise InvalidConfiguration("max_backups must be non-negative")
        if self.seed < 0:
            raise InvalidConfiguration("seed must be non-negative")
        if self.upper_bound not in ("auto", "constant"):
            raise InvalidConfiguration(f"unknown upper_bound {self.upper_bound!r}")
        if self.hidden_sizes is not None and (not self.hidden_sizes or min(self.hidden_sizes) < 1):
            raise InvalidConfiguration("hidden_sizes must be positive widths")

    def resolved_epsilon(self, domain: GenerativeDomain) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        lo, hi = domain.value_range
        return 0.01 * (hi - lo)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["time_budget"] = None if math.isinf(self.time_budget) else self.time_budget
        d["hidden_sizes"] = None if self.hidden_sizes is None else list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfiguration(f"unknown solver settings: {sorted(unknown)}")
        data = dict(data)
        if isinstance(data.get("train_cfg"), dict):
            tk = {f.name for f in dataclasses.fields(TrainConfig)}
            bad = set(data["train_cfg"]) - tk
            if bad:
                raise InvalidConfiguration(f"unknown training settings: {sorted(bad)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise InvalidConfiguration(str(exc)) from exc


def load_config(path) -> SolverConfig:
    """Read a JSON solver config; every key is optional."""
    path = Path(path)
    if not path.is_file():
        raise InvalidConfiguration(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfiguration(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfiguration(f"{path}: expected a JSON object")
    return SolverConfig.from_dict(data)


# --------------------------------------------------------------------------
# upper bounds


def qmdp_surrogate(domain: GenerativeDomain, cfg: SolverConfig | None = None):
    """Map states ``(n, d)`` to upper bounds on the fully observable ``Q(s, a)``.

    Uses the domain's MDP heuristic when it has one (exact QMDP for explicit
    models) and the constant ``R_max / (1 - gamma)`` otherwise. Terminal
    states are worth 0.
    """
    hi = domain.value_range[1]
    use_domain = cfg is None or cfg.upper_bound == "auto"

    def q(states):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        out = domain.mdp_q(states) if use_domain else None
        if out is None:
            out = np.full((len(states), domain.n_actions), hi)
        out = np.array(out, dtype=np.float64)
        out[domain.is_terminal(states)] = 0.0
        return out

    return q


class SawtoothBound:
    """Sawtooth interpolation over beliefs with discrete state support.

    Corner values are ``max_a Q(s, a)`` from the MDP heuristic. Each stored
    point ``(b_i, v_i)`` tightens the bound at ``b`` to
    ``c.b + (v_i - c.b_i) min_{s in supp b_i} b(s) / b_i(s)``.
    """

    def __init__(self, qfun):
        self.qfun = qfun
        self.key_ids: dict[bytes, int] = {}
        self.corner = np.empty(0)
        self._ids: list[np.ndarray] = []
        self._probs: list[np.ndarray] = []
        self._cdot: list[float] = []
        self._vals: list[float] = []
        self._cache = None

    def encode(self, rows, counts) -> tuple[np.ndarray, np.ndarray]:
        """Global state ids and probabilities of a compressed belief."""
        rows = np.ascontiguousarray(rows)
        ids = np.empty(len(rows), dtype=np.int64)
        new = []
        for i, row in enumerate(rows):
            key = row.tobytes()
            j = self.key_ids.get(key)
            if j is None:
                j = len(self.key_ids)
                new.append(i)
                self.key_ids[key] = j
            ids[i] = j
        if new:
            self.corner = np.concatenate([self.corner, self.qfun(rows[new]).max(axis=1)])
        return ids, counts / counts.sum()

    def lower_corners(self, ids, values) -> bool:
        """Tighten corner values at ``ids``; returns whether any changed."""
        new = np.minimum(self.corner[ids], values)
        if np.array_equal(new, self.corner[ids]):
            return False
        self.corner[ids] = new
        self._cdot = [float(self.corner[i] @ p) for i, p in zip(self._ids, self._probs)]
        self._cache = None
        return True

    def add_point(self, ids, probs, value: float) -> int:
        self._ids.append(ids)
        self._probs.append(probs)
        self._cdot.append(float(self.corner[ids] @ probs))
        self._vals.append(float(value))
        self._cache = None
        return len(self._vals) - 1

    def update(self, point: int, value: float) -> None:
        if value < self._vals[point]:
            self._vals[point] = float(value)
            if self._cache is not None:
                self._cache[3][point] = self._vals[point] - self._cdot[point]

    def _arrays(self):
        if self._cache is None:
            sizes = np.array([len(i) for i in self._ids], dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]) if len(sizes) else np.zeros(0, np.int64)
            cat_ids = np.concatenate(self._ids) if self._ids else np.zeros(0, np.int64)
            cat_p = np.concatenate(self._probs) if self._probs else np.zeros(0)
            delta = np.array(self._vals) - np.array(self._cdot)
            self._cache = [cat_ids, cat_p, offsets, delta]
        return self._cache

    def value(self, ids, probs) -> float:
        base = float(self.corner[ids] @ probs)
        if not self._vals:
            return base
        cat_ids, cat_p, offsets, delta = self._arrays()
        dense = np.zeros(len(self.corner))
        dense[ids] = probs
        dense_len = len(dense)
        ratios = np.zeros(len(cat_ids))
        ok = cat_ids < dense_len
        ratios[ok] = dense[cat_ids[ok]] / cat_p[ok]
        mins = np.minimum.reduceat(ratios, offsets)
        return base + min(0.0, float((delta * mins).min()))


# --------------------------------------------------------------------------
# belief tree


@dataclass(eq=False)
class Branch:
    """Expansion of one action at a tree node."""

    probs: np.ndarray
    mean_reward: float
    children: dict  # observation -> BeliefTreeNode
    starved: tuple
    # exact posteriors of possible observations that got no particle child
    ghosts: dict = field(default_factory=dict)


@dataclass(eq=False)
class BeliefTreeNode:
    rows: np.ndarray
    counts: np.ndarray
    depth: int
    upper: float
    lower: float
    full: bool  # holds the complete posterior rather than a subsample
    parent: "BeliefTreeNode | None" = None
    edge: tuple | None = None  # (action, observation) from the parent
    branches: dict = field(default_factory=dict)  # action -> Branch
    lb_seen: int = 0  # controller nodes already folded into ``lower``
    mean_q: np.ndarray = None
    point: int | None = None
    terminal: bool = False
    exact: np.ndarray | None = None  # exact belief, explicit models only
    ub_ids: np.ndarray | None = None
    ub_probs: np.ndarray | None = None

    @property
    def belief(self) -> ParticleBelief:
        return ParticleBelief.from_unique(self.rows, self.counts, self.depth)

    @property
    def children(self) -> dict:
        return {(a, o): c for a, br in self.branches.items() for o, c in br.children.items()}

    @property
    def gap(self) -> float:
        return self.upper - self.lower


class BeliefTree:
    """Particle belief tree with upper and lower bounds at every node."""

    def __init__(self, domain: GenerativeDomain, cfg: SolverConfig, qfun, G: Fnc):
        self.domain = domain
        self.cfg = cfg
        self.qfun = qfun
        self.G = G
        self.sawtooth = SawtoothBound(qfun) if domain.discrete_states and cfg.upper_bound == "auto" else None
        # explicit models: upper bounds are computed on exact beliefs
        self.model = domain.model if isinstance(domain, ExplicitDomain) else None
        if self.model is not None:
            self._states = np.arange(self.model.n_states, dtype=np.float64)[:, None]
            self._qtab = qfun(self._states)
            if self.sawtooth is not None and self.model.n_states <= CORNER_UPDATE_LIMIT:
                self._corner_ids, _ = self.sawtooth.encode(self._states, np.ones(self.model.n_states))
            else:
                self._corner_ids = None
        self.floor = float(domain.value_range[0])
        self.size = 0
        self.root: BeliefTreeNode | None = None

    # -- node creation -------------------------------------------------------

    def _upper_dist(self, rows, counts, exact):
        if exact is not None:
            support = np.nonzero(exact > 0)[0]
            return self._states[support], exact[support]
        return rows, counts

    def exact_upper(self, exact: np.ndarray) -> float:
        """Upper bound at an exact belief of an explicit model."""
        ub = float((exact @ self._qtab).max())
        if self.sawtooth is not None:
            ids, probs = self.sawtooth.encode(*self._upper_dist(None, None, exact))
            ub = min(ub, self.sawtooth.value(ids, probs))
        return ub

    def make_node(self, b: ParticleBelief, full: bool, parent=None, edge=None, exact=None) -> BeliefTreeNode:
        rows, counts = b.unique()
        term = self.domain.is_terminal(rows)
        if exact is not None:
            mean_q = exact @ self._qtab
        else:
            mean_q = counts @ self.qfun(rows) / counts.sum()
        node = BeliefTreeNode(rows, counts, b.depth, float(mean_q.max()), self.floor, full, parent, edge)
        node.mean_q = mean_q
        node.exact = exact
        if term.all():
            node.terminal = True
            node.upper = node.lower = 0.0
            node.lb_seen = len(self.G)
        else:
            if self.sawtooth is not None:
                ids, probs = self.sawtooth.encode(*self._upper_dist(rows, counts, exact))
                node.ub_ids, node.ub_probs = ids, probs
                node.upper = min(node.upper, self.sawtooth.value(ids, probs))
                if full or exact is not None:
                    node.point = self.sawtooth.add_point(ids, probs, node.upper)
            self.refresh_lower(node)
        self.size += 1
        return node

    def make_root(self, b0: ParticleBelief) -> BeliefTreeNode:
        exact = None if self.model is None else np.asarray(self.model.initial_belief, dtype=np.float64)
        self.root = self.make_node(b0, True, exact=exact)
        return self.root

    # -- bounds --------------------------------------------------------------

    def refresh_lower(self, node: BeliefTreeNode) -> float:
        """Fold controller nodes added since the last call into ``node.lower``."""
        n = len(self.G)
        if node.lb_seen < n and not node.terminal:
            vals = node.counts @ self.G.node_values(node.rows, range(node.lb_seen, n)) / node.counts.sum()
            best = float(vals.max())
            if best > node.lower:
                node.lower = best
            node.lb_seen = n
        if node.upper < node.lower:
            node.upper = node.lower
        return node.lower

    def refresh_upper_leaf(self, node: BeliefTreeNode) -> float:
        if self.sawtooth is not None and not node.terminal:
            node.upper = min(node.upper, self.sawtooth.value(node.ub_ids, node.ub_probs))
            node.upper = max(node.upper, node.lower)
        return node.upper

    def q_upper(self, node: BeliefTreeNode, a: int) -> float:
        br = node.branches.get(a)
        if br is None:
            return float(node.mean_q[a])
        hi = self.domain.value_range[1]
        total = br.mean_reward
        g = self.domain.discount
        for o, p in enumerate(br.probs):
            if p <= 0:
                continue
            child = br.children.get(o)
            if child is not None:
                total += g * p * self.refresh_upper_leaf(child)
            elif o in br.ghosts:
                total += g * p * self.exact_upper(br.ghosts[o])
            else:
                total += g * p * hi
        return min(total, float(node.mean_q[a]))

    def update_upper(self, node: BeliefTreeNode) -> float:
        if node.terminal:
            return node.upper
        q = max(self.q_upper(node, a) for a in range(self.domain.n_actions))
        node.upper = max(min(node.upper, q), node.lower)
        if node.point is not None:
            self.sawtooth.update(node.point, node.upper)
        return node.upper

    def improve_corners(self, sweeps: int = 200, tol: float = 1e-9) -> None:
        """Upper-bound Bellman updates at the one-hot beliefs of a small explicit model.

        Each update uses exact successor beliefs valued by the current
        bound, so corner values stay upper bounds while dropping below the
        MDP heuristic (which assumes the state stays observable).
        """
        if self.model is None or self._corner_ids is None:
            return
        m, g = self.model, self.model.discount
        for _ in range(sweeps):
            vals = np.empty(m.n_states)
            for s in range(m.n_states):
                e = np.zeros(m.n_states)
                e[s] = 1.0
                best = -math.inf
                for a in range(m.n_actions):
                    q = float(m.reward[s, a])
                    for o in range(m.n_observations):
                        p = obs_probability(m, e, a, o)
                        if p > 0:
                            q += g * p * self.exact_upper(belief_update(m, e, a, o))
                    best = max(best, q)
                vals[s] = best
            old = self.sawtooth.corner[self._corner_ids].copy()
            if not self.sawtooth.lower_corners(self._corner_ids, vals):
                break
            if np.abs(old - self.sawtooth.corner[self._corner_ids]).max() <= tol:
                break

    # -- expansion -----------------------------------------------------------

    def expand(self, node: BeliefTreeNode, a: int, rng) -> Branch:
        cfg = self.cfg
        ex = expand(self.domain, node.belief, a, cfg.nb_particle, rng, cfg.trial_budget)
        keep_all = self.domain.discrete_states or cfg.child_particles >= cfg.nb_particle
        probs, reward, posts = ex.obs_probs, ex.mean_reward, {}
        if node.exact is not None:
            m = self.model
            probs = np.array([obs_probability(m, node.exact, a, o) for o in range(m.n_observations)])
            reward = belief_reward(m, node.exact, a)
            posts = {o: belief_update(m, node.exact, a, o) for o in np.nonzero(probs > 0)[0]}
        children = {}
        for o, b in ex.beliefs.items():
            if not keep_all:
                b = ParticleBelief(b.particles[: cfg.child_particles], b.depth)
            children[o] = self.make_node(b, keep_all, node, (a, o), exact=posts.get(o))
        ghosts = {int(o): post for o, post in posts.items() if o not in children}
        br = Branch(probs, reward, children, ex.starved, ghosts)
        node.branches[a] = br
        return br

    def materialize(self, node: BeliefTreeNode, rng) -> BeliefTreeNode:
        """Give a subsampled child its full posterior by re-filtering from its parent."""
        if node.full:
            return node
        a, o = node.edge
        b = particle_filter(self.domain, node.parent.belief, a, o, self.cfg.nb_particle, rng, self.cfg.trial_budget)
        node.rows, node.counts = b.unique()
        node.full = True
        node.lb_seen = 0
        node.lower = self.floor
        self.refresh_lower(node)
        return node


def select_action(tree: BeliefTree, node: BeliefTreeNode, rng) -> int:
    """Argmax of the upper-bound Q-values, expanding actions lazily.

    Unexpanded actions score their MDP-heuristic value; whenever such an
    action wins it is expanded and the argmax recomputed.
    """
    while True:
        q = np.array([tree.q_upper(node, a) for a in range(tree.domain.n_actions)])
        a = int(np.argmax(q))
        if a in node.branches:
            return a
        tree.expand(node, a, rng)


def collect_beliefs(tree: BeliefTree, root: BeliefTreeNode, cfg: SolverConfig, epsilon: float, rng) -> list:
    """One heuristic descent from ``root``; returns the visited tree nodes in order.

    The descent continues while the root gap exceeds ``epsilon`` and the
    depth is below ``cfg.max_depth``. At each node the action maximizes the
    upper-bound Q-value and the observation maximizes
    ``Pr(o) (U(b') - L(b') - epsilon gamma^-(d+1))``. With ``cfg.excess_stop``
    the descent also ends once that score is non-positive for every child.
    """
    out = []
    node = root
    d = 0
    g = tree.domain.discount
    while root.gap > epsilon and d < cfg.max_depth and not node.terminal:
        a = select_action(tree, node, rng)
        br = node.branches[a]
        best, best_o = -math.inf, None
        for o, child in sorted(br.children.items()):
            tree.refresh_upper_leaf(child)
            tree.refresh_lower(child)
            score = br.probs[o] * (child.upper - child.lower - epsilon * g ** (-(d + 1)))
            if score > best:
                best, best_o = score, o
        if best_o is None or (cfg.excess_stop and best <= 0):
            break
        node = tree.materialize(br.children[best_o], rng)
        out.append(node)
        d += 1
    return out


# --------------------------------------------------------------------------
# neural backup


class StatePool:
    """Distinct non-terminal states reached at random depths, sampled once and reused.

    Domains with a ``sample_states`` sampler supply the states directly.
    Otherwise each draw rolls a uniform-random-action trajectory of uniform random
    length in ``[0, max_depth]`` from a fresh initial state. Sampling stops
    at ``nb_sample`` distinct states, or once a round of draws finds nothing
    new (small state spaces), or after ``max_rounds`` rounds.
    """

    def __init__(self, domain: GenerativeDomain, nb_sample: int, max_depth: int, rng, max_rounds: int = 100):
        self.domain = domain
        rows = []
        seen = set()
        batch = max(64, nb_sample)
        for _ in range(max_rounds):
            s = domain.sample_states(batch, rng)
            if s is None:
                s = self._rollout_states(domain, batch, max_depth, rng)
            s = s[~domain.is_terminal(s)]
            before = len(rows)
            for row in s:
                key = row.tobytes()
                if key not in seen:
                    seen.add(key)
                    rows.append(row)
                    if len(rows) == nb_sample:
                        break
            if len(rows) == nb_sample or len(rows) == before:
                break
        if not rows:
            raise InvalidConfiguration("could not sample any non-terminal state for training data")
        self.states = np.array(rows)
        self.features = domain.vectorize(self.states)
        # samples each pooled state stands for when distinct states run out
        self.multiplicity = max(1, nb_sample // len(self.states))
        self.node_means: list[float] = []  # mean alpha of each controller node over the pool

    @staticmethod
    def _rollout_states(domain, batch, max_depth, rng):
        depth = rng.integers(0, max_depth + 1, size=batch)
        s = domain.sample_initial(batch, rng)
        for t in range(int(depth.max())):
            idx = np.nonzero(depth > t)[0]
            acts = rng.integers(0, domain.n_actions, size=len(idx))
            for a in np.unique(acts):
                sel = idx[acts == a]
                s[sel] = domain.step(s[sel], int(a), rng)[0]
        return s

    def __len__(self):
        return len(self.states)

    def sync(self, G: Fnc) -> None:
        """Record the pool mean of every node of ``G`` not seen yet."""
        for node in G.nodes[len(self.node_means):]:
            self.node_means.append(float(predict_batch(node.alpha_net, self.features).mean()))


# caps on the extra simulations spent when the pool is small
BLIND_EPISODE_CAP = 200_000
GENDATA_SIM_CAP = 200_000


def gen_data(candidate: FscNode, G: Fnc, pool: StatePool, cfg: SolverConfig, rng):
    """Training inputs (pool features) and targets for the candidate node.

    With an empty controller a target is the mean return of repeating the
    candidate's action over rollouts; otherwise it is the mean over
    simulations of ``r + gamma * alpha_{edge(o)}(s')``. Each pooled state
    gets ``nb_sim`` simulations times the number of samples it stands for
    when the pool holds fewer than ``nb_sample`` distinct states.
    """
    domain = G.domain
    S = pool.states
    a = candidate.action
    steps = cfg.rollout_steps or domain.max_episode_steps
    sims = cfg.nb_sim * pool.multiplicity
    if sims > cfg.nb_sim:
        sims = max(cfg.nb_sim, min(sims, GENDATA_SIM_CAP // len(S)))
    if not len(G):
        sims = max(cfg.nb_sim, min(sims, BLIND_EPISODE_CAP // len(S)))
        Y = blind_values(domain, S, a, sims, steps, rng)
        return pool.features, Y
    rep = np.repeat(S, sims, axis=0)
    s2, o, r = domain.step(rep, a, rng)
    succ = np.asarray(candidate.edges)[o]
    vals = np.zeros(len(rep))
    live = ~domain.is_terminal(s2)
    rows, inv, _ = unique_rows(s2)
    feats = domain.vectorize(rows)
    for n in np.unique(succ[live]):
        m = live & (succ == n)
        u = np.unique(inv[m])
        pred = np.empty(len(rows))
        pred[u] = predict_batch(G[int(n)].alpha_net, feats[u])
        vals[m] = pred[inv[m]]
    Y = (r + domain.discount * vals).reshape(len(S), sims).mean(axis=1)
    return pool.features, Y


@dataclass
class BackupResult:
    action: int
    value: float  # V* estimate at the belief
    action_values: np.ndarray
    edges: tuple
    added: bool
    node: int  # id of the new node, or of the existing duplicate
    report: TrainReport | None = None


def backup_values(G: Fnc, b: ParticleBelief, rng):
    """Sampled Bellman backup at ``b``: per-action values and best successor nodes.

    Each particle is simulated once per action. ``edges[a, o]`` is the node
    maximizing the summed successor values for observation ``o``, or -1
    when ``o`` was never simulated (or the controller is empty).
    """
    domain = G.domain
    N = len(b)
    nO = domain.n_observations
    V = np.zeros(domain.n_actions)
    edges = np.full((domain.n_actions, nO), -1, dtype=np.int64)
    for a in range(domain.n_actions):
        s2, o, r = domain.step(b.particles, a, rng)
        total = float(r.sum())
        if len(G):
            rows, inv, _ = unique_rows(s2)
            vals = G.node_values(rows)  # (u, |G|)
            # M[o, n] = sum over particles with observation o of V_{n, s'}
            M = np.zeros((nO, len(rows)))
            np.add.at(M, (o, inv), 1.0)
            M = M @ vals
            seen = np.bincount(o, minlength=nO) > 0
            best = M.argmax(axis=1)
            edges[a, seen] = best[seen]
            total += domain.discount * float(M[seen, best[seen]].sum())
        V[a] = total / N
    return V, edges


def neural_backup(G: Fnc, b: ParticleBelief, cfg: SolverConfig, pool: StatePool, rng, train_seed: int = 0) -> BackupResult:
    """Neural Bellman backup at ``b``; appends the new node to ``G`` when it is unique."""
    pool.sync(G)
    V, edges = backup_values(G, b, rng)
    a = int(np.argmax(V))
    nid = len(G)
    if nid == 0:
        row = np.full(G.domain.n_observations, nid)
    else:
        default = int(np.argmax(pool.node_means))
        row = np.where(edges[a] >= 0, edges[a], default)
    candidate = FscNode(nid, a, tuple(int(e) for e in row))
    if not node_is_unique(candidate, G):
        return BackupResult(a, float(V[a]), V, candidate.edges, False, G.find(a, candidate.edges))
    X, Y = gen_data(candidate, G, pool, cfg, rng)
    hidden = cfg.hidden_sizes or G.domain.hidden_sizes
    init_rng = np.random.default_rng(train_seed)
    init_seed = child_seed(init_rng)
    tcfg = dataclasses.replace(cfg.train_cfg, seed=child_seed(init_rng))

    def factory():
        return Mlp.create(X.shape[1], hidden, init_seed)

    net, report = train_with_retry(factory, X, Y, tcfg)
    G.add(a, candidate.edges, net)
    pool.sync(G)
    return BackupResult(a, float(V[a]), V, candidate.edges, True, nid, report)


# --------------------------------------------------------------------------
# main loop


@dataclass
class TraceRow:
    backup_index: int
    upper: float
    lower: float
    controller_size: int
    wall_seconds: float = 0.0


@dataclass
class SolveResult:
    controller: Fnc
    trace: list
    status: str
    start_node: int
    upper: float
    lower: float
    epsilon: float
    elapsed: float
    tree: BeliefTree = field(repr=False, default=None)
    b0: ParticleBelief = field(repr=False, default=None)

    @property
    def gap(self):
        return self.upper - self.lower

    def policy(self, extra: dict | None = None):
        return fnc_policy(self.controller, self.start_node, extra)

    def fsc(self):
        return fnc_to_fsc(self.controller, self.start_node)


def solve(domain: GenerativeDomain, cfg: SolverConfig | None = None, clock=time.perf_counter, callback=None) -> SolveResult:
    """Run neural value iteration on ``domain``.

    A seed backup at the initial belief always runs, so the returned
    controller is never empty. The loop then stops when the root gap is at
    most epsilon (``converged``), after ``cfg.max_backups`` backups
    (``max backups``) or once ``cfg.time_budget`` seconds have elapsed
    (``budget exceeded``); budgets are checked between backups.
    """
    cfg = cfg or SolverConfig()
    t0 = clock()
    eps = cfg.resolved_epsilon(domain)
    seed = cfg.seed
    belief_rng = substream(seed, BELIEF)
    qfun = qmdp_surrogate(domain, cfg)
    G = Fnc(domain)
    b0 = initial_belief(domain, cfg.nb_particle, belief_rng)
    tree = BeliefTree(domain, cfg, qfun, G)
    root = tree.make_root(b0)
    pool = StatePool(domain, cfg.nb_sample, cfg.max_depth, substream(seed, GENDATA))
    trace: list[TraceRow] = []
    count = 0

    def do_backup(node: BeliefTreeNode):
        nonlocal count
        count += 1
        res = neural_backup(G, node.belief, cfg, pool, substream(seed, BACKUP, count), child_seed(substream(seed, TRAIN, count)))
        tree.refresh_lower(node)
        tree.improve_corners()
        tree.update_upper(node)
        if node is not root:
            tree.refresh_lower(root)
        row = TraceRow(count, root.upper, root.lower, len(G), clock() - t0)
        trace.append(row)
        if callback is not None:
            callback(row, res)

    def stop_reason():
        if root.gap <= eps:
            return CONVERGED
        if cfg.max_backups is not None and count >= cfg.max_backups:
            return MAX_BACKUPS
        if clock() - t0 >= cfg.time_budget:
            return BUDGET_EXCEEDED
        return None

    do_backup(root)
    status = stop_reason()
    while status is None:
        visited = collect_beliefs(tree, root, cfg, eps, belief_rng)
        for node in [*reversed(visited), root]:
            do_backup(node)
            status = stop_reason()
            if status is not None:
                break
    start = int(np.argmax(_root_node_values(G, root)))
    return SolveResult(G, trace, status, start, root.upper, root.lower, eps, clock() - t0, tree, b0)


def _root_node_values(G: Fnc, root: BeliefTreeNode) -> np.ndarray:
    return root.counts @ G.node_values(root.rows) / root.counts.sum()


# --------------------------------------------------------------------------
# trace files


def _fmt(x: float) -> str:
    return repr(float(x))


def trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in rows:
        w.writerow([r.backup_index, _fmt(r.upper), _fmt(r.lower), r.controller_size])
    return buf.getvalue()


def timing_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_COLUMNS)
    for r in rows:
        w.writerow([r.backup_index, f"{r.wall_seconds:.6f}"])
    return buf.getvalue()


def write_trace(path, rows) -> None:
    Path(path).write_text(trace_csv(rows))


def read_trace(path) -> list[TraceRow]:
    """Parse a bound trace; raises :class:`MalformedTrace` on any defect."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedTrace(f"cannot read trace {path}: {exc}") from exc
    lines = list(csv.reader(io.StringIO(text)))
    if not lines:
        return []
    header = tuple(lines[0])
    if header[:1] != ("backup_index",) or not {"upper", "lower"} <= set(header):
        raise MalformedTrace(f"{path}: unexpected header {','.join(header)}")
    col = {name: i for i, name in enumerate(header)}
    out = []
    for k, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if len(line) != len(header):
            raise MalformedTrace(f"{path}:{k}: expected {len(header)} fields, got {len(line)}")
        try:
            row = TraceRow(
                int(line[col["backup_index"]]),
                float(line[col["upper"]]),
                float(line[col["lower"]]),
                int(line[col["controller_size"]]) if "controller_size" in col else 0,
                float(line[col["wall_seconds"]]) if "wall_seconds" in col else 0.0,
            )
        except ValueError as exc:
            raise MalformedTrace(f"{path}:{k}: {exc}") from exc
        if not (math.isfinite(row.upper) and math.isfinite(row.lower)):
            raise MalformedTrace(f"{path}:{k}: bounds must be finite")
        out.append(row)
    return out


def plot_rows(rows) -> str:
    """Tidy ``backup,upper,lower,gap`` columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("backup", "upper", "lower", "gap"))
    for r in rows:
        w.writerow([r.backup_index, _fmt(r.upper), _fmt(r.lower), _fmt(r.upper - r.lower)])
    return buf.getvalue()


# --------------------------------------------------------------------------
# estimator


class NVISolver(BaseEstimator):
    """Estimator front end: ``fit(domain)`` solves; ``predict`` maps beliefs to actions.

    Keyword arguments mirror :class:`SolverConfig`.
    """

    def __init__(
        self,
        nb_particle=10_000,
        nb_sim=100,
        nb_sample=1000,
        epsilon=None,
        max_depth=50,
        time_budget=math.inf,
        max_backups=None,
        seed=0,
        train_cfg=None,
        hidden_sizes=None,
    ):
        self.nb_particle = nb_particle
        self.nb_sim = nb_sim
        self.nb_sample = nb_sample
        self.epsilon = epsilon
        self.max_depth = max_depth
        self.time_budget = time_budget
        self.max_backups = max_backups
        self.seed = seed
        self.train_cfg = train_cfg
        self.hidden_sizes = hidden_sizes

    def config(self) -> SolverConfig:
        params = self.get_params()
        if params["train_cfg"] is None:
            params["train_cfg"] = TrainConfig()
        return SolverConfig(**params)

    def fit(self, domain: GenerativeDomain, y=None):
        res = solve(domain, self.config())
        self.domain_ = domain
        self.result_ = res
        self.controller_ = res.controller
        self.start_node_ = res.start_node
        self.trace_ = res.trace
        self.status_ = res.status
        return self

    def value(self, beliefs) -> np.ndarray:
        return np.array([_best(self.controller_, b)[0] for b in _as_beliefs(beliefs)])

    def predict(self, beliefs) -> np.ndarray:
        return np.array([self.controller_[_best(self.controller_, b)[1]].action for b in _as_beliefs(beliefs)])


def _as_beliefs(beliefs):
    if isinstance(beliefs, ParticleBelief):
        return [beliefs]
    return list(beliefs)


def _best(G: Fnc, b: ParticleBelief):
    from .controller import fnc_value

    return fnc_value(G, b)
