"""Finite-state and finite-network controllers.

A controller node carries an action and one outgoing edge per observation.
In a finite-network controller (FNC) each node also stores an MLP that
approximates the node's alpha-function over states; dropping the networks
yields a plain finite-state controller (FSC) that executes identically once
its start node is fixed.

Execution is vectorized: many episodes advance in lock step, grouped by the
action of their current node.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CorruptPolicy, DomainMismatch, EmptyController
from .neural import Mlp, predict_batch
from .particles import ParticleBelief
from .pomdp import GenerativeDomain
from .rng import EVALUATION, substream

POLICY_FORMAT = "nvipomdp-policy"
POLICY_VERSION = 1
DEFAULT_MAX_STEPS = 200
EVAL_BLOCK = 1000


@dataclass(frozen=True)
class FscNode:
    id: int
    action: int
    edges: tuple[int, ...]  # edges[o] = successor node id


@dataclass(eq=False)
class FncNode:
    base: FscNode
    alpha_net: Mlp

    @property
    def id(self):
        return self.base.id

    @property
    def action(self):
        return self.base.action

    @property
    def edges(self):
        return self.base.edges


@dataclass(eq=False)
class Fsc:
    nodes: tuple[FscNode, ...]
    start: int = 0

    def __len__(self):
        return len(self.nodes)

    def tables(self):
        return _tables(self.nodes)


def _tables(nodes) -> tuple[np.ndarray, np.ndarray]:
    actions = np.array([n.action for n in nodes], dtype=np.int64)
    edges = np.array([n.edges for n in nodes], dtype=np.int64).reshape(len(nodes), -1)
    return actions, edges


class Fnc:
    """Finite-network controller bound to the domain whose states it scores."""

    def __init__(self, domain: GenerativeDomain):
        self.domain = domain
        self.nodes: list[FncNode] = []
        self._index: dict[tuple, int] = {}

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __getitem__(self, i) -> FncNode:
        return self.nodes[i]

    def add(self, action: int, edges, alpha_net: Mlp) -> FncNode:
        nid = len(self.nodes)
        edges = tuple(int(e) for e in edges)
        if len(edges) != self.domain.n_observations:
            raise CorruptPolicy("a node needs exactly one edge per observation")
        if any(not 0 <= e <= nid for e in edges):
            raise CorruptPolicy(f"edges of node {nid} point outside the controller")
        if alpha_net.input_dim != self.domain.feature_dim:
            raise CorruptPolicy("alpha network input width differs from the domain feature width")
        node = FncNode(FscNode(nid, int(action), edges), alpha_net)
        self.nodes.append(node)
        self._index.setdefault((node.action, edges), nid)
        return node

    def copy(self) -> "Fnc":
        """Shallow copy: new node list, shared networks."""
        G = Fnc(self.domain)
        G.nodes = list(self.nodes)
        G._index = dict(self._index)
        return G

    def find(self, action: int, edges) -> int | None:
        return self._index.get((int(action), tuple(int(e) for e in edges)))

    def tables(self):
        return _tables([n.base for n in self.nodes])

    def node_values(self, states, nodes=None) -> np.ndarray:
        """Alpha predictions, shape ``(len(states), len(nodes))``; terminal states score 0."""
        nodes = range(len(self.nodes)) if nodes is None else nodes
        states = np.asarray(states, dtype=np.float64)
        feats = self.domain.vectorize(states)
        out = np.empty((len(states), len(nodes)))
        for j, i in enumerate(nodes):
            out[:, j] = predict_batch(self.nodes[i].alpha_net, feats)
        out[self.domain.is_terminal(states)] = 0.0
        return out


def node_is_unique(candidate: FscNode, G: Fnc) -> bool:
    """False iff some node of ``G`` has the same action and the same edge map."""
    return G.find(candidate.action, candidate.edges) is None


def belief_node_values(G: Fnc, b: ParticleBelief, nodes=None) -> np.ndarray:
    """Particle-average alpha value of each node at ``b``."""
    rows, counts = b.unique()
    return counts @ G.node_values(rows, nodes) / len(b)


def fnc_value(G: Fnc, b: ParticleBelief) -> tuple[float, int]:
    """``max_n mean_s n.alpha(s)`` over the particles of ``b`` and the best node id."""
    if not len(G):
        raise EmptyController("controller has no nodes")
    vals = belief_node_values(G, b)
    i = int(np.argmax(vals))
    return float(vals[i]), i


def fnc_to_fsc(G: Fnc, start: int | None = None, b0: ParticleBelief | None = None) -> Fsc:
    """Drop the networks. The start node is ``start`` or the best node at ``b0``."""
    if not len(G):
        raise EmptyController("controller has no nodes")
    if start is None:
        start = fnc_value(G, b0)[1] if b0 is not None else 0
    return Fsc(tuple(n.base for n in G.nodes), int(start))


# --------------------------------------------------------------------------
# execution


def run_controller(
    actions: np.ndarray,
    edges: np.ndarray,
    start_nodes,
    states: np.ndarray,
    domain: GenerativeDomain,
    rng: np.random.Generator,
    max_steps: int = DEFAULT_MAX_STEPS,
    record_actions: bool = False,
):
    """Run the node automaton from each (node, state) pair in lock step.

    Returns the discounted returns and, if requested, the ``(n, max_steps)``
    action trace padded with -1 after termination.
    """
    states = np.array(states, dtype=np.float64, copy=True)
    n = len(states)
    nodes = np.broadcast_to(np.asarray(start_nodes, dtype=np.int64), (n,)).copy()
    returns = np.zeros(n)
    trace = np.full((n, max_steps), -1, dtype=np.int64) if record_actions else None
    live = ~domain.is_terminal(states)
    disc = 1.0
    g = domain.discount
    for t in range(max_steps):
        idx = np.nonzero(live)[0]
        if not len(idx):
            break
        acts = actions[nodes[idx]]
        if record_actions:
            trace[idx, t] = acts
        for a in np.unique(acts):
            rows = idx[acts == a]
            s2, o, r = domain.step(states[rows], int(a), rng)
            states[rows] = s2
            returns[rows] += disc * r
            nodes[rows] = edges[nodes[rows], o]
        live[idx] = ~domain.is_terminal(states[idx])
        disc *= g
    return (returns, trace) if record_actions else returns


def execute_policy(fsc: Fsc, start: int, domain, rng, max_steps: int = DEFAULT_MAX_STEPS, state=None) -> float:
    """Discounted return of one episode from ``state`` (or a fresh initial state)."""
    actions, edges = fsc.tables()
    if not 0 <= start < len(actions):
        raise ValueError(f"start node {start} not in controller")
    s = domain.sample_initial(1, rng) if state is None else np.atleast_2d(state)
    return float(run_controller(actions, edges, start, s, domain, rng, max_steps)[0])


@dataclass
class EvalResult:
    mean: float
    stderr: float
    returns: np.ndarray = field(repr=False)

    @property
    def n_episodes(self):
        return len(self.returns)


def _eval_block(actions, edges, start, domain, seed, block, size, max_steps, record):
    rng = substream(seed, EVALUATION, block)
    s0 = domain.sample_initial(size, rng)
    return run_controller(actions, edges, start, s0, domain, rng, max_steps, record)


def evaluate_policy(
    fsc: Fsc,
    start: int,
    domain: GenerativeDomain,
    n_episodes: int,
    max_steps: int = DEFAULT_MAX_STEPS,
    seed: int = 0,
    threads: int = 1,
    record_actions: bool = False,
):
    """Mean and standard error of the discounted return over ``n_episodes``.

    Episodes run in blocks of 1000, block ``i`` drawing from the evaluation
    stream ``(seed, i)``; results do not depend on ``threads``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    actions, edges = fsc.tables()
    sizes = [min(EVAL_BLOCK, n_episodes - i) for i in range(0, n_episodes, EVAL_BLOCK)]
    jobs = [(actions, edges, start, domain, seed, i, size, max_steps, record_actions) for i, size in enumerate(sizes)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda j: _eval_block(*j), jobs))
    else:
        parts = [_eval_block(*j) for j in jobs]
    if record_actions:
        returns = np.concatenate([p[0] for p in parts])
        trace = np.concatenate([p[1] for p in parts])
    else:
        returns = np.concatenate(parts)
    stderr = float(returns.std(ddof=1) / math.sqrt(len(returns))) if len(returns) > 1 else 0.0
    res = EvalResult(float(returns.mean()), stderr, returns)
    return (res, trace) if record_actions else res


def rollout_values(G, node: int, states, nb_sim: int, max_steps: int, rng) -> np.ndarray:
    """Per-state mean discounted return of running ``G`` from ``node``, ``nb_sim`` times each."""
    actions, edges = G.tables()
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    rep = np.repeat(states, nb_sim, axis=0)
    ret = run_controller(actions, edges, node, rep, G.domain if isinstance(G, Fnc) else None, rng, max_steps)
    return ret.reshape(len(states), nb_sim).mean(axis=1)


def rollout_alpha(G: Fnc, node: int, s, nb_sim: int, max_steps: int, rng) -> float:
    """Monte-Carlo estimate of node ``node``'s alpha-value at state ``s``."""
    if not 0 <= node < len(G):
        raise ValueError(f"node {node} not in controller")
    return float(rollout_values(G, node, np.atleast_2d(s), nb_sim, max_steps, rng)[0])


def blind_values(domain: GenerativeDomain, states, action: int, nb_sim: int, max_steps: int, rng) -> np.ndarray:
    """Value of repeating ``action`` forever from each state (a one-node self-loop controller)."""
    actions = np.array([action], dtype=np.int64)
    edges = np.zeros((1, domain.n_observations), dtype=np.int64)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    rep = np.repeat(states, nb_sim, axis=0)
    ret = run_controller(actions, edges, 0, rep, domain, rng, max_steps)
    return ret.reshape(len(states), nb_sim).mean(axis=1)


# --------------------------------------------------------------------------
# policy files


@dataclass
class Policy:
    kind: str  # "fnc" or "fsc"
    header: dict
    fsc: Fsc
    networks: list | None = None  # one Mlp per node for FNC policies

    @property
    def start(self) -> int:
        return self.fsc.start

    def to_fnc(self, domain: GenerativeDomain) -> Fnc:
        if self.networks is None:
            raise CorruptPolicy("FSC policies carry no networks")
        G = Fnc(domain)
        for node, net in zip(self.fsc.nodes, self.networks):
            G.add(node.action, node.edges, net)
        return G


def policy_header(domain: GenerativeDomain, start: int, extra: dict | None = None) -> dict:
    header = {
        "domain": domain.describe(),
        "discount": domain.discount,
        "start_node": int(start),
        "actions": list(domain.actions),
        "observations": list(domain.observations),
    }
    if extra:
        header.update(extra)
    return header


def policy_to_dict(policy: Policy) -> dict:
    data = {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "kind": policy.kind,
        **policy.header,
        "start_node": policy.fsc.start,
        "nodes": [{"id": n.id, "action": n.action, "edges": list(n.edges)} for n in policy.fsc.nodes],
    }
    if policy.kind == "fnc":
        data["networks"] = [dict(node=i, **net.to_dict()) for i, net in enumerate(policy.networks)]
    return data


def dumps_policy(policy: Policy) -> str:
    validate_policy(policy)
    return json.dumps(policy_to_dict(policy), sort_keys=True, separators=(",", ":")) + "\n"


def save_policy(policy: Policy, path) -> None:
    Path(path).write_text(dumps_policy(policy))


def fnc_policy(G: Fnc, start: int, extra: dict | None = None) -> Policy:
    fsc = fnc_to_fsc(G, start)
    return Policy("fnc", policy_header(G.domain, start, extra), fsc, [n.alpha_net for n in G.nodes])


def fsc_policy(fsc: Fsc, domain: GenerativeDomain, extra: dict | None = None) -> Policy:
    return Policy("fsc", policy_header(domain, fsc.start, extra), fsc)


def strip_networks(policy: Policy) -> Policy:
    header = dict(policy.header)
    return Policy("fsc", header, policy.fsc, None)


def validate_policy(policy: Policy) -> None:
    fsc = policy.fsc
    n = len(fsc.nodes)
    if n == 0:
        raise CorruptPolicy("policy has no nodes")
    n_obs = len(policy.header.get("observations", [])) or len(fsc.nodes[0].edges)
    n_act = len(policy.header.get("actions", [])) or None
    for i, node in enumerate(fsc.nodes):
        if node.id != i:
            raise CorruptPolicy(f"node ids must be dense 0..N-1, found {node.id} at position {i}")
        if len(node.edges) != n_obs:
            raise CorruptPolicy(f"node {i} has {len(node.edges)} edges, expected {n_obs}")
        if any(not 0 <= e < n for e in node.edges):
            raise CorruptPolicy(f"node {i} has an edge to a missing node")
        if n_act is not None and not 0 <= node.action < n_act:
            raise CorruptPolicy(f"node {i} has invalid action {node.action}")
    if not 0 <= fsc.start < n:
        raise CorruptPolicy(f"start node {fsc.start} not in controller")
    if policy.kind == "fnc":
        if policy.networks is None or len(policy.networks) != n:
            raise CorruptPolicy("FNC policies need one network per node")
        dims = {net.input_dim for net in policy.networks}
        if len(dims) != 1:
            raise CorruptPolicy("networks disagree on input width")
        for net in policy.networks:
            if not all(np.isfinite(p).all() for p in net.parameters()):
                raise CorruptPolicy("network parameters must be finite")
    elif policy.kind != "fsc":
        raise CorruptPolicy(f"unknown policy kind {policy.kind!r}")


def loads_policy(text: str) -> Policy:
    try:
        data = json.loads(text)
        if not isinstance(data, dict) or data.get("format") != POLICY_FORMAT:
            raise CorruptPolicy("not a policy file")
        if data.get("version") != POLICY_VERSION:
            raise CorruptPolicy(f"unsupported policy version {data.get('version')}")
        kind = data["kind"]
        nodes = tuple(FscNode(int(n["id"]), int(n["action"]), tuple(int(e) for e in n["edges"])) for n in data["nodes"])
        header = {k: data[k] for k in ("domain", "discount", "start_node", "actions", "observations") if k in data}
        for k, v in data.items():
            if k not in header and k not in ("format", "version", "kind", "nodes", "networks"):
                header[k] = v
        networks = None
        if kind == "fnc":
            blocks = sorted(data["networks"], key=lambda d: d["node"])
            networks = [Mlp.from_dict(b) for b in blocks]
        policy = Policy(kind, header, Fsc(nodes, int(data["start_node"])), networks)
    except CorruptPolicy:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptPolicy(f"malformed policy: {exc}") from exc
    validate_policy(policy)
    return policy


def load_policy(path) -> Policy:
    return loads_policy(Path(path).read_text())


def check_policy_domain(policy: Policy, domain: GenerativeDomain) -> None:
    """Raise :class:`DomainMismatch` unless the header describes ``domain``."""
    want = json.loads(json.dumps(domain.describe()))
    got = policy.header.get("domain")
    if got != want:
        raise DomainMismatch(f"policy was built for {got}, not {want}")
    if list(policy.header.get("actions", [])) != list(domain.actions):
        raise DomainMismatch("policy action set differs from the domain's")
    if list(policy.header.get("observations", [])) != list(domain.observations):
        raise DomainMismatch("policy observation set differs from the domain's")
