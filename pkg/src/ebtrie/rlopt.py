"""Tree building as a sequence of node-local decisions, plus a policy-search trainer.

The environment exposes a frontier of unresolved nodes.  Each step applies a
cut or partition to one frontier node; children small enough become leaves,
the rest join the frontier.  Once the tree is complete, every decision is
scored by aggregating over its own subtree rather than summing over time:
under the time objective a leaf is worth -1, a cut node ``-(1 + max)`` of its
children and a partition node ``-(1 + sum)``.

The trainer is a log-linear policy over the 26 actions (25 cuts and one
partition) updated towards decisions that beat the median reward of
the same node across rollouts.  The greedy heuristic's move enters the policy as a
feature, and the greedy tree itself seeds the best-so-far.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dtree import (
    CUT_COUNTS,
    DEFAULT_MAX_DEPTH,
    Cut,
    NodeAction,
    Partition,
    Tree,
    TreeError,
    apply_action,
    build_greedy,
    greedy_action,
    node_endpoints,
    root_node,
    valid_actions,
)
from .ruleset import FIELD_WIDTHS, NUM_FIELDS, Ruleset

ACTIONS: tuple[NodeAction, ...] = tuple(Cut(d, c) for d in range(NUM_FIELDS) for c in CUT_COUNTS) + (Partition(),)
ACTION_INDEX = {a: i for i, a in enumerate(ACTIONS)}
OBS_SIZE = 2 * NUM_FIELDS + 2


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class Objective:
    kind: str = "time"
    weight: float = 0.5

    def __post_init__(self):
        if self.kind not in ("time", "space", "combined"):
            raise ValueError(f"unknown objective {self.kind!r}")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("combined-objective weight must be in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "Objective":
        """``time``, ``space``, ``combined`` or ``combined:0.3``."""
        kind, _, weight = text.partition(":")
        return cls(kind, float(weight)) if weight else cls(kind)

    def __str__(self) -> str:
        return f"combined:{self.weight:g}" if self.kind == "combined" else self.kind


@dataclass
class DecisionRecord:
    node_id: int
    observation: np.ndarray
    action: int
    valid: np.ndarray
    greedy: int | None
    # identifies the same (box, rules) node across rollouts
    key: int
    reward: float | None = None


@dataclass
class EnvState:
    tree: Tree
    frontier: deque
    max_depth: int
    records: list[DecisionRecord] = field(default_factory=list)
    valid: dict[int, list[NodeAction]] = field(default_factory=dict)
    endpoints: dict[int, list[int]] = field(default_factory=dict)

    @property
    def done(self) -> bool:
        return not self.frontier


def observe(tree: Tree, node_id: int, max_depth: int) -> np.ndarray:
    node = tree.nodes[node_id]
    obs = np.empty(OBS_SIZE)
    for d, r in enumerate(node.box):
        scale = float(1 << FIELD_WIDTHS[d])
        obs[2 * d] = r.lo / scale
        obs[2 * d + 1] = r.hi / scale
    obs[-2] = len(node.rules) / len(tree.ruleset)
    obs[-1] = node.depth / max_depth
    return obs


def _admit(state: EnvState, node_id: int) -> None:
    tree = state.tree
    node = tree.nodes[node_id]
    if tree.leaf_eligible(node_id):
        tree.finalize_leaf(node_id)
        return
    actions = []
    if node.depth < state.max_depth:
        endpoints = node_endpoints(tree, node_id)
        actions = valid_actions(tree, node_id, endpoints)
    if not actions:
        # nothing can shrink this node: keep it as an oversized leaf
        tree.finalize_leaf(node_id)
        return
    state.valid[node_id] = actions
    state.endpoints[node_id] = endpoints
    state.frontier.append(node_id)


def reset(ruleset: Ruleset, binth: int, max_depth: int = DEFAULT_MAX_DEPTH) -> EnvState:
    state = EnvState(root_node(ruleset, binth), deque(), max_depth)
    _admit(state, state.tree.root_id)
    return state


def action_mask(state: EnvState, node_id: int) -> np.ndarray:
    mask = np.zeros(len(ACTIONS), dtype=bool)
    for a in state.valid[node_id]:
        mask[ACTION_INDEX[a]] = True
    return mask


def env_step(state: EnvState, node_id: int, action: NodeAction, greedy: int | None = None) -> EnvState:
    if node_id not in state.valid:
        raise EnvError(f"node {node_id} is not on the frontier")
    key = Partition() if isinstance(action, Partition) else action
    if key not in state.valid[node_id]:
        raise EnvError(f"action {action} is masked at node {node_id}")
    node = state.tree.nodes[node_id]
    record = DecisionRecord(
        node_id=node_id,
        observation=observe(state.tree, node_id, state.max_depth),
        action=ACTION_INDEX[key],
        valid=action_mask(state, node_id),
        greedy=greedy,
        key=hash((node.box, node.rules)),
    )
    children = apply_action(state.tree, node_id, key)
    state.frontier.remove(node_id)
    del state.valid[node_id]
    del state.endpoints[node_id]
    state.records.append(record)
    for cid in children:
        _admit(state, cid)
    return state


# -- rewards --------------------------------------------------------------------


def _subtree_values(tree: Tree) -> tuple[dict[int, int], dict[int, int]]:
    """Per-node time cost and subtree size, computed bottom-up."""
    order = [n.id for n in tree.iter_dfs()]
    time_cost: dict[int, int] = {}
    size: dict[int, int] = {}
    for nid in reversed(order):
        node = tree.nodes[nid]
        if node.is_leaf:
            time_cost[nid] = 1
            size[nid] = 1
            continue
        kids = [time_cost[c] for c in node.children]
        time_cost[nid] = 1 + (sum(kids) if isinstance(node.action, Partition) else max(kids))
        size[nid] = 1 + sum(size[c] for c in node.children)
    return time_cost, size


def _combine(objective: Objective, t: float, s: float, ref: tuple[float, float]) -> float:
    if objective.kind == "time":
        return -t
    if objective.kind == "space":
        return -s
    return -(objective.weight * t / ref[0] + (1.0 - objective.weight) * s / ref[1])


def compute_rewards(
    tree: Tree, objective: Objective = Objective(), reference: tuple[float, float] | None = None
) -> dict[int, float]:
    """Reward of every decision (non-leaf node) in a finished tree.

    ``reference`` gives the (time, space) magnitudes used to normalise the
    combined objective; by default the tree's own root values.
    """
    if not tree.is_finalized():
        raise EnvError("tree is not finalized")
    time_cost, size = _subtree_values(tree)
    ref = reference or (time_cost[tree.root_id], size[tree.root_id])
    return {
        nid: _combine(objective, time_cost[nid], size[nid], ref)
        for nid, node in tree.nodes.items()
        if not node.is_leaf
    }


def root_reward(tree: Tree, objective: Objective = Objective(), reference: tuple[float, float] | None = None) -> float:
    time_cost, size = _subtree_values(tree)
    ref = reference or (time_cost[tree.root_id], size[tree.root_id])
    return _combine(objective, time_cost[tree.root_id], size[tree.root_id], ref)


def tree_magnitudes(tree: Tree) -> tuple[int, int]:
    time_cost, size = _subtree_values(tree)
    return time_cost[tree.root_id], size[tree.root_id]


# -- policy ---------------------------------------------------------------------


class LinearPolicy:
    """Log-linear policy: ``logit[a] = W[a] . [obs, 1] + prior * [a is greedy]``."""

    def __init__(self, prior: float = 2.0):
        self.weights = np.zeros((len(ACTIONS), OBS_SIZE + 1))
        self.prior = prior

    def probs(self, obs: np.ndarray, valid: np.ndarray, greedy: int | None, temperature: float = 1.0) -> np.ndarray:
        x = np.append(obs, 1.0)
        logits = self.weights @ x
        if greedy is not None:
            logits[greedy] += self.prior
        logits = np.where(valid, logits / temperature, -np.inf)
        logits -= logits[valid].max()
        p = np.exp(logits)
        return p / p.sum()

    def update(self, records: list[DecisionRecord], lr: float) -> None:
        if not records:
            return
        grad_w = np.zeros_like(self.weights)
        grad_prior = 0.0
        for rec in records:
            p = self.probs(rec.observation, rec.valid, rec.greedy)
            x = np.append(rec.observation, 1.0)
            delta = -p
            delta[rec.action] += 1.0
            grad_w += np.outer(delta, x)
            if rec.greedy is not None:
                grad_prior += float(rec.action == rec.greedy) - p[rec.greedy]
        self.weights += lr * grad_w / len(records)
        self.prior += lr * grad_prior / len(records)


# -- training -------------------------------------------------------------------


@dataclass
class TrainConfig:
    binth: int = 16
    max_depth: int = DEFAULT_MAX_DEPTH
    iterations: int = 30
    rollouts_per_iteration: int = 4
    epsilon: float = 0.02
    temperature: float = 1.0
    prior: float = 4.0
    learning_rate: float = 0.5
    # rollouts growing past this multiple of the greedy tree's size are abandoned
    max_nodes_factor: float = 3.0
    seed: int = 0
    objective: str = "time"

    def __post_init__(self):
        for name in ("binth", "max_depth", "iterations", "rollouts_per_iteration"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.max_nodes_factor <= 0:
            raise ValueError("max_nodes_factor must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        Objective.parse(self.objective)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    tree: Tree
    best_reward: float
    baseline_reward: float
    history: list[dict]


def rollout(
    ruleset: Ruleset, config: TrainConfig, policy: LinearPolicy, rng: np.random.Generator, max_nodes: int | None = None
) -> EnvState | None:
    """Build one complete tree; ``None`` if it grows past ``max_nodes``."""
    state = reset(ruleset, config.binth, config.max_depth)
    while state.frontier:
        if max_nodes is not None and len(state.tree) > max_nodes:
            return None
        nid = state.frontier[0]
        mask = action_mask(state, nid)
        g = greedy_action(state.tree, nid, state.endpoints[nid])
        greedy = ACTION_INDEX.get(Partition() if isinstance(g, Partition) else g)
        if greedy is not None and not mask[greedy]:
            greedy = None
        if rng.random() < config.epsilon:
            choice = int(rng.choice(np.flatnonzero(mask)))
        else:
            p = policy.probs(observe(state.tree, nid, config.max_depth), mask, greedy, config.temperature)
            choice = int(rng.choice(len(ACTIONS), p=p))
        env_step(state, nid, ACTIONS[choice], greedy=greedy)
    return state


def _elite(records: list[DecisionRecord]) -> list[DecisionRecord]:
    """Decisions whose reward beats the median over the same node in other rollouts."""
    groups: dict[int, list[DecisionRecord]] = {}
    for rec in records:
        groups.setdefault(rec.key, []).append(rec)
    elite = []
    for group in groups.values():
        if len(group) < 2:
            continue
        median = float(np.median([r.reward for r in group]))
        elite.extend(r for r in group if r.reward > median)
    return elite


def run_training(ruleset: Ruleset, config: TrainConfig) -> TrainResult:
    objective = Objective.parse(config.objective)
    rng = np.random.default_rng(config.seed)
    policy = LinearPolicy(prior=config.prior)

    baseline = build_greedy(ruleset, config.binth, config.max_depth)
    reference = tree_magnitudes(baseline)
    best_tree = baseline
    best = baseline_reward = root_reward(baseline, objective, reference)
    max_nodes = int(config.max_nodes_factor * len(baseline))

    history = []
    for iteration in range(1, config.iterations + 1):
        batch: list[DecisionRecord] = []
        rewards = []
        for _ in range(config.rollouts_per_iteration):
            state = rollout(ruleset, config, policy, rng, max_nodes)
            if state is None:
                continue
            node_rewards = compute_rewards(state.tree, objective, reference)
            for rec in state.records:
                rec.reward = node_rewards[rec.node_id]
            batch.extend(state.records)
            r = root_reward(state.tree, objective, reference)
            rewards.append(r)
            if r > best:
                best, best_tree = r, state.tree
        policy.update(_elite(batch), config.learning_rate)
        history.append(
            {
                "iteration": iteration,
                "best_reward": best,
                "mean_reward": float(np.mean(rewards)) if rewards else float("nan"),
                "completed_rollouts": len(rewards),
            }
        )
    return TrainResult(best_tree, best, baseline_reward, history)


def train(ruleset: Ruleset, config: TrainConfig) -> Tree:
    return run_training(ruleset, config).tree


def write_training_log(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iteration", "best_reward", "mean_reward", "completed_rollouts"])
        writer.writeheader()
        writer.writerows(history)


def decision_records(state: EnvState) -> list[DecisionRecord]:
    if not state.done:
        raise TreeError("episode still running")
    return state.records
