import csv
import json

import numpy as np
import pytest

from ebtrie.dtree import Cut, Partition, apply_cut, build_greedy, root_node, tree_stats, tree_to_doc
from ebtrie.rlopt import (
    ACTIONS,
    EnvError,
    LinearPolicy,
    Objective,
    TrainConfig,
    action_mask,
    compute_rewards,
    decision_records,
    env_step,
    reset,
    root_reward,
    run_training,
    train,
    tree_magnitudes,
    write_training_log,
)
from ebtrie.ruleset import SRC_IP, SRC_PORT, Ruleset, generate_ruleset

from conftest import box_rule


def shape_tree(shape):
    """Build a finished tree from nested lists; a list is a cut node, ``None`` a leaf.

    Rewards depend only on the shape and on whether a node cuts or
    partitions, so child counts need not be powers of two here.
    """
    rs = Ruleset([box_rule(0)])
    tree = root_node(rs, 1)

    def fill(nid, sub, depth):
        node = tree.nodes[nid]
        if sub is None:
            tree.finalize_leaf(nid)
            return
        node.action = Cut(SRC_PORT, 2)
        for child_shape in sub:
            child = tree.new_node(node.box, node.rules, depth + 1, parent=nid)
            node.children.append(child.id)
            fill(child.id, child_shape, depth + 1)

    fill(tree.root_id, shape, 0)
    return tree


def test_objective_parsing():
    assert Objective.parse("time") == Objective("time")
    assert Objective.parse("combined:0.3") == Objective("combined", 0.3)
    assert str(Objective.parse("combined:0.25")) == "combined:0.25"
    with pytest.raises(ValueError):
        Objective.parse("combined:1.5")
    with pytest.raises(ValueError):
        Objective.parse("speed")


def test_two_decision_rewards():
    # S0 splits into S1, S2; S1 splits into S3, S4, S5; all of S2..S5 are leaves
    tree = shape_tree([[None, None, None], None])
    s0 = tree.root_id
    s1 = tree.nodes[s0].children[0]
    rewards = compute_rewards(tree, Objective("time"))
    assert rewards == {s0: -3, s1: -2}
    assert tree_stats(tree).worst_accesses == 3


def test_two_decision_rewards_from_real_cuts():
    rs = Ruleset([box_rule(i, src_ip=(i << 28, (i + 1) << 28)) for i in range(4)] + [box_rule(4, src_ip=(1 << 31, 1 << 32))])
    tree = root_node(rs, 1)
    s1, _ = apply_cut(tree, tree.root_id, SRC_IP, 2)
    apply_cut(tree, s1, SRC_IP, 4)
    for leaf in tree.leaves():
        tree.finalize_leaf(leaf.id)
    assert compute_rewards(tree) == {tree.root_id: -3, s1: -2}


def test_single_leaf_has_no_decisions():
    tree = shape_tree(None)
    assert compute_rewards(tree) == {}
    assert root_reward(tree) == -1


@pytest.mark.parametrize("k", [1, 2, 5])
def test_chain_of_cuts(k):
    shape = None
    for _ in range(k):
        shape = [shape, None]
    tree = shape_tree(shape)
    assert compute_rewards(tree)[tree.root_id] == -(k + 1)


def test_space_and_combined_objectives():
    tree = shape_tree([[None, None, None], None])
    s1 = tree.nodes[tree.root_id].children[0]
    space = compute_rewards(tree, Objective("space"))
    assert space == {tree.root_id: -6, s1: -4}
    comb = compute_rewards(tree, Objective("combined", 0.5))
    assert comb[tree.root_id] == pytest.approx(-1.0)
    assert comb[s1] == pytest.approx(-(0.5 * 2 / 3 + 0.5 * 4 / 6))
    ref = compute_rewards(tree, Objective("combined", 1.0), reference=(6, 12))
    assert ref[tree.root_id] == pytest.approx(-0.5)


def test_unfinished_tree_is_rejected():
    tree = root_node(generate_ruleset(1, 100), 4)
    with pytest.raises(EnvError):
        compute_rewards(tree)


def test_root_reward_matches_tree_stats():
    for seed in (1, 2):
        tree = build_greedy(generate_ruleset(seed, 400), 8)
        assert -root_reward(tree) == tree_stats(tree).worst_accesses
        assert tree_magnitudes(tree) == (tree_stats(tree).worst_accesses, len(tree))
        assert all(r < 0 for r in compute_rewards(tree).values())


def test_env_step_grows_frontier_by_oversized_children():
    rs = generate_ruleset(1, 1000)
    state = reset(rs, 16)
    assert list(state.frontier) == [state.tree.root_id]
    kids = state.tree.nodes
    env_step(state, state.tree.root_id, Cut(SRC_IP, 4))
    children = kids[state.tree.root_id].children
    big = [c for c in children if len(kids[c].rules) > 16]
    assert sorted(state.frontier) == sorted(c for c in big if not kids[c].final)
    assert all(kids[c].final for c in children if c not in state.frontier)
    assert len(state.records) == 1


def test_env_rejects_bad_steps():
    rs = generate_ruleset(1, 200)
    state = reset(rs, 16)
    with pytest.raises(EnvError, match="frontier"):
        env_step(state, 999, Cut(SRC_IP, 2))
    mask = action_mask(state, state.tree.root_id)
    masked = [a for a, ok in zip(ACTIONS, mask) if not ok]
    if masked:
        with pytest.raises(EnvError, match="masked"):
            env_step(state, state.tree.root_id, masked[0])


def test_hopeless_node_becomes_flagged_leaf():
    rs = Ruleset([box_rule(i) for i in range(5)])
    state = reset(rs, 2)
    assert state.done
    assert state.tree.root.oversized
    assert decision_records(state) == []


def test_episode_ends_with_empty_frontier():
    rs = generate_ruleset(3, 300)
    state = reset(rs, 16)
    while state.frontier:
        nid = state.frontier[0]
        env_step(state, nid, state.valid[nid][0])
    assert state.done and state.tree.is_finalized()
    acted = [n.id for n in state.tree.nodes.values() if not n.is_leaf]
    assert sorted(r.node_id for r in decision_records(state)) == sorted(acted)


def test_policy_probabilities_respect_mask():
    policy = LinearPolicy(prior=3.0)
    valid = np.zeros(len(ACTIONS), dtype=bool)
    valid[[0, 5, 25]] = True
    p = policy.probs(np.zeros(12), valid, greedy=5)
    assert p.sum() == pytest.approx(1.0)
    assert (p[~valid] == 0).all()
    assert p[5] > p[0] == pytest.approx(p[25])
    assert ACTIONS[25] == Partition()


def test_train_trivial_set_is_single_leaf():
    rs = Ruleset([box_rule(i, dst_port=(i, i + 1)) for i in range(16)])
    tree = train(rs, TrainConfig(binth=16, iterations=2, rollouts_per_iteration=2))
    assert len(tree) == 1 and root_reward(tree) == -1


@pytest.fixture(scope="module")
def short_run():
    rs = generate_ruleset(4, 250, "acl-like")
    cfg = TrainConfig(binth=8, iterations=4, rollouts_per_iteration=3, seed=3)
    return rs, cfg, run_training(rs, cfg)


def test_training_never_loses_to_greedy(short_run):
    rs, cfg, result = short_run
    best = [row["best_reward"] for row in result.history]
    assert best == sorted(best)
    assert result.best_reward >= result.baseline_reward
    assert tree_stats(result.tree).worst_accesses <= tree_stats(build_greedy(rs, 8)).worst_accesses
    assert len(result.history) == cfg.iterations


def test_training_is_deterministic(short_run):
    rs, cfg, result = short_run
    again = run_training(rs, cfg)
    assert tree_to_doc(again.tree) == tree_to_doc(result.tree)
    # mean_reward is nan when every rollout of an iteration was abandoned
    np.testing.assert_equal(again.history, result.history)


def test_training_log(tmp_path, short_run):
    _, _, result = short_run
    path = tmp_path / "log.csv"
    write_training_log(result.history, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["iteration"]) for r in rows] == list(range(1, 5))
    assert set(rows[0]) == {"iteration", "best_reward", "mean_reward", "completed_rollouts"}


def test_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"iterations": 7, "objective": "combined:0.2", "seed": 9}))
    cfg = TrainConfig.load(path)
    assert (cfg.iterations, cfg.objective, cfg.seed) == (7, "combined:0.2", 9)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"iterations": 2, "gamma": 0.9})
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
