"""Decision trees over five-field rulesets.

A node owns a half-open box per dimension and the ids of the rules that
intersect it.  Two actions grow the tree:

* ``Cut(dim, count)`` splits the box along ``dim`` into ``count`` equal,
  aligned sub-ranges (rules spanning several sub-ranges are replicated);
* ``Partition`` splits the *rules* into large/small groups by how much of the
  box they cover on one dimension.  Both children keep the parent's box and
  must both be searched when classifying.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .ruleset import FIELD_WIDTHS, NUM_FIELDS, FieldRange, Ruleset, full_box, rule_matches

CUT_COUNTS = (2, 4, 8, 16, 32)
DEFAULT_MAX_DEPTH = 32


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class Cut:
    dim: int
    count: int

    def __post_init__(self):
        if not 0 <= self.dim < NUM_FIELDS:
            raise TreeError(f"cut dimension {self.dim} outside 0..4")
        if self.count not in CUT_COUNTS:
            raise TreeError(f"cut count {self.count} not in {CUT_COUNTS}")


@dataclass(frozen=True)
class Partition:
    # dimension whose coverage fraction decided the split; chosen when applied
    dim: int | None = None


NodeAction = Cut | Partition | None


@dataclass(eq=False)
class TreeNode:
    id: int
    box: tuple[FieldRange, ...]
    rules: tuple[int, ...]
    depth: int = 0
    parent: int | None = None
    action: NodeAction = None
    children: list[int] = field(default_factory=list)
    eb_set: list[int] = field(default_factory=list)
    eb_pattern: tuple[int, ...] | None = None
    final: bool = False
    oversized: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.action is None


@dataclass(frozen=True)
class MemoryModel:
    node_overhead_bytes: int = 32
    rule_ref_bytes: int = 4
    table_entry_bytes: int = 4

    def __post_init__(self):
        if min(self.node_overhead_bytes, self.rule_ref_bytes, self.table_entry_bytes) <= 0:
            raise ValueError("memory model sizes must be positive")


@dataclass(frozen=True)
class Metrics:
    worst_accesses: int
    avg_accesses: float
    bytes_per_rule: float
    nodes: int
    leaves: int
    rule_refs: int
    table_entries: int
    max_depth: int
    oversized_leaves: int


class Tree:
    def __init__(self, ruleset: Ruleset, binth: int, box: Sequence[FieldRange] | None = None):
        if binth < 1:
            raise TreeError("binth must be >= 1")
        self.ruleset = ruleset
        self.binth = binth
        self.nodes: dict[int, TreeNode] = {}
        self.eb_annotated = False
        root = self.new_node(tuple(box) if box is not None else full_box(), tuple(range(len(ruleset))), depth=0)
        self.root_id = root.id

    @property
    def root(self) -> TreeNode:
        return self.nodes[self.root_id]

    def new_node(self, box, rules, depth: int, parent: int | None = None) -> TreeNode:
        node = TreeNode(len(self.nodes), tuple(box), tuple(rules), depth=depth, parent=parent)
        self.nodes[node.id] = node
        return node

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf_eligible(self, node_id: int) -> bool:
        return len(self.nodes[node_id].rules) <= self.binth

    def iter_dfs(self, start: int | None = None) -> Iterator[TreeNode]:
        """Pre-order depth-first walk, children visited in stored order."""
        stack = [self.root_id if start is None else start]
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.iter_dfs() if n.is_leaf]

    def finalize_leaf(self, node_id: int) -> None:
        node = self.nodes[node_id]
        node.final = True
        node.oversized = len(node.rules) > self.binth

    def is_finalized(self) -> bool:
        return all(n.final or not n.is_leaf for n in self.nodes.values())


def root_node(ruleset: Ruleset, binth: int, box: Sequence[FieldRange] | None = None) -> Tree:
    if len(ruleset) == 0:
        raise TreeError("empty ruleset")
    return Tree(ruleset, binth, box)


# -- actions --------------------------------------------------------------------


def _check_unacted(tree: Tree, node: TreeNode) -> None:
    if node.action is not None or node.children:
        raise TreeError(f"node {node.id} already has an action")
    if node.final:
        raise TreeError(f"node {node.id} is a finalized leaf")


def cut_geometry(box_range: FieldRange, count: int) -> tuple[int, int]:
    """Return ``(sub_width, shift)`` for an equal split; validates alignment."""
    width = box_range.hi - box_range.lo
    if width < count:
        raise TreeError(f"over-cut: width {width} < count {count}")
    if width & (width - 1) or box_range.lo % width:
        raise TreeError(f"range [{box_range.lo}, {box_range.hi}) is not an aligned power of two")
    sub = width // count
    return sub, sub.bit_length() - 1


def _clipped(tree: Tree, node: TreeNode, dim: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.fromiter(node.rules, dtype=np.int64, count=len(node.rules))
    r = node.box[dim]
    lo = np.maximum(tree.ruleset.lo[idx, dim], r.lo)
    hi = np.minimum(tree.ruleset.hi[idx, dim], r.hi)
    return lo, hi


def apply_cut(tree: Tree, node_id: int, dim: int, count: int) -> list[int]:
    node = tree.nodes[node_id]
    _check_unacted(tree, node)
    action = Cut(dim, count)
    box_range = node.box[dim]
    sub, shift = cut_geometry(box_range, count)
    lo, hi = _clipped(tree, node, dim)
    first = (lo - box_range.lo) >> shift
    last = (hi - 1 - box_range.lo) >> shift
    rules = np.asarray(node.rules, dtype=np.int64)
    children = []
    for i in range(count):
        child_range = FieldRange(box_range.lo + i * sub, box_range.lo + (i + 1) * sub)
        box = node.box[:dim] + (child_range,) + node.box[dim + 1 :]
        members = rules[(first <= i) & (last >= i)]
        child = tree.new_node(box, (int(r) for r in members), node.depth + 1, parent=node.id)
        children.append(child.id)
    node.action = action
    node.children = children
    return children


def cut_child_counts(tree: Tree, node: TreeNode, dim: int, count: int) -> np.ndarray:
    """Rule count each child of ``Cut(dim, count)`` would receive."""
    box_range = node.box[dim]
    _, shift = cut_geometry(box_range, count)
    lo, hi = _clipped(tree, node, dim)
    diff = np.zeros(count + 1, dtype=np.int64)
    np.add.at(diff, (lo - box_range.lo) >> shift, 1)
    np.add.at(diff, ((hi - 1 - box_range.lo) >> shift) + 1, -1)
    return np.cumsum(diff[:-1])


def relative_widths(node: TreeNode) -> list[float]:
    return [(r.hi - r.lo) / (1 << FIELD_WIDTHS[d]) for d, r in enumerate(node.box)]


def partition_split(tree: Tree, node: TreeNode, dim: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split rules into those covering more than half of the box on ``dim`` and the rest."""
    lo, hi = _clipped(tree, node, dim)
    width = node.box[dim].hi - node.box[dim].lo
    large = 2 * (hi - lo) > width
    rules = np.asarray(node.rules, dtype=np.int64)
    return tuple(int(r) for r in rules[large]), tuple(int(r) for r in rules[~large])


def partition_dims(node: TreeNode) -> list[int]:
    """Dimensions in the order a partition tries them: widest relative box first."""
    rel = relative_widths(node)
    return sorted(range(NUM_FIELDS), key=lambda d: (-rel[d], d))


def find_partition(tree: Tree, node: TreeNode, dim: int | None = None):
    """Return ``(dim, large, small)`` for the first non-degenerate split, else ``None``."""
    if len(node.rules) < 2:
        return None
    for d in [dim] if dim is not None else partition_dims(node):
        large, small = partition_split(tree, node, d)
        if large and small:
            return d, large, small
    return None


def apply_partition(tree: Tree, node_id: int, dim: int | None = None) -> list[int]:
    node = tree.nodes[node_id]
    _check_unacted(tree, node)
    if len(node.rules) < 2:
        raise TreeError(f"ineffective partition: node {node_id} has fewer than two rules")
    found = find_partition(tree, node, dim)
    if found is None:
        raise TreeError(f"ineffective partition at node {node_id}")
    d, large, small = found
    children = [tree.new_node(node.box, part, node.depth + 1, parent=node.id).id for part in (large, small)]
    node.action = Partition(d)
    node.children = children
    return children


def apply_action(tree: Tree, node_id: int, action: NodeAction) -> list[int]:
    if isinstance(action, Cut):
        return apply_cut(tree, node_id, action.dim, action.count)
    if isinstance(action, Partition):
        return apply_partition(tree, node_id, action.dim)
    raise TreeError(f"not an action: {action!r}")


# -- action validity and the greedy heuristic -----------------------------------


def interior_endpoints(tree: Tree, node: TreeNode, dim: int) -> int:
    """Distinct rule endpoints strictly inside the node's box on ``dim``."""
    lo, hi = _clipped(tree, node, dim)
    r = node.box[dim]
    pts = np.concatenate([lo[lo > r.lo], hi[hi < r.hi]])
    return len(np.unique(pts))


def cut_is_valid(tree: Tree, node: TreeNode, dim: int, count: int, endpoints: int | None = None) -> bool:
    width = node.box[dim].hi - node.box[dim].lo
    if width < count:
        return False
    # a cut without an interior endpoint copies every rule into every child
    if endpoints is None:
        endpoints = interior_endpoints(tree, node, dim)
    return endpoints > 0


def node_endpoints(tree: Tree, node_id: int) -> list[int]:
    node = tree.nodes[node_id]
    return [interior_endpoints(tree, node, d) for d in range(NUM_FIELDS)]


def valid_actions(tree: Tree, node_id: int, endpoints: Sequence[int] | None = None) -> list[NodeAction]:
    node = tree.nodes[node_id]
    if endpoints is None:
        endpoints = node_endpoints(tree, node_id)
    actions: list[NodeAction] = []
    for dim in range(NUM_FIELDS):
        actions.extend(Cut(dim, c) for c in CUT_COUNTS if cut_is_valid(tree, node, dim, c, endpoints[dim]))
    if find_partition(tree, node) is not None:
        actions.append(Partition())
    return actions


def greedy_action(tree: Tree, node_id: int, endpoints: Sequence[int] | None = None) -> NodeAction:
    """Cut the dimension with the most distinct interior endpoints.

    The count is the largest allowed value not exceeding that endpoint count
    (at least 2).  A partition is used instead when no dimension has an
    interior endpoint, or when the cut would hand some child every rule of
    the node.  ``None`` means nothing useful is left to do.
    """
    node = tree.nodes[node_id]
    if endpoints is None:
        endpoints = node_endpoints(tree, node_id)
    best = max(range(NUM_FIELDS), key=lambda d: (endpoints[d], -d))
    if endpoints[best] == 0:
        return Partition() if find_partition(tree, node) is not None else None
    width = node.box[best].hi - node.box[best].lo
    count = 2
    for c in CUT_COUNTS:
        if c <= max(endpoints[best], 2) and c <= width:
            count = c
    # a child inheriting every rule means the cut made no progress there
    if cut_child_counts(tree, node, best, count).max() >= len(node.rules):
        if find_partition(tree, node) is not None:
            return Partition()
    return Cut(best, count)


def grow(tree: Tree, max_depth: int, choose: Callable[[Tree, int], NodeAction]) -> Tree:
    """Expand every oversized node breadth-first using ``choose``."""
    frontier = deque([tree.root_id])
    while frontier:
        nid = frontier.popleft()
        node = tree.nodes[nid]
        if tree.leaf_eligible(nid) or node.depth >= max_depth:
            tree.finalize_leaf(nid)
            continue
        action = choose(tree, nid)
        if action is None:
            tree.finalize_leaf(nid)
            continue
        frontier.extend(apply_action(tree, nid, action))
    return tree


def build_greedy(ruleset: Ruleset, binth: int, max_depth: int = DEFAULT_MAX_DEPTH) -> Tree:
    return grow(root_node(ruleset, binth), max_depth, greedy_action)


# -- classification -------------------------------------------------------------


def scan_cost(n_rules: int, binth: int) -> int:
    return -(-n_rules // binth)


def scan_leaf(ruleset: Ruleset, rule_ids: Sequence[int], header: Sequence[int], best: int | None) -> int | None:
    rules = ruleset.rules
    for rid in rule_ids:
        if best is not None and rid >= best:
            break
        if rule_matches(rules[rid], header):
            return rid
    return best


def child_index(node: TreeNode, header: Sequence[int]) -> int:
    cut = node.action
    r = node.box[cut.dim]
    sub = (r.hi - r.lo) // cut.count
    return (header[cut.dim] - r.lo) // sub


def classify_unibit(tree: Tree, header: Sequence[int]) -> tuple[int | None, int]:
    """Walk the tree one node per access; partitions search both children."""
    best = None
    accesses = 0
    nodes = tree.nodes
    stack = [tree.root_id]
    while stack:
        node = nodes[stack.pop()]
        accesses += 1
        action = node.action
        if action is None:
            accesses += scan_cost(len(node.rules), tree.binth)
            best = scan_leaf(tree.ruleset, node.rules, header, best)
        elif isinstance(action, Cut):
            stack.append(node.children[child_index(node, header)])
        else:
            stack.extend(reversed(node.children))
    return best, accesses


def traversal_path(tree: Tree, header: Sequence[int]) -> list[int]:
    """Node ids visited by :func:`classify_unibit`, in visit order."""
    path = []
    stack = [tree.root_id]
    while stack:
        node = tree.nodes[stack.pop()]
        path.append(node.id)
        if isinstance(node.action, Cut):
            stack.append(node.children[child_index(node, header)])
        elif isinstance(node.action, Partition):
            stack.extend(reversed(node.children))
    return path


# -- statistics -----------------------------------------------------------------


def structural_metrics(
    nodes: dict[int, TreeNode],
    root_id: int,
    n_rules: int,
    mm: MemoryModel,
    dispatch_entries: Callable[[TreeNode], int],
) -> Metrics:
    """Shared accounting for unibit trees and truncated engines.

    ``worst`` charges one access per node, ``1 + max`` below a cut and
    ``1 + sum`` below a partition.  ``avg`` is the mean root-to-leaf node
    count.  Memory is node overhead plus leaf rule references plus child
    dispatch slots (pointer arrays or lookup-table entries).
    """
    order = []
    stack = [(root_id, 1)]
    leaf_paths = []
    while stack:
        nid, path_len = stack.pop()
        node = nodes[nid]
        order.append(nid)
        if node.is_leaf:
            leaf_paths.append((node, path_len))
        for c in node.children:
            stack.append((c, path_len + 1))
    cost: dict[int, int] = {}
    for nid in reversed(order):
        node = nodes[nid]
        if node.is_leaf:
            cost[nid] = 1
        elif isinstance(node.action, Partition):
            cost[nid] = 1 + sum(cost[c] for c in node.children)
        else:
            cost[nid] = 1 + max(cost[c] for c in node.children)
    rule_refs = sum(len(n.rules) for n, _ in leaf_paths)
    table_entries = sum(dispatch_entries(nodes[nid]) for nid in order if not nodes[nid].is_leaf)
    total = len(order) * mm.node_overhead_bytes + rule_refs * mm.rule_ref_bytes + table_entries * mm.table_entry_bytes
    return Metrics(
        worst_accesses=cost[root_id],
        avg_accesses=sum(p for _, p in leaf_paths) / len(leaf_paths),
        bytes_per_rule=total / n_rules,
        nodes=len(order),
        leaves=len(leaf_paths),
        rule_refs=rule_refs,
        table_entries=table_entries,
        max_depth=max(p for _, p in leaf_paths) - 1,
        oversized_leaves=sum(1 for n, _ in leaf_paths if n.oversized),
    )


def tree_stats(tree: Tree, mm: MemoryModel | None = None) -> Metrics:
    return structural_metrics(tree.nodes, tree.root_id, len(tree.ruleset), mm or MemoryModel(), lambda n: len(n.children))


# -- serialization --------------------------------------------------------------


def action_to_doc(action: NodeAction):
    if action is None:
        return None
    if isinstance(action, Cut):
        return {"type": "cut", "dim": action.dim, "count": action.count}
    return {"type": "partition", "dim": action.dim}


def action_from_doc(doc) -> NodeAction:
    if doc is None:
        return None
    if doc["type"] == "cut":
        return Cut(doc["dim"], doc["count"])
    if doc["type"] == "partition":
        return Partition(doc.get("dim"))
    raise TreeError(f"unknown action type {doc['type']!r}")


def node_to_doc(node: TreeNode) -> dict:
    return {
        "id": node.id,
        "depth": node.depth,
        "parent": node.parent,
        "box": [[r.lo, r.hi] for r in node.box],
        "rules": list(node.rules),
        "action": action_to_doc(node.action),
        "children": list(node.children),
        "eb_set": list(node.eb_set),
        "eb_pattern": list(node.eb_pattern) if node.eb_pattern is not None else None,
        "oversized": node.oversized,
    }


def node_from_doc(doc: dict) -> TreeNode:
    return TreeNode(
        id=doc["id"],
        box=tuple(FieldRange(lo, hi) for lo, hi in doc["box"]),
        rules=tuple(doc["rules"]),
        depth=doc["depth"],
        parent=doc["parent"],
        action=action_from_doc(doc["action"]),
        children=list(doc["children"]),
        eb_set=list(doc["eb_set"]),
        eb_pattern=tuple(doc["eb_pattern"]) if doc.get("eb_pattern") is not None else None,
        final=doc["action"] is None,
        oversized=doc.get("oversized", False),
    )


def rules_to_doc(ruleset: Ruleset) -> list:
    return [[[r.lo, r.hi] for r in rule.ranges] for rule in ruleset.rules]


def tree_to_doc(tree: Tree) -> dict:
    return {
        "format": "ebtrie-tree",
        "version": 1,
        "binth": tree.binth,
        "root": tree.root_id,
        "eb_annotated": tree.eb_annotated,
        "rules": rules_to_doc(tree.ruleset),
        "nodes": [node_to_doc(n) for n in sorted(tree.nodes.values(), key=lambda n: n.id)],
    }


def tree_from_doc(doc: dict) -> Tree:
    if doc.get("format") != "ebtrie-tree":
        raise TreeError("not a tree document")
    tree = Tree.__new__(Tree)
    tree.ruleset = Ruleset.from_ranges(doc["rules"])
    tree.binth = doc["binth"]
    tree.root_id = doc["root"]
    tree.eb_annotated = doc["eb_annotated"]
    tree.nodes = {d["id"]: node_from_doc(d) for d in doc["nodes"]}
    return tree


def dump_doc(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_doc(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_tree(tree: Tree, path) -> None:
    dump_doc(tree_to_doc(tree), path)


def load_tree(path) -> Tree:
    return tree_from_doc(load_doc(path))


def metrics_dict(m: Metrics) -> dict:
    return asdict(m)

