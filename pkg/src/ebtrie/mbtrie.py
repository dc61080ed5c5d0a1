"""Group-binth truncation, lookup tables and the multibit classifier.

Truncation splices out intermediate cut nodes holding at least
``group_binth`` rules: the spliced node's children hang directly off the
surviving ancestor ("owner"), and the edge to each of them is labelled with
the concatenated effective bits of the removed chain.  Bits introduced by a
sibling branch are don't-cares on the edge, so an owner's edges partition the
space of its concatenated index and expand into a dense lookup table.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .bitops import MAX_INDEX_BITS, extract_packed, pack_header
from .dtree import (
    Cut,
    MemoryModel,
    Metrics,
    Tree,
    TreeError,
    TreeNode,
    child_index,
    node_from_doc,
    node_to_doc,
    rules_to_doc,
    scan_cost,
    scan_leaf,
    structural_metrics,
)
from .ruleset import Ruleset

DONT_CARE = None


@dataclass(frozen=True)
class EdgePattern:
    positions: tuple[int, ...]
    values: tuple[int | None, ...]

    def __post_init__(self):
        if len(self.positions) != len(self.values):
            raise ValueError("pattern positions and values differ in length")
        if len(set(self.positions)) != len(self.positions):
            raise ValueError("pattern positions must be distinct")

    def __str__(self) -> str:
        return "".join("x" if v is None else str(v) for v in self.values)

    @classmethod
    def parse(cls, positions, text: str) -> "EdgePattern":
        return cls(tuple(positions), tuple(None if ch == "x" else int(ch) for ch in text))

    @property
    def dont_cares(self) -> int:
        return sum(v is None for v in self.values)

    def matches(self, index: int) -> bool:
        n = len(self.values)
        return all(v is None or (index >> (n - 1 - t)) & 1 == v for t, v in enumerate(self.values))

    def indices(self) -> np.ndarray:
        """Every table index consistent with the specified bits."""
        n = len(self.values)
        base = 0
        free = []
        for t, v in enumerate(self.values):
            shift = n - 1 - t
            if v is None:
                free.append(shift)
            elif v:
                base |= 1 << shift
        combos = np.arange(1 << len(free), dtype=np.int64)
        out = np.full(len(combos), base, dtype=np.int64)
        for j, shift in enumerate(free):
            out |= ((combos >> j) & 1) << shift
        return out


@dataclass
class LookupTable:
    owner: int
    positions: tuple[int, ...]
    entries: np.ndarray

    def __len__(self) -> int:
        return len(self.entries)


class TruncatedTree:
    """Surviving nodes of a truncated tree plus the patterns on their edges."""

    def __init__(self, ruleset: Ruleset, binth: int, group_binth: int, root_id: int):
        self.ruleset = ruleset
        self.binth = binth
        self.group_binth = group_binth
        self.root_id = root_id
        self.nodes: dict[int, TreeNode] = {}
        self.patterns: dict[int, EdgePattern] = {}
        self.owner_positions: dict[int, tuple[int, ...]] = {}
        self.spliced: list[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def edges(self, owner: int) -> list[tuple[int, EdgePattern]]:
        return [(c, self.patterns[c]) for c in self.nodes[owner].children]


def truncate(tree: Tree, group_binth: int) -> TruncatedTree:
    if not tree.eb_annotated:
        raise TreeError("missing EB annotation: derive effective bits before truncating")
    if group_binth < 1:
        raise TreeError("group_binth must be >= 1")
    out = TruncatedTree(tree.ruleset, tree.binth, group_binth, tree.root_id)
    stack = [tree.root_id]
    while stack:
        nid = stack.pop()
        orig = tree.nodes[nid]
        node = dataclasses.replace(orig, children=list(orig.children), eb_set=list(orig.eb_set))
        out.nodes[nid] = node
        if isinstance(orig.action, Cut):
            positions = list(tree.nodes[orig.children[0]].eb_set)
            seen = set(positions)
            edges: list[tuple[int, dict[int, int]]] = []
            n_spliced = 0

            def visit(cid: int, bits: dict[int, int]) -> None:
                nonlocal n_spliced
                child = tree.nodes[cid]
                if isinstance(child.action, Cut) and len(child.rules) >= group_binth:
                    grand = tree.nodes[child.children[0]].eb_set
                    new = [p for p in grand if p not in seen]
                    if len(positions) + len(new) <= MAX_INDEX_BITS:
                        positions.extend(new)
                        seen.update(new)
                        out.spliced.append(cid)
                        n_spliced += 1
                        for gid in child.children:
                            g = tree.nodes[gid]
                            visit(gid, {**bits, **dict(zip(g.eb_set, g.eb_pattern))})
                        return
                edges.append((cid, bits))

            for cid in orig.children:
                c = tree.nodes[cid]
                visit(cid, dict(zip(c.eb_set, c.eb_pattern)))
            node.children = [cid for cid, _ in edges]
            for cid, bits in edges:
                out.patterns[cid] = EdgePattern(tuple(positions), tuple(bits.get(p, DONT_CARE) for p in positions))
            if n_spliced:
                out.owner_positions[nid] = tuple(positions)
        stack.extend(reversed(node.children))
    return out


def build_table(ttree: TruncatedTree, owner: int) -> LookupTable:
    positions = ttree.owner_positions[owner]
    entries = np.full(1 << len(positions), -1, dtype=np.int64)
    for cid, pattern in ttree.edges(owner):
        if pattern.positions != positions:
            raise TreeError(f"edge to {cid} is not expressed over the owner's positions")
        idx = pattern.indices()
        if (entries[idx] != -1).any():
            raise TreeError(f"pattern overlap in table of node {owner} (edge to {cid})")
        entries[idx] = cid
    if (entries == -1).any():
        raise TreeError(f"table of node {owner} leaves indices unassigned")
    return LookupTable(owner, positions, entries)


class Engine:
    """A truncated tree with one lookup table per multibit node."""

    def __init__(self, ttree: TruncatedTree, tables: dict[int, LookupTable]):
        self.ttree = ttree
        self.tables = tables
        self.ruleset = ttree.ruleset
        self.binth = ttree.binth
        self.group_binth = ttree.group_binth
        # plain lists make per-packet lookups cheaper than numpy scalar indexing
        self._dispatch = {owner: (t.positions, t.entries.tolist()) for owner, t in tables.items()}

    @property
    def root_id(self) -> int:
        return self.ttree.root_id

    @property
    def nodes(self) -> dict[int, TreeNode]:
        return self.ttree.nodes


def build_lookup_tables(ttree: TruncatedTree) -> Engine:
    return Engine(ttree, {owner: build_table(ttree, owner) for owner in ttree.owner_positions})


def build_engine(tree: Tree, group_binth: int) -> Engine:
    return build_lookup_tables(truncate(tree, group_binth))


def classify_multibit(engine: Engine, header) -> tuple[int | None, int]:
    """Classify ``header``; a table lookup descends several former levels in one access."""
    nodes = engine.ttree.nodes
    dispatch = engine._dispatch
    packed = None
    best = None
    accesses = 0
    stack = [engine.ttree.root_id]
    while stack:
        nid = stack.pop()
        node = nodes[nid]
        accesses += 1
        action = node.action
        if action is None:
            accesses += scan_cost(len(node.rules), engine.binth)
            best = scan_leaf(engine.ruleset, node.rules, header, best)
        elif nid in dispatch:
            if packed is None:
                packed = pack_header(header)
            positions, entries = dispatch[nid]
            stack.append(entries[extract_packed(packed, positions)])
        elif isinstance(action, Cut):
            stack.append(node.children[child_index(node, header)])
        else:
            stack.extend(reversed(node.children))
    return best, accesses


def engine_stats(engine: Engine, mm: MemoryModel | None = None) -> Metrics:
    def dispatch_entries(node: TreeNode) -> int:
        table = engine.tables.get(node.id)
        return len(table) if table is not None else len(node.children)

    return structural_metrics(engine.nodes, engine.root_id, len(engine.ruleset), mm or MemoryModel(), dispatch_entries)


def memory_terms(tree: Tree, engine: Engine, mm: MemoryModel | None = None) -> tuple[int, int]:
    """Bytes removed by splicing and bytes added by tables, relative to ``tree``.

    Multibit total bytes = unibit total - saved + added, exactly.
    """
    mm = mm or MemoryModel()
    saved = sum(mm.node_overhead_bytes + len(tree.nodes[s].children) * mm.table_entry_bytes for s in engine.ttree.spliced)
    added = sum((len(t) - len(tree.nodes[owner].children)) * mm.table_entry_bytes for owner, t in engine.tables.items())
    return saved, added


# -- serialization --------------------------------------------------------------


def engine_to_doc(engine: Engine) -> dict:
    ttree = engine.ttree
    nodes = []
    for nid in sorted(ttree.nodes):
        doc = node_to_doc(ttree.nodes[nid])
        pattern = ttree.patterns.get(nid)
        doc["edge"] = None if pattern is None else {"positions": list(pattern.positions), "values": str(pattern)}
        nodes.append(doc)
    return {
        "format": "ebtrie-engine",
        "version": 1,
        "binth": engine.binth,
        "group_binth": engine.group_binth,
        "root": ttree.root_id,
        "rules": rules_to_doc(engine.ruleset),
        "spliced": list(ttree.spliced),
        "nodes": nodes,
        "tables": [
            {"owner": t.owner, "positions": list(t.positions), "entries": t.entries.tolist()}
            for t in sorted(engine.tables.values(), key=lambda t: t.owner)
        ],
    }


def engine_from_doc(doc: dict) -> Engine:
    if doc.get("format") != "ebtrie-engine":
        raise TreeError("not an engine document")
    ruleset = Ruleset.from_ranges(doc["rules"])
    ttree = TruncatedTree(ruleset, doc["binth"], doc["group_binth"], doc["root"])
    ttree.spliced = list(doc["spliced"])
    for nd in doc["nodes"]:
        node = node_from_doc(nd)
        ttree.nodes[node.id] = node
        if nd.get("edge") is not None:
            ttree.patterns[node.id] = EdgePattern.parse(nd["edge"]["positions"], nd["edge"]["values"])
    tables = {}
    for td in doc["tables"]:
        table = LookupTable(td["owner"], tuple(td["positions"]), np.asarray(td["entries"], dtype=np.int64))
        if len(table.entries) != 1 << len(table.positions):
            raise TreeError(f"table of node {table.owner} has the wrong number of entries")
        ttree.owner_positions[table.owner] = table.positions
        tables[table.owner] = table
    return Engine(ttree, tables)
