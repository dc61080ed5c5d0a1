"""Effective-bit derivation.

Every equal power-of-two cut of an aligned box is selected by a run of
consecutive bits of the cut field: with a box of width ``2**w`` in a field of
width ``W`` the first ``W - w`` bits are fixed, and the next ``log2(count)``
bits pick the child.  This module labels each child edge with those global
bit positions and with the child's index written MSB-first over them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .bitops import FIELD_OFFSETS
from .dtree import Cut, Partition, Tree, TreeError
from .ruleset import FIELD_WIDTHS, FieldRange


@dataclass
class EbAnnotation:
    positions: dict[int, list[int]] = field(default_factory=dict)
    patterns: dict[int, tuple[int, ...]] = field(default_factory=dict)
    # children of partition nodes: reachable, but not selectable by header bits
    unaddressable: set[int] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.positions)


def cut_bit_positions(box, dim: int, count: int) -> list[int]:
    r: FieldRange = box[dim]
    width = r.hi - r.lo
    if width <= 0 or width & (width - 1) or r.lo % width:
        raise TreeError(f"box [{r.lo}, {r.hi}) on dim {dim} is not an aligned power of two")
    if count < 2 or count & (count - 1) or count > width:
        raise TreeError(f"cannot select {count} children of a width-{width} range with bits")
    prefix_len = FIELD_WIDTHS[dim] - (width.bit_length() - 1)
    k = count.bit_length() - 1
    return [FIELD_OFFSETS[dim] + prefix_len + t for t in range(k)]


def child_pattern(index: int, k: int) -> tuple[int, ...]:
    return tuple((index >> (k - 1 - t)) & 1 for t in range(k))


def derive_effective_bits(tree: Tree) -> EbAnnotation:
    """Annotate the tree in place (``eb_set``/``eb_pattern`` on each node)."""
    ann = EbAnnotation()
    for node in tree.iter_dfs():
        if isinstance(node.action, Cut):
            try:
                positions = cut_bit_positions(node.box, node.action.dim, node.action.count)
            except TreeError as exc:
                raise TreeError(f"node {node.id}: {exc}") from exc
            for i, cid in enumerate(node.children):
                pattern = child_pattern(i, len(positions))
                child = tree.nodes[cid]
                child.eb_set = list(positions)
                child.eb_pattern = pattern
                ann.positions[cid] = list(positions)
                ann.patterns[cid] = pattern
        elif isinstance(node.action, Partition):
            for cid in node.children:
                child = tree.nodes[cid]
                child.eb_set = []
                child.eb_pattern = None
                ann.unaddressable.add(cid)
    tree.eb_annotated = True
    return ann


def annotation_from_tree(tree: Tree) -> EbAnnotation:
    """Rebuild the annotation object from node fields (e.g. after loading)."""
    ann = EbAnnotation()
    for node in tree.nodes.values():
        for cid in node.children:
            child = tree.nodes[cid]
            if isinstance(node.action, Cut):
                ann.positions[cid] = list(child.eb_set)
                ann.patterns[cid] = tuple(child.eb_pattern)
            else:
                ann.unaddressable.add(cid)
    return ann
