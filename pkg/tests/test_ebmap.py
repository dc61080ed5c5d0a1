import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebtrie.bitops import extract_index, field_window
from ebtrie.dtree import Cut, Partition, TreeError, build_greedy, child_index, classify_unibit, load_tree, save_tree, traversal_path
from ebtrie.ebmap import annotation_from_tree, child_pattern, cut_bit_positions, derive_effective_bits
from ebtrie.ruleset import FIELD_WIDTHS, SRC_IP, FieldRange, PacketHeader, full_box, generate_ruleset, generate_trace

from conftest import lookup_example


def srcip_box(lo, hi):
    return (FieldRange(lo, hi),) + full_box()[1:]


def test_worked_srcip_example():
    box = srcip_box(1 << 30, 1 << 31)
    positions = cut_bit_positions(box, SRC_IP, 4)
    assert positions == [2, 3]
    minima = [1073741824, 1342177280, 1610612736, 1879048192]
    assert [extract_index(PacketHeader(m, 0, 0, 0, 0), positions) for m in minima] == [0, 1, 2, 3]


def test_layout_anchors():
    assert cut_bit_positions(full_box(), SRC_IP, 2) == [0]
    assert cut_bit_positions(full_box(), 4, 2) == [96]


def test_misaligned_boxes_are_rejected():
    with pytest.raises(TreeError):
        cut_bit_positions(srcip_box(1, 3), SRC_IP, 2)
    with pytest.raises(TreeError):
        cut_bit_positions(srcip_box(0, 3), SRC_IP, 2)
    with pytest.raises(TreeError):
        cut_bit_positions(srcip_box(0, 2), SRC_IP, 4)


def test_child_pattern_is_msb_first():
    assert child_pattern(2, 2) == (1, 0)
    assert [child_pattern(i, 3) for i in range(8)] == [tuple(int(b) for b in f"{i:03b}") for i in range(8)]


@st.composite
def aligned_cut(draw):
    dim = draw(st.integers(0, 4))
    width_bits = FIELD_WIDTHS[dim]
    log_w = draw(st.integers(1, width_bits))
    k = draw(st.integers(1, min(5, log_w)))
    block = draw(st.integers(0, (1 << (width_bits - log_w)) - 1))
    lo = block << log_w
    value = draw(st.integers(lo, lo + (1 << log_w) - 1))
    return dim, lo, 1 << log_w, 1 << k, value


@given(aligned_cut())
def test_selector_soundness(cut):
    dim, lo, width, count, value = cut
    box = list(full_box())
    box[dim] = FieldRange(lo, lo + width)
    positions = cut_bit_positions(tuple(box), dim, count)
    assert set(positions) <= set(field_window(dim))
    header = [0, 0, 0, 0, 0]
    header[dim] = value
    assert extract_index(header, positions) == (value - lo) // (width // count)


def test_selector_exhaustive_on_proto():
    for log_w in range(1, 9):
        for lo in range(0, 256, 1 << log_w):
            for k in range(1, min(5, log_w) + 1):
                box = full_box()[:4] + (FieldRange(lo, lo + (1 << log_w)),)
                positions = cut_bit_positions(box, 4, 1 << k)
                sub = (1 << log_w) >> k
                for v in range(lo, lo + (1 << log_w)):
                    assert extract_index((0, 0, 0, 0, v), positions) == (v - lo) // sub


def test_single_leaf_tree_gives_empty_annotation():
    rs = generate_ruleset(1, 10)
    tree = build_greedy(rs, 16)
    ann = derive_effective_bits(tree)
    assert len(ann) == 0 and not ann.unaddressable
    assert tree.eb_annotated


def test_lookup_example_bits():
    tree, names = lookup_example()
    derive_effective_bits(tree)

    def child_bits(nid):
        return {tuple(tree.nodes[c].eb_set) for c in tree.nodes[nid].children}

    assert child_bits(tree.root_id) == {(32, 33)}
    assert child_bits(names["S2"]) == {(0,)}
    assert child_bits(names["S3"]) == {(64,)}
    assert child_bits(names["S4"]) == {(80,)}
    assert [tree.nodes[c].eb_pattern for c in tree.root.children] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert tree.root.eb_set == []


@pytest.fixture(scope="module")
def annotated():
    rs = generate_ruleset(2, 600, "acl-like")
    tree = build_greedy(rs, 8)
    ann = derive_effective_bits(tree)
    return rs, tree, ann


def test_sibling_patterns_complete_and_distinct(annotated):
    _, tree, ann = annotated
    for node in tree.nodes.values():
        if isinstance(node.action, Cut):
            k = node.action.count.bit_length() - 1
            pats = [ann.patterns[c] for c in node.children]
            assert sorted(pats) == [child_pattern(i, k) for i in range(1 << k)]
            assert all(len(ann.positions[c]) == k for c in node.children)
            assert all(set(ann.positions[c]) <= set(field_window(node.action.dim)) for c in node.children)
        elif isinstance(node.action, Partition):
            assert all(c in ann.unaddressable and tree.nodes[c].eb_set == [] for c in node.children)


def test_bit_walk_reproduces_arithmetic_path(annotated):
    rs, tree, _ = annotated
    for h in generate_trace(rs, 3, 1000):
        path = traversal_path(tree, h)
        for nid in path:
            node = tree.nodes[nid]
            if isinstance(node.action, Cut):
                positions = tree.nodes[node.children[0]].eb_set
                by_bits = [c for c in node.children if tree.nodes[c].eb_pattern == child_pattern(extract_index(h, positions), len(positions))]
                assert by_bits == [node.children[child_index(node, h)]]
        assert classify_unibit(tree, h)[0] is not None


def test_annotation_survives_serialization(tmp_path, annotated):
    _, tree, ann = annotated
    save_tree(tree, tmp_path / "t.json")
    again = annotation_from_tree(load_tree(tmp_path / "t.json"))
    assert again.positions == ann.positions
    assert again.patterns == ann.patterns
    assert again.unaddressable == ann.unaddressable


def test_keystone_random_pairs():
    rng = np.random.default_rng(12)
    for _ in range(2000):
        dim = int(rng.integers(0, 5))
        log_w = int(rng.integers(1, FIELD_WIDTHS[dim] + 1))
        k = int(rng.integers(1, min(5, log_w) + 1))
        lo = int(rng.integers(0, 1 << (FIELD_WIDTHS[dim] - log_w))) << log_w
        v = lo + int(rng.integers(0, 1 << log_w))
        box = list(full_box())
        box[dim] = FieldRange(lo, lo + (1 << log_w))
        h = [0] * 5
        h[dim] = v
        assert extract_index(h, cut_bit_positions(tuple(box), dim, 1 << k)) == (v - lo) >> (log_w - k)
