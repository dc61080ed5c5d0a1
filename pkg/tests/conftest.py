import os

import pytest
from hypothesis import settings

from ebtrie.dtree import apply_cut, root_node
from ebtrie.ruleset import DST_IP, DST_PORT, PROTO, SRC_IP, SRC_PORT, FieldRange, Rule, Ruleset, full_box

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def record_criterion(request):
    """Collect one line per acceptance criterion for the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(name: str, passed: bool, detail: str = "") -> bool:
        lines.append(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[_ACCEPTANCE_KEY]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def box_rule(rid, **fields):
    """A rule that is a wildcard except for the named fields."""
    box = list(full_box())
    index = {"src_ip": SRC_IP, "dst_ip": DST_IP, "src_port": SRC_PORT, "dst_port": DST_PORT, "proto": PROTO}
    for name, (lo, hi) in fields.items():
        box[index[name]] = FieldRange(lo, hi)
    return Rule(rid, tuple(box))


Q = 1 << 30


def lookup_example(cascade: bool = False):
    """A tree with the shape of the four-way root example.

    Root cuts DstIP into quarters (S2..S5).  S2 cuts SrcIP in two, S3 cuts
    SrcPort in two, S4 cuts DstPort in two and S5 is a leaf.  With
    ``cascade`` S3's first child holds two rules split by protocol, so it is
    large enough to be spliced too.
    """
    specs = [
        {"dst_ip": (0, Q), "src_ip": (0, 1 << 31)},
        {"dst_ip": (0, Q), "src_ip": (1 << 31, 1 << 32)},
        {"dst_ip": (Q, 2 * Q), "src_port": (0, 1 << 15)},
        {"dst_ip": (Q, 2 * Q), "src_port": (1 << 15, 1 << 16)},
        {"dst_ip": (2 * Q, 3 * Q), "dst_port": (0, 1 << 15)},
        {"dst_ip": (2 * Q, 3 * Q), "dst_port": (1 << 15, 1 << 16)},
        {"dst_ip": (3 * Q, 4 * Q)},
    ]
    if cascade:
        specs[2] = {"dst_ip": (Q, 2 * Q), "src_port": (0, 1 << 15), "proto": (0, 128)}
        specs.insert(3, {"dst_ip": (Q, 2 * Q), "src_port": (0, 1 << 15), "proto": (128, 256)})
    ruleset = Ruleset([box_rule(i, **s) for i, s in enumerate(specs)], name="lookup-example")
    tree = root_node(ruleset, binth=1)
    s2, s3, s4, s5 = apply_cut(tree, tree.root_id, DST_IP, 4)
    apply_cut(tree, s2, SRC_IP, 2)
    s8, _ = apply_cut(tree, s3, SRC_PORT, 2)
    apply_cut(tree, s4, DST_PORT, 2)
    if cascade:
        apply_cut(tree, s8, PROTO, 2)
    for leaf in tree.leaves():
        tree.finalize_leaf(leaf.id)
    return tree, {"S2": s2, "S3": s3, "S4": s4, "S5": s5, "S8": s8}


@pytest.fixture(scope="session")
def small_ruleset():
    from ebtrie.ruleset import generate_ruleset

    return generate_ruleset(11, 200, "acl-like")


@pytest.fixture(scope="session")
def small_trace(small_ruleset):
    from ebtrie.ruleset import generate_trace

    return generate_trace(small_ruleset, 5, 2000)
