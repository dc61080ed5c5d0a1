"""Five-field rulesets, packet headers, and the linear-scan reference classifier.

Ranges are half-open ``[lo, hi)`` everywhere.  Inclusive file formats (the
ClassBench port columns) are converted at the parse/serialize boundary.
"""

from __future__ import annotations

import ipaddress
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

SRC_IP, DST_IP, SRC_PORT, DST_PORT, PROTO = range(5)
FIELD_NAMES = ("src_ip", "dst_ip", "src_port", "dst_port", "proto")
FIELD_WIDTHS = (32, 32, 16, 16, 8)
NUM_FIELDS = 5


class ParseError(ValueError):
    """Raised for malformed rule or trace input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FieldRange(NamedTuple):
    lo: int
    hi: int

    def width(self) -> int:
        return self.hi - self.lo

    def contains(self, value: int) -> bool:
        return self.lo <= value < self.hi

    def intersects(self, other: "FieldRange") -> bool:
        return self.lo < other.hi and other.lo < self.hi


def full_range(dim: int) -> FieldRange:
    return FieldRange(0, 1 << FIELD_WIDTHS[dim])


def full_box() -> tuple[FieldRange, ...]:
    return tuple(full_range(d) for d in range(NUM_FIELDS))


def prefix_range(value: int, length: int, width: int) -> FieldRange:
    """Range covered by ``value/length`` in a ``width``-bit field.

    Host bits below the prefix are ignored.
    """
    if not 0 <= length <= width:
        raise ValueError(f"prefix length {length} outside 0..{width}")
    span = 1 << (width - length)
    lo = (value >> (width - length) << (width - length)) if length else 0
    return FieldRange(lo, lo + span)


def range_as_prefix(r: FieldRange, width: int) -> tuple[int, int] | None:
    """Inverse of :func:`prefix_range`; ``None`` when ``r`` is not a prefix."""
    span = r.hi - r.lo
    if span <= 0 or span & (span - 1) or r.lo % span:
        return None
    length = width - (span.bit_length() - 1)
    if length < 0:
        return None
    return r.lo, length


def validate_range(r: FieldRange, dim: int) -> None:
    if not (0 <= r.lo < r.hi <= 1 << FIELD_WIDTHS[dim]):
        raise ValueError(f"invalid {FIELD_NAMES[dim]} range [{r.lo}, {r.hi})")


@dataclass(frozen=True)
class Rule:
    id: int
    ranges: tuple[FieldRange, ...]

    def __post_init__(self):
        if len(self.ranges) != NUM_FIELDS:
            raise ValueError("a rule needs exactly five ranges")
        for dim, r in enumerate(self.ranges):
            validate_range(r, dim)

    @property
    def priority(self) -> int:
        # lower id wins
        return self.id

    def matches(self, header: "PacketHeader") -> bool:
        return rule_matches(self, header)


class PacketHeader(NamedTuple):
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: int

    def validate(self) -> "PacketHeader":
        for dim, v in enumerate(self):
            if not 0 <= v < 1 << FIELD_WIDTHS[dim]:
                raise ValueError(f"{FIELD_NAMES[dim]}={v} outside {FIELD_WIDTHS[dim]}-bit field")
        return self


class Ruleset:
    """An immutable, priority-ordered list of rules with dense ids ``0..n-1``."""

    def __init__(self, rules: Sequence[Rule], name: str = ""):
        rules = tuple(rules)
        if not rules:
            raise ValueError("empty ruleset")
        for i, rule in enumerate(rules):
            if rule.id != i:
                raise ValueError(f"rule ids must be dense 0..n-1, found id {rule.id} at position {i}")
        self.rules = rules
        self.name = name
        lo = np.array([[r.ranges[d].lo for d in range(NUM_FIELDS)] for r in rules], dtype=np.int64)
        hi = np.array([[r.ranges[d].hi for d in range(NUM_FIELDS)] for r in rules], dtype=np.int64)
        lo.flags.writeable = False
        hi.flags.writeable = False
        self.lo = lo
        self.hi = hi

    @classmethod
    def from_ranges(cls, boxes: Iterable[Sequence[Sequence[int]]], name: str = "") -> "Ruleset":
        return cls(
            [Rule(i, tuple(FieldRange(int(lo), int(hi)) for lo, hi in box)) for i, box in enumerate(boxes)],
            name=name,
        )

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def __getitem__(self, i: int) -> Rule:
        return self.rules[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, Ruleset) and self.rules == other.rules

    def __repr__(self) -> str:
        return f"Ruleset({self.name!r}, {len(self)} rules)"


def rule_matches(rule: Rule, header: Sequence[int]) -> bool:
    for r, v in zip(rule.ranges, header):
        if not r.lo <= v < r.hi:
            return False
    return True


def oracle_classify(ruleset: Ruleset, header: Sequence[int]) -> int | None:
    """Linear scan; returns the lowest matching rule id or ``None``."""
    for rule in ruleset.rules:
        if rule_matches(rule, header):
            return rule.id
    return None


def oracle_classify_many(ruleset: Ruleset, headers: Sequence[Sequence[int]], chunk: int = 512) -> list[int | None]:
    """Vectorised equivalent of :func:`oracle_classify` over a whole trace."""
    if len(headers) == 0:
        return []
    h = np.asarray(headers, dtype=np.int64).reshape(-1, NUM_FIELDS)
    out: list[int | None] = []
    lo, hi = ruleset.lo, ruleset.hi
    for start in range(0, len(h), chunk):
        block = h[start : start + chunk, None, :]
        hit = ((block >= lo) & (block < hi)).all(axis=2)
        any_hit = hit.any(axis=1)
        first = hit.argmax(axis=1)
        out.extend(int(f) if a else None for f, a in zip(first, any_hit))
    return out


# -- ClassBench filter format ---------------------------------------------------


def _parse_prefix(token: str, lineno: int) -> FieldRange:
    try:
        addr, length = token.split("/")
        value = int(ipaddress.IPv4Address(addr))
        length = int(length)
    except ValueError as exc:
        raise ParseError(f"bad IP prefix {token!r}", lineno) from exc
    if not 0 <= length <= 32:
        raise ParseError(f"prefix length {length} exceeds 32", lineno)
    return prefix_range(value, length, 32)


def _parse_port_range(lo_tok: str, colon: str, hi_tok: str, lineno: int) -> FieldRange:
    if colon != ":":
        raise ParseError(f"expected ':' between port bounds, got {colon!r}", lineno)
    try:
        lo, hi = int(lo_tok), int(hi_tok)
    except ValueError as exc:
        raise ParseError(f"bad port range {lo_tok} : {hi_tok}", lineno) from exc
    if not 0 <= lo <= hi <= 0xFFFF:
        raise ParseError(f"port range {lo} : {hi} out of bounds", lineno)
    return FieldRange(lo, hi + 1)


def _parse_proto(token: str, lineno: int) -> FieldRange:
    try:
        value, mask = (int(t, 0) for t in token.split("/"))
    except ValueError as exc:
        raise ParseError(f"bad protocol field {token!r}", lineno) from exc
    if not 0 <= value <= 0xFF:
        raise ParseError(f"protocol {value} out of range", lineno)
    if mask == 0x00:
        return FieldRange(0, 256)
    if mask == 0xFF:
        return FieldRange(value, value + 1)
    raise ParseError(f"unsupported protocol mask {mask:#04x} (only 0x00 and 0xFF)", lineno)


def parse_rule_line(line: str, rule_id: int, lineno: int) -> Rule:
    tokens = line.split()
    # real ClassBench files carry a trailing flags column; it is ignored
    if len(tokens) not in (9, 10) or not tokens[0].startswith("@"):
        raise ParseError(f"malformed rule: {line.strip()!r}", lineno)
    ranges = (
        _parse_prefix(tokens[0][1:], lineno),
        _parse_prefix(tokens[1], lineno),
        _parse_port_range(tokens[2], tokens[3], tokens[4], lineno),
        _parse_port_range(tokens[5], tokens[6], tokens[7], lineno),
        _parse_proto(tokens[8], lineno),
    )
    return Rule(rule_id, ranges)


def parse_classbench(text: str, name: str = "") -> Ruleset:
    rules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        rules.append(parse_rule_line(line, len(rules), lineno))
    if not rules:
        raise ParseError("empty ruleset")
    return Ruleset(rules, name=name)


def format_rule(rule: Rule) -> str:
    parts = []
    for dim in (SRC_IP, DST_IP):
        pfx = range_as_prefix(rule.ranges[dim], 32)
        if pfx is None:
            raise ValueError(f"rule {rule.id}: {FIELD_NAMES[dim]} range is not a prefix")
        parts.append(f"{ipaddress.IPv4Address(pfx[0])}/{pfx[1]}")
    for dim in (SRC_PORT, DST_PORT):
        r = rule.ranges[dim]
        parts.append(f"{r.lo} : {r.hi - 1}")
    proto = rule.ranges[PROTO]
    if proto == (0, 256):
        parts.append("0x00/0x00")
    elif proto.hi - proto.lo == 1:
        parts.append(f"0x{proto.lo:02X}/0xFF")
    else:
        raise ValueError(f"rule {rule.id}: protocol range is neither wildcard nor exact")
    return "@" + "\t".join(parts)


def format_classbench(ruleset: Ruleset) -> str:
    return "".join(format_rule(r) + "\n" for r in ruleset.rules)


def load_ruleset(path) -> Ruleset:
    with open(path) as fh:
        return parse_classbench(fh.read(), name=os.path.splitext(os.path.basename(path))[0])


# -- traces ---------------------------------------------------------------------


def parse_trace(text: str) -> list[PacketHeader]:
    headers = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        # ClassBench traces append the expected rule id; anything past five fields is ignored
        if len(tokens) < 5:
            raise ParseError(f"expected five header fields, got {len(tokens)}", lineno)
        try:
            header = PacketHeader(*(int(t) for t in tokens[:5])).validate()
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
        headers.append(header)
    return headers


def format_trace(headers: Iterable[Sequence[int]]) -> str:
    return "".join("\t".join(str(int(v)) for v in h) + "\n" for h in headers)


def load_trace(path) -> list[PacketHeader]:
    with open(path) as fh:
        return parse_trace(fh.read())


def parse_header(text: str) -> PacketHeader:
    """Parse ``"a,b,c,d,e"`` into a header."""
    parts = text.split(",")
    if len(parts) != 5:
        raise ParseError(f"header needs five comma-separated values, got {text!r}")
    try:
        return PacketHeader(*(int(p) for p in parts)).validate()
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


# -- synthetic rulesets and traces ----------------------------------------------

_WELL_KNOWN_PORTS = (20, 21, 22, 23, 25, 53, 67, 69, 80, 110, 123, 135, 137, 139, 143, 161, 389, 443, 445, 514,
                     636, 1433, 1521, 3306, 3389, 5060, 8080)
_PORT_RANGES = ((1024, 65535), (0, 1023), (6000, 6063), (49152, 65535), (5000, 5099), (8000, 8999))

PROFILES = ("acl-like", "ipc-like")

# per-profile mixture weights; each entry is (choice, weight)
_PROFILE_MIX = {
    "acl-like": {
        "src": (("any", 0.22), ("short", 0.13), ("net", 0.30), ("host", 0.35)),
        "dst": (("any", 0.03), ("short", 0.10), ("net", 0.27), ("host", 0.60)),
        "sport": (("any", 0.92), ("range", 0.06), ("exact", 0.02)),
        "dport": (("any", 0.18), ("well_known", 0.45), ("exact", 0.20), ("range", 0.17)),
        "proto": (("tcp", 0.66), ("udp", 0.22), ("icmp", 0.04), ("any", 0.08)),
    },
    "ipc-like": {
        "src": (("any", 0.10), ("short", 0.15), ("net", 0.40), ("host", 0.35)),
        "dst": (("any", 0.05), ("short", 0.15), ("net", 0.40), ("host", 0.40)),
        "sport": (("any", 0.70), ("range", 0.15), ("exact", 0.15)),
        "dport": (("any", 0.30), ("well_known", 0.30), ("exact", 0.15), ("range", 0.25)),
        "proto": (("tcp", 0.50), ("udp", 0.30), ("icmp", 0.05), ("any", 0.15)),
    },
}


def _pick(rng: np.random.Generator, options) -> str:
    names = [o[0] for o in options]
    weights = np.array([o[1] for o in options])
    return names[rng.choice(len(names), p=weights / weights.sum())]


def _ip_range(rng, kind: str, networks: list[int]) -> FieldRange:
    base = networks[rng.integers(len(networks))]
    if kind == "any":
        return FieldRange(0, 1 << 32)
    if kind == "short":
        return prefix_range(base, int(rng.choice([8, 12, 16])), 32)
    if kind == "net":
        value = base | int(rng.integers(1 << 16))
        return prefix_range(value, int(rng.choice([20, 24, 24, 28])), 32)
    value = base | int(rng.integers(1 << 16))
    return prefix_range(value, 32, 32)


def _port_range(rng, kind: str) -> FieldRange:
    if kind == "any":
        return FieldRange(0, 1 << 16)
    if kind == "well_known":
        p = _WELL_KNOWN_PORTS[rng.integers(len(_WELL_KNOWN_PORTS))]
        return FieldRange(p, p + 1)
    if kind == "exact":
        p = int(rng.integers(1024, 1 << 16))
        return FieldRange(p, p + 1)
    lo, hi = _PORT_RANGES[rng.integers(len(_PORT_RANGES))]
    return FieldRange(lo, hi + 1)


_PROTO_VALUES = {"tcp": 6, "udp": 17, "icmp": 1}


def generate_ruleset(seed: int, count: int, profile: str = "acl-like") -> Ruleset:
    """Deterministic ClassBench-flavoured ruleset.

    Addresses are drawn around a small pool of /16 networks so rules cluster
    the way real ACLs do; the profile controls how often each field is a
    wildcard, a short prefix, or an exact value.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    profile = {"acl": "acl-like", "ipc": "ipc-like"}.get(profile, profile)
    if profile not in _PROFILE_MIX:
        raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    mix = _PROFILE_MIX[profile]
    rng = np.random.default_rng(seed)
    n_nets = max(4, count // 40)
    src_nets = [int(v) << 16 for v in rng.integers(1, 1 << 16, size=n_nets)]
    dst_nets = [int(v) << 16 for v in rng.integers(1, 1 << 16, size=n_nets)]

    boxes = []
    seen = set()
    while len(boxes) < count:
        src = _ip_range(rng, _pick(rng, mix["src"]), src_nets)
        dst = _ip_range(rng, _pick(rng, mix["dst"]), dst_nets)
        sport = _port_range(rng, _pick(rng, mix["sport"]))
        dport = _port_range(rng, _pick(rng, mix["dport"]))
        proto_kind = _pick(rng, mix["proto"])
        if proto_kind == "any":
            proto = FieldRange(0, 256)
        else:
            proto = FieldRange(_PROTO_VALUES[proto_kind], _PROTO_VALUES[proto_kind] + 1)
        if proto_kind not in ("tcp", "udp"):
            sport, dport = full_range(SRC_PORT), full_range(DST_PORT)
        box = (src, dst, sport, dport, proto)
        if box in seen:
            continue
        seen.add(box)
        boxes.append(box)
    return Ruleset([Rule(i, b) for i, b in enumerate(boxes)], name=f"{profile}-{seed}-{count}")


def generate_trace(ruleset: Ruleset, seed: int, count: int) -> list[PacketHeader]:
    """Sample a rule uniformly, then a header uniformly inside its box."""
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = np.random.default_rng(seed)
    headers = []
    for _ in range(count):
        rule = ruleset.rules[rng.integers(len(ruleset))]
        headers.append(PacketHeader(*(int(rng.integers(r.lo, r.hi)) for r in rule.ranges)))
    return headers
