"""Decision-tree packet classification with effective-bit multibit truncation."""

from .bench import BenchResult, emit_report, run_bench
from .bitops import extract_index, pack_header
from .dtree import Cut, MemoryModel, Partition, Tree, TreeError, build_greedy, classify_unibit, tree_stats
from .ebmap import cut_bit_positions, derive_effective_bits
from .mbtrie import Engine, build_engine, classify_multibit, engine_stats, truncate
from .rlopt import Objective, TrainConfig, train
from .ruleset import (
    FieldRange,
    PacketHeader,
    Rule,
    Ruleset,
    generate_ruleset,
    generate_trace,
    load_ruleset,
    load_trace,
    oracle_classify,
    parse_classbench,
)

__all__ = [
    "BenchResult",
    "Cut",
    "Engine",
    "FieldRange",
    "MemoryModel",
    "Objective",
    "PacketHeader",
    "Partition",
    "Rule",
    "Ruleset",
    "TrainConfig",
    "Tree",
    "TreeError",
    "build_engine",
    "build_greedy",
    "classify_multibit",
    "classify_unibit",
    "cut_bit_positions",
    "derive_effective_bits",
    "emit_report",
    "engine_stats",
    "extract_index",
    "generate_ruleset",
    "generate_trace",
    "load_ruleset",
    "load_trace",
    "oracle_classify",
    "pack_header",
    "parse_classbench",
    "run_bench",
    "train",
    "tree_stats",
    "truncate",
]
