"""Paired unibit/multibit benchmark sweeps and report files.

Each binth gets one tree; each group binth gets one engine built from it.
The whole trace goes through both classifiers and is checked against the
linear-scan oracle, so a result row only exists if every header agreed.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass, fields
from typing import Sequence

from .dtree import MemoryModel, Tree, build_greedy, classify_unibit, tree_stats
from .ebmap import derive_effective_bits
from .mbtrie import build_engine, classify_multibit, engine_stats, memory_terms
from .rlopt import TrainConfig, train
from .ruleset import PacketHeader, Ruleset, oracle_classify_many

BUILDERS = ("greedy", "rl")


class BenchError(RuntimeError):
    """A classifier disagreed with the oracle."""

    def __init__(self, message: str, header: Sequence[int] | None = None):
        super().__init__(message)
        self.header = header


@dataclass
class BenchResult:
    ruleset: str
    builder: str
    binth: int
    group_binth: int
    bytes_per_rule_unibit: float
    bytes_per_rule_multibit: float
    # structural metrics over the whole tree
    worst_unibit: int
    worst_multibit: int
    avg_unibit: float
    avg_multibit: float
    # the same quantities measured on the trace, including leaf scans
    trace_worst_unibit: int
    trace_worst_multibit: int
    trace_avg_unibit: float
    trace_avg_multibit: float
    agreement: float
    build_seconds: float
    spliced_nodes: int
    table_entries: int
    # multibit bytes = unibit bytes - saved + added
    saved_node_bytes: int
    added_table_bytes: int

    def __post_init__(self):
        if self.agreement != 1.0:
            raise BenchError(f"agreement rate {self.agreement} != 1.0")
        if self.worst_unibit < self.avg_unibit or self.worst_multibit < self.avg_multibit:
            raise ValueError("worst-case accesses below the average")

    @property
    def worst_improvement(self) -> float:
        return improvement(self.worst_unibit, self.worst_multibit)

    @property
    def avg_improvement(self) -> float:
        return improvement(self.avg_unibit, self.avg_multibit)


COLUMNS = [f.name for f in fields(BenchResult)]
_TYPES = {f.name: f.type for f in fields(BenchResult)}


def improvement(unibit: float, multibit: float) -> float:
    return (unibit - multibit) / unibit


def build_tree(ruleset: Ruleset, builder: str, binth: int, train_config: TrainConfig | None = None) -> Tree:
    if builder == "greedy":
        if train_config is not None:
            return build_greedy(ruleset, binth, train_config.max_depth)
        return build_greedy(ruleset, binth)
    if builder == "rl":
        base = train_config.to_dict() if train_config is not None else {}
        base["binth"] = binth
        return train(ruleset, TrainConfig.from_dict(base))
    raise ValueError(f"unknown builder {builder!r}; expected one of {BUILDERS}")


def _check(expected, got, trace, what: str) -> None:
    for want, (rid, _), header in zip(expected, got, trace):
        if rid != want:
            raise BenchError(f"{what} returned {rid} for header {tuple(header)}, oracle says {want}", header)


def run_bench(
    ruleset: Ruleset,
    builder: str,
    binths: Sequence[int],
    group_binths: Sequence[int],
    trace: Sequence[PacketHeader],
    mm: MemoryModel | None = None,
    train_config: TrainConfig | None = None,
) -> list[BenchResult]:
    if not binths or not group_binths:
        raise ValueError("binth and group_binth sweeps must be non-empty")
    if not trace:
        raise ValueError("trace must be non-empty")
    mm = mm or MemoryModel()
    expected = oracle_classify_many(ruleset, trace)
    results = []
    for binth in binths:
        start = time.perf_counter()
        tree = build_tree(ruleset, builder, binth, train_config)
        derive_effective_bits(tree)
        build_seconds = time.perf_counter() - start
        uni = [classify_unibit(tree, h) for h in trace]
        _check(expected, uni, trace, f"unibit tree (binth={binth})")
        uni_stats = tree_stats(tree, mm)
        uni_acc = [a for _, a in uni]
        for g in group_binths:
            engine = build_engine(tree, g)
            multi = [classify_multibit(engine, h) for h in trace]
            _check(expected, multi, trace, f"multibit engine (binth={binth}, group_binth={g})")
            multi_stats = engine_stats(engine, mm)
            multi_acc = [a for _, a in multi]
            saved, added = memory_terms(tree, engine, mm)
            results.append(
                BenchResult(
                    ruleset=ruleset.name,
                    builder=builder,
                    binth=binth,
                    group_binth=g,
                    bytes_per_rule_unibit=uni_stats.bytes_per_rule,
                    bytes_per_rule_multibit=multi_stats.bytes_per_rule,
                    worst_unibit=uni_stats.worst_accesses,
                    worst_multibit=multi_stats.worst_accesses,
                    avg_unibit=uni_stats.avg_accesses,
                    avg_multibit=multi_stats.avg_accesses,
                    trace_worst_unibit=max(uni_acc),
                    trace_worst_multibit=max(multi_acc),
                    trace_avg_unibit=sum(uni_acc) / len(uni_acc),
                    trace_avg_multibit=sum(multi_acc) / len(multi_acc),
                    agreement=1.0,
                    build_seconds=build_seconds,
                    spliced_nodes=len(engine.ttree.spliced),
                    table_entries=sum(len(t) for t in engine.tables.values()),
                    saved_node_bytes=saved,
                    added_table_bytes=added,
                )
            )
    return results


# -- report files ---------------------------------------------------------------


def write_results_csv(results: Sequence[BenchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for r in results:
            # repr keeps floats exact across a round trip
            writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


def read_results_csv(path) -> list[BenchResult]:
    casts = {"int": int, "float": float, "str": str}
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [BenchResult(**{k: casts[_TYPES[k]](row[k]) for k in COLUMNS}) for row in rows]


def summary_table(results: Sequence[BenchResult]) -> str:
    header = (
        f"{'ruleset':<16} {'builder':<7} {'binth':>5} {'gbinth':>6} "
        f"{'mem uni':>9} {'mem multi':>9} "
        f"{'worst uni':>9} {'worst multi':>11} {'worst impr':>10} "
        f"{'avg uni':>8} {'avg multi':>9} {'avg impr':>8}"
    )
    lines = [header, "-" * len(header)]
    for r in results:
        lines.append(
            f"{r.ruleset:<16} {r.builder:<7} {r.binth:>5} {r.group_binth:>6} "
            f"{r.bytes_per_rule_unibit:>9.1f} {r.bytes_per_rule_multibit:>9.1f} "
            f"{r.worst_unibit:>9} {r.worst_multibit:>11} {r.worst_improvement:>9.1%} "
            f"{r.avg_unibit:>8.3f} {r.avg_multibit:>9.3f} {r.avg_improvement:>7.1%}"
        )
    return "\n".join(lines) + "\n"


def _write_rows(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def emit_report(results: Sequence[BenchResult], path) -> list[str]:
    """Write the results CSV, a text summary and per-plot CSVs into directory ``path``."""
    if not results:
        raise ValueError("no results to report")
    os.makedirs(path, exist_ok=True)
    out = {
        "results": os.path.join(path, "results.csv"),
        "summary": os.path.join(path, "summary.txt"),
        "memory": os.path.join(path, "memory_vs_binth.csv"),
        "worst": os.path.join(path, "worst_vs_group_binth.csv"),
        "avg": os.path.join(path, "avg_vs_group_binth.csv"),
    }
    write_results_csv(results, out["results"])
    with open(out["summary"], "w") as fh:
        fh.write(summary_table(results))
    key = ["ruleset", "builder"]
    _write_rows(
        out["memory"],
        key + ["group_binth", "binth", "bytes_per_rule_unibit", "bytes_per_rule_multibit"],
        [[r.ruleset, r.builder, r.group_binth, r.binth, r.bytes_per_rule_unibit, r.bytes_per_rule_multibit] for r in results],
    )
    _write_rows(
        out["worst"],
        key + ["binth", "group_binth", "worst_unibit", "worst_multibit", "worst_improvement"],
        [[r.ruleset, r.builder, r.binth, r.group_binth, r.worst_unibit, r.worst_multibit, r.worst_improvement] for r in results],
    )
    _write_rows(
        out["avg"],
        key + ["binth", "group_binth", "avg_unibit", "avg_multibit", "avg_improvement"],
        [[r.ruleset, r.builder, r.binth, r.group_binth, r.avg_unibit, r.avg_multibit, r.avg_improvement] for r in results],
    )
    return list(out.values())
