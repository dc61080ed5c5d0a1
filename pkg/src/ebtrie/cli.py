"""Command-line pipeline: generate, build, annotate, truncate, classify, bench.

Stages talk through files: ClassBench text for rules, whitespace-separated
five-tuples for traces, and JSON documents for trees and engines.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from . import bench
from .dtree import DEFAULT_MAX_DEPTH, build_greedy, classify_unibit, dump_doc, load_doc, load_tree, save_tree, tree_from_doc
from .ebmap import derive_effective_bits
from .mbtrie import build_engine, classify_multibit, engine_from_doc, engine_to_doc
from .rlopt import Objective, TrainConfig, run_training, write_training_log
from .ruleset import (
    format_classbench,
    format_trace,
    generate_ruleset,
    generate_trace,
    load_ruleset,
    load_trace,
    oracle_classify_many,
    parse_header,
)


class CliError(Exception):
    def __init__(self, message: str, status: int = 1):
        super().__init__(message)
        self.status = status


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _train_config(args) -> TrainConfig:
    data = TrainConfig.load(args.config).to_dict() if args.config else {}
    data["binth"] = args.binth
    data["max_depth"] = args.max_depth
    for key in ("objective", "iterations", "seed"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.rollouts is not None:
        data["rollouts_per_iteration"] = args.rollouts
    return TrainConfig.from_dict(data)


# -- subcommands ----------------------------------------------------------------


def cmd_gen_rules(args) -> int:
    _write(args.out, format_classbench(generate_ruleset(args.seed, args.count, args.profile)))
    return 0


def cmd_gen_trace(args) -> int:
    ruleset = load_ruleset(args.rules)
    _write(args.out, format_trace(generate_trace(ruleset, args.seed, args.count)))
    return 0


def cmd_build(args) -> int:
    ruleset = load_ruleset(args.rules)
    if args.builder == "greedy":
        tree = build_greedy(ruleset, args.binth, args.max_depth)
    else:
        result = run_training(ruleset, _train_config(args))
        tree = result.tree
        if args.log:
            write_training_log(result.history, args.log)
    save_tree(tree, args.out)
    return 0


def cmd_derive_eb(args) -> int:
    tree = load_tree(args.tree)
    derive_effective_bits(tree)
    save_tree(tree, args.out or args.tree)
    return 0


def cmd_truncate(args) -> int:
    tree = load_tree(args.tree)
    dump_doc(engine_to_doc(build_engine(tree, args.group_binth)), args.out)
    return 0


def cmd_classify(args) -> int:
    if args.header is not None:
        headers = [parse_header(args.header)]
    else:
        headers = load_trace(args.trace)
    if args.engine:
        engine = engine_from_doc(load_doc(args.engine))
        ruleset = engine.ruleset
        results = [classify_multibit(engine, h) for h in headers]
    else:
        tree = tree_from_doc(load_doc(args.tree))
        ruleset = tree.ruleset
        results = [classify_unibit(tree, h) for h in headers]
    expected = oracle_classify_many(ruleset, headers)
    out = sys.stdout
    for (rid, accesses), want, header in zip(results, expected, headers):
        if rid != want:
            raise CliError(f"oracle mismatch for header {tuple(header)}: got {rid}, expected {want}", status=3)
        out.write(f"{'none' if rid is None else rid}\t{accesses}\n")
    return 0


def cmd_bench(args) -> int:
    ruleset = load_ruleset(args.rules)
    if args.trace:
        trace = load_trace(args.trace)
    else:
        trace = generate_trace(ruleset, args.seed, args.trace_count)
    train_config = _train_config(args) if args.builder == "rl" else None
    results = bench.run_bench(ruleset, args.builder, args.binth, args.group_binth, trace, train_config=train_config)
    if args.csv:
        bench.write_results_csv(results, args.csv)
    if args.out_dir:
        bench.emit_report(results, args.out_dir)
    sys.stdout.write(bench.summary_table(results))
    return 0


# -- parser ---------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-depth", type=int, default=DEFAULT_MAX_DEPTH)
    p.add_argument("--objective", type=str, default=None, help="time, space, combined or combined:<weight>")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--rollouts", type=int, default=None, help="rollouts per iteration")
    p.add_argument("--config", default=None, help="JSON file with trainer settings")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebtrie", description="Decision-tree packet classification with multibit truncation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-rules", help="generate a synthetic ClassBench ruleset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--profile", choices=["acl", "ipc", "acl-like", "ipc-like"], default="acl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_rules)

    p = sub.add_parser("gen-trace", help="generate headers that land inside ruleset boxes")
    p.add_argument("--rules", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("build", help="build a decision tree")
    p.add_argument("--rules", required=True)
    p.add_argument("--binth", type=int, default=16)
    p.add_argument("--builder", choices=bench.BUILDERS, default="greedy")
    p.add_argument("--seed", type=int, default=None, help="trainer seed (rl builder)")
    p.add_argument("--log", default=None, help="CSV training log (rl builder)")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("derive-eb", help="annotate a tree with effective bits")
    p.add_argument("--tree", required=True)
    p.add_argument("--out", default=None, help="defaults to overwriting --tree")
    p.set_defaults(func=cmd_derive_eb)

    p = sub.add_parser("truncate", help="splice large nodes and build lookup tables")
    p.add_argument("--tree", required=True)
    p.add_argument("--group-binth", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("classify", help="classify headers and check them against a linear scan")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--engine")
    src.add_argument("--tree")
    inp = p.add_mutually_exclusive_group(required=True)
    inp.add_argument("--header", help="five comma-separated decimals")
    inp.add_argument("--trace")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("bench", help="paired unibit/multibit sweep")
    p.add_argument("--rules", required=True)
    p.add_argument("--binth", type=_int_list, default=[16], help="comma-separated list")
    p.add_argument("--group-binth", type=_int_list, default=[40], help="comma-separated list")
    p.add_argument("--trace", default=None)
    p.add_argument("--trace-count", type=int, default=10000, help="generated trace size when --trace is absent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--builder", choices=bench.BUILDERS, default="greedy")
    p.add_argument("--csv", default=None)
    p.add_argument("--out-dir", default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "objective", None) is not None:
        try:
            Objective.parse(args.objective)
        except ValueError as exc:
            parser.print_usage(sys.stderr)
            print(f"ebtrie: error: {exc}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ebtrie: error: {exc}", file=sys.stderr)
        return exc.status
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"ebtrie: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
