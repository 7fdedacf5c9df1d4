"""Command-line entry point: ``engn {trace,simulate,analyze,sweep,compare}``.

Exit codes: 0 success, 1 configuration error, 2 protocol invariant
violation, 3 no progress, 4 state-space cap exceeded.  Every output is
written once, atomically, and depends only on the config and the seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from engn import errors
from engn.model import (ACTION_KINDS, Variant, apply_overrides, equal_budget_split, load_raw,
                        shipped_raw, validate_scenario)
from engn.protocol.messages import ACTION_OF_KIND, atomic_write_text, dumps_jsonl

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION, EXIT_NO_PROGRESS, EXIT_CAP = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; exit status 2 means a violated invariant
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _scenario_args(p, variant_default="engn"):
    p.add_argument("--config", help="scenario JSON (default: the shipped config of --variant)")
    p.add_argument("--variant", choices=["ngn", "engn"], default=None,
                   help=f"architecture variant (default {variant_default})")
    p.add_argument("--budget", type=int, help="re-split this many processors equally over the components")
    p.add_argument("--override", action="append", default=[], metavar="K=V",
                   help="dotted-path override into the config document (repeatable)")
    p.set_defaults(variant_default=variant_default)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="engn", description="NGN and evolved NGN control-plane models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="run a canonical signaling flow and write its message trace")
    _scenario_args(p)
    p.add_argument("--flow", default="attach",
                   choices=["attach", "mobility-register", "handover-network", "handover-host",
                            "coordination"])
    p.add_argument("--inject", help="insert a deliberate violation (tcf-to-user, tcf-tf-signaling, "
                                    "decision-by-mssf)")
    p.add_argument("--out", help="trace path (default: standard output)")

    p = sub.add_parser("simulate", help="discrete-event simulation of one scenario")
    _scenario_args(p)
    p.add_argument("--flow", default="attach")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--completions", type=int, default=100_000)
    p.add_argument("--horizon", type=float, help="stop at this simulated time instead of a completion count")
    p.add_argument("--dump", help="write the event log as JSON lines")
    p.add_argument("--out", help="metrics path (default: standard output)")

    p = sub.add_parser("analyze", help="exact CTMC steady state of one closed scenario")
    _scenario_args(p)
    p.add_argument("--state-cap", type=int, default=1_000_000)
    p.add_argument("--dump", help="write the generated chain as JSON")
    p.add_argument("--out", help="metrics path (default: standard output)")

    p = sub.add_parser("sweep", help="throughput curve over a population grid")
    _scenario_args(p)
    p.add_argument("--engine", choices=["des", "ctmc"], default="des")
    p.add_argument("--grid", help="A:B[:STEP] (default: knee-relative grid)")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--completions", type=int, default=100_000)
    p.add_argument("--state-cap", type=int, default=1_000_000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="CSV path (default: standard output)")

    p = sub.add_parser("compare", help="NGN versus eNGN at equal budgets N and 2N")
    p.add_argument("--ngn-config", help="NGN scenario (default: shipped)")
    p.add_argument("--engn-config", help="eNGN scenario (default: shipped)")
    p.add_argument("--budget", type=int, help="basic processor budget N for both variants")
    p.add_argument("--override", action="append", default=[], metavar="K=V")
    p.add_argument("--engine", choices=["des", "ctmc"], default="des")
    p.add_argument("--grid", help="A:B[:STEP] shared by all four sweeps (default: knee-relative)")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--completions", type=int, default=100_000)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--util-threshold", type=float, default=0.99)
    p.add_argument("--tref", type=float, help="reference response time (default: K=1 response)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="report path (default: standard output)")
    p.add_argument("--csv", help="curves path (default: the report path with a .csv suffix)")
    return parser


def _raw_scenario(path, variant, budget, overrides):
    if path:
        raw = load_raw(path)
        if variant and Variant.parse(raw.get("variant", variant)) is not Variant.parse(variant):
            raise errors.ConfigError(f"--variant {variant} contradicts the config's variant")
    else:
        raw = shipped_raw(Variant.parse(variant).value)
    raw = apply_overrides(raw, overrides)
    if budget is not None:
        raw["processors"] = equal_budget_split(budget, raw.get("variant", variant))
    return raw


def _load(args):
    variant = args.variant or (None if args.config else args.variant_default)
    return validate_scenario(_raw_scenario(args.config, variant, args.budget, args.override))


def _emit(text, path):
    if path:
        atomic_write_text(path, text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def cmd_trace(args) -> int:
    from engn.protocol import canonical_trace, check_trace_invariants, inject_fault
    from engn.workload import flow_messages

    cfg = _load(args)
    needed = {ACTION_OF_KIND[m.kind] for m in flow_messages(cfg.variant, args.flow)}
    missing = sorted(needed - set(cfg.rates), key=ACTION_KINDS.index)
    if missing:
        raise errors.MissingRate(f"flow {args.flow!r} needs rates for {', '.join(missing)}")
    trace = canonical_trace(args.flow, cfg.variant, cfg.topology)
    if args.inject:
        trace = inject_fault(trace, args.inject)
    _emit(dumps_jsonl(trace.messages), args.out)
    violations = check_trace_invariants(trace, cfg.variant)
    for v in violations:
        print(f"violation {v.rule} at seq {v.seq}: {v.detail}", file=sys.stderr)
    return EXIT_VIOLATION if violations else EXIT_OK


def cmd_simulate(args) -> int:
    from engn.desim import StopRule, run_sim

    cfg = _load(args)
    try:
        stop = (StopRule(horizon=args.horizon) if args.horizon is not None
                else StopRule(target_completions=args.completions))
    except ValueError as exc:
        raise errors.ConfigError(str(exc)) from exc
    rep = run_sim(cfg, args.seed, stop, log_events=bool(args.dump), flow=args.flow)
    record = {"variant": cfg.variant.value, "population": cfg.population,
              "arrivalRate": cfg.arrival_rate, "processors": cfg.processors,
              "flow": args.flow, "seed": args.seed, "metrics": rep.to_dict()}
    if args.dump:
        atomic_write_text(args.dump, rep.events.to_jsonl())
    _emit(_json(record), args.out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from engn.markov import analyze, build_ctmc

    cfg = _load(args)
    if args.dump:
        atomic_write_text(args.dump, build_ctmc(cfg, args.state_cap).dumps())
    rep = analyze(cfg, args.state_cap)
    record = {"variant": cfg.variant.value, "population": cfg.population,
              "processors": cfg.processors, "metrics": rep.to_dict()}
    _emit(_json(record), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from engn.scaleval import curves_csv, knee_grid, parse_grid, sweep_population

    cfg = _load(args)
    grid = parse_grid(args.grid) if args.grid else knee_grid(cfg)
    curve = sweep_population(cfg, grid, args.engine, args.seed, args.completions,
                             args.state_cap, args.jobs)
    label = "custom" if args.config else "default"
    _emit(curves_csv([(cfg.variant.value, label, curve)]), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    from engn.scaleval import comparison_rows, compare_variants, curves_csv, parse_grid, report_json

    cfgs = [validate_scenario(_raw_scenario(path, v, args.budget, args.override))
            for path, v in ((args.ngn_config, "ngn"), (args.engn_config, "engn"))]
    grid = parse_grid(args.grid) if args.grid else None
    report = compare_variants(*cfgs, grid=grid, seed=args.seed, engine=args.engine,
                              completions=args.completions, epsilon=args.epsilon,
                              util_threshold=args.util_threshold, t_ref=args.tref, jobs=args.jobs)
    csv_path = args.csv or (str(Path(args.out).with_suffix(".csv")) if args.out else None)
    if csv_path:
        atomic_write_text(csv_path, curves_csv(comparison_rows(report)))
    _emit(_json(report_json(report)), args.out)
    return EXIT_OK


COMMANDS = {"trace": cmd_trace, "simulate": cmd_simulate, "analyze": cmd_analyze,
            "sweep": cmd_sweep, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except errors.EngnError as exc:
        print(f"engn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"engn {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
