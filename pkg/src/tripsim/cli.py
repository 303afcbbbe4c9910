"""Command-line interface: run, sweep, compare, validate, list.

Exit codes: 0 success, 2 validation error (no report written), 3 runtime
invariant violation, 4 failed comparison assertion.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from tripsim.builtins import BUILTINS
from tripsim.engine import InvariantViolation, ms
from tripsim.scenario import Scenario, ScenarioError, load_scenario
from tripsim.telemetry import (ScenarioMismatch, canonical_bytes, compare,
                               table_bytes)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_ASSERTION = 4

_ASSERT_METRICS = {
    "latency": "latency_mean_ms",
    "latency_p95": "latency_p95_ms",
    "tps": "throughput_tps",
    "throughput": "throughput_tps",
    "error_rate": "error_rate",
    "cpu": "cpu_aggregate_pct",
    "recovery": "recovery_time_ms",
    "network": "network_entry_delay_ms",
}


def _run_one(scenario: Scenario) -> dict:
    """Execute one scenario and aggregate it (used by worker processes too)."""
    from tripsim.runtime import Simulation
    from tripsim.telemetry import aggregate
    record = Simulation(scenario).run()
    return aggregate(record)


def _chaos_one(scenario: Scenario) -> dict:
    """Execute one saga-consistency case; returns its summary, not a report."""
    from tripsim.runtime import Simulation
    sim = Simulation(scenario)
    record = sim.run()
    stats = record.saga_stats
    terminal = stats["completed"] + stats["compensated"] + stats["stuck"]
    return {
        "id": scenario.id,
        "case": scenario.meta.get("chaos_case", "random_multi_fault"),
        "sagas": stats,
        "terminal": terminal,
        "consistent": stats["ledger_violations"] == 0 and stats["stuck"] == 0,
    }


def _write(path: str, blob: bytes) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(blob)


def _resolve_runs(name_or_path: str, seed: int | None, duration_ms: float | None,
                  warmup_ms: float | None) -> tuple[str, list[Scenario]]:
    """Builtin name or scenario file -> (bundle kind, ordered scenarios)."""
    if name_or_path in BUILTINS:
        builtin = BUILTINS[name_or_path]
        runs = builtin.build(seed if seed is not None else 42)
        kind = builtin.kind
    else:
        if not os.path.exists(name_or_path):
            raise ScenarioError(
                [f"{name_or_path}: not a builtin name or scenario file "
                 f"(builtins: {', '.join(sorted(BUILTINS))})"])
        runs = [load_scenario(name_or_path)]
        if seed is not None:
            runs = [runs[0].with_overrides(seed=seed)]
        kind = "single"
    if duration_ms is not None or warmup_ms is not None:
        runs = [r.with_overrides(
            duration_us=ms(duration_ms) if duration_ms is not None else None,
            warmup_us=ms(warmup_ms) if warmup_ms is not None else None)
            for r in runs]
    return kind, runs


def _execute(runs: list[Scenario], jobs: int, runner=_run_one) -> list[dict]:
    if jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(runner, runs))
    return [runner(run) for run in runs]


def _pair_comparisons(reports: list[dict]) -> list[dict]:
    """Compare _mcf/_mono report pairs per scenario family, in family order."""
    by_id = {rep["scenario_id"]: rep for rep in reports}
    out = []
    seen = set()
    for rep in reports:
        family = rep["family"]
        if family in seen:
            continue
        seen.add(family)
        a = by_id.get(f"{family}_mcf")
        b = by_id.get(f"{family}_mono")
        if a is not None and b is not None:
            out.append(compare(a, b))
    return out


def cmd_run(args) -> int:
    try:
        kind, runs = _resolve_runs(args.target, args.seed, args.duration, args.warmup)
    except ScenarioError as exc:
        for line in exc.diagnostics:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_VALIDATION

    out_dir = args.out or "reports"
    try:
        if kind == "chaos":
            summaries = _execute(runs, args.jobs, runner=_chaos_one)
            total = sum(s["sagas"]["total"] for s in summaries)
            doc = {
                "format_version": 1,
                "suite": args.target,
                "seed": args.seed if args.seed is not None else 42,
                "cases": summaries,
                "total_sagas": total,
                "all_consistent": all(s["consistent"] for s in summaries),
            }
            path = os.path.join(out_dir, f"{args.target}.json")
            _write(path, canonical_bytes(doc))
            print(f"wrote {path} ({len(summaries)} cases, {total} sagas, "
                  f"consistent={doc['all_consistent']})")
            return EXIT_OK if doc["all_consistent"] else EXIT_RUNTIME

        reports = _execute(runs, args.jobs)
        if kind == "single" and len(reports) == 1:
            path = args.out or f"{runs[0].id}_report.json"
            if args.format == "table":
                _write(path, table_bytes(reports))
            else:
                _write(path, canonical_bytes(reports[0]))
            print(f"wrote {path}")
            return EXIT_OK

        paths = []
        for scenario, report in zip(runs, reports):
            path = os.path.join(out_dir, f"{scenario.id}.json")
            _write(path, canonical_bytes(report))
            paths.append(path)
        comparisons = _pair_comparisons(reports)
        if comparisons:
            cmp_path = os.path.join(out_dir, f"{args.target}_comparison.json")
            _write(cmp_path, canonical_bytes(
                {"format_version": 1, "suite": args.target,
                 "comparisons": comparisons}))
            paths.append(cmp_path)
        if args.format == "table":
            tbl_path = os.path.join(out_dir, f"{args.target}_table.csv")
            _write(tbl_path, table_bytes(reports))
            paths.append(tbl_path)
        print(f"wrote {len(paths)} files under {out_dir}/")
        return EXIT_OK
    except InvariantViolation as exc:
        print(f"runtime invariant violated: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def cmd_sweep(args) -> int:
    try:
        kind, runs = _resolve_runs(args.target, args.seed, args.duration, args.warmup)
        if args.users:
            try:
                axis = [int(v) for v in args.users.split(",") if v.strip()]
            except ValueError:
                raise ScenarioError([f"--users: expected integers, got {args.users!r}"])
            base = runs[0]
            from tripsim.workloads import ClosedLoop
            if not isinstance(base.workload, ClosedLoop):
                raise ScenarioError(["--users axis requires a closed-loop workload"])
            seed0 = base.seed
            runs = []
            for i, users in enumerate(sorted(axis)):
                sc = base.with_overrides(seed=seed0 + i)
                sc.id = f"{base.id}_users_{users}"
                sc.family = base.family
                sc.workload = ClosedLoop(users, base.workload.think_us,
                                         base.workload.mix,
                                         base.workload.per_user_classes)
                runs.append(sc)
    except ScenarioError as exc:
        for line in exc.diagnostics:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_VALIDATION

    out_dir = args.out or "reports"
    try:
        reports = _execute(runs, args.jobs)
    except InvariantViolation as exc:
        print(f"runtime invariant violated: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    # rows ordered by axis value regardless of completion order
    order = sorted(range(len(reports)),
                   key=lambda i: (reports[i].get("concurrent_users") or 0))
    reports = [reports[i] for i in order]
    runs = [runs[i] for i in order]
    paths = []
    for scenario, report in zip(runs, reports):
        path = os.path.join(out_dir, f"{scenario.id}.json")
        _write(path, canonical_bytes(report))
        paths.append(path)
    merged = os.path.join(out_dir, f"{args.target if args.target in BUILTINS else runs[0].family}_table.csv")
    _write(merged, table_bytes(reports))
    paths.append(merged)
    print(f"wrote {len(paths)} files under {out_dir}/ "
          f"({len(reports)} runs + merged table)")
    return EXIT_OK


def _load_report(path: str) -> dict:
    import json
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def cmd_compare(args) -> int:
    try:
        rep_a = _load_report(args.report_a)
        rep_b = _load_report(args.report_b)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        result = compare(rep_a, rep_b)
    except ScenarioMismatch as exc:
        print(f"error: scenario mismatch: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.out:
        _write(args.out, canonical_bytes(result))
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(canonical_bytes(result).decode("utf-8"))
    failed = []
    for spec in args.asserts or []:
        try:
            metric_name, ordering = spec.split(":", 1)
            key = _ASSERT_METRICS[metric_name.strip()]
            ordering = ordering.replace(" ", "")
        except (ValueError, KeyError):
            print(f"error: bad assertion {spec!r} "
                  f"(metrics: {', '.join(sorted(_ASSERT_METRICS))})", file=sys.stderr)
            return EXIT_VALIDATION
        row = result["metrics"][key]
        if row["ordering"] != ordering:
            failed.append(f"{metric_name}: wanted {ordering}, got "
                          f"{row['ordering']} (A={row['a']}, B={row['b']})")
    if failed:
        for line in failed:
            print(f"assertion failed: {line}", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.path)
    except ScenarioError as exc:
        for line in exc.diagnostics:
            print(f"{args.path}: {line}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"OK: {scenario.id} ({scenario.mode}, "
          f"duration {scenario.duration_us / 1000:.0f}ms, seed {scenario.seed})")
    return EXIT_OK


def cmd_list(_args) -> int:
    width = max(len(name) for name in BUILTINS)
    for name in sorted(BUILTINS):
        builtin = BUILTINS[name]
        print(f"{name:<{width}}  [{builtin.kind}]  {builtin.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripsim",
        description="Deterministic microservices-vs-monolith platform simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="root seed override")
        p.add_argument("--out", default=None, help="output file or directory")
        p.add_argument("--format", choices=["canonical", "table"],
                       default="canonical")
        p.add_argument("--duration", type=float, default=None, metavar="MS")
        p.add_argument("--warmup", type=float, default=None, metavar="MS")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel runs for suites/sweeps")

    p_run = sub.add_parser("run", help="run a builtin bundle or scenario file")
    p_run.add_argument("target")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep, merge a table")
    p_sweep.add_argument("target")
    p_sweep.add_argument("--users", default=None,
                         help="comma-separated closed-loop user counts")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="compare two report files")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    p_cmp.add_argument("--assert", dest="asserts", action="append", metavar="M:ORD",
                       help="e.g. latency:A<B (repeatable); exit 4 on failure")
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("path")
    p_val.set_defaults(func=cmd_validate)

    p_list = sub.add_parser("list", help="list builtin bundles")
    p_list.set_defaults(func=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
