"""Command-line entry points.

``run`` executes a configured refinement run; ``select``, ``report`` and
``audit`` operate on stored traces only, so their answers are reproducible
from the artifact a run leaves behind; ``bench`` runs the ablation modes
on a synthetic landscape.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench as bench_mod
from .config import load_run_setup
from .controller import SelectionPolicy, final_evaluation, run_workflow
from .errors import DesignLoopError
from .trace import (
    ArtifactStore,
    TraceStore,
    audit_compliance,
    audit_efficiency,
    audit_frontier,
    audit_routing_stats,
    audit_selection,
    emit_routing_record,
    export_routing_records,
    read_trace,
)


def _print(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=False))


def _policy_from_trace(args, header) -> SelectionPolicy:
    if args.metric:
        return SelectionPolicy(args.metric, args.direction)
    if header and "policy" in header:
        return SelectionPolicy.from_doc(header["policy"])
    raise DesignLoopError("no selection policy: pass --metric or use a trace with a header")


def cmd_run(args) -> int:
    setup = load_run_setup(args.config)
    trace_dir = args.trace_dir or setup.trace_dir
    trace = TraceStore(trace_dir) if trace_dir else None
    result = run_workflow(
        spec=setup.spec,
        topology=setup.topology,
        catalogs=setup.catalogs,
        h0=setup.h0,
        backend=setup.backend,
        structural_rules=setup.structural_rules,
        impl_rules=setup.impl_rules,
        templates=setup.templates,
        budget=setup.budget,
        config=setup.config,
        policy=setup.policy,
        trace=trace,
    )
    out = {
        "reason": result.reason,
        "selection": result.selection.to_doc() if result.selection else None,
        "efficiency": result.efficiency.to_doc(),
        "usage": result.usage,
        "trace_dir": result.trace_dir,
    }
    if args.final and result.selection is not None:
        if trace is None:
            raise DesignLoopError("--final needs a trace dir to fetch the stored candidate")
        final = final_evaluation(
            result.selection, setup.spec, trace.artifacts, setup.budget.step_timeout
        )
        (Path(trace.root) / "final.json").write_text(
            json.dumps(final, indent=2), encoding="utf-8"
        )
        out["final"] = final
    _print(out)
    return 0 if result.selection is not None else 1


def cmd_select(args) -> int:
    read = read_trace(args.trace)
    policy = _policy_from_trace(args, read.header)
    selection = audit_selection(read.records, policy)
    _print(selection)
    return 0 if selection is not None else 1


def cmd_report(args) -> int:
    read = read_trace(args.trace)
    records = read.records
    if args.iteration is not None:
        records = [r for r in records if r["iteration"] == args.iteration]
        if not records:
            raise DesignLoopError(f"no record for iteration {args.iteration}")
    for rec in records:
        _print(emit_routing_record(rec))
    return 0


def cmd_audit(args) -> int:
    read = read_trace(args.trace)
    what = args.what
    if what == "frontier":
        policy = _policy_from_trace(args, read.header)
        _print([[i, v] for i, v in audit_frontier(read.records, policy)])
        return 0
    if what == "routing-stats":
        _print(audit_routing_stats(read.records))
        return 0
    if what == "compliance":
        doc = audit_compliance(read)
        _print(doc)
        return 0 if doc["ok"] else 1
    if what == "efficiency":
        policy = _policy_from_trace(args, read.header)
        _print(audit_efficiency(read.records, policy))
        return 0
    if what == "export-routing":
        for doc in export_routing_records(read.records):
            print(json.dumps(doc))
        return 0
    # full report
    compliance = audit_compliance(read)
    doc = {"compliance": compliance, "routing": audit_routing_stats(read.records)}
    try:
        policy = _policy_from_trace(args, read.header)
    except DesignLoopError:
        policy = None
    if policy is not None:
        doc["efficiency"] = audit_efficiency(read.records, policy)
        doc["selection"] = audit_selection(read.records, policy)
    if read.footer is not None:
        doc["footer"] = read.footer
    artifacts_dir = Path(args.trace) / "artifacts"
    if artifacts_dir.is_dir():
        doc["artifacts"] = len(ArtifactStore(artifacts_dir).digests())
    _print(doc)
    return 0 if compliance["ok"] else 1


def cmd_bench(args) -> int:
    table = bench_mod.ablation_table(
        seed=args.seed,
        workdir=args.workdir,
        modes=tuple(args.modes.split(",")),
        iterations=args.iterations,
    )
    _print(table)
    width = max(len(m) for m in table)
    print(f"{'mode'.ljust(width)}  sr      rsr     best", file=sys.stderr)
    for mode, row in table.items():
        best = "-" if row["best_metric"] is None else f"{row['best_metric']:.4f}"
        print(
            f"{mode.ljust(width)}  {row['sr']:.3f}   {row['rsr']:.3f}   {best}",
            file=sys.stderr,
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="designloop",
        description="Closed-loop refinement of executable predictive models.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a configured refinement run")
    p.add_argument("--config", required=True, help="run/1 JSON document")
    p.add_argument("--trace-dir", default=None, help="override the trace directory")
    p.add_argument(
        "--final",
        action="store_true",
        help="after selection, run the one-shot held-out evaluation",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("select", help="recompute the selection from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--metric", default=None)
    p.add_argument("--direction", default="max", choices=("max", "min"))
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("report", help="print routing records from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--iteration", type=int, default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("audit", help="verify a trace and recompute its numbers")
    p.add_argument(
        "what",
        nargs="?",
        default="all",
        choices=(
            "all",
            "frontier",
            "routing-stats",
            "compliance",
            "efficiency",
            "export-routing",
        ),
    )
    p.add_argument("--trace", required=True)
    p.add_argument("--metric", default=None)
    p.add_argument("--direction", default="max", choices=("max", "min"))
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bench", help="run the ablation modes on a synthetic landscape")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workdir", required=True)
    p.add_argument("--modes", default=",".join(bench_mod.MODES))
    p.add_argument("--iterations", type=int, default=6)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DesignLoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
