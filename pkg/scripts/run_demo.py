"""
One full refinement run on a synthetic landscape, end to end.

Materializes the task under a work directory, runs the selected mode with
a persisted trace, then prints the per-iteration story, the selection,
and the held-out final evaluation.

Usage:
    python3 scripts/run_demo.py --seed 3 --mode M4 --iterations 6
"""

from __future__ import annotations

import argparse
from pathlib import Path

from designloop.bench import run_landscape_mode
from designloop.controller import final_evaluation
from designloop.landscape import argmax_quality, build_task, make_gating_landscape
from designloop.trace import ArtifactStore, audit_compliance, read_trace


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--mode", default="M4", choices=("M0", "M1", "M2", "M3", "M4"))
    ap.add_argument("--iterations", type=int, default=6)
    ap.add_argument("--repair-rounds", type=int, default=3)
    ap.add_argument("--workdir", default="demo_run")
    args = ap.parse_args()

    workdir = Path(args.workdir)
    trace_dir = workdir / "trace"
    land = make_gating_landscape(args.seed)

    result = run_landscape_mode(
        land,
        workdir,
        args.mode,
        seed=args.seed,
        iterations=args.iterations,
        repair_rounds=args.repair_rounds,
        trace_dir=trace_dir,
    )

    print(f"mode={args.mode} seed={args.seed} trace={trace_dir}")
    print("iter  verdict               chi_i  repairs  value")
    for rec in result.records:
        value = rec.metric_value()
        shown = "-" if value is None else f"{value:.4f}"
        print(
            f"{rec.iteration:>4}  {rec.feedback['verdict']:<20}  "
            f"{str(rec.chi_i):>5}  {rec.repairs_used:>7}  {shown}"
        )

    eff = result.efficiency
    print(f"sr={eff.sr:.3f} rsr={eff.rsr:.3f} best={eff.best_metric}")
    _, optimum = argmax_quality(land)
    print(f"landscape optimum: {optimum:.4f}")

    if result.selection is None:
        print("no admissible candidate; nothing to evaluate")
        return

    sel = result.selection
    print(f"selected: {sel.candidate_name} (iteration {sel.iteration}, {sel.metric_value:.4f})")

    spec = build_task(land, workdir)
    final = final_evaluation(sel, spec, ArtifactStore(trace_dir / "artifacts"), 60.0)
    print(f"final on {final['split_tag']}: {final['metric_value']}")

    compliance = audit_compliance(read_trace(trace_dir))
    print(f"trace ok={compliance['ok']} records={compliance['records']}")


if __name__ == "__main__":
    main()
