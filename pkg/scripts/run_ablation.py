"""
Mode ablation over seeded fault-planted landscapes.

Runs each gating mode bundle on the same tasks and aggregates success
rate, rule-compliant success rate, and best validation value per mode.

Usage:
    python3 scripts/run_ablation.py --seeds 10 --iterations 6
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from designloop.bench import MODES, ablation_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10, help="seeds 0..N-1")
    ap.add_argument("--iterations", type=int, default=6)
    ap.add_argument("--modes", nargs="*", default=list(MODES))
    ap.add_argument("--workdir", default="ablation_run")
    ap.add_argument("--json-out", default="", help="also dump raw per-seed tables")
    args = ap.parse_args()

    modes = tuple(args.modes)
    tables = {}
    for seed in range(args.seeds):
        tables[seed] = ablation_table(
            seed, Path(args.workdir) / f"seed{seed}", modes=modes,
            iterations=args.iterations,
        )
        done = sum(1 for m in modes if tables[seed][m]["sr"] == 1.0)
        print(f"seed {seed}: {done}/{len(modes)} modes fully successful")

    print(f"\nmode   mean_sr  mean_rsr  mean_best   (n={args.seeds})")
    for mode in modes:
        rows = [tables[s][mode] for s in tables]
        sr = sum(r["sr"] for r in rows) / len(rows)
        rsr = sum(r["rsr"] for r in rows) / len(rows)
        bests = [r["best_metric"] for r in rows if r["best_metric"] is not None]
        best = sum(bests) / len(bests) if bests else float("nan")
        print(f"{mode:<5}  {sr:>7.3f}  {rsr:>8.3f}  {best:>9.4f}")

    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(tables, indent=2, sort_keys=True), encoding="utf-8"
        )
        print(f"raw tables written to {args.json_out}")


if __name__ == "__main__":
    main()
