"""Command-line entry points for the task harness."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import engineio, generate, templates


def _cmd_make_task(args: argparse.Namespace) -> int:
    task = generate.generate_task(
        args.root,
        seed=args.seed,
        split_mode=args.split_mode,
        n_samples=args.samples,
        n_features=args.features,
        n_perturbations=args.perturbations,
        n_batches=args.batches,
        effect=args.effect,
        noise=args.noise,
    )
    config_path = None
    if args.engine_docs:
        config_path = engineio.write_engine_inputs(
            task, Path(task.root) / "engine", seed=args.seed
        )
    summary = {
        "dataset": task.dataset,
        "root": str(task.root),
        "seed": task.seed,
        "split_mode": task.split_mode,
        "effect": task.effect,
        "split_hash": task.split_hash,
        "rows": {"train": task.n_train, "val": task.n_val, "test": task.n_test},
        "task_doc": str(task.task_doc_path),
        "engine_config": str(config_path) if config_path else None,
    }
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(f"dataset      {summary['dataset']}")
        print(f"root         {summary['root']}")
        print(f"split mode   {summary['split_mode']}")
        print(f"split hash   {summary['split_hash']}")
        rows = summary["rows"]
        print(f"rows         train={rows['train']} val={rows['val']} test={rows['test']}")
        print(f"task doc     {summary['task_doc']}")
        if config_path:
            print(f"engine cfg   {config_path}")
    return 0


def _cmd_list_templates(args: argparse.Namespace) -> int:
    suite = templates.template_suite()
    if args.json:
        doc = [
            {
                "name": t.name,
                "description": t.description,
                "fault_rule": t.fault_rule,
                "assignments": t.manifest,
                "entrypoint": t.entrypoint,
            }
            for t in suite.values()
        ]
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0
    width = max(len(name) for name in suite)
    for t in suite.values():
        flag = f"  [trips {t.fault_rule}]" if t.fault_rule else ""
        print(f"{t.name:<{width}}  {t.description}{flag}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskharness",
        description="Seeded toy perturbation-response tasks and candidate templates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    make = sub.add_parser("make-task", help="generate a task directory")
    make.add_argument("--root", required=True, help="output directory")
    make.add_argument("--seed", type=int, default=0)
    make.add_argument(
        "--split-mode",
        choices=generate.SPLIT_MODES,
        default="by_perturbation",
    )
    make.add_argument("--samples", type=int, default=240)
    make.add_argument("--features", type=int, default=6)
    make.add_argument("--perturbations", type=int, default=12)
    make.add_argument("--batches", type=int, default=8)
    make.add_argument("--effect", choices=generate.EFFECTS, default="multiplicative")
    make.add_argument("--noise", type=float, default=0.02)
    make.add_argument(
        "--engine-docs",
        action="store_true",
        help="also write space/library/run documents for the engine",
    )
    make.add_argument("--json", action="store_true")
    make.set_defaults(func=_cmd_make_task)

    lst = sub.add_parser("list-templates", help="show the shipped templates")
    lst.add_argument("--json", action="store_true")
    lst.set_defaults(func=_cmd_list_templates)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
