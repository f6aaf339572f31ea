"""Bridge to the design-loop engine through its document and CLI surface.

The harness hands the engine three JSON files: the task document a
generated dataset already carries, a design-space document, and the
fragment library for the mock backend. The engine is then driven as a
subprocess through its `run` command; results come back as the printed
summary plus the trace directory. Nothing here imports engine code.
"""

from __future__ import annotations

import json
import shutil
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from . import contract, templates
from .generate import ToyTask

STATIC_GATE_MODE = {
    "mode": "static_gate",
    "structural_rules": False,
    "impl_rules": True,
    "repair": False,
    "edit_policy": "none",
    "refine": False,
    "post_exec_check": False,
    "naive_retries": 0,
}


def write_engine_inputs(
    task: ToyTask,
    outdir: str | Path,
    mode: str | Mapping = "M4",
    seed: int = 0,
    iterations: int = 10,
    repair_rounds: int = 3,
    step_timeout: float = 60.0,
    run_timeout: float = 600.0,
    initial: Mapping[str, str] | None = None,
) -> Path:
    """Write space.json, library.json, and run.json under `outdir`.

    Returns the run.json path. Sibling documents are referenced by
    name; the engine resolves them against the config file's parent.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    contract.write_json(outdir / "space.json", templates.space_doc(initial))
    contract.write_json(outdir / "library.json", templates.library_doc())
    run_doc = {
        "schema": contract.RUN_SCHEMA,
        "task": str(Path(task.task_doc_path).resolve()),
        "space": "space.json",
        "backend": {"kind": "mock", "library": "library.json"},
        "mode": mode if isinstance(mode, str) else dict(mode),
        "seed": seed,
        "budget": {
            "iterations": iterations,
            "repair_rounds": repair_rounds,
            "step_timeout": step_timeout,
            "run_timeout": run_timeout,
        },
        "trace_dir": str((outdir / "trace").resolve()),
    }
    config_path = outdir / "run.json"
    contract.write_json(config_path, run_doc)
    return config_path


@dataclass(frozen=True)
class EngineRun:
    """One engine invocation: exit code, parsed summary, trace location."""

    returncode: int
    summary: dict | None
    stdout: str
    stderr: str
    trace_dir: Path | None

    @property
    def selection(self) -> dict | None:
        if self.summary is None:
            return None
        return self.summary.get("selection")

    @property
    def final(self) -> dict | None:
        if self.summary is None:
            return None
        return self.summary.get("final")


def _engine_argv() -> list[str]:
    exe = shutil.which("designloop")
    if exe:
        return [exe]
    return [sys.executable, "-m", "designloop.cli"]


def run_engine(
    config_path: str | Path,
    final: bool = False,
    timeout: float = 600.0,
) -> EngineRun:
    """Invoke the engine's run command on a prepared config."""
    argv = _engine_argv() + ["run", "--config", str(config_path)]
    if final:
        argv.append("--final")
    proc = subprocess.run(
        argv, capture_output=True, text=True, timeout=timeout
    )
    summary = None
    try:
        summary = json.loads(proc.stdout)
    except ValueError:
        pass
    trace_dir = None
    if isinstance(summary, dict) and summary.get("trace_dir"):
        trace_dir = Path(summary["trace_dir"])
    return EngineRun(
        returncode=proc.returncode,
        summary=summary,
        stdout=proc.stdout,
        stderr=proc.stderr,
        trace_dir=trace_dir,
    )


def realization_outcomes(trace_dir: str | Path) -> list[dict]:
    """Pull per-iteration realization outcome docs from a trace."""
    outcomes = []
    for record in contract.trace_records(trace_dir):
        outcome = record.get("outcome")
        if isinstance(outcome, dict):
            outcomes.append(outcome)
    return outcomes
