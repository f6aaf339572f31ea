"""Run one candidate program under the sandbox directory contract.

Layout per run: a fresh working directory holding the program files, a
read-only-by-convention copy of each mounted view under data/<name>/,
and an empty out/ for artifacts. The process gets a minimal
environment plus EVAL_SPLIT and must leave metrics.json behind. This
runner exists so template behaviour can be checked without the engine
in the loop; the engine applies the same contract from its side.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from . import contract

_ENV_KEEP = ("PATH", "LANG", "LC_ALL", "SYSTEMROOT")


@dataclass(frozen=True)
class RunResult:
    """Outcome of one sandboxed execution."""

    returncode: int
    report: contract.MetricReport
    stdout: str
    stderr: str
    workdir: str | None

    @property
    def ok(self) -> bool:
        return self.returncode == 0 and self.report.ok


def run_candidate(
    files: Mapping[str, str],
    views: Mapping[str, str | Path],
    eval_split: str = "validation",
    entrypoint: str = "main.py",
    timeout: float = 60.0,
    keep_workdir: bool = False,
) -> RunResult:
    """Execute one program against mounted data views.

    `views` maps mount names to source directories; each is copied to
    data/<name> inside the sandbox, so the program can never touch a
    partition that is not mounted.
    """
    workdir = Path(tempfile.mkdtemp(prefix="taskharness-run-"))
    try:
        for relpath, text in files.items():
            target = workdir / relpath
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
        for name, source in views.items():
            shutil.copytree(source, workdir / "data" / name)
        (workdir / "out").mkdir(exist_ok=True)

        env = {k: os.environ[k] for k in _ENV_KEEP if k in os.environ}
        env["PYTHONDONTWRITEBYTECODE"] = "1"
        env["EVAL_SPLIT"] = eval_split
        env["HOME"] = str(workdir)

        proc = subprocess.run(
            [sys.executable, entrypoint],
            cwd=workdir,
            env=env,
            capture_output=True,
            text=True,
            timeout=timeout,
        )
        report = contract.parse_metric_report(workdir / contract.REPORT_NAME)
        return RunResult(
            returncode=proc.returncode,
            report=report,
            stdout=proc.stdout,
            stderr=proc.stderr,
            workdir=str(workdir) if keep_workdir else None,
        )
    finally:
        if not keep_workdir:
            shutil.rmtree(workdir, ignore_errors=True)
