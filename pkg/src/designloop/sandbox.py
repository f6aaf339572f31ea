"""Sandboxed candidate execution.

Contract seen by a candidate program:

* working directory contains its own files, ``data/<view>/`` for each
  mounted data view, and a writable ``out/``;
* the test view is mounted only when the caller explicitly asks for it
  (final evaluation); refinement runs never see it;
* ``EVAL_SPLIT`` names the split to evaluate (``validation`` default);
* the program writes ``metrics.json``: ``{"metrics": {...}, "split": ...}``.

Timeouts kill the process group. Data views are copied in and marked
read-only; the candidate owns only its own files and ``out/``.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import stat
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Mapping

from . import canonical
from .errors import SandboxSetupFailure

TAIL_CHARS = 2000

_BASE_ENV_KEYS = ("PATH", "LANG", "LC_ALL", "SYSTEMROOT")


@dataclass(frozen=True)
class SandboxResult:
    status: str  # "completed" | "crashed" | "timed_out"
    exit_code: int | None
    wall_time: float
    stdout_tail: str
    stderr_tail: str
    metrics: Mapping[str, float] | None
    split_tag: str | None
    report_error: str | None
    artifacts_digest: str
    mounted_views: tuple[str, ...]


def _tail(data: bytes) -> str:
    return data.decode("utf-8", errors="replace")[-TAIL_CHARS:]


def _write_bundle(workdir: str, files: Mapping[str, str]) -> None:
    for name, content in files.items():
        if os.path.isabs(name) or ".." in name.split("/"):
            raise SandboxSetupFailure(f"illegal bundle path {name!r}")
        path = os.path.join(workdir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(content)


def _mount_view(workdir: str, view: str, src: str | None) -> None:
    dest = os.path.join(workdir, "data", view)
    if src is None:
        os.makedirs(dest, exist_ok=True)
        return
    if not os.path.isdir(src):
        raise SandboxSetupFailure(f"data view {view!r} missing at {src!r}")
    shutil.copytree(src, dest)
    for root, _dirs, names in os.walk(dest):
        for n in names:
            os.chmod(os.path.join(root, n), stat.S_IRUSR | stat.S_IRGRP | stat.S_IROTH)


def _restore_writable(path: str) -> None:
    for root, dirs, names in os.walk(path):
        for n in dirs + names:
            try:
                os.chmod(os.path.join(root, n), 0o755)
            except OSError:
                pass


def _parse_report(workdir: str) -> tuple[Mapping[str, float] | None, str | None, str | None]:
    """Parse metrics.json leniently (non-finite floats kept for the
    dry-run numerics check to flag); structural problems reported as text."""
    path = os.path.join(workdir, "metrics.json")
    if not os.path.exists(path):
        return None, None, "metric report absent"
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        return None, None, f"metric report unparseable: {exc}"
    if not isinstance(doc, dict) or not isinstance(doc.get("metrics"), dict):
        return None, None, "metric report missing 'metrics' mapping"
    metrics: dict[str, float] = {}
    for key, value in doc["metrics"].items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None, None, f"metric {key!r} is not a real number"
        metrics[str(key)] = float(value)
    split = doc.get("split")
    if not isinstance(split, str):
        return None, None, "metric report missing 'split' tag"
    return metrics, split, None


def _digest_artifacts(workdir: str) -> str:
    entries = []
    out_dir = os.path.join(workdir, "out")
    if os.path.isdir(out_dir):
        for root, _dirs, names in os.walk(out_dir):
            for n in sorted(names):
                path = os.path.join(root, n)
                rel = os.path.relpath(path, workdir)
                with open(path, "rb") as fh:
                    entries.append((rel, canonical.digest_bytes(fh.read())))
    report = os.path.join(workdir, "metrics.json")
    if os.path.exists(report):
        with open(report, "rb") as fh:
            entries.append(("metrics.json", canonical.digest_bytes(fh.read())))
    return canonical.digest(sorted(entries))


def run_sandboxed(
    files: Mapping[str, str],
    entrypoint: str,
    views: Mapping[str, str | None],
    timeout: float,
    eval_split: str = "validation",
) -> SandboxResult:
    """Run a candidate bundle once and collect its report.

    ``views`` maps view name (train/val/test) to a source directory or
    None for an empty mount. Raises SandboxSetupFailure for bad bundles or
    missing view sources; execution failures are values, not exceptions.
    """
    if entrypoint not in files:
        raise SandboxSetupFailure(f"entrypoint {entrypoint!r} not in bundle")
    workdir = tempfile.mkdtemp(prefix="designloop-run-")
    try:
        _write_bundle(workdir, files)
        for view in sorted(views):
            _mount_view(workdir, view, views[view])
        os.makedirs(os.path.join(workdir, "out"), exist_ok=True)

        env = {k: os.environ[k] for k in _BASE_ENV_KEYS if k in os.environ}
        env["PYTHONDONTWRITEBYTECODE"] = "1"
        env["EVAL_SPLIT"] = eval_split
        env["HOME"] = workdir

        started = time.monotonic()
        try:
            proc = subprocess.run(
                [sys.executable, entrypoint],
                cwd=workdir,
                env=env,
                capture_output=True,
                timeout=timeout,
            )
            wall = time.monotonic() - started
            status = "completed" if proc.returncode == 0 else "crashed"
            exit_code: int | None = proc.returncode
            stdout_tail, stderr_tail = _tail(proc.stdout), _tail(proc.stderr)
        except subprocess.TimeoutExpired as exc:
            wall = time.monotonic() - started
            status, exit_code = "timed_out", None
            stdout_tail = _tail(exc.stdout or b"")
            stderr_tail = _tail(exc.stderr or b"")

        metrics: Mapping[str, float] | None = None
        split_tag: str | None = None
        report_error: str | None = None
        if status == "completed":
            metrics, split_tag, report_error = _parse_report(workdir)
            if report_error is not None:
                status = "crashed"
        return SandboxResult(
            status=status,
            exit_code=exit_code,
            wall_time=wall,
            stdout_tail=stdout_tail,
            stderr_tail=stderr_tail,
            metrics=metrics,
            split_tag=split_tag,
            report_error=report_error,
            artifacts_digest=_digest_artifacts(workdir),
            mounted_views=tuple(sorted(views)),
        )
    finally:
        _restore_writable(workdir)
        shutil.rmtree(workdir, ignore_errors=True)


def has_nonfinite(metrics: Mapping[str, float]) -> list[str]:
    return sorted(k for k, v in metrics.items() if not math.isfinite(v))
