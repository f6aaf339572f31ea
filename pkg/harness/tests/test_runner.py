"""Sandbox-layout runner: mounts, environment, report handling."""

from __future__ import annotations

import json
from pathlib import Path

from taskharness import run_candidate

LIST_MOUNTS = """\
import json, os
names = sorted(os.listdir("data"))
doc = {"metrics": {"pcc": float(len(names))}, "split": os.environ["EVAL_SPLIT"]}
with open("metrics.json", "w") as fh:
    json.dump(doc, fh)
with open("out/mounts.json", "w") as fh:
    json.dump(names, fh)
"""

SILENT = "pass\n"

BAD_EXIT = """\
import json, sys
with open("metrics.json", "w") as fh:
    json.dump({"metrics": {"pcc": 0.5}, "split": "validation"}, fh)
sys.exit(3)
"""


def test_only_mounted_views_are_visible(pert_task):
    res = run_candidate(
        {"main.py": LIST_MOUNTS},
        pert_task.refinement_views(),
        keep_workdir=True,
    )
    assert res.ok
    mounts = json.loads((Path(res.workdir) / "out" / "mounts.json").read_text())
    assert mounts == ["train", "val"]


def test_missing_report_is_an_error_not_an_exception(pert_task):
    res = run_candidate({"main.py": SILENT}, pert_task.refinement_views())
    assert res.returncode == 0
    assert not res.report.ok
    assert res.report.error == "metric report absent"


def test_nonzero_exit_fails_even_with_a_report(pert_task):
    res = run_candidate({"main.py": BAD_EXIT}, pert_task.refinement_views())
    assert res.report.ok
    assert res.returncode == 3 and not res.ok


def test_workdir_is_removed_unless_kept(pert_task):
    kept = run_candidate(
        {"main.py": LIST_MOUNTS}, pert_task.refinement_views(), keep_workdir=True
    )
    gone = run_candidate({"main.py": LIST_MOUNTS}, pert_task.refinement_views())
    assert Path(kept.workdir).exists()
    assert gone.workdir is None
