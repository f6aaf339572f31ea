"""Shared fixtures.

The unit tests run against a small hand-built five-node pipeline rather
than the synthetic landscape generator, so the two sides can serve as
independent checks on each other where they overlap.
"""

from __future__ import annotations

import pytest

from designloop.errors import BackendUnavailable
from designloop.hypothesis_state import (
    FiniteDomain,
    IntervalDomain,
    OptionCatalog,
    OptionSpec,
    new_hypothesis,
)
from designloop.realization import CandidateImplementation, Provenance
from designloop.taskspec import EvaluationSuite, SplitManifest, TaskSpec
from designloop.topology import DecisionNode, Hyperedge, build_topology


@pytest.fixture()
def pipeline_topology():
    nodes = [
        DecisionNode("n_data", "data_adapter", "cat:data_adapter"),
        DecisionNode("n_prep", "preprocessing", "cat:preprocessing"),
        DecisionNode("n_fuse", "fusion", "cat:fusion"),
        DecisionNode("n_arch", "architecture", "cat:architecture"),
        DecisionNode("n_eval", "evaluation_adapter", "cat:evaluation_adapter"),
    ]
    edges = [
        Hyperedge("e000001", ("n_data", "n_prep", "n_fuse", "n_arch", "n_eval"), "dataflow"),
        Hyperedge("e000002", ("n_fuse", "n_arch"), "coupling"),
    ]
    return build_topology(nodes, edges)


@pytest.fixture()
def catalogs():
    return {
        "data_adapter": OptionCatalog(
            "data_adapter",
            (
                OptionSpec("csv_loader", {}, (), (), ()),
                OptionSpec("image_loader", {}, (), (), ()),
            ),
        ),
        "preprocessing": OptionCatalog(
            "preprocessing",
            (
                OptionSpec(
                    "standardize",
                    {"clip": IntervalDomain(0.0, 10.0)},
                    (),
                    (),
                    (),
                ),
                OptionSpec("lognorm", {}, (), (), ()),
            ),
        ),
        "fusion": OptionCatalog(
            "fusion",
            (
                OptionSpec("concat_fuse", {}, (), (), ()),
                OptionSpec("gated_fuse", {}, (), (), ()),
                OptionSpec("film_fuse", {}, (), (), ()),
            ),
        ),
        "architecture": OptionCatalog(
            "architecture",
            (
                OptionSpec(
                    "mlp",
                    {"width": FiniteDomain((64, 128))},
                    (),
                    (),
                    (),
                ),
                OptionSpec("resnet", {}, (), (), ()),
            ),
        ),
        "evaluation_adapter": OptionCatalog(
            "evaluation_adapter",
            (
                OptionSpec("full_eval", {}, (), (), ("metric:pcc", "metric:aux")),
                OptionSpec("pcc_only_eval", {}, (), (), ("metric:pcc",)),
            ),
        ),
    }


@pytest.fixture()
def h0(pipeline_topology, catalogs):
    return new_hypothesis(pipeline_topology, catalogs)


def _write_rows(path, ids):
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"{i},{k},{0.1 * k:.2f}" for k, i in enumerate(ids)]
    (path / "rows.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture()
def task(tmp_path):
    """TaskSpec backed by real on-disk views, including a fixture view."""
    train_ids = tuple(f"tr{i}" for i in range(6))
    val_ids = ("va0", "va1")
    test_ids = ("te0", "te1")
    _write_rows(tmp_path / "views" / "train", train_ids)
    _write_rows(tmp_path / "views" / "val", val_ids)
    _write_rows(tmp_path / "heldout" / "test", test_ids)
    _write_rows(tmp_path / "fixture" / "train", train_ids[:2])
    _write_rows(tmp_path / "fixture" / "val", val_ids[:1])
    suite = EvaluationSuite(metric_ids=("pcc", "aux"), selection_metric="pcc")
    split = SplitManifest(train_ids, val_ids, test_ids)
    return TaskSpec(
        dataset="unit-sim",
        suite=suite,
        split=split,
        train_view=str(tmp_path / "views" / "train"),
        val_view=str(tmp_path / "views" / "val"),
        test_view=str(tmp_path / "heldout" / "test"),
        fixture_view=str(tmp_path / "fixture"),
    )


GOOD_PROGRAM = """\
import json, os

rows = open('data/train/rows.csv').read().splitlines()
os.makedirs('out', exist_ok=True)
with open('out/summary.txt', 'w') as fh:
    fh.write(f'rows={len(rows)}\\n')
report = {
    'metrics': {'pcc': 0.5, 'aux': 0.8},
    'split': os.environ.get('EVAL_SPLIT', 'validation'),
}
with open('metrics.json', 'w') as fh:
    json.dump(report, fh)
"""

LEAKY_PROGRAM = GOOD_PROGRAM.replace(
    "rows = open('data/train/rows.csv').read().splitlines()",
    "rows = open('data/test/rows.csv').read().splitlines()",
)

CRASH_PROGRAM = """\
import json, os
rows = open('data/train/rows.csv').read().splitlines()
raise RuntimeError('exploded on purpose')
"""

NAN_PROGRAM = GOOD_PROGRAM.replace("'pcc': 0.5", "'pcc': float('nan')")

OMIT_METRIC_PROGRAM = GOOD_PROGRAM.replace("'pcc': 0.5, ", "")

LOOP_PROGRAM = """\
import json, os
rows = open('data/train/rows.csv').read().splitlines()
while True:
    pass
"""


SUCCESS_PHASES = (
    "structural_check",
    "propose",
    "realize",
    "execute",
    "feedback",
    "memory_update",
    "route",
    "build_edit",
    "apply_edit",
    "topology_refine",
    "record",
)

DEFAULT_SPLIT_HASH = "c" * 64


def make_record(
    iteration=0,
    value=0.5,
    verdict="valid_improved",
    status="completed",
    eta=1,
    chi_i=1,
    hard_rules=0,
    total=0.5,
    best_previous=None,
    split_hash=DEFAULT_SPLIT_HASH,
    name=None,
    outcome_digest=None,
    routing=None,
    edit=None,
    assignments=None,
    lca_rules=(),
    mounted_views=("train", "val"),
    phases=SUCCESS_PHASES,
):
    """Synthesize one consistent run record for selection/audit tests."""
    from designloop.controller import RunRecord

    name = name or f"cand-v{iteration}"
    proposed = f"p{iteration:02d}" + "0" * 62
    outcome_digest = outcome_digest or f"o{iteration:02d}" + "0" * 62
    completed = status == "completed"
    diags = []
    if not completed:
        diags.append(
            {
                "id": "d0",
                "kind": "execution_status",
                "payload": {"status": status, "kind_hint": "interface_failure"},
                "severity": "hard",
            }
        )
    else:
        diags.append(
            {
                "id": "d0",
                "kind": "execution_status",
                "payload": {"status": "completed", "wall_time": 0.2},
                "severity": "info",
            }
        )
        for k in range(hard_rules):
            diags.append(
                {
                    "id": f"d{len(diags)}",
                    "kind": "rule_report",
                    "payload": {"rule_id": f"hard_rule_{k}", "count": 1, "source": "realization"},
                    "severity": "hard",
                }
            )
        if value is not None:
            diags.append(
                {
                    "id": f"d{len(diags)}",
                    "kind": "primary_metric",
                    "payload": {"metric": "pcc", "value": value},
                    "severity": "info",
                }
            )
            if best_previous is not None:
                delta = value - best_previous
                payload = {"value": delta, "best_previous": best_previous}
                if delta < 0:
                    payload["kind_hint"] = "regression"
                diags.append(
                    {
                        "id": f"d{len(diags)}",
                        "kind": "delta_vs_best",
                        "payload": payload,
                        "severity": "info",
                    }
                )
        diags.append(
            {
                "id": f"d{len(diags)}",
                "kind": "alignment",
                "payload": {"value": 1.0},
                "severity": "info",
            }
        )
    execution = {
        "status": status,
        "wall_time": 0.2,
        "metric_report": ({"pcc": value, "aux": 0.8} if completed and value is not None else ({"aux": 0.8} if completed else None)),
        "split_tag": "validation" if completed else None,
        "stdout_tail": "",
        "stderr_tail": "" if completed else "boom",
        "artifacts_digest": "e" * 64,
        "mounted_views": list(mounted_views),
        "detail": "",
    }
    return RunRecord(
        iteration=iteration,
        dataset="unit-sim",
        selection_metric="pcc",
        split_hash=split_hash,
        hypothesis={
            "schema": "hyp/1",
            "version": iteration,
            "assignments": dict(assignments or {}),
        },
        structural={
            "chi": 1,
            "report": {"schema": "lca/1", "chi": 1, "violations": [], "rules_checked": []},
            "repair_attempted": False,
            "repaired": False,
        },
        proposed_digest=proposed,
        candidate_name=name,
        outcome={
            "status": "admissible" if (chi_i is None or chi_i == 1) else "rejected",
            "digest": outcome_digest,
            "name": name,
            "repairs_used": 0,
            "report": None,
        },
        chi_i=chi_i,
        execution=execution,
        post_rule_report=None,
        feedback={"diagnostics": diags, "verdict": verdict},
        eta=eta,
        routing=routing,
        edit=edit,
        edit_outcome="applied" if edit is not None else "disabled",
        phases=tuple(phases),
        durations={"total": total},
        started_at=0.0,
        repairs_used=0,
        lca_rules=tuple(lca_rules),
        mounted_views=tuple(mounted_views),
    )


class ScriptedProposer:
    """Proposes a fixed program per iteration; manifest mirrors the hypothesis."""

    id = "scripted"

    def __init__(self, program=GOOD_PROGRAM, per_iteration=None, fail=False):
        self.program = program
        self.per_iteration = per_iteration or {}
        self.fail = fail
        self.proposals = 0

    def propose(self, ctx):
        if self.fail:
            raise BackendUnavailable("scripted outage")
        self.proposals += 1
        program = self.per_iteration.get(ctx.iteration, self.program)
        manifest = {v: a.option_id for v, a in ctx.hypothesis.assignments.items()}
        return CandidateImplementation(
            name=f"cand-i{ctx.iteration}a{ctx.attempt}",
            files={"main.py": program},
            manifest=manifest,
            entrypoint="main.py",
            provenance=Provenance(self.id, ctx.attempt),
        )

    def repair(self, candidate, violations, h, mem, spec):
        return candidate


@pytest.fixture()
def programs():
    return {
        "good": GOOD_PROGRAM,
        "leaky": LEAKY_PROGRAM,
        "crash": CRASH_PROGRAM,
        "nan": NAN_PROGRAM,
        "omit": OMIT_METRIC_PROGRAM,
        "loop": LOOP_PROGRAM,
    }
