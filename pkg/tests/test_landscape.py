"""Synthetic landscapes: exact ground truth, fault injection, backend.

The argmax oracle here enumerates assignments straight off the serialized
spec document with itertools, independently of the spec's own methods.
"""

from __future__ import annotations

import dataclasses
import itertools
import subprocess
import sys

import pytest

from designloop import canonical
from designloop.feedback import execute_candidate
from designloop.hypothesis_state import HypothesisState, default_assignment
from designloop.landscape import (
    AUX_METRIC,
    GRID,
    SELECTION_METRIC,
    Fault,
    LandscapeBackend,
    LandscapeSpec,
    argmax_quality,
    build_catalogs,
    build_landscape_topology,
    build_task,
    enumerate_assignments,
    initial_hypothesis,
    make_coupled_landscape,
    make_gating_landscape,
    make_landscape,
    node_id,
)
from designloop.proposers import ProposalContext
from designloop.realization import (
    ModuleMemory,
    check_implementation,
    default_implementation_rules,
    parse_blocks,
)
from designloop.rules import RuleViolation, check_structural, default_structural_rules
from designloop.taskspec import CORE_PROTECTED

N_FUSE = node_id("fusion")
N_ARCH = node_id("architecture")


def _oracle_argmax(doc):
    """Exhaustive optimum recomputed from the serialized spec alone."""
    nodes = sorted(doc["node_options"])
    best = None
    for combo in itertools.product(*(doc["node_options"][n] for n in nodes)):
        a = dict(zip(nodes, combo))
        q = sum(doc["base_quality"][n][a[n]] for n in nodes)
        for na, oa, nb, ob, bonus in doc["couplings"]:
            if a.get(na) == oa and a.get(nb) == ob:
                q += bonus
        if best is None or q > best[1]:
            best = (a, q)
    return best


# -- ground truth ----------------------------------------------------------------


def test_quality_terms_are_exact_sixty_fourths():
    for seed in range(10):
        land = make_landscape(seed)
        for assignment in enumerate_assignments(land):
            q = land.quality(assignment)
            assert (q * GRID).is_integer(), (seed, assignment, q)
            assert land.aux_value(assignment) in (0.8, 1 / GRID)


def test_quality_is_order_independent():
    land = make_landscape(3)
    assignment = next(enumerate_assignments(land))
    shuffled = dict(reversed(list(assignment.items())))
    assert land.quality(shuffled) == land.quality(assignment)


def test_argmax_matches_doc_oracle():
    for seed in range(20):
        land = make_landscape(seed)
        got_a, got_q = argmax_quality(land)
        want_a, want_q = _oracle_argmax(land.to_doc())
        assert got_a == want_a, seed
        assert got_q == want_q, seed


def test_assignment_count_and_bound():
    for seed in range(50):
        land = make_landscape(seed)
        count = land.assignment_count()
        assert count == len(list(enumerate_assignments(land)))
        product = 1
        for options in land.node_options.values():
            product *= len(options)
        assert count == product
        assert count <= GRID


def test_landscape_is_deterministic_in_process():
    assert make_landscape(11).to_doc() == make_landscape(11).to_doc()
    assert make_landscape(11).to_doc() != make_landscape(12).to_doc()


def test_landscape_is_deterministic_across_processes():
    code = (
        "from designloop import canonical\n"
        "from designloop.landscape import make_landscape\n"
        "print(canonical.digest(make_landscape(7).to_doc()))\n"
    )
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == canonical.digest(make_landscape(7).to_doc())


def test_spec_doc_round_trip():
    for land in (make_landscape(4), make_gating_landscape(4), make_coupled_landscape(4)):
        wire = canonical.loads(canonical.dumps(land.to_doc()))
        again = LandscapeSpec.from_doc(wire)
        assert again == land
        assert again.to_doc() == land.to_doc()


# -- factories -------------------------------------------------------------------


def test_gating_landscape_plants_two_fixable_faults():
    for seed in range(5):
        land = make_gating_landscape(seed)
        arch0 = land.initial[N_ARCH]
        fuse0 = land.initial[N_FUSE]
        assert land.faults == {
            arch0: Fault(kind="leak", fixable=True),
            fuse0: Fault(kind="latent_leak", fixable=True),
        }
        assert len(land.node_options[N_ARCH]) == 3
        assert len(land.node_options[N_FUSE]) == 2
        # the initial point is the first option everywhere
        for nid, options in land.node_options.items():
            assert land.initial[nid] == options[0]


def test_coupled_landscape_reaches_optimum_only_jointly():
    land = make_coupled_landscape(9)
    assert land.assignment_count() == 4
    best_a, best_q = argmax_quality(land)
    assert best_a[N_FUSE] == "fusion_1" and best_a[N_ARCH] == "architecture_1"

    base = dict(land.initial)
    for fuse, arch in (("fusion_0", "architecture_0"),
                       ("fusion_0", "architecture_1"),
                       ("fusion_1", "architecture_0")):
        a = {**base, N_FUSE: fuse, N_ARCH: arch}
        assert best_q - land.quality(a) == 16 / GRID  # bonus is the only difference
        assert land.aux_value(a) == 1 / GRID          # collapse signal off-optimum
    assert land.aux_value(best_a) == 0.8


def test_coupled_catalog_carries_cross_incompatibility():
    land = make_coupled_landscape(9)
    catalogs = build_catalogs(land)
    assert "incompatible:architecture_0" in catalogs["fusion"].get("fusion_1").tags
    assert "incompatible:fusion_0" in catalogs["architecture"].get("architecture_1").tags
    assert not any(
        t.startswith("incompatible:") for t in catalogs["fusion"].get("fusion_0").tags
    )
    for opt in catalogs["evaluation_adapter"].options:
        assert f"metric:{SELECTION_METRIC}" in opt.tags
        assert f"metric:{AUX_METRIC}" in opt.tags


def _hypothesis_at(land, catalogs, overrides):
    assignment = {**land.initial, **overrides}
    return HypothesisState(
        assignments={
            nid: default_assignment(
                catalogs[nid.split("_", 1)[1]].get(assignment[nid])
            )
            for nid in assignment
        },
        version=0,
    )


def test_coupled_mixed_states_fail_the_hard_compat_gate():
    land = make_coupled_landscape(9)
    catalogs = build_catalogs(land)
    t = build_landscape_topology(land)
    rules = default_structural_rules(
        catalogs, (SELECTION_METRIC, AUX_METRIC),
        severities={"repr_loss_compatibility": "hard"},
    )
    chi = {}
    for fuse, arch in itertools.product(("fusion_0", "fusion_1"),
                                        ("architecture_0", "architecture_1")):
        h = _hypothesis_at(land, catalogs, {N_FUSE: fuse, N_ARCH: arch})
        chi[(fuse, arch)] = check_structural(h, t, rules).chi
    assert chi == {
        ("fusion_0", "architecture_0"): 1,
        ("fusion_0", "architecture_1"): 0,
        ("fusion_1", "architecture_0"): 0,
        ("fusion_1", "architecture_1"): 1,
    }


# -- engine-facing construction ----------------------------------------------------


def test_topology_shape():
    land = make_landscape(2)
    t = build_landscape_topology(land)
    assert len(t.nodes) == 9
    assert len(t.hyperedges) == 3
    chain = t.hyperedges["e000001"]
    assert chain.relation_type == "dataflow"
    assert list(chain.members) == sorted(chain.members)  # stage prefix orders stages
    assert set(t.hyperedges["e000002"].members) == {
        N_FUSE, N_ARCH, node_id("objective"), node_id("training_strategy")
    }


def test_initial_hypothesis_matches_spec():
    land = make_landscape(2)
    catalogs = build_catalogs(land)
    h0 = initial_hypothesis(land, catalogs)
    assert h0.version == 0
    assert {v: a.option_id for v, a in h0.assignments.items()} == dict(land.initial)


def test_build_task_materializes_views(tmp_path):
    land = make_landscape(2)
    spec = build_task(land, tmp_path)
    assert (tmp_path / "views" / "train" / "rows.csv").exists()
    assert (tmp_path / "views" / "val" / "rows.csv").exists()
    assert (tmp_path / "heldout" / "test" / "rows.csv").exists()
    assert spec.fixture_view is None
    assert spec.dataset == "synthetic-2"
    assert spec.suite.selection_metric == SELECTION_METRIC
    assert spec.protected_tags == CORE_PROTECTED
    assert spec.split.content_hash() == build_task(land, tmp_path).split.content_hash()


# -- backend ---------------------------------------------------------------------


def _materialize(land, tmp_path):
    spec = build_task(land, tmp_path)
    catalogs = build_catalogs(land)
    t = build_landscape_topology(land)
    h0 = initial_hypothesis(land, catalogs)
    return spec, catalogs, t, h0


def _ctx(h, t, spec, iteration=0, attempt=0):
    return ProposalContext(
        hypothesis=h, topology=t, memory=ModuleMemory(), spec=spec,
        seed=0, iteration=iteration, attempt=attempt,
    )


def _with_fault(land, node, kind, fixable=False):
    return dataclasses.replace(
        land, faults={land.initial[node]: Fault(kind=kind, fixable=fixable)}
    )


def test_backend_reports_the_exact_quality(tmp_path):
    land = make_landscape(5)
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    backend = LandscapeBackend(land)
    cand = backend.propose(_ctx(h0, t, spec))
    assert cand.manifest == dict(land.initial)
    report = execute_candidate(cand, spec, step_timeout=30.0)
    assert report.status == "completed"
    assert report.metric_report[SELECTION_METRIC] == land.quality(land.initial)
    assert report.metric_report[AUX_METRIC] == 0.8
    assert report.split_tag == "validation"
    assert set(report.mounted_views) == {"train", "val"}


def test_backend_is_deterministic(tmp_path):
    land = make_landscape(5)
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    a = LandscapeBackend(land).propose(_ctx(h0, t, spec))
    b = LandscapeBackend(land).propose(_ctx(h0, t, spec))
    assert a.digest() == b.digest()
    assert a.name == b.name and "-v0-" in a.name


def test_backend_programs_carry_parseable_memory_blocks(tmp_path):
    land = make_landscape(5)
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    cand = LandscapeBackend(land).propose(_ctx(h0, t, spec))
    blocks = parse_blocks(cand.files["main.py"])
    assert len(blocks) == len(land.node_options)
    by_name = {b.name: b for b in blocks}
    for nid, opt in land.initial.items():
        assert by_name[nid].signature.task_tags == (opt,)


def test_crash_fault_crashes_at_runtime(tmp_path):
    land = _with_fault(make_landscape(5), N_ARCH, "crash")
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    cand = LandscapeBackend(land).propose(_ctx(h0, t, spec))
    report = execute_candidate(cand, spec, step_timeout=30.0)
    assert report.status == "crashed"
    assert "injected fault: crash" in report.stderr_tail


def test_leak_fault_is_caught_statically_and_at_runtime(tmp_path):
    land = _with_fault(make_landscape(5), N_ARCH, "leak", fixable=True)
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    cand = LandscapeBackend(land).propose(_ctx(h0, t, spec))
    static = check_implementation(
        cand, spec, default_implementation_rules(include_dry_run=False), step_timeout=30.0
    )
    assert static.chi == 0
    assert "leakage_check" in {v.rule_id for v in static.violations}
    report = execute_candidate(cand, spec, step_timeout=30.0)
    assert report.status == "crashed"  # test view is not mounted


def test_latent_leak_is_static_only(tmp_path):
    land = _with_fault(make_landscape(5), N_FUSE, "latent_leak", fixable=True)
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    cand = LandscapeBackend(land).propose(_ctx(h0, t, spec))
    static = check_implementation(
        cand, spec, default_implementation_rules(include_dry_run=False), step_timeout=30.0
    )
    assert "leakage_check" in {v.rule_id for v in static.violations}
    report = execute_candidate(cand, spec, step_timeout=30.0)
    assert report.status == "completed"  # the leaking branch never runs
    assert report.metric_report[SELECTION_METRIC] == land.quality(land.initial)


def test_omit_metric_fault_drops_only_the_selection_metric(tmp_path):
    land = _with_fault(make_landscape(5), N_ARCH, "omit_metric")
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    cand = LandscapeBackend(land).propose(_ctx(h0, t, spec))
    report = execute_candidate(cand, spec, step_timeout=30.0)
    assert report.status == "completed"
    assert SELECTION_METRIC not in report.metric_report
    assert report.metric_report[AUX_METRIC] == 0.8


def test_nan_metric_fault_breaks_the_report_contract(tmp_path):
    land = _with_fault(make_landscape(5), N_ARCH, "nan_metric")
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    cand = LandscapeBackend(land).propose(_ctx(h0, t, spec))
    report = execute_candidate(cand, spec, step_timeout=30.0)
    assert report.status == "crashed"
    assert "non-finite" in report.detail


def test_collapse_fault_degrades_the_side_metric(tmp_path):
    land = _with_fault(make_landscape(5), N_FUSE, "collapse")
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    cand = LandscapeBackend(land).propose(_ctx(h0, t, spec))
    report = execute_candidate(cand, spec, step_timeout=30.0)
    assert report.status == "completed"
    assert report.metric_report[AUX_METRIC] == 1 / GRID
    assert report.metric_report[SELECTION_METRIC] == land.quality(land.initial)


# -- repair ----------------------------------------------------------------------


def _leak_violation():
    return [RuleViolation("leakage_check", "hard", 1, ())]


def test_repair_suppresses_fixable_static_faults(tmp_path):
    land = _with_fault(make_landscape(5), N_ARCH, "leak", fixable=True)
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    backend = LandscapeBackend(land)
    cand = backend.propose(_ctx(h0, t, spec))
    fixed = backend.repair(cand, _leak_violation(), h0, ModuleMemory(), spec)
    assert fixed is not cand
    assert fixed.name.endswith("-r1")
    assert "data/test" not in fixed.files["main.py"]
    static = check_implementation(
        fixed, spec, default_implementation_rules(include_dry_run=False), step_timeout=30.0
    )
    assert static.chi == 1
    report = execute_candidate(fixed, spec, step_timeout=30.0)
    assert report.status == "completed"
    assert report.metric_report[SELECTION_METRIC] == land.quality(land.initial)


def test_repair_refuses_unfixable_faults(tmp_path):
    land = _with_fault(make_landscape(5), N_ARCH, "leak", fixable=False)
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    backend = LandscapeBackend(land)
    cand = backend.propose(_ctx(h0, t, spec))
    assert backend.repair(cand, _leak_violation(), h0, ModuleMemory(), spec) is cand


def test_repair_ignores_unrelated_violations(tmp_path):
    land = _with_fault(make_landscape(5), N_ARCH, "leak", fixable=True)
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    backend = LandscapeBackend(land)
    cand = backend.propose(_ctx(h0, t, spec))
    unrelated = [RuleViolation("numerics_check", "hard", 1, ())]
    assert backend.repair(cand, unrelated, h0, ModuleMemory(), spec) is cand


def test_repair_has_no_static_rule_for_runtime_faults(tmp_path):
    # a crash has no static signature, so repair cannot suppress it
    land = _with_fault(make_landscape(5), N_ARCH, "crash", fixable=True)
    spec, catalogs, t, h0 = _materialize(land, tmp_path)
    backend = LandscapeBackend(land)
    cand = backend.propose(_ctx(h0, t, spec))
    assert backend.repair(cand, _leak_violation(), h0, ModuleMemory(), spec) is cand
