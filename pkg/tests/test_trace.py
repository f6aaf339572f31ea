"""Trace persistence, routing-record emission, and the audit surface.

The audit functions recompute selection, frontier, and efficiency from
serialized records only, so every equality here is checked against the
controller's in-memory arithmetic after a full JSON round trip.
"""

from __future__ import annotations

import dataclasses
import random

import pytest

from designloop import canonical
from designloop.controller import (
    SelectionPolicy,
    best_so_far,
    efficiency_metrics,
    select_best,
)
from designloop.errors import (
    ArtifactMissing,
    CorruptRecord,
    IterationGap,
    MissingRoutingData,
    StorageFailure,
)
from designloop.realization import CandidateImplementation, Provenance
from designloop.trace import (
    DIAGNOSTIC_KEYS,
    ROUTING_RECORD_KEYS,
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
    validate_routing_record,
)

from conftest import DEFAULT_SPLIT_HASH, SUCCESS_PHASES, make_record

POLICY = SelectionPolicy("pcc")


def _header_doc():
    return {
        "schema": "trace/1",
        "dataset": "unit-sim",
        "policy": POLICY.to_doc(),
        "budget": {"iterations": 3},
        "config": {"mode": "M4"},
        "split_hash": DEFAULT_SPLIT_HASH,
        "backend": "scripted",
    }


def _footer_doc(reason="ok"):
    return {
        "schema": "trace/1",
        "reason": reason,
        "selection": None,
        "efficiency": {},
        "usage": {},
    }


# -- artifact store -------------------------------------------------------------


def _candidate(name="cand", marker="a"):
    return CandidateImplementation(
        name=name,
        files={"main.py": f"# {marker}\nprint('hi')\n"},
        manifest={"n_arch": "mlp"},
        entrypoint="main.py",
        provenance=Provenance("unit", 0),
    )


def test_artifact_store_round_trip(tmp_path):
    store = ArtifactStore(tmp_path / "artifacts")
    cand = _candidate()
    digest = store.put(cand)
    assert digest == cand.digest()
    assert digest in store
    assert store.get(digest).to_doc() == cand.to_doc()
    assert store.digests() == [digest]


def test_artifact_store_put_is_idempotent(tmp_path):
    store = ArtifactStore(tmp_path / "artifacts")
    a = store.put(_candidate())
    b = store.put(_candidate())
    c = store.put(_candidate(marker="b"))
    assert a == b and a != c
    assert store.digests() == sorted([a, c])


def test_artifact_store_missing_digest(tmp_path):
    store = ArtifactStore(tmp_path / "artifacts")
    assert "f" * 64 not in store
    with pytest.raises(ArtifactMissing):
        store.get("f" * 64)


# -- trace store ----------------------------------------------------------------


def test_trace_round_trip(tmp_path):
    store = TraceStore(tmp_path / "run")
    store.write_header(_header_doc())
    recs = [make_record(iteration=i, value=0.3 + 0.1 * i) for i in range(3)]
    for rec in recs:
        store.append_record(rec.to_doc())
    store.write_footer(_footer_doc())
    read = read_trace(tmp_path / "run")
    assert read.header == {**_header_doc(), "kind": "header"}
    assert read.records == [r.to_doc() for r in recs]
    assert read.footer == {**_footer_doc(), "kind": "footer"}
    assert read.skipped == [] and read.gaps == []
    assert not list((tmp_path / "run").glob("*.tmp"))


def test_append_before_header_rejected(tmp_path):
    store = TraceStore(tmp_path / "run")
    with pytest.raises(StorageFailure):
        store.append_record(make_record().to_doc())
    with pytest.raises(StorageFailure):
        store.write_footer(_footer_doc())


def test_duplicate_header_rejected(tmp_path):
    store = TraceStore(tmp_path / "run")
    store.write_header(_header_doc())
    with pytest.raises(StorageFailure):
        store.write_header(_header_doc())


def test_append_after_footer_rejected(tmp_path):
    store = TraceStore(tmp_path / "run")
    store.write_header(_header_doc())
    store.append_record(make_record(iteration=0).to_doc())
    store.write_footer(_footer_doc())
    with pytest.raises(StorageFailure):
        store.append_record(make_record(iteration=1).to_doc())
    with pytest.raises(StorageFailure):
        store.write_footer(_footer_doc())


def test_iteration_contiguity_enforced(tmp_path):
    store = TraceStore(tmp_path / "run")
    store.write_header(_header_doc())
    store.append_record(make_record(iteration=0).to_doc())
    with pytest.raises(IterationGap, match="expected iteration 1"):
        store.append_record(make_record(iteration=2).to_doc())
    # the rejected append must not corrupt the persisted prefix
    assert len(read_trace(tmp_path / "run").records) == 1


def test_every_append_leaves_a_parseable_file(tmp_path):
    store = TraceStore(tmp_path / "run")
    store.write_header(_header_doc())
    for i in range(5):
        store.append_record(make_record(iteration=i).to_doc())
        read = read_trace(tmp_path / "run")
        assert read.skipped == []
        assert [r["iteration"] for r in read.records] == list(range(i + 1))


def test_resume_continues_iteration_numbering(tmp_path):
    first = TraceStore(tmp_path / "run")
    first.write_header(_header_doc())
    first.append_record(make_record(iteration=0).to_doc())
    first.append_record(make_record(iteration=1).to_doc())
    del first

    resumed = TraceStore(tmp_path / "run")
    with pytest.raises(IterationGap):
        resumed.append_record(make_record(iteration=5).to_doc())
    resumed.append_record(make_record(iteration=2).to_doc())
    resumed.write_footer(_footer_doc())
    read = read_trace(tmp_path / "run")
    assert [r["iteration"] for r in read.records] == [0, 1, 2]
    assert read.footer is not None


def test_resume_of_finished_trace_refuses_appends(tmp_path):
    first = TraceStore(tmp_path / "run")
    first.write_header(_header_doc())
    first.append_record(make_record(iteration=0).to_doc())
    first.write_footer(_footer_doc())
    resumed = TraceStore(tmp_path / "run")
    with pytest.raises(StorageFailure):
        resumed.append_record(make_record(iteration=1).to_doc())


def test_resume_drops_corrupt_lines_on_next_flush(tmp_path):
    store = TraceStore(tmp_path / "run")
    store.write_header(_header_doc())
    store.append_record(make_record(iteration=0).to_doc())
    path = tmp_path / "run" / "trace.jsonl"
    with path.open("a", encoding="utf-8") as fh:
        fh.write("{torn line\n")

    resumed = TraceStore(tmp_path / "run")
    resumed.append_record(make_record(iteration=1).to_doc())
    read = read_trace(tmp_path / "run")
    assert read.skipped == []
    assert [r["iteration"] for r in read.records] == [0, 1]


# -- lenient reading ------------------------------------------------------------


def test_read_trace_requires_a_file(tmp_path):
    with pytest.raises(StorageFailure):
        read_trace(tmp_path)


def test_read_trace_skips_bad_lines_and_reports_gaps(tmp_path):
    header = {**_header_doc(), "kind": "header"}
    footer = {**_footer_doc(), "kind": "footer"}
    rec0 = make_record(iteration=0).to_doc()
    rec2 = make_record(iteration=2).to_doc()
    lines = [
        canonical.dumps(header),
        canonical.dumps(rec0),
        "{this is not json",
        canonical.dumps({"schema": "trace/1", "note": "kindless"}),
        canonical.dumps({"schema": "other/9", "kind": "record", "iteration": 1}),
        "",
        canonical.dumps(rec2),
        canonical.dumps(header),
        canonical.dumps({"schema": "trace/1", "kind": "mystery"}),
        canonical.dumps(footer),
        canonical.dumps({**footer, "reason": "late"}),
    ]
    root = tmp_path / "run"
    root.mkdir()
    (root / "trace.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    read = read_trace(root)
    assert read.header == header
    assert read.footer == footer  # first footer wins
    assert read.records == [rec0, rec2]
    assert read.gaps == [1]
    assert [ln for ln, _ in read.skipped] == [3, 4, 5, 8, 9, 11]
    reasons = dict(read.skipped)
    assert reasons[3].startswith("unparseable")
    assert reasons[4] == "not a trace object"
    assert reasons[5] == "wrong schema 'other/9'"
    assert reasons[8] == "duplicate header"
    assert reasons[9] == "unknown kind 'mystery'"
    assert reasons[11] == "duplicate footer"


# -- routing records ------------------------------------------------------------


def _routing(kind="hyperedge", target="e000002", template_id="tmpl_identity",
             diagnostic_kind="identity_preservation_failure", fallback=False,
             operation="test_reference_aware_decoder_path"):
    return {
        "address": {"kind": kind, "target": target},
        "template_id": template_id,
        "diagnostic_kind": diagnostic_kind,
        "editable_components": ["model_architecture", "fusion_module"],
        "protected_components": ["dataset_split", "evaluation_metrics"],
        "operation": operation,
        "reason": "swap the fusion pairing implicated by the failure",
        "fallback": fallback,
        "matched_diagnostics": ["d0"],
    }


def _edit(option="gated_fuse"):
    return {
        "address": {"kind": "hyperedge", "target": "e000002"},
        "changes": {"n_fuse": {"option_id": option, "params": {}}},
        "justification": ["d0"],
    }


def _routed_record(**kw):
    defaults = dict(
        iteration=2,
        value=0.3416,
        best_previous=0.4148,
        verdict="valid_but_regressed",
        routing=_routing(),
        edit=_edit(),
        assignments={"n_fuse": {"option_id": "concat_fuse", "params": {}}},
        lca_rules=("interface_check", "shape_check"),
        name="cand-x",
    )
    defaults.update(kw)
    return make_record(**defaults)


def test_routing_record_full_shape(tmp_path):
    rec = _routed_record()
    doc = emit_routing_record(rec)
    assert list(doc) == list(ROUTING_RECORD_KEYS)
    assert list(doc["diagnostic"]) == list(DIAGNOSTIC_KEYS)
    assert doc["dataset"] == "unit-sim" and doc["iteration"] == 2
    d = doc["diagnostic"]
    assert d["type"] == "identity_preservation_failure"
    assert d["candidate"] == "cand-x"
    assert d["execution_status"] == "valid"  # completed maps to valid
    assert d["rule_status"] == "passed"
    assert d["selection_metric"] == "pcc"
    assert d["candidate_score"] == 0.3416
    assert d["best_previous_score"] == 0.4148
    assert d["verdict"] == "valid_but_regressed"
    assert d["summary"] == "valid_but_regressed: execution_status"
    assert doc["routed_address"] == {
        "address_type": "typed_neighborhood",
        "editable_components": ["model_architecture", "fusion_module"],
        "routing_reason": rec.routing["reason"],
    }
    assert doc["allowed_edit"] == {
        "operation": "test_reference_aware_decoder_path",
        "protected_components": ["dataset_split", "evaluation_metrics"],
    }
    assert doc["revised_candidate"] == {
        "name": "rev3",
        "design_change": "n_fuse: concat_fuse -> gated_fuse",
        "intended_effect": rec.routing["reason"],
    }
    assert doc["lca_check"] == ["interface_check", "shape_check"]
    validate_routing_record(doc)


def test_routing_record_round_trips_through_ordered_json():
    doc = emit_routing_record(_routed_record())
    again = canonical.loads(canonical.dumps_ordered(doc))
    assert again == doc
    validate_routing_record(again)


def test_routing_record_accepts_record_or_doc():
    rec = _routed_record()
    assert emit_routing_record(rec) == emit_routing_record(rec.to_doc())


def test_rejected_iteration_gets_reduced_diagnostic_keys():
    rec = _routed_record(
        value=None, eta=0, chi_i=0, verdict="proposed_rejected",
        best_previous=None, edit=None,
        routing=_routing(kind="node", target="n_arch", template_id=None,
                         diagnostic_kind="no_template_match", fallback=True,
                         operation="swap_local_option"),
    )
    rec = dataclasses.replace(rec, execution=None)
    doc = emit_routing_record(rec)
    d = doc["diagnostic"]
    assert "candidate_score" not in d and "best_previous_score" not in d
    assert list(d) == [k for k in DIAGNOSTIC_KEYS
                       if k not in ("candidate_score", "best_previous_score")]
    assert d["execution_status"] == "rejected"
    assert d["rule_status"] == "failed"  # chi_i = 0
    assert doc["routed_address"]["address_type"] == "node"
    assert doc["revised_candidate"] is None
    validate_routing_record(doc)


def test_crashed_iteration_reports_its_execution_status():
    rec = _routed_record(value=None, status="crashed", verdict="crashed",
                         best_previous=None)
    doc = emit_routing_record(rec)
    assert doc["diagnostic"]["execution_status"] == "crashed"
    assert "candidate_score" not in doc["diagnostic"]
    assert doc["diagnostic"]["summary"] == "crashed: execution_status"


def test_rule_status_unchecked_when_no_gate_ran():
    rec = _routed_record()
    rec = dataclasses.replace(rec, structural=None, chi_i=None)
    assert emit_routing_record(rec)["diagnostic"]["rule_status"] == "unchecked"


def test_rule_status_failed_on_structural_violation():
    rec = _routed_record()
    structural = dict(rec.structural)
    structural["chi"] = 0
    rec = dataclasses.replace(rec, structural=structural)
    assert emit_routing_record(rec)["diagnostic"]["rule_status"] == "failed"


def test_unrouted_record_raises():
    with pytest.raises(MissingRoutingData):
        emit_routing_record(make_record())


def test_noop_edit_renders_as_noop():
    edit = {
        "address": {"kind": "hyperedge", "target": "e000002"},
        "changes": {},
        "justification": [],
    }
    doc = emit_routing_record(_routed_record(edit=edit))
    assert doc["revised_candidate"]["design_change"] == "no-op"


def test_validate_rejects_shuffled_top_level_keys():
    doc = emit_routing_record(_routed_record())
    shuffled = dict(reversed(list(doc.items())))
    with pytest.raises(CorruptRecord, match="keys"):
        validate_routing_record(shuffled)


def test_validate_rejects_out_of_order_diagnostic_keys():
    doc = emit_routing_record(_routed_record())
    d = doc["diagnostic"]
    swapped = {k: d[k] for k in d if k not in ("verdict", "summary")}
    swapped["summary"] = d["summary"]
    swapped["verdict"] = d["verdict"]
    doc = {**doc, "diagnostic": swapped}
    with pytest.raises(CorruptRecord, match="out of order"):
        validate_routing_record(doc)


def test_validate_rejects_missing_required_diagnostic_key():
    doc = emit_routing_record(_routed_record())
    pruned = {k: v for k, v in doc["diagnostic"].items() if k != "candidate"}
    with pytest.raises(CorruptRecord, match="missing"):
        validate_routing_record({**doc, "diagnostic": pruned})


def test_export_skips_unrouted_records():
    docs = [
        _routed_record(iteration=0).to_doc(),
        make_record(iteration=1).to_doc(),
        _routed_record(iteration=2).to_doc(),
    ]
    out = export_routing_records(docs)
    assert [d["iteration"] for d in out] == [0, 2]
    for d in out:
        validate_routing_record(d)


# -- audit vs controller --------------------------------------------------------


def _mixed_records():
    recs = [
        make_record(iteration=0, value=0.41, total=1.0),
        make_record(iteration=1, value=0.38, best_previous=0.41,
                    verdict="valid_but_regressed", total=2.0, hard_rules=1),
        make_record(iteration=2, value=None, status="crashed",
                    verdict="crashed", total=0.5),
        make_record(iteration=3, value=0.44, best_previous=0.41, total=1.5),
        make_record(iteration=4, value=0.44, best_previous=0.44,
                    verdict="valid_retained", total=0.25, chi_i=None),
    ]
    return recs


def _persist(tmp_path, recs):
    store = TraceStore(tmp_path / "run")
    store.write_header(_header_doc())
    for rec in recs:
        store.append_record(rec.to_doc())
    store.write_footer(_footer_doc())
    return read_trace(tmp_path / "run")


def test_audit_matches_controller_on_mixed_batch(tmp_path):
    recs = _mixed_records()
    read = _persist(tmp_path, recs)
    assert audit_frontier(read.records, POLICY) == best_so_far(recs, POLICY)
    assert audit_selection(read.records, POLICY) == select_best(recs, POLICY).to_doc()
    assert audit_efficiency(read.records, POLICY) == efficiency_metrics(recs, POLICY).to_doc()


def test_audit_selection_none_when_nothing_admissible(tmp_path):
    recs = [make_record(iteration=0, value=None, status="crashed", verdict="crashed")]
    read = _persist(tmp_path, recs)
    assert audit_selection(read.records, POLICY) is None
    assert select_best(recs, POLICY) is None
    assert audit_frontier(read.records, POLICY) == [(0, None)]


def _random_batch(rng):
    recs = []
    for it in range(rng.randrange(1, 8)):
        roll = rng.random()
        if roll < 0.2:
            rec = make_record(
                iteration=it, value=None, status="crashed", verdict="crashed",
                eta=rng.choice([0, 1]), chi_i=rng.choice([None, 0, 1]),
                total=rng.choice([0.25, 1.0]),
            )
        elif roll < 0.35:
            rec = make_record(iteration=it, value=None, eta=0, chi_i=0,
                              verdict="proposed_rejected", total=0.5)
            rec = dataclasses.replace(rec, execution=None)
        else:
            rec = make_record(
                iteration=it,
                value=round(rng.uniform(0.1, 0.9), 4),
                best_previous=rng.choice([None, 0.4]),
                verdict=rng.choice(
                    ["valid_improved", "valid_retained", "valid_but_regressed"]
                ),
                hard_rules=rng.choice([0, 0, 1]),
                chi_i=rng.choice([None, 1, 1]),
                total=round(rng.uniform(0.1, 2.0), 3),
            )
        recs.append(rec)
    return recs


def test_audit_matches_controller_on_fuzzed_batches(tmp_path):
    rng = random.Random(515)
    for trial in range(60):
        recs = _random_batch(rng)
        policy = SelectionPolicy("pcc", rng.choice(["max", "min"]))
        read = _persist(tmp_path / str(trial), recs)
        assert audit_frontier(read.records, policy) == best_so_far(recs, policy)
        selected = select_best(recs, policy)
        assert audit_selection(read.records, policy) == (
            selected.to_doc() if selected is not None else None
        )
        assert audit_efficiency(read.records, policy) == (
            efficiency_metrics(recs, policy).to_doc()
        )


def test_audit_routing_stats_counts_addresses():
    docs = [
        _routed_record(iteration=0).to_doc(),
        _routed_record(iteration=1,
                       routing=_routing(kind="node", target="n_fuse")).to_doc(),
        _routed_record(iteration=2,
                       routing=_routing(kind="node", target="n_arch",
                                        template_id=None, fallback=True)).to_doc(),
        make_record(iteration=3).to_doc(),
    ]
    stats = audit_routing_stats(docs)
    assert stats == {
        "by_template": {"(fallback)": 1, "tmpl_identity": 2},
        "fallbacks": 1,
        "hyperedge_addresses": 1,
        "node_addresses": 2,
        "unrouted": 1,
    }


# -- compliance -----------------------------------------------------------------


def test_compliance_clean_trace(tmp_path):
    recs = [_routed_record(iteration=i) for i in range(3)]
    read = _persist(tmp_path, recs)
    report = audit_compliance(read)
    assert report["ok"] is True
    assert report["has_header"] and report["has_footer"]
    assert report["records"] == 3
    assert report["phase_order_failures"] == []
    assert report["edit_address_mismatches"] == []
    assert report["split_hashes"] == [DEFAULT_SPLIT_HASH]
    assert report["verdicts"] == {"valid_but_regressed": 3}
    row = report["per_iteration"][1]
    assert row == {
        "iteration": 1,
        "chi_h": 1,
        "chi_i": 1,
        "eta": 1,
        "verdict": "valid_but_regressed",
        "repairs": 0,
        "protected_components": ["dataset_split", "evaluation_metrics"],
    }


@pytest.mark.parametrize(
    "phases, ok",
    [
        (SUCCESS_PHASES, True),
        (("structural_check", "propose", "realize", "execute", "naive_retry",
          "naive_retry", "feedback", "memory_update", "route", "build_edit",
          "apply_edit", "topology_refine", "record"), True),
        (("structural_check", "propose", "realize", "rejection_feedback",
          "memory_update", "route", "build_edit", "apply_edit",
          "topology_refine", "record"), True),
        (("structural_check", "hypothesis_repair", "rejection_feedback",
          "memory_update", "route", "build_edit", "apply_edit",
          "topology_refine", "record"), True),
        (SUCCESS_PHASES[:-1], False),                      # record missing
        (SUCCESS_PHASES[1:], False),                       # gate missing
        (SUCCESS_PHASES + ("record",), False),             # trailing duplicate
        (("structural_check", "propose", "realize", "naive_retry", "execute",
          "feedback", "memory_update", "route", "build_edit", "apply_edit",
          "topology_refine", "record"), False),            # retry before execute
    ],
)
def test_compliance_phase_grammar(tmp_path, phases, ok):
    read = _persist(tmp_path, [make_record(phases=phases)])
    report = audit_compliance(read)
    assert (report["phase_order_failures"] == []) is ok
    assert report["ok"] is ok


def test_compliance_flags_edit_applied_off_address(tmp_path):
    bad_edit = {
        "address": {"kind": "node", "target": "n_arch"},
        "changes": {"n_arch": {"option_id": "resnet", "params": {}}},
        "justification": ["d0"],
    }
    recs = [_routed_record(iteration=0), _routed_record(iteration=1, edit=bad_edit)]
    report = audit_compliance(_persist(tmp_path, recs))
    assert report["edit_address_mismatches"] == [1]
    assert report["ok"] is False


def test_compliance_surfaces_gaps_and_skips(tmp_path):
    header = {**_header_doc(), "kind": "header"}
    lines = [
        canonical.dumps(header),
        canonical.dumps(make_record(iteration=0).to_doc()),
        "{torn",
        canonical.dumps(make_record(iteration=2).to_doc()),
    ]
    root = tmp_path / "run"
    root.mkdir()
    (root / "trace.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    report = audit_compliance(read_trace(root))
    assert report["iteration_gaps"] == [1]
    assert report["skipped_lines"] == 1
    assert report["has_footer"] is False
    assert report["ok"] is False


def test_compliance_reports_split_hash_drift(tmp_path):
    recs = [
        make_record(iteration=0),
        make_record(iteration=1, split_hash="d" * 64),
    ]
    report = audit_compliance(_persist(tmp_path, recs))
    # drift is surfaced for the isolation check, not folded into ok
    assert report["split_hashes"] == sorted([DEFAULT_SPLIT_HASH, "d" * 64])
