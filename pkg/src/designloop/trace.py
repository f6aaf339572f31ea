"""Append-only run traces and the audit surface built on them.

A trace directory holds one ``trace.jsonl`` (header line, one line per
iteration record, footer line) plus an ``artifacts/`` store of candidate
bundles keyed by content digest. Appends rewrite the whole file to a
temp path and rename it over the old one, so a reader never observes a
torn line and a crashed run leaves a valid prefix.

The audit functions re-derive selection frontiers, efficiency numbers,
routing statistics, and phase-order compliance from the serialized
records alone. They deliberately do not call into the controller: a
trace is evidence, and the auditor must not trust the process that
produced it.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import canonical
from .controller import RECORD_SCHEMA, SelectionPolicy
from .errors import (
    ArtifactMissing,
    CorruptRecord,
    IterationGap,
    MissingRoutingData,
    StorageFailure,
)
from .realization import CandidateImplementation

log = logging.getLogger(__name__)


def _atomic_write(path: Path, data: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(data, encoding="utf-8")
    os.replace(tmp, path)


class ArtifactStore:
    """Content-addressed candidate bundles, one JSON doc per digest."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, candidate: CandidateImplementation) -> str:
        digest = candidate.digest()
        path = self.root / f"{digest}.json"
        if not path.exists():
            _atomic_write(path, canonical.dumps(candidate.to_doc()))
        return digest

    def get(self, digest: str) -> CandidateImplementation:
        path = self.root / f"{digest}.json"
        if not path.exists():
            raise ArtifactMissing(f"no artifact stored under digest {digest!r}")
        return CandidateImplementation.from_doc(canonical.loads(path.read_text("utf-8")))

    def __contains__(self, digest: str) -> bool:
        return (self.root / f"{digest}.json").exists()

    def digests(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))


@dataclass
class TraceReadResult:
    header: dict | None
    records: list[dict]
    footer: dict | None
    skipped: list[tuple[int, str]] = field(default_factory=list)
    gaps: list[int] = field(default_factory=list)


class TraceStore:
    """One run's trace directory. Appends enforce iteration contiguity."""

    def __init__(self, root: str | Path):
        self.root = str(root)
        base = Path(root)
        base.mkdir(parents=True, exist_ok=True)
        self.path = base / "trace.jsonl"
        self.artifacts = ArtifactStore(base / "artifacts")
        self._lines: list[str] = []
        self._has_header = False
        self._has_footer = False
        self._next_iteration = 0
        if self.path.exists():
            self._resume()

    def _resume(self) -> None:
        loaded = read_trace(self.root)
        if loaded.header is not None:
            self._lines.append(canonical.dumps(loaded.header))
            self._has_header = True
        for rec in loaded.records:
            self._lines.append(canonical.dumps(rec))
            self._next_iteration = rec["iteration"] + 1
        if loaded.footer is not None:
            self._lines.append(canonical.dumps(loaded.footer))
            self._has_footer = True

    def _flush(self) -> None:
        try:
            _atomic_write(self.path, "".join(line + "\n" for line in self._lines))
        except OSError as exc:
            raise StorageFailure(f"cannot persist trace at {self.path}: {exc}") from exc

    def write_header(self, doc: Mapping) -> None:
        if self._has_header:
            raise StorageFailure("trace already has a header")
        self._lines.append(canonical.dumps({**doc, "kind": "header"}))
        self._has_header = True
        self._flush()

    def append_record(self, doc: Mapping) -> None:
        if not self._has_header:
            raise StorageFailure("append before header")
        if self._has_footer:
            raise StorageFailure("append after footer")
        it = doc.get("iteration")
        if it != self._next_iteration:
            raise IterationGap(
                f"expected iteration {self._next_iteration}, got {it!r}"
            )
        self._lines.append(canonical.dumps({**doc, "kind": "record"}))
        self._next_iteration = it + 1
        self._flush()

    def write_footer(self, doc: Mapping) -> None:
        if not self._has_header:
            raise StorageFailure("footer before header")
        if self._has_footer:
            raise StorageFailure("trace already has a footer")
        self._lines.append(canonical.dumps({**doc, "kind": "footer"}))
        self._has_footer = True
        self._flush()


def read_trace(root: str | Path) -> TraceReadResult:
    """Parse a trace file leniently.

    Unparseable or mis-shaped lines are skipped and reported, never fatal;
    missing iterations (for example around a skipped line) are listed in
    ``gaps``.
    """
    path = Path(root) / "trace.jsonl"
    if not path.exists():
        raise StorageFailure(f"no trace.jsonl under {root}")
    header: dict | None = None
    footer: dict | None = None
    records: list[dict] = []
    skipped: list[tuple[int, str]] = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = canonical.loads(line)
        except ValueError as exc:
            skipped.append((lineno, f"unparseable: {exc}"))
            continue
        if not isinstance(doc, dict) or "kind" not in doc:
            skipped.append((lineno, "not a trace object"))
            continue
        if doc.get("schema") != RECORD_SCHEMA:
            skipped.append((lineno, f"wrong schema {doc.get('schema')!r}"))
            continue
        kind = doc["kind"]
        if kind == "header":
            if header is None:
                header = doc
            else:
                skipped.append((lineno, "duplicate header"))
        elif kind == "footer":
            if footer is None:
                footer = doc
            else:
                skipped.append((lineno, "duplicate footer"))
        elif kind == "record":
            records.append(doc)
        else:
            skipped.append((lineno, f"unknown kind {kind!r}"))
    gaps: list[int] = []
    expected = 0
    for rec in records:
        it = rec.get("iteration", -1)
        while expected < it:
            gaps.append(expected)
            expected += 1
        expected = it + 1
    if skipped:
        log.warning("trace %s: skipped %d corrupt line(s)", path, len(skipped))
    return TraceReadResult(header, records, footer, skipped, gaps)


# --------------------------------------------------------------------------
# Routing records
# --------------------------------------------------------------------------

ROUTING_RECORD_KEYS = (
    "dataset",
    "iteration",
    "diagnostic",
    "routed_address",
    "allowed_edit",
    "revised_candidate",
    "lca_check",
)

DIAGNOSTIC_KEYS = (
    "type",
    "candidate",
    "execution_status",
    "rule_status",
    "selection_metric",
    "candidate_score",
    "best_previous_score",
    "verdict",
    "summary",
)


def _doc_metric(rec: Mapping) -> float | None:
    if rec.get("eta") != 1:
        return None
    execution = rec.get("execution")
    if not execution or execution.get("status") != "completed":
        return None
    for d in rec["feedback"]["diagnostics"]:
        if d["kind"] == "primary_metric":
            return d["payload"]["value"]
    return None


def _doc_best_previous(rec: Mapping) -> float | None:
    for d in rec["feedback"]["diagnostics"]:
        if d["kind"] == "delta_vs_best":
            return d["payload"].get("best_previous")
    return None


def emit_routing_record(rec: Mapping) -> dict:
    """Shape one iteration record as a routing record.

    Key order is fixed (see ROUTING_RECORD_KEYS / DIAGNOSTIC_KEYS).
    ``candidate_score`` and ``best_previous_score`` are omitted, not
    nulled, when the iteration produced no such number, so a rejected
    iteration carries a reduced diagnostic key set. ``revised_candidate``
    is null when no edit was legal. Records from runs with routing
    disabled have no routing data and raise MissingRoutingData.
    """
    if hasattr(rec, "to_doc"):
        rec = rec.to_doc()
    feedback = rec["feedback"]
    routing = rec.get("routing")
    edit = rec.get("edit")
    execution = rec.get("execution")
    if routing is None:
        raise MissingRoutingData(
            f"iteration {rec.get('iteration')} carries no routing decision"
        )
    dtype = routing["diagnostic_kind"]

    if execution is not None:
        status = "valid" if execution["status"] == "completed" else execution["status"]
    else:
        status = "rejected"

    chis = []
    structural = rec.get("structural")
    if structural is not None:
        chis.append(structural["chi"])
    if rec.get("chi_i") is not None:
        chis.append(rec["chi_i"])
    rule_status = (
        "unchecked" if not chis else ("passed" if all(c == 1 for c in chis) else "failed")
    )

    diagnostic: dict = {
        "type": dtype,
        "candidate": rec.get("candidate_name"),
        "execution_status": status,
        "rule_status": rule_status,
        "selection_metric": rec["selection_metric"],
    }
    score = _doc_metric(rec)
    if score is not None:
        diagnostic["candidate_score"] = score
    best_previous = _doc_best_previous(rec)
    if best_previous is not None:
        diagnostic["best_previous_score"] = best_previous
    diagnostic["verdict"] = feedback["verdict"]
    top = feedback["diagnostics"][0]
    diagnostic["summary"] = f"{feedback['verdict']}: {top['kind']}"

    routed_address = {
        "address_type": "typed_neighborhood"
        if routing["address"]["kind"] == "hyperedge"
        else "node",
        "editable_components": list(routing["editable_components"]),
        "routing_reason": routing["reason"],
    }
    allowed_edit = {
        "operation": routing["operation"],
        "protected_components": list(routing["protected_components"]),
    }

    revised_candidate = None
    if edit is not None:
        version = rec["hypothesis"].get("version", 0)
        before = rec["hypothesis"]["assignments"]
        moves = []
        for node in sorted(edit["changes"]):
            old = before.get(node, {}).get("option_id", "?")
            new = edit["changes"][node]["option_id"]
            moves.append(f"{node}: {old} -> {new}")
        revised_candidate = {
            "name": f"rev{version + 1}",
            "design_change": "; ".join(moves) if moves else "no-op",
            "intended_effect": routing["reason"],
        }

    # names of the checks the realization gate ran, in rule order
    lca_check = list(rec.get("lca_rules", []))

    return {
        "dataset": rec["dataset"],
        "iteration": rec["iteration"],
        "diagnostic": diagnostic,
        "routed_address": routed_address,
        "allowed_edit": allowed_edit,
        "revised_candidate": revised_candidate,
        "lca_check": lca_check,
    }


def validate_routing_record(doc: Mapping) -> None:
    """Raise CorruptRecord unless key presence and order match the shape."""
    keys = list(doc)
    if keys != list(ROUTING_RECORD_KEYS):
        raise CorruptRecord(f"routing record keys {keys} != {list(ROUTING_RECORD_KEYS)}")
    dkeys = list(doc["diagnostic"])
    allowed = [k for k in DIAGNOSTIC_KEYS if k in set(dkeys)]
    if dkeys != allowed:
        raise CorruptRecord(f"diagnostic keys out of order: {dkeys}")
    required = {"type", "candidate", "execution_status", "rule_status",
                "selection_metric", "verdict", "summary"}
    missing = required - set(dkeys)
    if missing:
        raise CorruptRecord(f"diagnostic missing keys: {sorted(missing)}")


def export_routing_records(records: Sequence[Mapping]) -> list[dict]:
    """Routing records for every routed iteration; unrouted ones skipped."""
    return [emit_routing_record(rec) for rec in records if rec.get("routing") is not None]


# --------------------------------------------------------------------------
# Audit
# --------------------------------------------------------------------------

_PHASE_RE = re.compile(
    r"^structural_check(?: hypothesis_repair)?"
    r"(?: propose realize(?: execute(?: naive_retry)* feedback| rejection_feedback)"
    r"| rejection_feedback)"
    r" memory_update route build_edit apply_edit topology_refine record$"
)


def audit_frontier(
    records: Sequence[Mapping], policy: SelectionPolicy
) -> list[tuple[int, float | None]]:
    """Retained-best frontier recomputed from serialized records."""
    out: list[tuple[int, float | None]] = []
    retained: float | None = None
    for rec in records:
        value = _doc_metric(rec)
        if value is not None and (retained is None or policy.better(value, retained)):
            retained = value
        out.append((rec["iteration"], retained))
    return out


def audit_selection(records: Sequence[Mapping], policy: SelectionPolicy) -> dict | None:
    best: dict | None = None
    for rec in records:
        value = _doc_metric(rec)
        if value is None:
            continue
        if best is None or policy.better(value, best["metric_value"]):
            digest = (rec.get("outcome") or {}).get("digest") or rec.get("proposed_digest") or ""
            best = {
                "iteration": rec["iteration"],
                "metric_value": value,
                "candidate_digest": digest,
                "candidate_name": rec.get("candidate_name") or "",
                "hypothesis": rec["hypothesis"],
            }
    return best


def audit_efficiency(records: Sequence[Mapping], policy: SelectionPolicy) -> dict:
    """Efficiency numbers recomputed from serialized records.

    Arithmetic mirrors the controller's summary exactly (same expressions,
    same record order), so matching outputs bit for bit is the check that
    the trace carries everything the summary claims.
    """
    total = len(records)
    completed = 0
    compliant = 0
    values: list[float] = []
    wall = 0.0
    for rec in records:
        if rec["feedback"]["verdict"].startswith("valid"):
            completed += 1
            chi_i = rec.get("chi_i")
            hard = sum(
                1
                for d in rec["feedback"]["diagnostics"]
                if d["kind"] == "rule_report" and d["severity"] == "hard"
            )
            if (chi_i is None or chi_i == 1) and hard == 0:
                compliant += 1
        value = _doc_metric(rec)
        if value is not None:
            values.append(value)
        wall += rec["durations"].get("total", 0.0)
    best: float | None = None
    for v in values:
        if best is None or policy.better(v, best):
            best = v
    return {
        "iterations": total,
        "completed": completed,
        "sr": completed / total if total else 0.0,
        "rsr": compliant / total if total else 0.0,
        "avg_metric": sum(values) / len(values) if values else None,
        "best_metric": best,
        "wall_time_s": wall,
    }


def audit_routing_stats(records: Sequence[Mapping]) -> dict:
    by_template: dict[str, int] = {}
    fallbacks = 0
    hyperedge = 0
    node = 0
    unrouted = 0
    for rec in records:
        routing = rec.get("routing")
        if routing is None:
            unrouted += 1
            continue
        template = routing.get("template_id") or "(fallback)"
        by_template[template] = by_template.get(template, 0) + 1
        if routing.get("fallback"):
            fallbacks += 1
        if routing["address"]["kind"] == "hyperedge":
            hyperedge += 1
        else:
            node += 1
    return {
        "by_template": dict(sorted(by_template.items())),
        "fallbacks": fallbacks,
        "hyperedge_addresses": hyperedge,
        "node_addresses": node,
        "unrouted": unrouted,
    }


def audit_compliance(read: TraceReadResult) -> dict:
    """Structural health of a trace.

    Checks header/footer presence, iteration contiguity, per-record phase
    order, split-hash constancy, and that every recorded edit was applied
    at the address its routing decision named; reports per-iteration chi
    values and verdicts.
    """
    phase_failures: list[int] = []
    address_mismatches: list[int] = []
    verdicts: dict[str, int] = {}
    split_hashes = set()
    per_iteration: list[dict] = []
    for rec in read.records:
        it = rec.get("iteration", -1)
        if not _PHASE_RE.match(" ".join(rec.get("phases", []))):
            phase_failures.append(it)
        v = rec["feedback"]["verdict"]
        verdicts[v] = verdicts.get(v, 0) + 1
        split_hashes.add(rec.get("split_hash"))
        routing = rec.get("routing")
        edit = rec.get("edit")
        if edit is not None and routing is not None:
            if edit["address"] != routing["address"]:
                address_mismatches.append(it)
        structural = rec.get("structural")
        per_iteration.append(
            {
                "iteration": it,
                "chi_h": structural["chi"] if structural is not None else None,
                "chi_i": rec.get("chi_i"),
                "eta": rec.get("eta"),
                "verdict": v,
                "repairs": rec.get("repairs_used", 0),
                "protected_components": (
                    list(routing["protected_components"]) if routing else []
                ),
            }
        )
    return {
        "has_header": read.header is not None,
        "has_footer": read.footer is not None,
        "records": len(read.records),
        "skipped_lines": len(read.skipped),
        "iteration_gaps": list(read.gaps),
        "phase_order_failures": phase_failures,
        "edit_address_mismatches": address_mismatches,
        "verdicts": dict(sorted(verdicts.items())),
        "split_hashes": sorted(h for h in split_hashes if h is not None),
        "per_iteration": per_iteration,
        "ok": (
            read.header is not None
            and not read.gaps
            and not phase_failures
            and not address_mismatches
            and not read.skipped
        ),
    }
