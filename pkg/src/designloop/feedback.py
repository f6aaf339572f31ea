"""Execution feedback and its routing back into the design space.

A finished (or failed) run is condensed into a FeedbackVector: an ordered
list of typed diagnostics plus a closed-vocabulary verdict. Routing picks
the highest-priority template whose kind matches a present diagnostic and
maps its editable region onto concrete topology nodes, preferring a single
hyperedge that covers them. The routed address plus the template's
protected set then determine one concrete local edit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import MissingMetric, NoLegalEdit
from .hypothesis_state import (
    Assignment,
    Catalogs,
    HypothesisState,
    LocalEdit,
    default_assignment,
)
from .realization import CandidateImplementation, ModuleMemory, alignment_score
from .rules import HARD, AdmissibilityReport, RuleViolation
from .sandbox import SandboxResult, has_nonfinite, run_sandboxed
from .taskspec import EvaluationSuite, TaskSpec
from .topology import RoutingAddress, Topology, neighborhood

log = logging.getLogger(__name__)

EXECUTION_STATUSES = ("completed", "crashed", "timed_out")

VERDICTS = (
    "proposed_rejected",
    "crashed",
    "valid_improved",
    "valid_but_regressed",
    "valid_retained",
)

CORE_DIAGNOSTIC_KINDS = (
    "execution_status",
    "rule_report",
    "primary_metric",
    "delta_vs_best",
    "alignment",
)

# Template-facing failure kinds a rule id or crash maps onto.
DEFAULT_KIND_HINTS: Mapping[str, str] = {
    "interface_check": "interface_failure",
    "shape_check": "interface_failure",
    "leakage_check": "interface_failure",
    "split_check": "interface_failure",
    "outputs_check": "interface_failure",
    "metric_completeness": "metric_missing",
    "numerics_check": "validation_collapse",
    # structural families, for rejection-before-proposal records
    "required_evaluation": "metric_missing",
    "leakage_prevention": "batch_shortcut_risk",
    "acyclic_dataflow": "interface_failure",
    "stage_ordering": "regression",
    "repr_loss_compatibility": "validation_collapse",
}


@dataclass(frozen=True)
class ExecutionReport:
    status: str
    wall_time: float
    metric_report: Mapping[str, float] | None
    split_tag: str | None
    stdout_tail: str
    stderr_tail: str
    artifacts_digest: str
    mounted_views: tuple[str, ...]
    detail: str = ""

    def __post_init__(self) -> None:
        if self.status not in EXECUTION_STATUSES:
            raise ValueError(f"unknown execution status {self.status!r}")
        if (self.metric_report is not None) != (self.status == "completed"):
            raise ValueError("metric report present iff status is completed")

    def to_doc(self) -> dict:
        return {
            "status": self.status,
            "wall_time": self.wall_time,
            "metric_report": dict(sorted(self.metric_report.items()))
            if self.metric_report is not None
            else None,
            "split_tag": self.split_tag,
            "stdout_tail": self.stdout_tail,
            "stderr_tail": self.stderr_tail,
            "artifacts_digest": self.artifacts_digest,
            "mounted_views": list(self.mounted_views),
            "detail": self.detail,
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "ExecutionReport":
        return ExecutionReport(
            status=doc["status"],
            wall_time=doc["wall_time"],
            metric_report=dict(doc["metric_report"]) if doc["metric_report"] is not None else None,
            split_tag=doc.get("split_tag"),
            stdout_tail=doc.get("stdout_tail", ""),
            stderr_tail=doc.get("stderr_tail", ""),
            artifacts_digest=doc.get("artifacts_digest", ""),
            mounted_views=tuple(doc.get("mounted_views", ())),
            detail=doc.get("detail", ""),
        )


def execute_candidate(
    c: CandidateImplementation,
    spec: TaskSpec,
    step_timeout: float,
    eval_split: str = "validation",
    views: Mapping[str, str | None] | None = None,
) -> ExecutionReport:
    """Run a candidate against the refinement views.

    The test view is mounted only when the caller passes it explicitly
    (final evaluation); the default views are train and val. A process
    that exits cleanly but breaks the metric-report contract counts as
    crashed: a report exists iff the run completed.
    """
    if views is None:
        views = {"train": spec.train_view, "val": spec.val_view}
    result = run_sandboxed(
        files=c.files,
        entrypoint=c.entrypoint,
        views=views,
        timeout=step_timeout,
        eval_split=eval_split,
    )
    status = result.status
    metrics = result.metrics
    detail = result.report_error or ""
    if status == "completed" and metrics is not None:
        bad = has_nonfinite(metrics)
        if bad:
            status, metrics, detail = "crashed", None, f"non-finite metrics: {bad}"
    if status != "completed":
        metrics = None
    return ExecutionReport(
        status=status,
        wall_time=result.wall_time,
        metric_report=metrics,
        split_tag=result.split_tag if status == "completed" else None,
        stdout_tail=result.stdout_tail,
        stderr_tail=result.stderr_tail,
        artifacts_digest=result.artifacts_digest,
        mounted_views=result.mounted_views,
        detail=detail,
    )


# --------------------------------------------------------------------------
# Diagnostics and feedback vectors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    id: str
    kind: str
    payload: Mapping
    severity: str = "info"

    def kind_hints(self) -> tuple[str, ...]:
        hints = [self.kind]
        hint = self.payload.get("kind_hint")
        if isinstance(hint, str):
            hints.append(hint)
        return tuple(hints)

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "payload": dict(self.payload),
            "severity": self.severity,
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "Diagnostic":
        return Diagnostic(
            id=doc["id"], kind=doc["kind"], payload=dict(doc["payload"]), severity=doc["severity"]
        )


@dataclass(frozen=True)
class FeedbackVector:
    diagnostics: tuple[Diagnostic, ...]
    verdict: str

    def __post_init__(self) -> None:
        if not self.diagnostics:
            raise ValueError("feedback vector needs at least one diagnostic")
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")

    def find(self, kind: str) -> Diagnostic | None:
        for d in self.diagnostics:
            if d.kind == kind:
                return d
        return None

    def metric_value(self) -> float | None:
        d = self.find("primary_metric")
        return None if d is None else d.payload.get("value")

    def hard_rule_violations(self) -> tuple[Diagnostic, ...]:
        return tuple(
            d for d in self.diagnostics if d.kind == "rule_report" and d.severity == HARD
        )

    def to_doc(self) -> dict:
        return {"diagnostics": [d.to_doc() for d in self.diagnostics], "verdict": self.verdict}

    @staticmethod
    def from_doc(doc: Mapping) -> "FeedbackVector":
        return FeedbackVector(
            diagnostics=tuple(Diagnostic.from_doc(d) for d in doc["diagnostics"]),
            verdict=doc["verdict"],
        )


def _rule_diagnostics(
    violations: Sequence[RuleViolation], start: int, source: str
) -> list[Diagnostic]:
    out = []
    for i, v in enumerate(violations):
        out.append(
            Diagnostic(
                id=f"d{start + i}",
                kind="rule_report",
                payload={
                    "rule_id": v.rule_id,
                    "count": v.count,
                    "source": source,
                    "kind_hint": DEFAULT_KIND_HINTS.get(v.rule_id, "regression"),
                    "details": [inst.detail for inst in v.instances[:4]],
                },
                severity=v.severity,
            )
        )
    return out


def extract_feedback(
    h: HypothesisState,
    c: CandidateImplementation,
    rep: ExecutionReport,
    suite: EvaluationSuite,
    best_previous: float | None,
    realization_report: AdmissibilityReport | None = None,
    post_rule_report: AdmissibilityReport | None = None,
) -> FeedbackVector:
    """Condense one executed candidate into an ordered diagnostic vector.

    Order is fixed: execution status, rule reports, primary metric, delta
    vs best, alignment, then suite plug-ins in registration order. Raises
    MissingMetric when a completed report lacks the selection metric.
    """
    diags: list[Diagnostic] = []
    status_payload: dict = {"status": rep.status, "wall_time": rep.wall_time}
    if rep.status != "completed":
        status_payload["kind_hint"] = "interface_failure"
        if rep.detail:
            status_payload["detail"] = rep.detail
        if rep.stderr_tail:
            status_payload["stderr_tail"] = rep.stderr_tail[-400:]
        diags.append(Diagnostic("d0", "execution_status", status_payload, severity=HARD))
        return FeedbackVector(diagnostics=tuple(diags), verdict="crashed")

    diags.append(Diagnostic("d0", "execution_status", status_payload))
    carried: list[RuleViolation] = []
    if realization_report is not None:
        carried.extend(realization_report.violations)
    if post_rule_report is not None:
        carried.extend(post_rule_report.violations)
    diags.extend(_rule_diagnostics(carried, start=len(diags), source="realization"))

    assert rep.metric_report is not None
    if suite.selection_metric not in rep.metric_report:
        raise MissingMetric(
            f"selection metric {suite.selection_metric!r} absent from report"
        )
    value = rep.metric_report[suite.selection_metric]
    diags.append(
        Diagnostic(
            f"d{len(diags)}",
            "primary_metric",
            {"metric": suite.selection_metric, "value": value},
        )
    )

    delta: float | None = None
    if best_previous is not None:
        signed = value - best_previous
        delta = signed if suite.direction == "max" else -signed
        payload: dict = {"value": delta, "best_previous": best_previous}
        if delta < 0:
            payload["kind_hint"] = "regression"
        diags.append(Diagnostic(f"d{len(diags)}", "delta_vs_best", payload))

    diags.append(
        Diagnostic(f"d{len(diags)}", "alignment", {"value": alignment_score(c, h)})
    )

    for plugin in suite.plugins:
        payload = plugin.trigger(rep.metric_report)
        if payload is not None:
            diags.append(Diagnostic(f"d{len(diags)}", plugin.kind, payload, severity="warn"))

    if delta is not None and delta < 0:
        verdict = "valid_but_regressed"
    elif best_previous is None or (
        value > best_previous if suite.direction == "max" else value < best_previous
    ):
        verdict = "valid_improved"
    else:
        verdict = "valid_retained"
    return FeedbackVector(diagnostics=tuple(diags), verdict=verdict)


def rejection_feedback(
    h: HypothesisState,
    c0: CandidateImplementation | None,
    report: AdmissibilityReport,
) -> FeedbackVector:
    """Feedback for a candidate that never reached execution: its final
    violation list, verdict proposed_rejected, no metric diagnostics."""
    diags = _rule_diagnostics(report.violations, start=0, source="rejection")
    if not diags:
        diags = [
            Diagnostic(
                "d0",
                "rule_report",
                {"rule_id": "unknown", "count": 0, "kind_hint": "interface_failure"},
                severity=HARD,
            )
        ]
    return FeedbackVector(diagnostics=tuple(diags), verdict="proposed_rejected")


def missing_metric_feedback(rep: ExecutionReport, suite: EvaluationSuite) -> FeedbackVector:
    """Completed run whose report lacks the selection metric: a
    report-contract failure, routed like an execution failure."""
    diag = Diagnostic(
        "d0",
        "metric_missing",
        {
            "metric": suite.selection_metric,
            "present": sorted(rep.metric_report or {}),
            "kind_hint": "metric_missing",
        },
        severity=HARD,
    )
    status = Diagnostic(
        "d1", "execution_status", {"status": rep.status, "wall_time": rep.wall_time}
    )
    return FeedbackVector(diagnostics=(diag, status), verdict="crashed")


# --------------------------------------------------------------------------
# Routing templates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RoutingTemplate:
    id: str
    priority: int  # unique; lower wins
    diagnostic_kind: str
    editable_node_types: tuple[str, ...]
    editable_components: tuple[str, ...]
    protected_components: tuple[str, ...]
    operation: str
    reason: str

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "priority": self.priority,
            "diagnostic_kind": self.diagnostic_kind,
            "editable_node_types": list(self.editable_node_types),
            "editable_components": list(self.editable_components),
            "protected_components": list(self.protected_components),
            "operation": self.operation,
            "reason": self.reason,
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "RoutingTemplate":
        return RoutingTemplate(
            id=doc["id"],
            priority=doc["priority"],
            diagnostic_kind=doc["diagnostic_kind"],
            editable_node_types=tuple(doc["editable_node_types"]),
            editable_components=tuple(doc["editable_components"]),
            protected_components=tuple(doc["protected_components"]),
            operation=doc["operation"],
            reason=doc["reason"],
        )


def default_templates() -> tuple[RoutingTemplate, ...]:
    """Shipped routing table, highest priority first."""
    return (
        RoutingTemplate(
            id="tmpl_interface",
            priority=1,
            diagnostic_kind="interface_failure",
            editable_node_types=("data_adapter",),
            editable_components=("data_adapter", "implementation_interface"),
            protected_components=("dataset_split", "target_definition", "evaluation_metrics"),
            operation="repair_data_interface",
            reason="interface or execution fault implicates the data adapter seam",
        ),
        RoutingTemplate(
            id="tmpl_metric",
            priority=2,
            diagnostic_kind="metric_missing",
            editable_node_types=("evaluation_adapter",),
            editable_components=("evaluation_adapter",),
            protected_components=("evaluation_metrics", "validation_protocol", "test_protocol"),
            operation="complete_metric_reporting",
            reason="metric report incomplete; reporting adapter needs revision",
        ),
        RoutingTemplate(
            id="tmpl_collapse",
            priority=3,
            diagnostic_kind="validation_collapse",
            editable_node_types=("fusion", "architecture", "objective", "training_strategy"),
            editable_components=("fusion_module", "decoder", "objective", "training_strategy"),
            protected_components=("dataset_split", "target_definition", "output_space"),
            operation="strengthen_state_conditioning",
            reason="predictions collapsed on validation; conditioning path too weak",
        ),
        RoutingTemplate(
            id="tmpl_sensitivity",
            priority=4,
            diagnostic_kind="weak_perturbation_sensitivity",
            editable_node_types=("perturbation_representation", "fusion"),
            editable_components=("perturbation_encoding", "dose_encoding", "fusion_edge"),
            protected_components=("evaluation_metrics", "response_feature_definition"),
            operation="amplify_perturbation_signal",
            reason="outputs barely move with the perturbation input",
        ),
        RoutingTemplate(
            id="tmpl_identity",
            priority=5,
            diagnostic_kind="identity_preservation_failure",
            editable_node_types=("architecture", "cellular_state_encoding", "fusion"),
            editable_components=(
                "model_architecture",
                "encoder_state_representation",
                "decoder_input",
                "fusion_module",
            ),
            protected_components=(
                "dataset_split",
                "target_definition",
                "feature_preprocessing",
                "validation_protocol",
                "evaluation_metrics",
                "test_protocol",
            ),
            operation="test_reference_aware_decoder_path",
            reason="outputs lose the input cell state; decoder path ignores the reference",
        ),
        RoutingTemplate(
            id="tmpl_shortcut",
            priority=6,
            diagnostic_kind="batch_shortcut_risk",
            editable_node_types=(
                "perturbation_representation",
                "cellular_state_encoding",
                "training_strategy",
            ),
            editable_components=("representation", "training_regularization"),
            protected_components=("leakage_checks", "test_protocol"),
            operation="regularize_against_batch_shortcut",
            reason="metric gains track batch identity rather than biology",
        ),
        RoutingTemplate(
            id="tmpl_regression",
            priority=7,
            diagnostic_kind="regression",
            editable_node_types=(
                "preprocessing",
                "perturbation_representation",
                "cellular_state_encoding",
                "fusion",
                "architecture",
                "objective",
                "training_strategy",
            ),
            editable_components=("local_design_choice",),
            protected_components=(
                "dataset_split",
                "target_definition",
                "validation_protocol",
                "evaluation_metrics",
                "test_protocol",
            ),
            operation="swap_local_option",
            reason="score regressed without a more specific failure signature",
        ),
    )


@dataclass(frozen=True)
class RoutingDecision:
    address: RoutingAddress
    template_id: str | None
    diagnostic_kind: str
    editable_components: tuple[str, ...]
    protected_components: tuple[str, ...]
    operation: str
    reason: str
    fallback: bool
    matched_diagnostics: tuple[str, ...]

    def to_doc(self) -> dict:
        return {
            "address": self.address.to_doc(),
            "template_id": self.template_id,
            "diagnostic_kind": self.diagnostic_kind,
            "editable_components": list(self.editable_components),
            "protected_components": list(self.protected_components),
            "operation": self.operation,
            "reason": self.reason,
            "fallback": self.fallback,
            "matched_diagnostics": list(self.matched_diagnostics),
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "RoutingDecision":
        return RoutingDecision(
            address=RoutingAddress.from_doc(doc["address"]),
            template_id=doc["template_id"],
            diagnostic_kind=doc["diagnostic_kind"],
            editable_components=tuple(doc["editable_components"]),
            protected_components=tuple(doc["protected_components"]),
            operation=doc["operation"],
            reason=doc["reason"],
            fallback=doc["fallback"],
            matched_diagnostics=tuple(doc["matched_diagnostics"]),
        )


def _covering_hyperedge(t: Topology, nodes: set[str]) -> str | None:
    candidates = [
        e for e in t.hyperedges.values() if nodes <= set(e.members)
    ]
    if not candidates:
        return None
    candidates.sort(key=lambda e: (len(e.members), e.id))
    return candidates[0].id


def _fallback_address(t: Topology) -> RoutingAddress:
    arch = sorted(v for v in t.nodes if t.nodes[v].node_type == "architecture")
    target = arch[0] if arch else sorted(t.nodes)[0]
    return RoutingAddress(kind="node", target=target)


def route(
    m: FeedbackVector,
    t: Topology,
    mem: ModuleMemory,
    templates: Sequence[RoutingTemplate],
) -> RoutingDecision:
    """Pick the edit address for a feedback vector.

    Highest-priority template whose kind matches a present diagnostic (or
    a diagnostic's kind hint) wins; its editable node types are mapped to
    concrete nodes, preferring one covering hyperedge (smallest member
    count, ties by edge id), else the lowest matched node id. With no
    match, the decision falls back to the architecture node and says so.
    """
    present: dict[str, list[str]] = {}
    for d in m.diagnostics:
        for kind in d.kind_hints():
            present.setdefault(kind, []).append(d.id)

    for tmpl in sorted(templates, key=lambda x: x.priority):
        if tmpl.diagnostic_kind not in present:
            continue
        matched = [
            v
            for v in sorted(t.nodes)
            if t.nodes[v].node_type in tmpl.editable_node_types
        ]
        if not matched:
            continue
        edge_id = _covering_hyperedge(t, set(matched))
        if edge_id is not None and len(matched) > 1:
            address = RoutingAddress(kind="hyperedge", target=edge_id)
        else:
            address = RoutingAddress(kind="node", target=matched[0])
        return RoutingDecision(
            address=address,
            template_id=tmpl.id,
            diagnostic_kind=tmpl.diagnostic_kind,
            editable_components=tmpl.editable_components,
            protected_components=tmpl.protected_components,
            operation=tmpl.operation,
            reason=tmpl.reason,
            fallback=False,
            matched_diagnostics=tuple(present[tmpl.diagnostic_kind]),
        )

    address = _fallback_address(t)
    log.info("route: no template matched; falling back to %s", address.target)
    return RoutingDecision(
        address=address,
        template_id=None,
        diagnostic_kind="no_template_match",
        editable_components=(address.target,),
        protected_components=(),
        operation="swap_local_option",
        reason="no routing template matched the present diagnostics",
        fallback=True,
        matched_diagnostics=(),
    )


# --------------------------------------------------------------------------
# Edit construction
# --------------------------------------------------------------------------

def _realized_protected(
    h: HypothesisState, t: Topology, catalogs: Catalogs, v: str
) -> set[str]:
    node = t.nodes[v]
    catalog = catalogs.get(node.node_type)
    opt = catalog.get(h.assignments[v].option_id) if catalog else None
    if opt is None:
        return set()
    return {tag.split(":", 1)[1] for tag in opt.tags if tag.startswith("realizes:")}


def build_edit(
    a: RoutingAddress,
    m: FeedbackVector,
    h: HypothesisState,
    t: Topology,
    catalogs: Catalogs,
    protected: Sequence[str],
    seed: int,
    tried: Mapping[str, frozenset[str]] | None = None,
    mem: ModuleMemory | None = None,
) -> LocalEdit:
    """One concrete edit at the routed address.

    Nodes whose current option realizes a protected component are frozen.
    A hyperedge address moves every editable member jointly; a node
    address moves the addressed node (or its lowest editable neighbor).
    Option choice rotates through untried options by seed, preferring ones
    with cached blocks, and settles on the lowest option id once all have
    been tried. Raises NoLegalEdit when nothing may move.
    """
    tried = tried or {}
    protected_set = set(protected)
    reach = neighborhood(t, a)

    def alternatives(v: str) -> list[str]:
        catalog = catalogs.get(t.nodes[v].node_type)
        if catalog is None:
            return []
        return [o for o in catalog.option_ids() if o != h.assignments[v].option_id]

    editable = []
    for v in reach:
        if _realized_protected(h, t, catalogs, v) & protected_set:
            continue
        if not alternatives(v):
            continue
        editable.append(v)
    if not editable:
        raise NoLegalEdit(f"no editable node in the reach of {a.kind} {a.target!r}")

    if a.kind == "hyperedge":
        targets = editable
    else:
        targets = [a.target] if a.target in editable else [editable[0]]

    changes: dict[str, Assignment] = {}
    for v in targets:
        alts = alternatives(v)
        untried = [o for o in alts if o not in tried.get(v, frozenset())]
        pool = untried if untried else alts

        def preference(option_id: str) -> tuple:
            cached = bool(mem and mem.find_by_tag(option_id))
            return (0 if cached else 1, option_id)

        pool = sorted(pool, key=preference)
        choice = pool[seed % len(pool)] if untried else pool[0]
        catalog = catalogs[t.nodes[v].node_type]
        opt = catalog.get(choice)
        assert opt is not None
        changes[v] = default_assignment(opt)

    return LocalEdit(
        address=a,
        changes=changes,
        justification=tuple(d.id for d in m.diagnostics),
    )
