"""The refinement controller.

One iteration, in fixed line order: structural gate (with at most one
bounded hypothesis repair), propose, realize under the implementation
rules, then either execute + extract feedback + cache modules (admissible)
or record rejection feedback (memory untouched); route the feedback,
build and apply one local edit, refine the topology, append the record.
Every phase is tagged and timed in the record, so a trace proves the order
was honored.

After the loop: validation-based selection over admissible records
(earliest iteration wins ties), and optionally a single final evaluation
of the frozen selection on the held-out test view, which is never fed
back.

Ablation modes map onto toggles:

* M0 -- no rules, no routing, no repair, no edits.
* M1 -- M0 plus naive re-proposal on failure (retry count is config).
* M2 -- structural rules, topology maintenance, unrouted local edits.
* M3 -- M2 plus implementation rules and bounded repair.
* M4 -- M3 plus template routing (the full engine).
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import (
    BackendUnavailable,
    MalformedProposal,
    MissingMetric,
    NoAdmissibleCandidate,
    NoLegalEdit,
    TemplateMissing,
)
from .feedback import (
    Diagnostic,
    FeedbackVector,
    RoutingDecision,
    RoutingTemplate,
    build_edit,
    execute_candidate,
    extract_feedback,
    missing_metric_feedback,
    rejection_feedback,
    route,
)
from .hypothesis_state import Catalogs, HypothesisState, LocalEdit, apply_edit
from .proposers import ProposalContext, Proposer
from .realization import (
    ImplementationRuleSet,
    ModuleMemory,
    RealizationOutcome,
    cache_blocks,
    check_implementation,
    realize,
)
from .rules import AdmissibilityReport, StructuralRuleSet, check_structural
from .taskspec import TaskSpec
from .topology import RoutingAddress, Topology, refine_topology

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControllerBudget:
    iterations: int = 10
    repair_rounds: int = 5
    step_timeout: float = 18000.0
    run_timeout: float = 360000.0

    def to_doc(self) -> dict:
        return {
            "iterations": self.iterations,
            "repair_rounds": self.repair_rounds,
            "step_timeout": self.step_timeout,
            "run_timeout": self.run_timeout,
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "ControllerBudget":
        return ControllerBudget(
            iterations=doc.get("iterations", 10),
            repair_rounds=doc.get("repair_rounds", 5),
            step_timeout=doc.get("step_timeout", 18000.0),
            run_timeout=doc.get("run_timeout", 360000.0),
        )


@dataclass(frozen=True)
class SelectionPolicy:
    metric_id: str
    direction: str = "max"

    def better(self, value: float, incumbent: float | None) -> bool:
        if incumbent is None:
            return True
        return value > incumbent if self.direction == "max" else value < incumbent

    def to_doc(self) -> dict:
        return {"metric_id": self.metric_id, "direction": self.direction}

    @staticmethod
    def from_doc(doc: Mapping) -> "SelectionPolicy":
        return SelectionPolicy(doc["metric_id"], doc.get("direction", "max"))


EDIT_POLICIES = ("none", "random_walk", "routed")


@dataclass(frozen=True)
class ControllerConfig:
    mode: str = "M4"
    structural_rules: bool = True
    impl_rules: bool = True
    repair: bool = True
    edit_policy: str = "routed"
    refine: bool = True
    post_exec_check: bool = False
    naive_retries: int = 0
    seed: int = 0

    def to_doc(self) -> dict:
        return {
            "mode": self.mode,
            "structural_rules": self.structural_rules,
            "impl_rules": self.impl_rules,
            "repair": self.repair,
            "edit_policy": self.edit_policy,
            "refine": self.refine,
            "post_exec_check": self.post_exec_check,
            "naive_retries": self.naive_retries,
            "seed": self.seed,
        }


def mode_config(mode: str, seed: int = 0, naive_retries: int = 2) -> ControllerConfig:
    """Toggle bundle for one ablation variant."""
    table = {
        "M0": dict(structural_rules=False, impl_rules=False, repair=False,
                   edit_policy="none", refine=False, post_exec_check=False, naive_retries=0),
        "M1": dict(structural_rules=False, impl_rules=False, repair=False,
                   edit_policy="none", refine=False, post_exec_check=False,
                   naive_retries=naive_retries),
        "M2": dict(structural_rules=True, impl_rules=False, repair=False,
                   edit_policy="random_walk", refine=True, post_exec_check=True, naive_retries=0),
        "M3": dict(structural_rules=True, impl_rules=True, repair=True,
                   edit_policy="random_walk", refine=True, post_exec_check=False, naive_retries=0),
        "M4": dict(structural_rules=True, impl_rules=True, repair=True,
                   edit_policy="routed", refine=True, post_exec_check=False, naive_retries=0),
    }
    if mode not in table:
        raise ValueError(f"unknown mode {mode!r}")
    return ControllerConfig(mode=mode, seed=seed, **table[mode])


# --------------------------------------------------------------------------
# Run records
# --------------------------------------------------------------------------

RECORD_SCHEMA = "trace/1"


@dataclass(frozen=True)
class RunRecord:
    iteration: int
    dataset: str
    selection_metric: str
    split_hash: str
    hypothesis: dict
    structural: dict | None
    proposed_digest: str | None
    candidate_name: str | None
    outcome: dict | None
    chi_i: int | None
    execution: dict | None
    post_rule_report: dict | None
    feedback: dict
    eta: int
    routing: dict | None
    edit: dict | None
    edit_outcome: str
    phases: tuple[str, ...]
    durations: dict
    started_at: float
    repairs_used: int
    lca_rules: tuple[str, ...]
    mounted_views: tuple[str, ...]

    def to_doc(self) -> dict:
        return {
            "schema": RECORD_SCHEMA,
            "kind": "record",
            "iteration": self.iteration,
            "dataset": self.dataset,
            "selection_metric": self.selection_metric,
            "split_hash": self.split_hash,
            "hypothesis": self.hypothesis,
            "structural": self.structural,
            "proposed_digest": self.proposed_digest,
            "candidate_name": self.candidate_name,
            "outcome": self.outcome,
            "chi_i": self.chi_i,
            "execution": self.execution,
            "post_rule_report": self.post_rule_report,
            "feedback": self.feedback,
            "eta": self.eta,
            "routing": self.routing,
            "edit": self.edit,
            "edit_outcome": self.edit_outcome,
            "phases": list(self.phases),
            "durations": dict(self.durations),
            "started_at": self.started_at,
            "repairs_used": self.repairs_used,
            "lca_rules": list(self.lca_rules),
            "mounted_views": list(self.mounted_views),
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "RunRecord":
        return RunRecord(
            iteration=doc["iteration"],
            dataset=doc["dataset"],
            selection_metric=doc["selection_metric"],
            split_hash=doc["split_hash"],
            hypothesis=dict(doc["hypothesis"]),
            structural=doc.get("structural"),
            proposed_digest=doc.get("proposed_digest"),
            candidate_name=doc.get("candidate_name"),
            outcome=doc.get("outcome"),
            chi_i=doc.get("chi_i"),
            execution=doc.get("execution"),
            post_rule_report=doc.get("post_rule_report"),
            feedback=dict(doc["feedback"]),
            eta=doc["eta"],
            routing=doc.get("routing"),
            edit=doc.get("edit"),
            edit_outcome=doc.get("edit_outcome", "disabled"),
            phases=tuple(doc["phases"]),
            durations=dict(doc["durations"]),
            started_at=doc.get("started_at", 0.0),
            repairs_used=doc.get("repairs_used", 0),
            lca_rules=tuple(doc.get("lca_rules", ())),
            mounted_views=tuple(doc.get("mounted_views", ())),
        )

    # -- selection-facing views -------------------------------------------

    def completed(self) -> bool:
        return bool(self.execution) and self.execution["status"] == "completed"

    def valid(self) -> bool:
        """Executed and honored the report contract (verdict valid_*)."""
        return self.feedback["verdict"].startswith("valid")

    def metric_value(self) -> float | None:
        if self.eta != 1 or not self.completed():
            return None
        for d in self.feedback["diagnostics"]:
            if d["kind"] == "primary_metric":
                return d["payload"]["value"]
        return None

    def hard_feedback_violations(self) -> int:
        return sum(
            1
            for d in self.feedback["diagnostics"]
            if d["kind"] == "rule_report" and d["severity"] == "hard"
        )


@dataclass(frozen=True)
class Selection:
    iteration: int
    metric_value: float
    candidate_digest: str
    candidate_name: str
    hypothesis: dict

    def to_doc(self) -> dict:
        return {
            "iteration": self.iteration,
            "metric_value": self.metric_value,
            "candidate_digest": self.candidate_digest,
            "candidate_name": self.candidate_name,
            "hypothesis": self.hypothesis,
        }


@dataclass(frozen=True)
class EfficiencySummary:
    iterations: int
    completed: int
    sr: float
    rsr: float
    avg_metric: float | None
    best_metric: float | None
    wall_time_s: float

    def to_doc(self) -> dict:
        return {
            "iterations": self.iterations,
            "completed": self.completed,
            "sr": self.sr,
            "rsr": self.rsr,
            "avg_metric": self.avg_metric,
            "best_metric": self.best_metric,
            "wall_time_s": self.wall_time_s,
        }


def select_best(records: Sequence[RunRecord], policy: SelectionPolicy) -> Selection | None:
    """Best admissible executed record by validation metric; ties go to the
    earliest iteration. Absence (nothing admissible) is a value."""
    best: Selection | None = None
    for rec in records:
        value = rec.metric_value()
        if value is None:
            continue
        if best is None or policy.better(value, best.metric_value):
            digest = (rec.outcome or {}).get("digest") or rec.proposed_digest or ""
            best = Selection(
                iteration=rec.iteration,
                metric_value=value,
                candidate_digest=digest,
                candidate_name=rec.candidate_name or "",
                hypothesis=rec.hypothesis,
            )
    return best


def best_so_far(
    records: Sequence[RunRecord], policy: SelectionPolicy
) -> list[tuple[int, float | None]]:
    """Per-iteration frontier of the retained best validation metric.

    One point per record; iterations without an admissible metric carry
    the previous value, absent (None) before the first admissible one.
    """
    out: list[tuple[int, float | None]] = []
    retained: float | None = None
    for rec in records:
        value = rec.metric_value()
        if value is not None and (retained is None or policy.better(value, retained)):
            retained = value
        out.append((rec.iteration, retained))
    return out


def efficiency_metrics(
    records: Sequence[RunRecord], policy: SelectionPolicy
) -> EfficiencySummary:
    """SR, rule-compliant SR, average/best metric, and summed wall time.

    A run counts as successful only if its verdict is valid_*: a clean
    exit that broke the metric-report contract is still a failure.
    """
    total = len(records)
    completed = sum(1 for r in records if r.valid())
    compliant = sum(
        1
        for r in records
        if r.valid() and (r.chi_i is None or r.chi_i == 1) and r.hard_feedback_violations() == 0
    )
    values = [r.metric_value() for r in records]
    values = [v for v in values if v is not None]
    best: float | None = None
    for v in values:
        if policy.better(v, best):
            best = v
    return EfficiencySummary(
        iterations=total,
        completed=completed,
        sr=completed / total if total else 0.0,
        rsr=compliant / total if total else 0.0,
        avg_metric=sum(values) / len(values) if values else None,
        best_metric=best,
        wall_time_s=sum(r.durations.get("total", 0.0) for r in records),
    )


@dataclass(frozen=True)
class WorkflowResult:
    records: tuple[RunRecord, ...]
    selection: Selection | None
    reason: str
    efficiency: EfficiencySummary
    usage: dict
    final_hypothesis: dict
    trace_dir: str | None = None


# --------------------------------------------------------------------------
# The loop
# --------------------------------------------------------------------------

def _structural_rejection(report: AdmissibilityReport) -> FeedbackVector:
    diags = []
    for i, v in enumerate(report.violations):
        diags.append(
            Diagnostic(
                id=f"d{i}",
                kind="rule_report",
                payload={
                    "rule_id": v.rule_id,
                    "count": v.count,
                    "source": "structural",
                    "kind_hint": "regression",
                },
                severity=v.severity,
            )
        )
    if not diags:
        diags = [Diagnostic("d0", "rule_report", {"rule_id": "structural", "count": 0}, "hard")]
    return FeedbackVector(diagnostics=tuple(diags), verdict="proposed_rejected")


def _backend_failure_feedback(exc: Exception) -> FeedbackVector:
    return FeedbackVector(
        diagnostics=(
            Diagnostic(
                "d0",
                "rule_report",
                {
                    "rule_id": "backend",
                    "count": 1,
                    "detail": str(exc)[:300],
                    "kind_hint": "interface_failure",
                },
                severity="hard",
            ),
        ),
        verdict="proposed_rejected",
    )


def _random_walk_decision(t: Topology, seed: int, iteration: int) -> RoutingDecision:
    rng = random.Random(f"{seed}:{iteration}")
    target = rng.choice(sorted(t.nodes))
    return RoutingDecision(
        address=RoutingAddress(kind="node", target=target),
        template_id=None,
        diagnostic_kind="unrouted",
        editable_components=(target,),
        protected_components=(),
        operation="swap_local_option",
        reason="unrouted local move (routing disabled)",
        fallback=False,
        matched_diagnostics=(),
    )


def run_workflow(
    spec: TaskSpec,
    topology: Topology,
    catalogs: Catalogs,
    h0: HypothesisState,
    backend: Proposer,
    structural_rules: StructuralRuleSet | None = None,
    impl_rules: ImplementationRuleSet | None = None,
    templates: Sequence[RoutingTemplate] = (),
    budget: ControllerBudget = ControllerBudget(),
    config: ControllerConfig = ControllerConfig(),
    policy: SelectionPolicy | None = None,
    memory: ModuleMemory | None = None,
    trace=None,
) -> WorkflowResult:
    """Run the full refinement loop and select a candidate.

    ``trace`` is a TraceStore or None; records are appended as they are
    produced so a crashed run still leaves a valid prefix.
    """
    policy = policy or SelectionPolicy(spec.suite.selection_metric, spec.suite.direction)
    mem = memory or ModuleMemory()
    h = h0
    t = topology
    best: float | None = None
    records: list[RunRecord] = []
    tried: dict[str, set[str]] = {}
    split_hash = spec.split.content_hash()
    lca_rules = (
        impl_rules.rule_ids() if impl_rules is not None and config.impl_rules else ()
    )
    run_started = time.monotonic()
    reason = "ok"

    if trace is not None:
        trace.write_header(
            {
                "schema": RECORD_SCHEMA,
                "kind": "header",
                "dataset": spec.dataset,
                "policy": policy.to_doc(),
                "budget": budget.to_doc(),
                "config": config.to_doc(),
                "split_hash": split_hash,
                "backend": getattr(backend, "id", "unknown"),
            }
        )

    for iteration in range(budget.iterations):
        if time.monotonic() - run_started >= budget.run_timeout:
            reason = "run_timeout"
            break

        phases: list[str] = []
        durations: dict[str, float] = {}
        iter_started = time.monotonic()
        started_at = time.time()

        def phase(name: str):
            phases.append(name)
            return _PhaseTimer(durations, name)

        for v in sorted(h.assignments):
            tried.setdefault(v, set()).add(h.assignments[v].option_id)

        # -- structural gate ------------------------------------------------
        structural_doc: dict | None = None
        struct_report: AdmissibilityReport | None = None
        with phase("structural_check"):
            if structural_rules is not None and config.structural_rules:
                struct_report = check_structural(h, t, structural_rules)
        repaired = False
        repair_attempted = False
        if struct_report is not None and struct_report.chi == 0 and config.edit_policy != "none":
            with phase("hypothesis_repair"):
                repair_attempted = True
                h_fixed = _attempt_structural_repair(
                    h, t, catalogs, spec, struct_report, config.seed + iteration, tried, mem
                )
                if h_fixed is not None:
                    candidate_report = check_structural(h_fixed, t, structural_rules)
                    if candidate_report.chi == 1:
                        h = h_fixed
                        struct_report = candidate_report
                        repaired = True
        if struct_report is not None:
            structural_doc = {
                "chi": struct_report.chi,
                "report": struct_report.to_doc(),
                "repair_attempted": repair_attempted,
                "repaired": repaired,
            }
        # Snapshot before the end-of-iteration edit: the record states what
        # this iteration proposed from, not what the next one will.
        hypothesis_doc = h.to_doc()

        proposed_digest: str | None = None
        candidate_name: str | None = None
        outcome_doc: dict | None = None
        chi_i: int | None = None
        execution_doc: dict | None = None
        post_rule_doc: dict | None = None
        mounted: tuple[str, ...] = ()
        repairs_used = 0
        eta = 0
        fb: FeedbackVector

        if struct_report is not None and struct_report.chi == 0:
            # Unrepairable hypothesis consumes the iteration.
            with phase("rejection_feedback"):
                fb = _structural_rejection(struct_report)
            with phase("memory_update"):
                pass
        else:
            # -- propose ------------------------------------------------
            backend_error: Exception | None = None
            c0 = None
            with phase("propose"):
                try:
                    c0 = backend.propose(
                        ProposalContext(
                            hypothesis=h,
                            topology=t,
                            memory=mem,
                            spec=spec,
                            seed=config.seed + iteration,
                            iteration=iteration,
                        )
                    )
                except (BackendUnavailable, MalformedProposal, TemplateMissing) as exc:
                    backend_error = exc
                    log.warning("iteration %d: proposal failed: %s", iteration, exc)

            if c0 is None:
                with phase("realize"):
                    pass
                with phase("rejection_feedback"):
                    fb = _backend_failure_feedback(backend_error or RuntimeError("no proposal"))
                with phase("memory_update"):
                    pass
            else:
                proposed_digest = c0.digest()
                candidate_name = c0.name
                if trace is not None:
                    trace.artifacts.put(c0)

                # -- realize ---------------------------------------------
                with phase("realize"):
                    if impl_rules is not None and config.impl_rules:
                        outcome = realize(
                            c0,
                            h,
                            mem,
                            spec,
                            impl_rules,
                            backend,
                            repair_budget=budget.repair_rounds if config.repair else 0,
                            step_timeout=budget.step_timeout,
                        )
                    else:
                        outcome = RealizationOutcome("admissible", c0, 0, None)
                outcome_doc = outcome.to_doc()
                repairs_used = outcome.repairs_used
                if outcome.report is not None:
                    chi_i = outcome.report.chi

                if outcome.admissible:
                    assert outcome.candidate is not None
                    candidate = outcome.candidate
                    candidate_name = candidate.name
                    if trace is not None and candidate.digest() != proposed_digest:
                        trace.artifacts.put(candidate)
                    with phase("execute"):
                        rep = execute_candidate(candidate, spec, budget.step_timeout)
                        retries = 0
                        while rep.status != "completed" and retries < config.naive_retries:
                            retries += 1
                            phases.append("naive_retry")
                            try:
                                candidate = backend.propose(
                                    ProposalContext(
                                        hypothesis=h,
                                        topology=t,
                                        memory=mem,
                                        spec=spec,
                                        seed=config.seed + iteration + 1000 * retries,
                                        iteration=iteration,
                                        attempt=retries,
                                    )
                                )
                                candidate_name = candidate.name
                                if trace is not None:
                                    trace.artifacts.put(candidate)
                                rep = execute_candidate(candidate, spec, budget.step_timeout)
                            except (BackendUnavailable, MalformedProposal, TemplateMissing):
                                break
                    execution_doc = rep.to_doc()
                    mounted = rep.mounted_views

                    post_report = None
                    if config.post_exec_check and impl_rules is not None:
                        post_report = check_implementation(
                            candidate, spec, impl_rules, step_timeout=budget.step_timeout
                        )
                        post_rule_doc = post_report.to_doc()

                    with phase("feedback"):
                        try:
                            fb = extract_feedback(
                                h,
                                candidate,
                                rep,
                                spec.suite,
                                best,
                                realization_report=outcome.report,
                                post_rule_report=post_report,
                            )
                        except MissingMetric:
                            fb = missing_metric_feedback(rep, spec.suite)
                    with phase("memory_update"):
                        if rep.status == "completed":
                            mem = cache_blocks(mem, candidate)
                    eta = 1
                    value = fb.metric_value()
                    if value is not None and policy.better(value, best):
                        best = value
                else:
                    with phase("rejection_feedback"):
                        fb = rejection_feedback(h, c0, outcome.report)
                    with phase("memory_update"):
                        pass

        # -- route ------------------------------------------------------
        decision: RoutingDecision | None = None
        with phase("route"):
            if config.edit_policy == "routed":
                decision = route(fb, t, mem, templates)
            elif config.edit_policy == "random_walk":
                decision = _random_walk_decision(t, config.seed, iteration)

        # -- build edit ---------------------------------------------------
        edit: LocalEdit | None = None
        edit_outcome = "disabled"
        with phase("build_edit"):
            if decision is not None:
                protected = tuple(set(spec.protected_tags) | set(decision.protected_components))
                try:
                    edit = build_edit(
                        decision.address,
                        fb,
                        h,
                        t,
                        catalogs,
                        protected,
                        seed=config.seed + iteration,
                        tried={k: frozenset(v) for k, v in tried.items()},
                        mem=mem,
                    )
                    edit_outcome = "built"
                except NoLegalEdit:
                    edit_outcome = "no_legal_edit"
                    log.info("iteration %d: no legal edit at %s", iteration, decision.address)

        # -- apply edit ---------------------------------------------------
        with phase("apply_edit"):
            if edit is not None:
                h = apply_edit(h, edit, t, catalogs)
                edit_outcome = "applied"
                for v, a in edit.changes.items():
                    tried.setdefault(v, set()).add(a.option_id)

        # -- refine topology -----------------------------------------------
        with phase("topology_refine"):
            if config.refine and decision is not None:
                t = refine_topology(t, h, decision.address, catalogs)

        # -- append record ---------------------------------------------------
        phases.append("record")
        durations["total"] = time.monotonic() - iter_started
        rec = RunRecord(
            iteration=iteration,
            dataset=spec.dataset,
            selection_metric=policy.metric_id,
            split_hash=split_hash,
            hypothesis=hypothesis_doc,
            structural=structural_doc,
            proposed_digest=proposed_digest,
            candidate_name=candidate_name,
            outcome=outcome_doc,
            chi_i=chi_i,
            execution=execution_doc,
            post_rule_report=post_rule_doc,
            feedback=fb.to_doc(),
            eta=eta,
            routing=decision.to_doc() if decision is not None else None,
            edit=edit.to_doc() if edit is not None else None,
            edit_outcome=edit_outcome,
            phases=tuple(phases),
            durations=durations,
            started_at=started_at,
            repairs_used=repairs_used,
            lca_rules=tuple(lca_rules),
            mounted_views=mounted,
        )
        records.append(rec)
        if trace is not None:
            trace.append_record(rec.to_doc())

    selection = select_best(records, policy)
    if selection is None and reason == "ok":
        reason = "no_admissible_candidate"
    efficiency = efficiency_metrics(records, policy)
    usage = getattr(backend, "usage", None)
    usage_doc = usage.to_doc() if usage is not None else {}
    if trace is not None:
        trace.write_footer(
            {
                "schema": RECORD_SCHEMA,
                "kind": "footer",
                "reason": reason,
                "selection": selection.to_doc() if selection else None,
                "efficiency": efficiency.to_doc(),
                "usage": usage_doc,
            }
        )
    return WorkflowResult(
        records=tuple(records),
        selection=selection,
        reason=reason,
        efficiency=efficiency,
        usage=usage_doc,
        final_hypothesis=h.to_doc(),
        trace_dir=getattr(trace, "root", None),
    )


class _PhaseTimer:
    def __init__(self, sink: dict, name: str):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.started = time.monotonic()
        return self

    def __exit__(self, *exc):
        self.sink[self.name] = self.sink.get(self.name, 0.0) + (
            time.monotonic() - self.started
        )
        return False


def _attempt_structural_repair(
    h: HypothesisState,
    t: Topology,
    catalogs: Catalogs,
    spec: TaskSpec,
    report: AdmissibilityReport,
    seed: int,
    tried: Mapping[str, set[str]],
    mem: ModuleMemory,
) -> HypothesisState | None:
    """One bounded local repair at the first hard violation's node."""
    target: str | None = None
    for v in report.violations:
        if v.severity != "hard":
            continue
        for inst in v.instances:
            if inst.nodes:
                target = inst.nodes[0]
                break
        if target:
            break
    if target is None or target not in t.nodes:
        target = sorted(t.nodes)[0]
    address = RoutingAddress(kind="node", target=target)
    fb = _structural_rejection(report)
    try:
        edit = build_edit(
            address,
            fb,
            h,
            t,
            catalogs,
            spec.protected_tags,
            seed=seed,
            tried={k: frozenset(v) for k, v in tried.items()},
            mem=mem,
        )
        return apply_edit(h, edit, t, catalogs)
    except NoLegalEdit:
        return None


def final_evaluation(
    selection: Selection | None,
    spec: TaskSpec,
    artifacts,
    step_timeout: float = 18000.0,
) -> dict:
    """Run the frozen selection once with the test view mounted.

    The result is returned (and stored separately by callers); it is never
    appended to the refinement records and never routed.
    """
    if selection is None:
        raise NoAdmissibleCandidate("final evaluation requires a completed selection")
    candidate = artifacts.get(selection.candidate_digest)
    report = execute_candidate(
        candidate,
        spec,
        step_timeout,
        eval_split="test",
        views={"train": spec.train_view, "test": spec.test_view},
    )
    value = None
    if report.metric_report is not None:
        value = report.metric_report.get(spec.suite.selection_metric)
    return {
        "candidate_digest": selection.candidate_digest,
        "candidate_name": selection.candidate_name,
        "status": report.status,
        "split_tag": report.split_tag,
        "metric_value": value,
        "report": report.to_doc(),
    }
