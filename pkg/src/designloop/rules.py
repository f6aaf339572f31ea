"""Constraint rules and admissibility reports.

Two rule planes share one report shape:

* structural rules judge a (hypothesis, topology) pair before any code
  exists; hard violations zero out structural admissibility, soft ones
  only lower the topology score (weighted count, negated).
* implementation rules (defined in ``realization``) judge a candidate
  bundle; they reuse ``RuleViolation`` / ``AdmissibilityReport``.

A report never raises: admissibility is a value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .errors import UnknownOption
from .hypothesis_state import Catalogs, HypothesisState, OptionSpec, complete_for
from .topology import STAGE_INDEX, Topology, dataflow_pairs

HARD = "hard"
SOFT = "soft"

REPORT_SCHEMA = "lca/1"


@dataclass(frozen=True)
class ViolationInstance:
    nodes: tuple[str, ...] = ()
    detail: str = ""
    files: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {"nodes": list(self.nodes), "detail": self.detail, "files": list(self.files)}

    @staticmethod
    def from_doc(doc: Mapping) -> "ViolationInstance":
        return ViolationInstance(
            nodes=tuple(doc.get("nodes", ())),
            detail=doc.get("detail", ""),
            files=tuple(doc.get("files", ())),
        )


@dataclass(frozen=True)
class RuleViolation:
    rule_id: str
    severity: str
    count: int
    instances: tuple[ViolationInstance, ...] = ()

    def files(self) -> tuple[str, ...]:
        out: list[str] = []
        for inst in self.instances:
            for f in inst.files:
                if f not in out:
                    out.append(f)
        return tuple(out)

    def to_doc(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "severity": self.severity,
            "count": self.count,
            "instances": [i.to_doc() for i in self.instances],
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "RuleViolation":
        return RuleViolation(
            rule_id=doc["rule_id"],
            severity=doc["severity"],
            count=doc["count"],
            instances=tuple(ViolationInstance.from_doc(i) for i in doc.get("instances", ())),
        )


@dataclass(frozen=True)
class AdmissibilityReport:
    """Outcome of one rule-set evaluation: a 0/1 gate plus the full
    per-rule violation list (only rules that fired appear)."""

    chi: int
    violations: tuple[RuleViolation, ...]
    rules_checked: tuple[str, ...]

    def hard_violations(self) -> tuple[RuleViolation, ...]:
        return tuple(v for v in self.violations if v.severity == HARD)

    def to_doc(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "chi": self.chi,
            "violations": [v.to_doc() for v in self.violations],
            "rules_checked": list(self.rules_checked),
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "AdmissibilityReport":
        return AdmissibilityReport(
            chi=doc["chi"],
            violations=tuple(RuleViolation.from_doc(v) for v in doc["violations"]),
            rules_checked=tuple(doc["rules_checked"]),
        )


StructuralPredicate = Callable[[HypothesisState, Topology], Sequence[ViolationInstance]]


@dataclass(frozen=True)
class StructuralRule:
    id: str
    severity: str
    predicate: StructuralPredicate
    weight: float = 1.0


@dataclass(frozen=True)
class StructuralRuleSet:
    rules: tuple[StructuralRule, ...]

    def rule_ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.rules)


def evaluate_rules(
    h: HypothesisState, t: Topology, rs: StructuralRuleSet
) -> AdmissibilityReport:
    violations: list[RuleViolation] = []
    for rule in rs.rules:
        instances = tuple(rule.predicate(h, t))
        if instances:
            violations.append(
                RuleViolation(
                    rule_id=rule.id,
                    severity=rule.severity,
                    count=len(instances),
                    instances=instances,
                )
            )
    chi = 0 if any(v.severity == HARD for v in violations) else 1
    return AdmissibilityReport(
        chi=chi, violations=tuple(violations), rules_checked=rs.rule_ids()
    )


def check_structural(
    h: HypothesisState, t: Topology, rs: StructuralRuleSet
) -> AdmissibilityReport:
    """Gate a hypothesis against the structural rule set.

    Requires a complete assignment; evaluation itself never raises.
    """
    complete_for(h, t)
    return evaluate_rules(h, t, rs)


def topology_score(h: HypothesisState, t: Topology, rs: StructuralRuleSet) -> float:
    """Soft-rule guidance score: negated weighted violation count.

    Hard rules do not contribute; they gate through ``check_structural``.
    """
    complete_for(h, t)
    score = 0.0
    for rule in rs.rules:
        if rule.severity != SOFT:
            continue
        score -= rule.weight * len(rule.predicate(h, t))
    return score


# --------------------------------------------------------------------------
# Default structural rule families
# --------------------------------------------------------------------------

def _resolver(catalogs: Catalogs):
    def resolve(h: HypothesisState, t: Topology, v: str) -> OptionSpec:
        node = t.nodes[v]
        a = h.assignments[v]
        catalog = catalogs.get(node.node_type)
        opt = catalog.get(a.option_id) if catalog else None
        if opt is None:
            raise UnknownOption(f"option {a.option_id!r} unknown for {node.node_type!r}")
        return opt

    return resolve


def _stage_ordering(h: HypothesisState, t: Topology) -> list[ViolationInstance]:
    out = []
    for e in sorted(t.hyperedges.values(), key=lambda e: e.id):
        if e.relation_type not in ("dataflow", "stage_order"):
            continue
        for u, v in zip(e.members, e.members[1:]):
            su = STAGE_INDEX[t.nodes[u].node_type]
            sv = STAGE_INDEX[t.nodes[v].node_type]
            if su > sv:
                out.append(
                    ViolationInstance(
                        nodes=(u, v),
                        detail=f"edge {e.id}: {u} (stage {su}) precedes {v} (stage {sv})",
                    )
                )
    return out


def _leakage_prevention(h: HypothesisState, t: Topology) -> list[ViolationInstance]:
    out = []
    for u, v in dataflow_pairs(t):
        if t.nodes[u].node_type == "evaluation_adapter":
            out.append(
                ViolationInstance(
                    nodes=(u, v),
                    detail=f"dataflow from evaluation adapter {u} into {v}",
                )
            )
    return out


def _acyclic_dataflow(h: HypothesisState, t: Topology) -> list[ViolationInstance]:
    pairs = dataflow_pairs(t)
    succ: dict[str, set[str]] = {}
    for u, v in pairs:
        succ.setdefault(u, set()).add(v)
    out = []
    for start in sorted(t.nodes):
        # node is on a cycle iff it can reach itself through >= 1 hop
        seen: set[str] = set()
        stack = sorted(succ.get(start, ()))
        on_cycle = False
        while stack:
            cur = stack.pop()
            if cur == start:
                on_cycle = True
                break
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(sorted(succ.get(cur, ())))
        if on_cycle:
            out.append(ViolationInstance(nodes=(start,), detail=f"{start} lies on a dataflow cycle"))
    return out


REPRESENTATION_TYPES = ("perturbation_representation", "cellular_state_encoding")


def make_repr_loss_compatibility(catalogs: Catalogs) -> StructuralPredicate:
    resolve = _resolver(catalogs)

    def predicate(h: HypothesisState, t: Topology) -> list[ViolationInstance]:
        out = []
        provided: set[str] = set()
        for v in sorted(t.nodes):
            if t.nodes[v].node_type in REPRESENTATION_TYPES:
                for tag in resolve(h, t, v).tags:
                    if tag.startswith("provides:"):
                        provided.add(tag.split(":", 1)[1])
        for v in sorted(t.nodes):
            if t.nodes[v].node_type != "objective":
                continue
            for tag in sorted(resolve(h, t, v).tags):
                if tag.startswith("requires:"):
                    cap = tag.split(":", 1)[1]
                    if cap not in provided:
                        out.append(
                            ViolationInstance(
                                nodes=(v,),
                                detail=f"objective at {v} requires {cap!r}, no representation provides it",
                            )
                        )
        # direct incompatibilities across shared hyperedges
        for e in sorted(t.hyperedges.values(), key=lambda e: e.id):
            mem = sorted(set(e.members))
            for i, u in enumerate(mem):
                for v in mem[i + 1 :]:
                    ou, ov = resolve(h, t, u), resolve(h, t, v)
                    if f"incompatible:{ov.id}" in ou.tags or f"incompatible:{ou.id}" in ov.tags:
                        out.append(
                            ViolationInstance(
                                nodes=(u, v),
                                detail=f"options {ou.id!r} and {ov.id!r} incompatible on edge {e.id}",
                            )
                        )
        return out

    return predicate


def make_required_evaluation(catalogs: Catalogs, metric_ids: Sequence[str]) -> StructuralPredicate:
    resolve = _resolver(catalogs)
    required = tuple(metric_ids)

    def predicate(h: HypothesisState, t: Topology) -> list[ViolationInstance]:
        out = []
        for v in sorted(t.nodes):
            if t.nodes[v].node_type != "evaluation_adapter":
                continue
            covered = {
                tag.split(":", 1)[1] for tag in resolve(h, t, v).tags if tag.startswith("metric:")
            }
            for mid in required:
                if mid not in covered:
                    out.append(
                        ViolationInstance(
                            nodes=(v,),
                            detail=f"evaluation adapter {v} does not cover metric {mid!r}",
                        )
                    )
        return out

    return predicate


def default_structural_rules(
    catalogs: Catalogs,
    metric_ids: Sequence[str],
    weights: Mapping[str, float] | None = None,
    severities: Mapping[str, str] | None = None,
) -> StructuralRuleSet:
    """The five shipped rule families. Weights and severities may be
    overridden per rule id; defaults keep ordering and compatibility soft."""
    weights = dict(weights or {})
    severities = dict(severities or {})
    spec = [
        ("stage_ordering", SOFT, _stage_ordering),
        ("leakage_prevention", HARD, _leakage_prevention),
        ("acyclic_dataflow", HARD, _acyclic_dataflow),
        ("repr_loss_compatibility", SOFT, make_repr_loss_compatibility(catalogs)),
        ("required_evaluation", HARD, make_required_evaluation(catalogs, metric_ids)),
    ]
    return StructuralRuleSet(
        rules=tuple(
            StructuralRule(
                id=rid,
                severity=severities.get(rid, sev),
                predicate=pred,
                weight=weights.get(rid, 1.0),
            )
            for rid, sev, pred in spec
        )
    )
