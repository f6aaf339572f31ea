"""Constrained realization of a hypothesis as an executable bundle.

A backend proposes a candidate (named files + a manifest claiming which
option each node got). The candidate is admitted only if it clears the
implementation rule set; hard violations trigger bounded repair rounds in
which the backend may rewrite only the files the violations name. A
candidate that cannot be repaired within budget is Rejected -- a value the
controller records, never an exception.

Reusable module blocks are fenced with marker comments::

    #<<block id=NAME sig={...signature json...}>>
    ...body...
    #<<end>>

and cached in a bounded, least-recently-reused memory keyed by interface
signature.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

from . import canonical, sandbox
from .errors import (
    BackendUnavailable,
    FixtureMissing,
    MalformedBlockMarker,
    MalformedProposal,
    ManifestMismatch,
    TemplateMissing,
)
from .rules import HARD, SOFT, AdmissibilityReport, RuleViolation, ViolationInstance

if TYPE_CHECKING:
    from .hypothesis_state import HypothesisState
    from .taskspec import TaskSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Provenance:
    proposer_id: str
    attempt: int = 0

    def to_doc(self) -> dict:
        return {"proposer_id": self.proposer_id, "attempt": self.attempt}

    @staticmethod
    def from_doc(doc: Mapping) -> "Provenance":
        return Provenance(doc["proposer_id"], doc.get("attempt", 0))


@dataclass(frozen=True)
class CandidateImplementation:
    name: str
    files: Mapping[str, str]
    manifest: Mapping[str, str]  # node id -> option id, the backend's claim
    entrypoint: str
    provenance: Provenance

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "files": {k: self.files[k] for k in sorted(self.files)},
            "manifest": {k: self.manifest[k] for k in sorted(self.manifest)},
            "entrypoint": self.entrypoint,
            "provenance": self.provenance.to_doc(),
        }

    def digest(self) -> str:
        return canonical.digest(self.to_doc())

    @staticmethod
    def from_doc(doc: Mapping) -> "CandidateImplementation":
        return CandidateImplementation(
            name=doc["name"],
            files=dict(doc["files"]),
            manifest=dict(doc["manifest"]),
            entrypoint=doc["entrypoint"],
            provenance=Provenance.from_doc(doc["provenance"]),
        )


# --------------------------------------------------------------------------
# Interface signatures and block markers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InterfaceSignature:
    inputs: tuple[tuple[str, str], ...]
    outputs: tuple[tuple[str, str], ...]
    task_tags: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {
            "inputs": [list(p) for p in self.inputs],
            "outputs": [list(p) for p in self.outputs],
            "task_tags": sorted(self.task_tags),
        }

    def canonical_text(self) -> str:
        return canonical.dumps(self.to_doc())

    @staticmethod
    def from_doc(doc: Mapping) -> "InterfaceSignature":
        return InterfaceSignature(
            inputs=tuple((p[0], p[1]) for p in doc["inputs"]),
            outputs=tuple((p[0], p[1]) for p in doc["outputs"]),
            task_tags=tuple(doc.get("task_tags", ())),
        )

    @staticmethod
    def from_text(text: str) -> "InterfaceSignature":
        return InterfaceSignature.from_doc(canonical.loads(text))


_BLOCK_OPEN = re.compile(r"^#<<block id=(?P<id>[A-Za-z0-9_.\-]+) sig=(?P<sig>\{.*\})>>\s*$")
_BLOCK_END = "#<<end>>"


@dataclass(frozen=True)
class CodeBlock:
    name: str
    signature: InterfaceSignature
    body: str

    def render(self) -> str:
        return (
            f"#<<block id={self.name} sig={self.signature.canonical_text()}>>\n"
            f"{self.body}\n"
            f"{_BLOCK_END}"
        )


def parse_blocks(text: str, filename: str = "<text>") -> list[CodeBlock]:
    """Extract marker-fenced blocks; bad nesting or signatures raise
    MalformedBlockMarker."""
    blocks: list[CodeBlock] = []
    open_name: str | None = None
    open_sig: InterfaceSignature | None = None
    body: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = _BLOCK_OPEN.match(stripped)
        if m:
            if open_name is not None:
                raise MalformedBlockMarker(f"{filename}:{lineno}: nested block marker")
            try:
                open_sig = InterfaceSignature.from_text(m.group("sig"))
            except Exception as exc:
                raise MalformedBlockMarker(f"{filename}:{lineno}: bad signature: {exc}") from exc
            open_name = m.group("id")
            body = []
            continue
        if stripped == _BLOCK_END:
            if open_name is None:
                raise MalformedBlockMarker(f"{filename}:{lineno}: end marker without open")
            assert open_sig is not None
            blocks.append(CodeBlock(open_name, open_sig, "\n".join(body)))
            open_name, open_sig = None, None
            continue
        if stripped.startswith("#<<block"):
            raise MalformedBlockMarker(f"{filename}:{lineno}: unparseable block marker")
        if open_name is not None:
            body.append(line)
    if open_name is not None:
        raise MalformedBlockMarker(f"{filename}: block {open_name!r} never closed")
    return blocks


@dataclass(frozen=True)
class MemoryBlock:
    block: CodeBlock
    added_at: int
    last_used: int

    def to_doc(self) -> dict:
        return {
            "name": self.block.name,
            "signature": self.block.signature.to_doc(),
            "body": self.block.body,
            "added_at": self.added_at,
            "last_used": self.last_used,
        }


@dataclass(frozen=True)
class ModuleMemory:
    """Bounded cache of validated blocks keyed by interface signature.

    Pure value: insertion and touch return new instances. Eviction removes
    the least recently reused block (ties broken by insertion age, then
    block name)."""

    capacity: int = 16
    blocks: tuple[MemoryBlock, ...] = ()
    clock: int = 0

    def lookup(self, sig_text: str) -> MemoryBlock | None:
        for mb in self.blocks:
            if mb.block.signature.canonical_text() == sig_text:
                return mb
        return None

    def find_by_tag(self, tag: str) -> MemoryBlock | None:
        hits = [mb for mb in self.blocks if tag in mb.block.signature.task_tags]
        if not hits:
            return None
        hits.sort(key=lambda mb: mb.block.name)
        return hits[0]

    def insert(self, block: CodeBlock) -> "ModuleMemory":
        tick = self.clock + 1
        sig = block.signature.canonical_text()
        kept = []
        for mb in self.blocks:
            if mb.block.signature.canonical_text() == sig:
                kept.append(replace(mb, last_used=tick))  # refresh, keep original body
            else:
                kept.append(mb)
        if self.lookup(sig) is None:
            kept.append(MemoryBlock(block=block, added_at=tick, last_used=tick))
        while len(kept) > self.capacity:
            victim = min(kept, key=lambda mb: (mb.last_used, mb.added_at, mb.block.name))
            kept.remove(victim)
        return ModuleMemory(capacity=self.capacity, blocks=tuple(kept), clock=tick)

    def to_doc(self) -> dict:
        return {
            "capacity": self.capacity,
            "clock": self.clock,
            "blocks": [mb.to_doc() for mb in self.blocks],
        }


def cache_blocks(mem: ModuleMemory, c: CandidateImplementation) -> ModuleMemory:
    """Harvest marker-fenced blocks from an executed candidate into memory.

    Caller guarantees the candidate was admissible and ran to completion.
    Blocks already cached (same signature) are refreshed, not duplicated.
    """
    out = mem
    for name in sorted(c.files):
        for block in parse_blocks(c.files[name], filename=name):
            out = out.insert(block)
    return out


# --------------------------------------------------------------------------
# Implementation rules
# --------------------------------------------------------------------------

StaticPredicate = Callable[["CandidateImplementation", "TaskSpec"], Sequence[ViolationInstance]]
DryPredicate = Callable[
    ["CandidateImplementation", "TaskSpec", sandbox.SandboxResult], Sequence[ViolationInstance]
]

STATIC = "static"
DRY_RUN = "dry_run"


@dataclass(frozen=True)
class ImplementationRule:
    id: str
    severity: str
    kind: str  # STATIC | DRY_RUN
    static_predicate: StaticPredicate | None = None
    dry_predicate: DryPredicate | None = None


@dataclass(frozen=True)
class ImplementationRuleSet:
    rules: tuple[ImplementationRule, ...]

    def rule_ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.rules)

    def needs_fixture(self) -> bool:
        return any(r.kind == DRY_RUN for r in self.rules)


def _scan(c: CandidateImplementation, needle: str) -> list[str]:
    return [name for name in sorted(c.files) if needle in c.files[name]]


def _interface_check(c, spec) -> list[ViolationInstance]:
    out = []
    if c.entrypoint not in c.files:
        out.append(
            ViolationInstance(detail=f"entrypoint {c.entrypoint!r} missing", files=(c.entrypoint,))
        )
        return out
    if not _scan(c, "data/train"):
        out.append(
            ViolationInstance(
                detail="bundle never reads the training view (data/train)",
                files=(c.entrypoint,),
            )
        )
    if not _scan(c, "metrics.json"):
        out.append(
            ViolationInstance(
                detail="bundle never writes the metric report (metrics.json)",
                files=(c.entrypoint,),
            )
        )
    return out


def _leakage_check(c, spec) -> list[ViolationInstance]:
    out = []
    for name in _scan(c, "data/test"):
        out.append(
            ViolationInstance(detail="references the protected test view", files=(name,))
        )
    for name in sorted(c.files):
        if re.search(r"\.\./", c.files[name]):
            out.append(ViolationInstance(detail="escapes the sandbox root", files=(name,)))
    return out


_WRITE_INTO_DATA = re.compile(r"open\(\s*['\"]data/[^'\"]*['\"]\s*,\s*['\"][wa]")


def _split_check(c, spec) -> list[ViolationInstance]:
    out = []
    for name in sorted(c.files):
        text = c.files[name]
        if _WRITE_INTO_DATA.search(text) or "rmtree(\"data" in text or "rmtree('data" in text:
            out.append(
                ViolationInstance(detail="writes into the read-only data mount", files=(name,))
            )
    return out


def _outputs_check(c, spec) -> list[ViolationInstance]:
    if not _scan(c, "out/"):
        return [
            ViolationInstance(
                detail="bundle never writes artifacts under out/", files=(c.entrypoint,)
            )
        ]
    return []


def _shape_check(c, spec, run: sandbox.SandboxResult) -> list[ViolationInstance]:
    if run.status != "completed" or run.metrics is None:
        return [
            ViolationInstance(
                detail=f"fixture run did not complete: {run.report_error or run.status}",
                files=(c.entrypoint,),
            )
        ]
    out = []
    if run.split_tag != "validation":
        out.append(
            ViolationInstance(
                detail=f"fixture report tagged split {run.split_tag!r}, expected 'validation'",
                files=(c.entrypoint,),
            )
        )
    return out


def _numerics_check(c, spec, run: sandbox.SandboxResult) -> list[ViolationInstance]:
    if run.status != "completed" or run.metrics is None:
        return [
            ViolationInstance(detail="fixture run did not complete", files=(c.entrypoint,))
        ]
    return [
        ViolationInstance(detail=f"metric {k!r} is not finite", files=(c.entrypoint,))
        for k in sandbox.has_nonfinite(run.metrics)
    ]


def _metric_completeness(c, spec, run: sandbox.SandboxResult) -> list[ViolationInstance]:
    if run.status != "completed" or run.metrics is None:
        return [
            ViolationInstance(detail="fixture run did not complete", files=(c.entrypoint,))
        ]
    return [
        ViolationInstance(detail=f"required metric {mid!r} absent from report", files=(c.entrypoint,))
        for mid in spec.suite.metric_ids
        if mid not in run.metrics
    ]


def default_implementation_rules(
    include_dry_run: bool = True,
    include: Sequence[str] | None = None,
    severities: Mapping[str, str] | None = None,
) -> ImplementationRuleSet:
    """The seven shipped checks; ``include`` filters by rule id."""
    severities = dict(severities or {})
    spec = [
        ImplementationRule("interface_check", HARD, STATIC, static_predicate=_interface_check),
        ImplementationRule("leakage_check", HARD, STATIC, static_predicate=_leakage_check),
        ImplementationRule("split_check", HARD, STATIC, static_predicate=_split_check),
        ImplementationRule("outputs_check", SOFT, STATIC, static_predicate=_outputs_check),
        ImplementationRule("shape_check", HARD, DRY_RUN, dry_predicate=_shape_check),
        ImplementationRule("numerics_check", HARD, DRY_RUN, dry_predicate=_numerics_check),
        ImplementationRule(
            "metric_completeness", HARD, DRY_RUN, dry_predicate=_metric_completeness
        ),
    ]
    rules = []
    for rule in spec:
        if include is not None and rule.id not in include:
            continue
        if rule.kind == DRY_RUN and not include_dry_run:
            continue
        if rule.id in severities:
            rule = replace(rule, severity=severities[rule.id])
        rules.append(rule)
    return ImplementationRuleSet(rules=tuple(rules))


def check_implementation(
    c: CandidateImplementation,
    spec: "TaskSpec",
    rs: ImplementationRuleSet,
    step_timeout: float = 60.0,
) -> AdmissibilityReport:
    """Evaluate all rules; dry-run rules share one fixture execution.

    Raises FixtureMissing when a dry-run rule is installed but the task
    spec carries no fixture view.
    """
    fixture_result: sandbox.SandboxResult | None = None
    if rs.needs_fixture():
        if spec.fixture_view is None:
            raise FixtureMissing("dry-run rules installed but task spec has no fixture view")
        fixture_result = sandbox.run_sandboxed(
            files=c.files,
            entrypoint=c.entrypoint,
            views={
                "train": f"{spec.fixture_view}/train",
                "val": f"{spec.fixture_view}/val",
            },
            timeout=step_timeout,
            eval_split="validation",
        )
    violations: list[RuleViolation] = []
    for rule in rs.rules:
        if rule.kind == STATIC:
            assert rule.static_predicate is not None
            instances = tuple(rule.static_predicate(c, spec))
        else:
            assert rule.dry_predicate is not None and fixture_result is not None
            instances = tuple(rule.dry_predicate(c, spec, fixture_result))
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
    return AdmissibilityReport(chi=chi, violations=tuple(violations), rules_checked=rs.rule_ids())


# --------------------------------------------------------------------------
# Realize: check -> repair -> reject
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RealizationOutcome:
    status: str  # "admissible" | "rejected"
    candidate: CandidateImplementation | None
    repairs_used: int
    report: AdmissibilityReport | None

    @property
    def admissible(self) -> bool:
        return self.status == "admissible"

    def to_doc(self) -> dict:
        return {
            "status": self.status,
            "digest": self.candidate.digest() if self.candidate else None,
            "name": self.candidate.name if self.candidate else None,
            "repairs_used": self.repairs_used,
            "report": self.report.to_doc() if self.report else None,
        }


def _clamp_repair(
    before: CandidateImplementation,
    after: CandidateImplementation,
    allowed_files: set[str],
) -> CandidateImplementation:
    """Hold every file not named by a violation byte-identical; the repair
    may only rewrite what the report implicates."""
    files = dict(after.files)
    clamped = []
    for name, content in before.files.items():
        if name not in allowed_files and files.get(name) != content:
            files[name] = content
            clamped.append(name)
    for name in list(files):
        if name not in before.files and name not in allowed_files:
            del files[name]
            clamped.append(name)
    if clamped:
        log.warning("repair touched files outside the violation set, reverted: %s", sorted(set(clamped)))
    return CandidateImplementation(
        name=after.name,
        files=files,
        manifest=dict(before.manifest),  # repairs fix code, not the claim
        entrypoint=before.entrypoint,
        provenance=after.provenance,
    )


def realize(
    c0: CandidateImplementation,
    h: "HypothesisState",
    mem: ModuleMemory,
    spec: "TaskSpec",
    rs: ImplementationRuleSet,
    backend,
    repair_budget: int = 5,
    step_timeout: float = 60.0,
) -> RealizationOutcome:
    """Admit, repair, or reject a proposed candidate.

    At most ``repair_budget`` backend repair rounds; each sees only the
    current violations and may rewrite only the files they name. Rejection
    is returned, not raised.
    """
    candidate = c0
    report = check_implementation(candidate, spec, rs, step_timeout=step_timeout)
    rounds = 0
    while report.chi == 0 and rounds < repair_budget:
        allowed = {f for v in report.violations for f in v.files()}
        allowed.add(candidate.entrypoint)
        try:
            repaired = backend.repair(candidate, report.violations, h, mem, spec)
        except (BackendUnavailable, MalformedProposal, TemplateMissing) as exc:
            # a failed repair round burns no further budget; reject as-is
            log.warning("repair round %d failed: %s", rounds + 1, exc)
            break
        candidate = _clamp_repair(candidate, repaired, allowed)
        rounds += 1
        report = check_implementation(candidate, spec, rs, step_timeout=step_timeout)
    if report.chi == 1:
        return RealizationOutcome("admissible", candidate, rounds, report)
    return RealizationOutcome("rejected", candidate, rounds, report)


def alignment_score(c: CandidateImplementation, h: "HypothesisState") -> float:
    """Fraction of nodes whose manifest claim matches the hypothesis.

    Diagnostic only; misalignment is reported, never gated on. Key-set
    mismatch is a contract violation and raises ManifestMismatch.
    """
    nodes = set(h.assignments)
    if not nodes:
        raise ManifestMismatch("hypothesis assigns no nodes")
    if set(c.manifest) != nodes:
        raise ManifestMismatch(
            f"manifest keys {sorted(c.manifest)} != hypothesis nodes {sorted(nodes)}"
        )
    agree = sum(
        1 for v in nodes if c.manifest[v] == h.assignments[v].option_id
    )
    return agree / len(nodes)
