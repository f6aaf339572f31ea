"""Proposal backends.

Two interchangeable generators sit behind one protocol: a deterministic
mock that assembles candidates from a template library keyed by
(node type, option id), and an HTTP chat-completion adapter. Both honor
the reply grammar (named file blocks plus one manifest block) and account
usage in a monotone ledger.

The mock library ships paired fault/fix bodies per fragment so every
implementation rule has an exercisable rejection and repair path.
"""

from __future__ import annotations

import abc
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import canonical
from .errors import BackendUnavailable, MalformedProposal, TemplateMissing
from .hypothesis_state import HypothesisState
from .realization import CandidateImplementation, ModuleMemory, Provenance
from .rules import RuleViolation
from .taskspec import TaskSpec
from .topology import Topology

log = logging.getLogger(__name__)


@dataclass
class UsageLedger:
    """Monotone accounting of backend usage."""

    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_s: float = 0.0

    def add(self, prompt_tokens: int, completion_tokens: int, latency_s: float) -> None:
        self.calls += 1
        self.prompt_tokens += prompt_tokens
        self.completion_tokens += completion_tokens
        self.latency_s += latency_s

    def to_doc(self) -> dict:
        return {
            "calls": self.calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency_s": self.latency_s,
        }


def estimate_tokens(text: str) -> int:
    """Byte-length heuristic: four bytes per token, at least one."""
    return max(1, len(text.encode("utf-8")) // 4)


@dataclass(frozen=True)
class ProposalContext:
    hypothesis: HypothesisState
    topology: Topology
    memory: ModuleMemory
    spec: TaskSpec
    seed: int
    iteration: int
    attempt: int = 0


class Proposer(abc.ABC):
    id: str = "proposer"

    @abc.abstractmethod
    def propose(self, ctx: ProposalContext) -> CandidateImplementation:
        ...

    @abc.abstractmethod
    def repair(
        self,
        candidate: CandidateImplementation,
        violations: Sequence[RuleViolation],
        h: HypothesisState,
        mem: ModuleMemory,
        spec: TaskSpec,
    ) -> CandidateImplementation:
        ...


# --------------------------------------------------------------------------
# Mock backend
# --------------------------------------------------------------------------

LIBRARY_SCHEMA = "lib/1"


@dataclass(frozen=True)
class Fragment:
    """Source fragment for one (node type, option) pair.

    ``fault_rules`` names the implementation rules the body trips, if any;
    ``fixed_body`` is the paired repair. A fragment with fault_rules and no
    fixed_body is deliberately unfixable. ``claim_option`` lets a fragment
    misreport its option in the manifest (alignment diagnostics)."""

    node_type: str
    option_id: str
    body: str
    fault_rules: tuple[str, ...] = ()
    fixed_body: str | None = None
    claim_option: str | None = None

    def to_doc(self) -> dict:
        return {
            "node_type": self.node_type,
            "option_id": self.option_id,
            "body": self.body,
            "fault_rules": list(self.fault_rules),
            "fixed_body": self.fixed_body,
            "claim_option": self.claim_option,
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "Fragment":
        return Fragment(
            node_type=doc["node_type"],
            option_id=doc["option_id"],
            body=doc["body"],
            fault_rules=tuple(doc.get("fault_rules", ())),
            fixed_body=doc.get("fixed_body"),
            claim_option=doc.get("claim_option"),
        )


@dataclass(frozen=True)
class TemplateLibrary:
    fragments: tuple[Fragment, ...]
    preamble: str = "import json, os\n"
    postamble: str = ""
    version: str = "1"

    def find(self, node_type: str, option_id: str) -> Fragment | None:
        for f in self.fragments:
            if f.node_type == node_type and f.option_id == option_id:
                return f
        return None

    def to_doc(self) -> dict:
        return {
            "schema": LIBRARY_SCHEMA,
            "version": self.version,
            "preamble": self.preamble,
            "postamble": self.postamble,
            "fragments": [f.to_doc() for f in self.fragments],
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "TemplateLibrary":
        if doc.get("schema") != LIBRARY_SCHEMA:
            raise MalformedProposal(f"not a template library document: {doc.get('schema')!r}")
        return TemplateLibrary(
            fragments=tuple(Fragment.from_doc(f) for f in doc["fragments"]),
            preamble=doc.get("preamble", ""),
            postamble=doc.get("postamble", ""),
            version=doc.get("version", "1"),
        )


class MockProposer(Proposer):
    """Deterministic assembly from a template library.

    Identical (hypothesis, library version, seed) yield byte-identical
    bundles. When memory holds a block tagged with an assigned option id,
    that block is embedded verbatim in place of the library fragment."""

    def __init__(self, library: TemplateLibrary, usage: UsageLedger | None = None):
        self.library = library
        self.usage = usage or UsageLedger()
        self.id = "mock"

    def _assemble(
        self,
        h: HypothesisState,
        t: Topology,
        mem: ModuleMemory,
        seed: int,
    ) -> tuple[str, dict[str, str]]:
        parts = [self.library.preamble.rstrip("\n")]
        parts.append(f"# proposal-seed: {seed}")
        manifest: dict[str, str] = {}
        for v in sorted(h.assignments):
            node = t.nodes.get(v)
            if node is None:
                raise TemplateMissing(f"hypothesis assigns unknown node {v!r}")
            a = h.assignments[v]
            frag = self.library.find(node.node_type, a.option_id)
            if frag is None:
                raise TemplateMissing(f"no template for ({node.node_type}, {a.option_id})")
            cached = mem.find_by_tag(a.option_id)
            if cached is not None:
                parts.append(cached.block.render())
            else:
                parts.append(frag.body.rstrip("\n"))
            manifest[v] = frag.claim_option or a.option_id
        if self.library.postamble:
            parts.append(self.library.postamble.rstrip("\n"))
        return "\n".join(parts) + "\n", manifest

    def _name(self, h: HypothesisState, t: Topology, attempt: int) -> str:
        arch = [
            h.assignments[v].option_id
            for v in sorted(h.assignments)
            if t.nodes.get(v) and t.nodes[v].node_type == "architecture"
        ]
        stem = arch[0] if arch else h.digest()[:8]
        return f"{stem}-v{h.version}" if attempt == 0 else f"{stem}-v{h.version}r{attempt}"

    def propose(self, ctx: ProposalContext) -> CandidateImplementation:
        started = time.monotonic()
        text, manifest = self._assemble(ctx.hypothesis, ctx.topology, ctx.memory, ctx.seed)
        candidate = CandidateImplementation(
            name=self._name(ctx.hypothesis, ctx.topology, ctx.attempt),
            files={"main.py": text},
            manifest=manifest,
            entrypoint="main.py",
            provenance=Provenance(proposer_id=self.id, attempt=ctx.attempt),
        )
        self.usage.add(
            prompt_tokens=estimate_tokens(ctx.hypothesis.canonical_text()),
            completion_tokens=estimate_tokens(text),
            latency_s=time.monotonic() - started,
        )
        return candidate

    def repair(
        self,
        candidate: CandidateImplementation,
        violations: Sequence[RuleViolation],
        h: HypothesisState,
        mem: ModuleMemory,
        spec: TaskSpec,
    ) -> CandidateImplementation:
        """Swap fragments whose declared faults intersect the violated
        rules for their paired fixes; unfixable faults leave the bundle
        unchanged (the realize loop then exhausts its budget)."""
        started = time.monotonic()
        violated = {v.rule_id for v in violations}
        files = dict(candidate.files)
        changed = False
        for name in sorted(files):
            text = files[name]
            for frag in self.library.fragments:
                if not frag.fault_rules or frag.fixed_body is None:
                    continue
                if not violated & set(frag.fault_rules):
                    continue
                body = frag.body.rstrip("\n")
                if body in text:
                    text = text.replace(body, frag.fixed_body.rstrip("\n"))
                    changed = True
            files[name] = text
        self.usage.add(
            prompt_tokens=estimate_tokens(canonical.dumps([v.to_doc() for v in violations])),
            completion_tokens=estimate_tokens("".join(files.values())) if changed else 1,
            latency_s=time.monotonic() - started,
        )
        return CandidateImplementation(
            name=candidate.name,
            files=files,
            manifest=dict(candidate.manifest),
            entrypoint=candidate.entrypoint,
            provenance=Provenance(
                proposer_id=self.id, attempt=candidate.provenance.attempt + 1
            ),
        )


# --------------------------------------------------------------------------
# HTTP chat-completion backend
# --------------------------------------------------------------------------

_FILE_BLOCK = re.compile(r"```file:(?P<path>\S+)\n(?P<body>.*?)```", re.DOTALL)
_MANIFEST_BLOCK = re.compile(r"```manifest\n(?P<body>.*?)```", re.DOTALL)


def parse_reply(text: str) -> tuple[dict[str, str], dict[str, str]]:
    """Parse the fenced reply grammar; raises MalformedProposal unless the
    reply holds at least one file block and exactly one manifest block."""
    files = {m.group("path"): m.group("body") for m in _FILE_BLOCK.finditer(text)}
    manifests = _MANIFEST_BLOCK.findall(text)
    if not files:
        raise MalformedProposal("reply contains no file blocks")
    if len(manifests) != 1:
        raise MalformedProposal(f"reply contains {len(manifests)} manifest blocks, need 1")
    try:
        manifest = canonical.loads(manifests[0])
    except Exception as exc:
        raise MalformedProposal(f"manifest block is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in manifest.items()
    ):
        raise MalformedProposal("manifest must map node ids to option ids")
    return files, manifest


class HttpProposer(Proposer):
    """Chat-completion adapter.

    Prompt assembly respects a hard context budget: memory signature lines
    are dropped first, then topology detail collapses to a summary; the
    task contract (sandbox layout and metric report grammar) is never
    truncated. Transient transport errors retry with backoff; exhaustion
    raises BackendUnavailable.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "DESIGNLOOP_API_KEY",
        temperature: float = 0.5,
        proposal_temperature: float = 0.7,
        context_limit_tokens: int = 40000,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 120.0,
        usage: UsageLedger | None = None,
        session=None,
    ):
        import requests

        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.proposal_temperature = proposal_temperature
        self.context_limit_tokens = context_limit_tokens
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self.usage = usage or UsageLedger()
        self.session = session or requests.Session()
        self.id = f"http:{model}"

    # prompt assembly ------------------------------------------------------

    def _contract_text(self, spec: TaskSpec) -> str:
        return (
            "You are writing one runnable Python program for a modeling task.\n"
            "Contract:\n"
            "- read training rows from data/train/ and validation rows from data/val/\n"
            "- the split named by the EVAL_SPLIT environment variable is the one to score\n"
            "- never touch data/test or any path outside the working directory\n"
            "- write artifacts under out/\n"
            '- write metrics.json: {"metrics": {<metric id>: <real>, ...}, "split": <split>}\n'
            f"- required metric ids: {', '.join(spec.suite.metric_ids)}\n"
            "Reply with one ```file:<path>``` block per file and exactly one ```manifest``` "
            "block mapping node ids to option ids."
        )

    def build_prompt(self, ctx: ProposalContext) -> str:
        contract = self._contract_text(ctx.spec)
        assignments = canonical.dumps(ctx.hypothesis.to_doc())
        topology_full = canonical.dumps(ctx.topology.to_doc())
        topology_brief = canonical.dumps(
            {
                "nodes": sorted(ctx.topology.nodes),
                "routing_degree_bound": ctx.topology.routing_degree_bound,
            }
        )
        memory_lines = [
            f"# reusable block {mb.block.name}: {mb.block.signature.canonical_text()}"
            for mb in sorted(ctx.memory.blocks, key=lambda mb: -mb.last_used)
        ]

        def assemble(mem_lines: list[str], topology_text: str) -> str:
            sections = [contract, "Design state:", assignments, "Topology:", topology_text]
            if mem_lines:
                sections.append("Cached modules:")
                sections.extend(mem_lines)
            return "\n".join(sections)

        prompt = assemble(memory_lines, topology_full)
        while memory_lines and estimate_tokens(prompt) > self.context_limit_tokens:
            memory_lines = memory_lines[:-1]  # oldest signatures go first
            prompt = assemble(memory_lines, topology_full)
        if estimate_tokens(prompt) > self.context_limit_tokens:
            prompt = assemble(memory_lines, topology_brief)
        if estimate_tokens(prompt) > self.context_limit_tokens:
            prompt = "\n".join([contract, "Design state:", assignments])
        return prompt

    # transport ------------------------------------------------------------

    def _call(self, prompt: str, temperature: float) -> str:
        import os

        import requests

        key = os.environ.get(self.api_key_env)
        if not key:
            raise BackendUnavailable(f"credential env var {self.api_key_env} is not set")
        payload = {
            "model": self.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        last: Exception | None = None
        for attempt in range(self.max_retries):
            started = time.monotonic()
            try:
                resp = self.session.post(
                    self.endpoint,
                    json=payload,
                    headers={"Authorization": f"Bearer {key}"},
                    timeout=self.timeout_s,
                )
                if resp.status_code >= 500:
                    raise BackendUnavailable(f"server error {resp.status_code}")
                resp.raise_for_status()
                doc = resp.json()
                text = doc["choices"][0]["message"]["content"]
                usage = doc.get("usage", {})
                self.usage.add(
                    prompt_tokens=usage.get("prompt_tokens", estimate_tokens(prompt)),
                    completion_tokens=usage.get("completion_tokens", estimate_tokens(text)),
                    latency_s=time.monotonic() - started,
                )
                return text
            except (requests.RequestException, BackendUnavailable, KeyError) as exc:
                last = exc
                log.warning("backend call failed (attempt %d): %s", attempt + 1, exc)
                if attempt + 1 < self.max_retries:
                    time.sleep(self.backoff_s * (2**attempt))
        raise BackendUnavailable(f"backend unreachable after {self.max_retries} attempts: {last}")

    def propose(self, ctx: ProposalContext) -> CandidateImplementation:
        text = self._call(self.build_prompt(ctx), self.proposal_temperature)
        files, manifest = parse_reply(text)
        entrypoint = "main.py" if "main.py" in files else sorted(files)[0]
        return CandidateImplementation(
            name=f"http-{ctx.iteration}-{ctx.attempt}",
            files=files,
            manifest=manifest,
            entrypoint=entrypoint,
            provenance=Provenance(proposer_id=self.id, attempt=ctx.attempt),
        )

    def repair(
        self,
        candidate: CandidateImplementation,
        violations: Sequence[RuleViolation],
        h: HypothesisState,
        mem: ModuleMemory,
        spec: TaskSpec,
    ) -> CandidateImplementation:
        allowed = sorted({f for v in violations for f in v.files()} | {candidate.entrypoint})
        report = "\n".join(
            f"- rule {v.rule_id} ({v.severity}, {v.count}x): "
            + "; ".join(i.detail for i in v.instances[:3])
            for v in violations
        )
        prompt = (
            self._contract_text(spec)
            + "\nThe candidate below violated these rules:\n"
            + report
            + f"\nRewrite ONLY these files: {', '.join(allowed)}. Keep every other file identical.\n"
            + "\n".join(
                f"```file:{name}\n{candidate.files[name]}```" for name in sorted(candidate.files)
            )
            + "\n```manifest\n"
            + canonical.dumps(dict(candidate.manifest))
            + "\n```"
        )
        text = self._call(prompt, self.temperature)
        files, manifest = parse_reply(text)
        merged = dict(candidate.files)
        merged.update({k: v for k, v in files.items() if k in allowed})
        return CandidateImplementation(
            name=candidate.name,
            files=merged,
            manifest=dict(candidate.manifest),
            entrypoint=candidate.entrypoint,
            provenance=Provenance(
                proposer_id=self.id, attempt=candidate.provenance.attempt + 1
            ),
        )
