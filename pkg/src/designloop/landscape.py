"""Synthetic design landscapes with known optima and injectable faults.

A landscape fixes, for a small option grid, an exact quality value per
assignment: a per-option base table plus pairwise coupling bonuses, all
multiples of 1/64 so floating-point sums are exact and order-independent.
The backing Proposer emits a tiny self-contained program per assignment
that reports the precomputed value through the normal sandbox contract,
optionally sabotaged by a planted fault:

* ``crash``        -- raises before writing the report
* ``leak``         -- reads ``data/test`` (statically detectable, and a
                      runtime crash while the test view is unmounted)
* ``latent_leak``  -- references ``data/test`` on a dead branch: statically
                      detectable, runs clean
* ``omit_metric``  -- reports everything except the selection metric
* ``nan_metric``   -- reports a non-finite selection metric
* ``collapse``     -- degenerate prediction-variance side metric

Because the true optimum is enumerable, a landscape turns end-to-end
engine behavior (selection, gating, routing) into exact assertions.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from . import canonical
from .hypothesis_state import (
    Assignment,
    Catalogs,
    HypothesisState,
    OptionCatalog,
    OptionSpec,
    default_assignment,
)
from .proposers import Proposer, ProposalContext, UsageLedger, estimate_tokens
from .realization import CandidateImplementation, Provenance
from .taskspec import (
    CORE_PROTECTED,
    DiagnosticPlugin,
    EvaluationSuite,
    SplitManifest,
    TaskSpec,
)
from .topology import (
    STAGE_INDEX,
    DecisionNode,
    Hyperedge,
    Topology,
    build_topology,
)

SCHEMA = "land/1"

GRID = 64  # all quality terms are k/GRID: exact binary fractions

PIPELINE_TYPES = (
    "data_adapter",
    "preprocessing",
    "perturbation_representation",
    "cellular_state_encoding",
    "fusion",
    "architecture",
    "objective",
    "training_strategy",
    "evaluation_adapter",
)

FAULT_KINDS = ("crash", "leak", "latent_leak", "omit_metric", "nan_metric", "collapse")

# Static implementation rule tripped by each fault kind, where one exists.
FAULT_STATIC_RULE = {"leak": "leakage_check", "latent_leak": "leakage_check"}

SELECTION_METRIC = "pcc"
AUX_METRIC = "prediction_variance_ratio"


def node_id(node_type: str) -> str:
    """Stage-prefixed ids keep lexicographic order aligned with the pipeline."""
    return f"n{STAGE_INDEX[node_type]}_{node_type}"


@dataclass(frozen=True)
class Fault:
    kind: str
    fixable: bool = False

    def to_doc(self) -> dict:
        return {"kind": self.kind, "fixable": self.fixable}

    @staticmethod
    def from_doc(doc: Mapping) -> "Fault":
        return Fault(doc["kind"], doc.get("fixable", False))


@dataclass(frozen=True)
class LandscapeSpec:
    """Complete ground truth for one synthetic task."""

    seed: int
    node_options: Mapping[str, tuple[str, ...]]  # node id -> option ids
    base_quality: Mapping[str, Mapping[str, float]]  # node -> option -> k/64
    couplings: tuple[tuple[str, str, str, str, float], ...]  # (na, oa, nb, ob, bonus)
    faults: Mapping[str, Fault] = field(default_factory=dict)  # option id -> fault
    initial: Mapping[str, str] = field(default_factory=dict)  # node -> option id
    collapse_pair: tuple[str, str, str, str] | None = None  # (na, oa, nb, ob)
    incompatible_cross: bool = False

    def quality(self, assignment: Mapping[str, str]) -> float:
        total = 0.0
        for node in sorted(assignment):
            total += self.base_quality[node][assignment[node]]
        for na, oa, nb, ob, bonus in self.couplings:
            if assignment.get(na) == oa and assignment.get(nb) == ob:
                total += bonus
        return total

    def assignment_count(self) -> int:
        count = 1
        for options in self.node_options.values():
            count *= len(options)
        return count

    def aux_value(self, assignment: Mapping[str, str]) -> float:
        for opt in assignment.values():
            fault = self.faults.get(opt)
            if fault is not None and fault.kind == "collapse":
                return 1 / GRID
        if self.collapse_pair is not None:
            na, oa, nb, ob = self.collapse_pair
            if not (assignment.get(na) == oa and assignment.get(nb) == ob):
                return 1 / GRID
        return 0.8

    def to_doc(self) -> dict:
        return {
            "schema": SCHEMA,
            "seed": self.seed,
            "node_options": {n: list(o) for n, o in sorted(self.node_options.items())},
            "base_quality": {
                n: dict(sorted(q.items())) for n, q in sorted(self.base_quality.items())
            },
            "couplings": [list(c) for c in self.couplings],
            "faults": {o: f.to_doc() for o, f in sorted(self.faults.items())},
            "initial": dict(sorted(self.initial.items())),
            "collapse_pair": list(self.collapse_pair) if self.collapse_pair else None,
            "incompatible_cross": self.incompatible_cross,
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "LandscapeSpec":
        return LandscapeSpec(
            seed=doc["seed"],
            node_options={n: tuple(o) for n, o in doc["node_options"].items()},
            base_quality={n: dict(q) for n, q in doc["base_quality"].items()},
            couplings=tuple(tuple(c) for c in doc["couplings"]),
            faults={o: Fault.from_doc(f) for o, f in doc.get("faults", {}).items()},
            initial=dict(doc.get("initial", {})),
            collapse_pair=tuple(doc["collapse_pair"]) if doc.get("collapse_pair") else None,
            incompatible_cross=doc.get("incompatible_cross", False),
        )


def enumerate_assignments(land: LandscapeSpec) -> Iterator[dict[str, str]]:
    nodes = sorted(land.node_options)

    def rec(i: int, acc: dict[str, str]) -> Iterator[dict[str, str]]:
        if i == len(nodes):
            yield dict(acc)
            return
        for opt in land.node_options[nodes[i]]:
            acc[nodes[i]] = opt
            yield from rec(i + 1, acc)
        del acc[nodes[i]]

    yield from rec(0, {})


def argmax_quality(land: LandscapeSpec) -> tuple[dict[str, str], float]:
    """Exhaustive optimum; first assignment in enumeration order wins ties."""
    best_a: dict[str, str] | None = None
    best_q = float("-inf")
    for assignment in enumerate_assignments(land):
        q = land.quality(assignment)
        if q > best_q:
            best_a, best_q = assignment, q
    assert best_a is not None
    return best_a, best_q


# --------------------------------------------------------------------------
# Factories
# --------------------------------------------------------------------------

_COUNT_CHOICES = ((2, 2, 2), (4, 4, 2), (2, 4, 2), (4, 2, 2), (2, 2, 2, 2), (3, 2, 2))


def make_landscape(
    seed: int,
    option_counts: Mapping[str, int] | None = None,
    n_couplings: int = 2,
) -> LandscapeSpec:
    """Seeded noise-free landscape with at most 64 assignments."""
    # str seeds hash deterministically across processes; tuples do not
    rng = random.Random(f"landscape:{seed}")
    if option_counts is None:
        counts = rng.choice(_COUNT_CHOICES)
        multi = rng.sample(
            ["preprocessing", "perturbation_representation", "cellular_state_encoding",
             "fusion", "architecture", "objective", "training_strategy"],
            len(counts),
        )
        option_counts = dict(zip(multi, counts))

    node_options: dict[str, tuple[str, ...]] = {}
    base: dict[str, dict[str, float]] = {}
    for node_type in PIPELINE_TYPES:
        count = option_counts.get(node_type, 1)
        nid = node_id(node_type)
        options = tuple(f"{node_type}_{i}" for i in range(count))
        node_options[nid] = options
        base[nid] = {o: rng.randrange(0, 9) / GRID for o in options}

    multi_nodes = [n for n, o in sorted(node_options.items()) if len(o) > 1]
    couplings: list[tuple[str, str, str, str, float]] = []
    seen: set[tuple[str, str, str, str]] = set()
    if len(multi_nodes) >= 2:
        for _ in range(n_couplings * 3):
            if len(couplings) >= n_couplings:
                break
            na, nb = sorted(rng.sample(multi_nodes, 2))
            oa = rng.choice(node_options[na])
            ob = rng.choice(node_options[nb])
            key = (na, oa, nb, ob)
            if key in seen:
                continue
            seen.add(key)
            couplings.append((na, oa, nb, ob, rng.randrange(2, 7) / GRID))

    initial = {n: options[0] for n, options in node_options.items()}
    return LandscapeSpec(
        seed=seed,
        node_options=node_options,
        base_quality=base,
        couplings=tuple(couplings),
        initial=initial,
    )


def make_gating_landscape(seed: int) -> LandscapeSpec:
    """Initial hypothesis carries fixable statically-detectable faults.

    The initial architecture option leaks at runtime (crashes while the
    test view is unmounted); the initial fusion option carries a latent
    leak that runs clean. Every other option is clean. A mode with
    implementation gating and repair completes every iteration; an ungated
    mode crashes on the unchanged architecture fault; a mode that only
    checks rules after execution completes runs that still carry the
    latent violation.
    """
    land = make_landscape(
        seed, option_counts={"architecture": 3, "fusion": 2}, n_couplings=1
    )
    faults = {
        land.initial[node_id("architecture")]: Fault(kind="leak", fixable=True),
        land.initial[node_id("fusion")]: Fault(kind="latent_leak", fixable=True),
    }
    return LandscapeSpec(
        seed=land.seed,
        node_options=land.node_options,
        base_quality=land.base_quality,
        couplings=land.couplings,
        faults=faults,
        initial=land.initial,
    )


def make_coupled_landscape(seed: int) -> LandscapeSpec:
    """A bonus only a joint two-node move can reach.

    fusion and architecture each have two options with identical base
    quality; the (1, 1) combination carries the only bonus, the mixed
    combinations are hard-incompatible, and the degenerate side metric
    flags every non-bonus state so routing points at the joint edge.
    """
    rng = random.Random(f"coupled:{seed}")
    node_options: dict[str, tuple[str, ...]] = {}
    base: dict[str, dict[str, float]] = {}
    for node_type in PIPELINE_TYPES:
        nid = node_id(node_type)
        count = 2 if node_type in ("fusion", "architecture") else 1
        options = tuple(f"{node_type}_{i}" for i in range(count))
        node_options[nid] = options
        level = rng.randrange(0, 9) / GRID
        base[nid] = {o: level for o in options}
    nf, na = node_id("fusion"), node_id("architecture")
    couplings = ((nf, "fusion_1", na, "architecture_1", 16 / GRID),)
    return LandscapeSpec(
        seed=seed,
        node_options=node_options,
        base_quality=base,
        couplings=couplings,
        initial={n: options[0] for n, options in node_options.items()},
        collapse_pair=(nf, "fusion_1", na, "architecture_1"),
        incompatible_cross=True,
    )


# --------------------------------------------------------------------------
# Engine-facing construction
# --------------------------------------------------------------------------

def build_catalogs(land: LandscapeSpec) -> Catalogs:
    catalogs: dict[str, OptionCatalog] = {}
    metric_tags = (f"metric:{SELECTION_METRIC}", f"metric:{AUX_METRIC}")
    for node_type in PIPELINE_TYPES:
        nid = node_id(node_type)
        specs = []
        for opt in land.node_options[nid]:
            tags: tuple[str, ...] = ()
            if node_type == "evaluation_adapter":
                tags = metric_tags
            if land.incompatible_cross and land.collapse_pair is not None:
                nf, of, na, oa = land.collapse_pair
                # both mixed states are structurally inadmissible
                if nid == nf and opt == of:
                    other = [o for o in land.node_options[na] if o != oa][0]
                    tags = tags + (f"incompatible:{other}",)
                if nid == na and opt == oa:
                    other = [o for o in land.node_options[nf] if o != of][0]
                    tags = tags + (f"incompatible:{other}",)
            specs.append(OptionSpec(id=opt, tags=tags))
        catalogs[node_type] = OptionCatalog(node_type=node_type, options=tuple(specs))
    return catalogs


def build_landscape_topology(land: LandscapeSpec) -> Topology:
    nodes = [
        DecisionNode(id=node_id(t), node_type=t, option_catalog_ref=t)
        for t in PIPELINE_TYPES
    ]
    chain = tuple(
        node_id(t)
        for t in sorted(PIPELINE_TYPES, key=lambda t: (STAGE_INDEX[t], t))
    )
    edges = [
        Hyperedge(id="e000001", members=chain, relation_type="dataflow"),
        Hyperedge(
            id="e000002",
            members=(
                node_id("fusion"),
                node_id("architecture"),
                node_id("objective"),
                node_id("training_strategy"),
            ),
            relation_type="coupling",
        ),
        Hyperedge(
            id="e000003",
            members=(
                node_id("perturbation_representation"),
                node_id("cellular_state_encoding"),
                node_id("fusion"),
            ),
            relation_type="compatibility",
        ),
    ]
    return build_topology(nodes, edges)


def initial_hypothesis(land: LandscapeSpec, catalogs: Catalogs) -> HypothesisState:
    assignments: dict[str, Assignment] = {}
    for node_type in PIPELINE_TYPES:
        nid = node_id(node_type)
        opt = catalogs[node_type].get(land.initial[nid])
        assert opt is not None
        assignments[nid] = default_assignment(opt)
    return HypothesisState(assignments=assignments, version=0)


def build_task(land: LandscapeSpec, root: str | Path) -> TaskSpec:
    """Materialize data views under ``root`` and return the task spec.

    The test view lives outside the refinement mounts and is only handed
    to the final evaluation.
    """
    base = Path(root)
    train = base / "views" / "train"
    val = base / "views" / "val"
    test = base / "heldout" / "test"
    for d, rows in ((train, 6), (val, 2), (test, 2)):
        d.mkdir(parents=True, exist_ok=True)
        (d / "rows.csv").write_text(
            "id,response\n" + "".join(f"r{i},{(i * 7) % GRID / GRID}\n" for i in range(rows)),
            encoding="utf-8",
        )
    split = SplitManifest(
        train_ids=tuple(f"tr{i}" for i in range(6)),
        val_ids=("va0", "va1"),
        test_ids=("te0", "te1"),
    )
    suite = EvaluationSuite(
        metric_ids=(SELECTION_METRIC, AUX_METRIC),
        selection_metric=SELECTION_METRIC,
        direction="max",
        plugins=(
            DiagnosticPlugin(
                kind="validation_collapse", metric=AUX_METRIC, op="lt", threshold=0.1
            ),
        ),
    )
    return TaskSpec(
        dataset=f"synthetic-{land.seed}",
        suite=suite,
        split=split,
        inputs_ref="synthetic://inputs",
        perturbation_ref="synthetic://perturbations",
        targets_ref="synthetic://targets",
        train_view=str(train),
        val_view=str(val),
        test_view=str(test),
        fixture_view=None,
        protected_tags=CORE_PROTECTED,
    )


# --------------------------------------------------------------------------
# Backend
# --------------------------------------------------------------------------

class LandscapeBackend(Proposer):
    """Deterministic proposer that compiles an assignment to a stub program."""

    def __init__(self, land: LandscapeSpec):
        self.land = land
        self.id = f"landscape:{land.seed}"
        self.usage = UsageLedger()

    # -- code generation --------------------------------------------------

    def _emit(self, assignment: Mapping[str, str], suppress: frozenset[str]) -> str:
        land = self.land
        value = land.quality(assignment)
        aux = land.aux_value(assignment)
        active = [
            (node, assignment[node], land.faults[assignment[node]])
            for node in sorted(assignment)
            if assignment[node] in land.faults and assignment[node] not in suppress
        ]
        kinds = {fault.kind for _, _, fault in active}

        lines = ["import json", "import os", ""]
        for node in sorted(assignment):
            opt = assignment[node]
            sig = json.dumps(
                {"inputs": [node], "outputs": [f"{node}_out"], "task_tags": [opt]},
                sort_keys=True,
            )
            lines.append(f"#<<block id={node} sig={sig}>>")
            lines.append(f"{node.upper()} = {opt!r}")
            lines.append("#<<end>>")
        lines.append("")
        lines.append("rows = []")
        lines.append("if os.path.isdir('data/train'):")
        lines.append("    rows = sorted(os.listdir('data/train'))")
        if "leak" in kinds:
            lines.append("peek = open('data/test/rows.csv').read()  # forbidden view")
        if "latent_leak" in kinds:
            lines.append("if os.environ.get('NEVER_SET_SENTINEL'):")
            lines.append("    peek = open('data/test/rows.csv').read()")
        if "crash" in kinds:
            lines.append("raise RuntimeError('injected fault: crash')")
        lines.append("os.makedirs('out', exist_ok=True)")
        lines.append("split = os.environ.get('EVAL_SPLIT', 'validation')")
        lines.append(
            "open('out/summary.txt', 'w').write('rows=%d split=%s' % (len(rows), split))"
        )
        if "nan_metric" in kinds:
            score = "float('nan')"
        else:
            score = repr(value)
        metrics = [f"    '{AUX_METRIC}': {aux!r},"]
        if "omit_metric" not in kinds:
            metrics.insert(0, f"    '{SELECTION_METRIC}': {score},")
        lines.append("metrics = {")
        lines.extend(metrics)
        lines.append("}")
        lines.append(
            "json.dump({'metrics': metrics, 'split': split}, open('metrics.json', 'w'))"
        )
        lines.append("")
        return "\n".join(lines)

    def _bundle(
        self,
        assignment: Mapping[str, str],
        version: int,
        attempt: int,
        suppress: frozenset[str] = frozenset(),
    ) -> CandidateImplementation:
        text = self._emit(assignment, suppress)
        name = f"land{self.land.seed}-v{version}-{canonical.digest(dict(assignment))[:8]}"
        if attempt:
            name += f"-r{attempt}"
        self.usage.add(estimate_tokens(canonical.dumps(dict(assignment))),
                       estimate_tokens(text), 0.0)
        return CandidateImplementation(
            name=name,
            files={"main.py": text},
            manifest=dict(assignment),
            entrypoint="main.py",
            provenance=Provenance(proposer_id=self.id, attempt=attempt),
        )

    # -- Proposer protocol -------------------------------------------------

    def propose(self, ctx: ProposalContext) -> CandidateImplementation:
        assignment = {
            v: ctx.hypothesis.assignments[v].option_id
            for v in sorted(ctx.hypothesis.assignments)
        }
        return self._bundle(assignment, ctx.hypothesis.version, ctx.attempt)

    def repair(
        self,
        candidate: CandidateImplementation,
        violations,
        h: HypothesisState,
        mem,
        spec,
    ) -> CandidateImplementation:
        """Regenerate without the faults whose static rule was violated,
        when the planted fault is marked fixable."""
        violated = {v.rule_id for v in violations}
        assignment = dict(candidate.manifest)
        suppress = set()
        for opt in assignment.values():
            fault = self.land.faults.get(opt)
            if (
                fault is not None
                and fault.fixable
                and FAULT_STATIC_RULE.get(fault.kind) in violated
            ):
                suppress.add(opt)
        if not suppress:
            return candidate
        return self._bundle(
            assignment,
            h.version,
            candidate.provenance.attempt + 1,
            suppress=frozenset(suppress),
        )
