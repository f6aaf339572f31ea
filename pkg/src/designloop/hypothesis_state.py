"""Hypothesis state: one catalog option (plus parameter bindings) per node.

Option catalogs are the vocabulary of the design space. Each option may
declare or obsolete hyperedge templates (consumed by topology refinement),
carry compatibility tags (consumed by structural rules), and expose finite
or interval parameter domains.

Edits are local: a ``LocalEdit`` is only applicable when its support lies
inside the neighborhood of its routing address, and applying one bumps the
state version by exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import canonical
from .errors import (
    DegenerateEdit,
    DomainViolation,
    IncompleteAssignment,
    MissingAssignment,
    SupportViolation,
    UnknownNode,
    UnknownOption,
)
from .topology import RoutingAddress, Topology, neighborhood

SCHEMA = "hyp/1"

ParamValue = str | int | float | bool


@dataclass(frozen=True)
class FiniteDomain:
    values: tuple[ParamValue, ...]

    def contains(self, v: ParamValue) -> bool:
        return v in self.values

    def default(self) -> ParamValue:
        return self.values[0]

    def to_doc(self) -> dict:
        return {"kind": "finite", "values": list(self.values)}


@dataclass(frozen=True)
class IntervalDomain:
    lo: float
    hi: float

    def contains(self, v: ParamValue) -> bool:
        return isinstance(v, (int, float)) and not isinstance(v, bool) and self.lo <= v <= self.hi

    def default(self) -> ParamValue:
        return self.lo

    def to_doc(self) -> dict:
        return {"kind": "interval", "lo": self.lo, "hi": self.hi}


Domain = FiniteDomain | IntervalDomain


def domain_from_doc(doc: Mapping) -> Domain:
    if doc["kind"] == "finite":
        return FiniteDomain(tuple(doc["values"]))
    if doc["kind"] == "interval":
        return IntervalDomain(doc["lo"], doc["hi"])
    raise DomainViolation(f"unknown domain kind {doc['kind']!r}")


@dataclass(frozen=True)
class EdgeTemplate:
    """Hyperedge shape an option declares or obsoletes."""

    members: tuple[str, ...]
    relation_type: str

    def to_doc(self) -> dict:
        return {"members": list(self.members), "relation_type": self.relation_type}

    @staticmethod
    def from_doc(doc: Mapping) -> "EdgeTemplate":
        return EdgeTemplate(tuple(doc["members"]), doc["relation_type"])


@dataclass(frozen=True)
class OptionSpec:
    id: str
    params: Mapping[str, Domain] = field(default_factory=dict)
    declares: tuple[EdgeTemplate, ...] = ()
    obsoletes: tuple[EdgeTemplate, ...] = ()
    # Compatibility tags, e.g. "provides:latent_repr", "requires:latent_repr",
    # "metric:pcc", "realizes:dataset_split", "incompatible:<option id>".
    tags: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "params": {k: d.to_doc() for k, d in sorted(self.params.items())},
            "declares": [t.to_doc() for t in self.declares],
            "obsoletes": [t.to_doc() for t in self.obsoletes],
            "tags": sorted(self.tags),
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "OptionSpec":
        return OptionSpec(
            id=doc["id"],
            params={k: domain_from_doc(d) for k, d in doc.get("params", {}).items()},
            declares=tuple(EdgeTemplate.from_doc(t) for t in doc.get("declares", ())),
            obsoletes=tuple(EdgeTemplate.from_doc(t) for t in doc.get("obsoletes", ())),
            tags=tuple(doc.get("tags", ())),
        )


@dataclass(frozen=True)
class OptionCatalog:
    node_type: str
    options: tuple[OptionSpec, ...]

    def get(self, option_id: str) -> OptionSpec | None:
        for o in self.options:
            if o.id == option_id:
                return o
        return None

    def option_ids(self) -> tuple[str, ...]:
        return tuple(o.id for o in self.options)

    def to_doc(self) -> dict:
        return {"node_type": self.node_type, "options": [o.to_doc() for o in self.options]}

    @staticmethod
    def from_doc(doc: Mapping) -> "OptionCatalog":
        return OptionCatalog(
            node_type=doc["node_type"],
            options=tuple(OptionSpec.from_doc(o) for o in doc["options"]),
        )


Catalogs = Mapping[str, OptionCatalog]


@dataclass(frozen=True)
class Assignment:
    option_id: str
    params: Mapping[str, ParamValue] = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {"option_id": self.option_id, "params": dict(sorted(self.params.items()))}

    @staticmethod
    def from_doc(doc: Mapping) -> "Assignment":
        return Assignment(option_id=doc["option_id"], params=dict(doc.get("params", {})))


@dataclass(frozen=True)
class HypothesisState:
    assignments: Mapping[str, Assignment]
    version: int = 0

    def to_doc(self) -> dict:
        return {
            "schema": SCHEMA,
            "version": self.version,
            "assignments": {v: a.to_doc() for v, a in sorted(self.assignments.items())},
        }

    def canonical_text(self) -> str:
        return canonical.dumps(self.to_doc())

    def digest(self) -> str:
        return canonical.digest(self.to_doc())

    @staticmethod
    def from_doc(doc: Mapping) -> "HypothesisState":
        return HypothesisState(
            assignments={v: Assignment.from_doc(a) for v, a in doc["assignments"].items()},
            version=doc["version"],
        )


@dataclass(frozen=True)
class LocalEdit:
    """Assignment changes at an address, justified by diagnostic ids."""

    address: RoutingAddress
    changes: Mapping[str, Assignment]
    justification: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {
            "address": self.address.to_doc(),
            "changes": {v: a.to_doc() for v, a in sorted(self.changes.items())},
            "justification": list(self.justification),
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "LocalEdit":
        return LocalEdit(
            address=RoutingAddress.from_doc(doc["address"]),
            changes={v: Assignment.from_doc(a) for v, a in doc["changes"].items()},
            justification=tuple(doc.get("justification", ())),
        )


def _validate_assignment(t: Topology, catalogs: Catalogs, v: str, a: Assignment) -> None:
    node = t.nodes.get(v)
    if node is None:
        raise UnknownNode(f"assignment targets unknown node {v!r}")
    catalog = catalogs.get(node.node_type)
    opt = catalog.get(a.option_id) if catalog else None
    if opt is None:
        raise UnknownOption(f"option {a.option_id!r} not in catalog for {node.node_type!r}")
    for name, value in a.params.items():
        dom = opt.params.get(name)
        if dom is None:
            raise DomainViolation(f"option {opt.id!r} has no parameter {name!r}")
        if not dom.contains(value):
            raise DomainViolation(f"value {value!r} outside domain of {opt.id}.{name}")
    for name in opt.params:
        if name not in a.params:
            raise DomainViolation(f"parameter {opt.id}.{name} left unbound")


def default_assignment(opt: OptionSpec) -> Assignment:
    return Assignment(
        option_id=opt.id,
        params={name: dom.default() for name, dom in sorted(opt.params.items())},
    )


def new_hypothesis(
    t: Topology,
    catalogs: Catalogs,
    seed_assignments: Mapping[str, Assignment] | None = None,
    default_policy: str = "first",
) -> HypothesisState:
    """Initial state at version 0: seeded assignments where given, the
    default policy (first catalog option, default bindings) elsewhere."""
    if default_policy != "first":
        raise MissingAssignment(f"unknown default policy {default_policy!r}")
    seed_assignments = dict(seed_assignments or {})
    for v in seed_assignments:
        if v not in t.nodes:
            raise UnknownNode(f"seed assignment targets unknown node {v!r}")
    assignments: dict[str, Assignment] = {}
    for v in sorted(t.nodes):
        node = t.nodes[v]
        if v in seed_assignments:
            a = seed_assignments[v]
        else:
            catalog = catalogs.get(node.node_type)
            if catalog is None or not catalog.options:
                raise MissingAssignment(
                    f"no seed and no catalog default for node {v!r} ({node.node_type})"
                )
            a = default_assignment(catalog.options[0])
        _validate_assignment(t, catalogs, v, a)
        assignments[v] = a
    return HypothesisState(assignments=assignments, version=0)


def edit_support(delta: LocalEdit) -> tuple[str, ...]:
    """Node ids an edit touches, sorted."""
    return tuple(sorted(delta.changes))


def apply_edit(
    h: HypothesisState,
    delta: LocalEdit,
    t: Topology,
    catalogs: Catalogs,
) -> HypothesisState:
    """New state with the edit applied and version bumped by one.

    The support must sit inside ``neighborhood(t, delta.address)``; a
    degenerate (empty) edit is a caller error, not a no-op.
    """
    if not delta.changes:
        raise DegenerateEdit("edit carries no changes")
    reach = set(neighborhood(t, delta.address))
    outside = [v for v in edit_support(delta) if v not in reach]
    if outside:
        raise SupportViolation(f"edit touches nodes outside its address reach: {outside}")
    for v, a in delta.changes.items():
        if v not in h.assignments:
            raise MissingAssignment(f"edit changes unassigned node {v!r}")
        _validate_assignment(t, catalogs, v, a)
    merged = dict(h.assignments)
    merged.update(delta.changes)
    return HypothesisState(assignments=merged, version=h.version + 1)


def complete_for(h: HypothesisState, t: Topology) -> None:
    """Raise IncompleteAssignment unless h assigns every node of t."""
    missing = sorted(set(t.nodes) - set(h.assignments))
    if missing:
        raise IncompleteAssignment(f"hypothesis missing assignments for {missing}")
