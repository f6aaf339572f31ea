"""Typed hypergraph over design decisions.

The design space is a set of typed decision nodes joined by typed
hyperedges. Nodes carry a reference to the option catalog that governs
them; hyperedges group nodes that must be reasoned about together
(dataflow chains, couplings, stage ordering, compatibility groups).

Structure is immutable: every mutation produces a new ``Topology`` value,
and every reachable value satisfies the class invariants (member
resolvability, the routing degree bound, dataflow acyclicity).
"""

from __future__ import annotations

import graphlib
import logging
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping

from . import canonical
from .errors import (
    DanglingEdgeMember,
    DataflowCycle,
    DegreeBoundExceeded,
    IncompleteAssignment,
    UnknownAddress,
    UnknownNode,
    UnknownOption,
)

if TYPE_CHECKING:
    from .hypothesis_state import HypothesisState, OptionCatalog

log = logging.getLogger(__name__)

SCHEMA = "hrt/1"

DEFAULT_DEGREE_BOUND = 8

NODE_TYPES = frozenset(
    {
        "preprocessing",
        "perturbation_representation",
        "cellular_state_encoding",
        "fusion",
        "architecture",
        "objective",
        "training_strategy",
        "evaluation_adapter",
        "data_adapter",
    }
)

RELATION_TYPES = frozenset({"dataflow", "coupling", "stage_order", "compatibility"})

# Pipeline position per node type; the two representation encoders sit in
# parallel branches and share a stage.
STAGE_INDEX: Mapping[str, int] = {
    "data_adapter": 0,
    "preprocessing": 1,
    "perturbation_representation": 2,
    "cellular_state_encoding": 2,
    "fusion": 3,
    "architecture": 4,
    "objective": 5,
    "training_strategy": 6,
    "evaluation_adapter": 7,
}


@dataclass(frozen=True)
class DecisionNode:
    id: str
    node_type: str
    option_catalog_ref: str


@dataclass(frozen=True)
class Hyperedge:
    """A typed, ordered grouping of two or more distinct nodes.

    Member order is meaningful for ``dataflow`` and ``stage_order`` edges:
    consecutive members form directed pairs.
    """

    id: str
    members: tuple[str, ...]
    relation_type: str


@dataclass(frozen=True)
class RoutingAddress:
    kind: str  # "node" | "hyperedge"
    target: str

    def to_doc(self) -> dict:
        return {"kind": self.kind, "target": self.target}

    @staticmethod
    def from_doc(doc: Mapping) -> "RoutingAddress":
        return RoutingAddress(kind=doc["kind"], target=doc["target"])


@dataclass(frozen=True)
class Topology:
    nodes: Mapping[str, DecisionNode]
    hyperedges: Mapping[str, Hyperedge]
    routing_degree_bound: int = DEFAULT_DEGREE_BOUND

    def to_doc(self) -> dict:
        return {
            "schema": SCHEMA,
            "routing_degree_bound": self.routing_degree_bound,
            "nodes": [
                {
                    "id": n.id,
                    "node_type": n.node_type,
                    "option_catalog_ref": n.option_catalog_ref,
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.id)
            ],
            "hyperedges": [
                {
                    "id": e.id,
                    "members": list(e.members),
                    "relation_type": e.relation_type,
                }
                for e in sorted(self.hyperedges.values(), key=lambda e: e.id)
            ],
        }

    def canonical_text(self) -> str:
        return canonical.dumps(self.to_doc())

    @staticmethod
    def from_doc(doc: Mapping) -> "Topology":
        return build_topology(
            nodes=[
                DecisionNode(n["id"], n["node_type"], n["option_catalog_ref"])
                for n in doc["nodes"]
            ],
            edges=[
                Hyperedge(e["id"], tuple(e["members"]), e["relation_type"])
                for e in doc["hyperedges"]
            ],
            degree_bound=doc["routing_degree_bound"],
        )


def dataflow_pairs(t: Topology) -> list[tuple[str, str]]:
    """Directed (source, target) pairs induced by dataflow edge chains."""
    pairs: list[tuple[str, str]] = []
    for e in sorted(t.hyperedges.values(), key=lambda e: e.id):
        if e.relation_type != "dataflow":
            continue
        pairs.extend(zip(e.members, e.members[1:]))
    return pairs


def _check_dataflow_acyclic(nodes: Iterable[str], pairs: Iterable[tuple[str, str]]) -> None:
    sorter: graphlib.TopologicalSorter = graphlib.TopologicalSorter()
    for v in nodes:
        sorter.add(v)
    for src, dst in pairs:
        sorter.add(dst, src)
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        raise DataflowCycle(f"dataflow relation contains a cycle: {exc.args[1]}") from exc


def build_topology(
    nodes: Iterable[DecisionNode],
    edges: Iterable[Hyperedge],
    degree_bound: int = DEFAULT_DEGREE_BOUND,
) -> Topology:
    """Validate and assemble a topology.

    Raises DanglingEdgeMember, DegreeBoundExceeded, or DataflowCycle when
    the inputs violate a class invariant.
    """
    node_map: dict[str, DecisionNode] = {}
    for n in nodes:
        if n.id in node_map:
            raise DanglingEdgeMember(f"duplicate node id {n.id!r}")
        if n.node_type not in NODE_TYPES:
            raise UnknownNode(f"unknown node type {n.node_type!r} at node {n.id!r}")
        node_map[n.id] = n

    edge_map: dict[str, Hyperedge] = {}
    degree: dict[str, int] = {v: 0 for v in node_map}
    for e in edges:
        if e.id in edge_map:
            raise DanglingEdgeMember(f"duplicate hyperedge id {e.id!r}")
        if e.relation_type not in RELATION_TYPES:
            raise UnknownAddress(f"unknown relation type {e.relation_type!r} on edge {e.id!r}")
        if len(set(e.members)) != len(e.members) or len(e.members) < 2:
            raise DanglingEdgeMember(
                f"edge {e.id!r} must reference at least two distinct nodes"
            )
        for v in e.members:
            if v not in node_map:
                raise DanglingEdgeMember(f"edge {e.id!r} references missing node {v!r}")
            degree[v] += 1
            if degree[v] > degree_bound:
                raise DegreeBoundExceeded(
                    f"node {v!r} exceeds routing degree bound {degree_bound}"
                )
        edge_map[e.id] = e

    t = Topology(nodes=node_map, hyperedges=edge_map, routing_degree_bound=degree_bound)
    _check_dataflow_acyclic(node_map, dataflow_pairs(t))
    return t


def node_degree(t: Topology, v: str) -> int:
    """Number of hyperedges whose member set contains v."""
    if v not in t.nodes:
        raise UnknownNode(f"unknown node {v!r}")
    return sum(1 for e in t.hyperedges.values() if v in e.members)


def neighborhood(t: Topology, a: RoutingAddress) -> tuple[str, ...]:
    """Edit reach of an address: the addressed node plus every node sharing a
    hyperedge with it, or a hyperedge's member set. Sorted by node id."""
    if a.kind == "node":
        if a.target not in t.nodes:
            raise UnknownAddress(f"unknown node address {a.target!r}")
        reach = {a.target}
        for e in t.hyperedges.values():
            if a.target in e.members:
                reach.update(e.members)
        return tuple(sorted(reach))
    if a.kind == "hyperedge":
        edge = t.hyperedges.get(a.target)
        if edge is None:
            raise UnknownAddress(f"unknown hyperedge address {a.target!r}")
        return tuple(sorted(set(edge.members)))
    raise UnknownAddress(f"unknown address kind {a.kind!r}")


_GENERATED_ID = re.compile(r"^e(\d{6})$")


def next_edge_ids(t: Topology, count: int) -> list[str]:
    """Fresh hyperedge ids that sort strictly after every existing id.

    Generated ids follow ``e%06d``; when the caller used that scheme the
    counter continues it, otherwise ids are suffixed onto the current
    maximum so string order still respects assignment order.
    """
    if not t.hyperedges:
        return [f"e{i:06d}" for i in range(count)]
    existing = sorted(t.hyperedges)
    numeric = [_GENERATED_ID.match(i) for i in existing]
    if all(numeric):
        start = max(int(m.group(1)) for m in numeric if m) + 1
        return [f"e{start + i:06d}" for i in range(count)]
    base = existing[-1]
    return [f"{base}+{i:06d}" for i in range(count)]


def refine_topology(
    t: Topology,
    h_next: "HypothesisState",
    a: RoutingAddress,
    catalogs: Mapping[str, "OptionCatalog"],
) -> Topology:
    """Apply catalog-declared edge changes local to ``neighborhood(t, a)``.

    Options newly in force at neighborhood nodes may obsolete existing
    hyperedges and declare new ones. Additions that would break the degree
    bound or dataflow acyclicity are skipped and logged, never forced; no
    edge disjoint from the neighborhood is touched.
    """
    neigh = neighborhood(t, a)
    neigh_set = set(neigh)

    edges: dict[str, Hyperedge] = dict(t.hyperedges)

    def resolve_option(v: str):
        assignment = h_next.assignments.get(v)
        if assignment is None:
            raise IncompleteAssignment(f"hypothesis does not assign node {v!r}")
        node = t.nodes[v]
        catalog = catalogs.get(node.node_type)
        if catalog is None:
            raise UnknownOption(f"no catalog for node type {node.node_type!r}")
        opt = catalog.get(assignment.option_id)
        if opt is None:
            raise UnknownOption(
                f"option {assignment.option_id!r} not in catalog {node.node_type!r}"
            )
        return opt

    # Pass 1: removals declared obsolete by the options now in force.
    for v in neigh:
        opt = resolve_option(v)
        for tmpl in opt.obsoletes:
            wanted = frozenset(tmpl.members)
            if not wanted & neigh_set:
                log.info("refine: obsolete template %s disjoint from neighborhood, skipped", tmpl)
                continue
            for eid in sorted(edges):
                e = edges[eid]
                if frozenset(e.members) == wanted and e.relation_type == tmpl.relation_type:
                    del edges[eid]

    # Pass 2: additions, in node order then catalog order.
    degree: dict[str, int] = {v: 0 for v in t.nodes}
    for e in edges.values():
        for v in e.members:
            degree[v] += 1
    present = {(e.members, e.relation_type) for e in edges.values()}
    pending: list[tuple[tuple[str, ...], str]] = []
    for v in neigh:
        opt = resolve_option(v)
        for tmpl in opt.declares:
            members = tuple(tmpl.members)
            key = (members, tmpl.relation_type)
            if key in present:
                continue
            if len(set(members)) != len(members) or len(members) < 2:
                log.info("refine: declared template %s malformed, skipped", tmpl)
                continue
            if any(m not in t.nodes for m in members):
                log.info("refine: declared template %s names unknown nodes, skipped", tmpl)
                continue
            if not set(members) & neigh_set:
                log.info("refine: declared template %s disjoint from neighborhood, skipped", tmpl)
                continue
            if any(degree[m] + 1 > t.routing_degree_bound for m in members):
                log.info(
                    "refine: declared edge %s would exceed degree bound %d, skipped",
                    members,
                    t.routing_degree_bound,
                )
                continue
            if tmpl.relation_type == "dataflow":
                trial = [
                    p
                    for e in edges.values()
                    if e.relation_type == "dataflow"
                    for p in zip(e.members, e.members[1:])
                ]
                trial += [
                    p
                    for mem, rel in pending
                    if rel == "dataflow"
                    for p in zip(mem, mem[1:])
                ]
                trial += list(zip(members, members[1:]))
                try:
                    _check_dataflow_acyclic(t.nodes, trial)
                except DataflowCycle:
                    log.info("refine: declared dataflow edge %s would create a cycle, skipped", members)
                    continue
            present.add(key)
            pending.append(key)
            for m in members:
                degree[m] += 1

    base = Topology(nodes=t.nodes, hyperedges=edges, routing_degree_bound=t.routing_degree_bound)
    ids = next_edge_ids(base, len(pending))
    for eid, (members, relation) in zip(ids, pending):
        edges[eid] = Hyperedge(id=eid, members=members, relation_type=relation)

    return Topology(nodes=t.nodes, hyperedges=edges, routing_degree_bound=t.routing_degree_bound)
