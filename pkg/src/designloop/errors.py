"""Error vocabulary for the engine.

Every failure mode callers are expected to branch on gets its own type.
Rejection of a candidate is NOT an error (it is a value); these exceptions
cover contract violations, missing inputs, and storage faults.
"""

from __future__ import annotations


class DesignLoopError(Exception):
    """Base class for all engine errors."""


# -- design-space construction and queries ----------------------------------

class DegreeBoundExceeded(DesignLoopError):
    """A node's hyperedge membership count went past the routing degree bound."""


class DanglingEdgeMember(DesignLoopError):
    """A hyperedge references a node id that does not exist."""


class DataflowCycle(DesignLoopError):
    """The dataflow relation induced by the hyperedges contains a cycle."""


class UnknownNode(DesignLoopError):
    pass


class UnknownAddress(DesignLoopError):
    pass


class IncompleteAssignment(DesignLoopError):
    """A hypothesis does not assign every node of the topology."""


# -- hypothesis edits --------------------------------------------------------

class UnknownOption(DesignLoopError):
    pass


class DomainViolation(DesignLoopError):
    """A parameter binding falls outside its declared domain."""


class MissingAssignment(DesignLoopError):
    pass


class SupportViolation(DesignLoopError):
    """An edit touches nodes outside the neighborhood of its address."""


class DegenerateEdit(DesignLoopError):
    """An edit with an empty change set; always a caller bug."""


# -- realization -------------------------------------------------------------

class BackendUnavailable(DesignLoopError):
    pass


class MalformedProposal(DesignLoopError):
    """Backend reply could not be parsed into a candidate bundle."""


class FixtureMissing(DesignLoopError):
    """A dry-run rule was requested but the task spec has no fixture."""


class ManifestMismatch(DesignLoopError):
    """Candidate manifest keys do not line up with the hypothesis nodes."""


class MalformedBlockMarker(DesignLoopError):
    """Reusable-block markers in a candidate file do not parse."""


# -- execution and feedback --------------------------------------------------

class SandboxSetupFailure(DesignLoopError):
    pass


class MissingMetric(DesignLoopError):
    """Selection metric absent from an otherwise parseable metric report."""


class NoTemplateMatch(DesignLoopError):
    """No routing template matched; callers convert this to the fallback."""


class NoLegalEdit(DesignLoopError):
    """Every node reachable from the routed address is protected or frozen."""


# -- controller and selection --------------------------------------------------

class NoAdmissibleCandidate(DesignLoopError):
    """All iterations were rejected; the run carries a trace but no selection."""


# -- trace store ---------------------------------------------------------------

class IterationGap(DesignLoopError):
    """Appended record does not continue the iteration sequence."""


class StorageFailure(DesignLoopError):
    pass


class MissingRoutingData(DesignLoopError):
    """Record lacks the fields required to emit a routing wire record."""


class CorruptRecord(DesignLoopError):
    pass


class ArtifactMissing(DesignLoopError):
    pass


class TemplateMissing(DesignLoopError):
    """Mock backend has no template for a (node type, option) pair."""
