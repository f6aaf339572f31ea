"""designloop: closed-loop refinement of executable predictive models.

A typed hypergraph spans the design space; a hypothesis assigns one
option per decision node. Each iteration realizes the hypothesis as a
runnable bundle behind structural and implementation rule gates, executes
it in a sandbox, condenses the outcome into typed diagnostics, routes
them to an editable region, and applies one local edit. Selection is by
validation metric over the admissible history; every step lands in an
append-only trace that the audit tools can recompute from scratch.
"""

from .controller import (
    ControllerBudget,
    ControllerConfig,
    EfficiencySummary,
    RunRecord,
    Selection,
    SelectionPolicy,
    WorkflowResult,
    best_so_far,
    efficiency_metrics,
    final_evaluation,
    mode_config,
    run_workflow,
    select_best,
)
from .errors import DesignLoopError
from .feedback import (
    Diagnostic,
    ExecutionReport,
    FeedbackVector,
    RoutingDecision,
    RoutingTemplate,
    build_edit,
    default_templates,
    execute_candidate,
    extract_feedback,
    route,
)
from .hypothesis_state import (
    Assignment,
    HypothesisState,
    LocalEdit,
    OptionCatalog,
    OptionSpec,
    apply_edit,
    new_hypothesis,
)
from .realization import (
    CandidateImplementation,
    ImplementationRuleSet,
    ModuleMemory,
    RealizationOutcome,
    default_implementation_rules,
    realize,
)
from .rules import AdmissibilityReport, StructuralRuleSet, check_structural, default_structural_rules
from .taskspec import DiagnosticPlugin, EvaluationSuite, SplitManifest, TaskSpec
from .topology import DecisionNode, Hyperedge, RoutingAddress, Topology, build_topology, refine_topology
from .trace import ArtifactStore, TraceStore, emit_routing_record, read_trace

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityReport",
    "ArtifactStore",
    "Assignment",
    "CandidateImplementation",
    "ControllerBudget",
    "ControllerConfig",
    "DecisionNode",
    "DesignLoopError",
    "Diagnostic",
    "DiagnosticPlugin",
    "EfficiencySummary",
    "EvaluationSuite",
    "ExecutionReport",
    "FeedbackVector",
    "Hyperedge",
    "HypothesisState",
    "ImplementationRuleSet",
    "LocalEdit",
    "ModuleMemory",
    "OptionCatalog",
    "OptionSpec",
    "RealizationOutcome",
    "RoutingAddress",
    "RoutingDecision",
    "RoutingTemplate",
    "RunRecord",
    "Selection",
    "SelectionPolicy",
    "SplitManifest",
    "StructuralRuleSet",
    "TaskSpec",
    "Topology",
    "TraceStore",
    "WorkflowResult",
    "apply_edit",
    "best_so_far",
    "build_edit",
    "build_topology",
    "check_structural",
    "default_implementation_rules",
    "default_structural_rules",
    "default_templates",
    "efficiency_metrics",
    "emit_routing_record",
    "execute_candidate",
    "extract_feedback",
    "final_evaluation",
    "mode_config",
    "new_hypothesis",
    "read_trace",
    "realize",
    "refine_topology",
    "route",
    "run_workflow",
    "select_best",
]
