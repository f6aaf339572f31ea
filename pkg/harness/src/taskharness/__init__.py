"""Seeded toy perturbation-response tasks plus candidate-program
templates for exercising the design-loop engine end to end."""

from .contract import (
    MetricReport,
    parse_metric_report,
    split_hash,
    split_manifest_doc,
    suite_doc,
)
from .engineio import EngineRun, run_engine, write_engine_inputs
from .generate import EFFECTS, SPLIT_MODES, ToyTask, generate_task
from .runner import RunResult, run_candidate
from .templates import (
    ProgramTemplate,
    assemble,
    library_doc,
    space_doc,
    template_suite,
)

__all__ = [
    "EFFECTS",
    "EngineRun",
    "MetricReport",
    "ProgramTemplate",
    "RunResult",
    "SPLIT_MODES",
    "ToyTask",
    "assemble",
    "generate_task",
    "library_doc",
    "parse_metric_report",
    "run_candidate",
    "run_engine",
    "space_doc",
    "split_hash",
    "split_manifest_doc",
    "suite_doc",
    "template_suite",
    "write_engine_inputs",
]

__version__ = "0.1.0"
