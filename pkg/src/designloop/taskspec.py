"""Task contract: dataset locators, frozen split, evaluation suite.

The split manifest is fixed before a run starts and hashed; every run
record carries the hash so an audit can prove the partition never moved.
Plug-in diagnostics register through the evaluation suite and are the only
extension point for feedback kinds beyond the five core ones.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Callable, Mapping

from . import canonical


@dataclass(frozen=True)
class SplitManifest:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        groups = (set(self.train_ids), set(self.val_ids), set(self.test_ids))
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = groups[i] & groups[j]
                if overlap:
                    raise ValueError(f"split partitions overlap: {sorted(overlap)[:5]}")

    def to_doc(self) -> dict:
        return {
            "train": sorted(self.train_ids),
            "val": sorted(self.val_ids),
            "test": sorted(self.test_ids),
        }

    def content_hash(self) -> str:
        return canonical.digest(self.to_doc())

    @staticmethod
    def from_doc(doc: Mapping) -> "SplitManifest":
        return SplitManifest(
            train_ids=tuple(doc["train"]),
            val_ids=tuple(doc["val"]),
            test_ids=tuple(doc["test"]),
        )


_OPS: Mapping[str, Callable[[float, float], bool]] = {
    "lt": operator.lt,
    "gt": operator.gt,
    "le": operator.le,
    "ge": operator.ge,
}


@dataclass(frozen=True)
class DiagnosticPlugin:
    """Threshold trigger on a reported metric; fires a typed diagnostic."""

    kind: str
    metric: str
    op: str
    threshold: float

    def trigger(self, metric_report: Mapping[str, float]) -> dict | None:
        value = metric_report.get(self.metric)
        if value is None:
            return None
        if _OPS[self.op](value, self.threshold):
            return {
                "metric": self.metric,
                "value": value,
                "op": self.op,
                "threshold": self.threshold,
            }
        return None

    def to_doc(self) -> dict:
        return {
            "kind": self.kind,
            "metric": self.metric,
            "op": self.op,
            "threshold": self.threshold,
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "DiagnosticPlugin":
        return DiagnosticPlugin(doc["kind"], doc["metric"], doc["op"], doc["threshold"])


@dataclass(frozen=True)
class EvaluationSuite:
    metric_ids: tuple[str, ...]
    selection_metric: str
    direction: str = "max"  # "max" | "min"
    plugins: tuple[DiagnosticPlugin, ...] = ()

    def __post_init__(self) -> None:
        if self.selection_metric not in self.metric_ids:
            raise ValueError("selection metric must be one of the suite metric ids")
        if self.direction not in ("max", "min"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def to_doc(self) -> dict:
        return {
            "metric_ids": list(self.metric_ids),
            "selection_metric": self.selection_metric,
            "direction": self.direction,
            "plugins": [p.to_doc() for p in self.plugins],
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "EvaluationSuite":
        return EvaluationSuite(
            metric_ids=tuple(doc["metric_ids"]),
            selection_metric=doc["selection_metric"],
            direction=doc.get("direction", "max"),
            plugins=tuple(DiagnosticPlugin.from_doc(p) for p in doc.get("plugins", ())),
        )


# Components every run treats as immutable regardless of template choice.
CORE_PROTECTED = (
    "dataset_split",
    "target_definition",
    "validation_protocol",
    "evaluation_metrics",
    "test_protocol",
)


@dataclass(frozen=True)
class TaskSpec:
    """Everything the engine may know about the task.

    ``train_view`` / ``val_view`` are directories copied into the sandbox;
    ``test_view`` exists only for the one-shot final evaluation and is never
    mounted during refinement. ``fixture_view`` backs dry-run checks.
    """

    dataset: str
    suite: EvaluationSuite
    split: SplitManifest
    inputs_ref: str = ""
    perturbation_ref: str = ""
    targets_ref: str = ""
    train_view: str | None = None
    val_view: str | None = None
    test_view: str | None = None
    fixture_view: str | None = None
    protected_tags: tuple[str, ...] = CORE_PROTECTED

    def to_doc(self) -> dict:
        return {
            "dataset": self.dataset,
            "suite": self.suite.to_doc(),
            "split": self.split.to_doc(),
            "inputs_ref": self.inputs_ref,
            "perturbation_ref": self.perturbation_ref,
            "targets_ref": self.targets_ref,
            "train_view": self.train_view,
            "val_view": self.val_view,
            "test_view": self.test_view,
            "fixture_view": self.fixture_view,
            "protected_tags": list(self.protected_tags),
        }

    @staticmethod
    def from_doc(doc: Mapping) -> "TaskSpec":
        return TaskSpec(
            dataset=doc["dataset"],
            suite=EvaluationSuite.from_doc(doc["suite"]),
            split=SplitManifest.from_doc(doc["split"]),
            inputs_ref=doc.get("inputs_ref", ""),
            perturbation_ref=doc.get("perturbation_ref", ""),
            targets_ref=doc.get("targets_ref", ""),
            train_view=doc.get("train_view"),
            val_view=doc.get("val_view"),
            test_view=doc.get("test_view"),
            fixture_view=doc.get("fixture_view"),
            protected_tags=tuple(doc.get("protected_tags", CORE_PROTECTED)),
        )
