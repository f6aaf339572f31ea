"""Engine-facing document contracts, restated on the harness side.

The harness talks to the refinement engine exclusively through files:
task documents, design-space documents, template-library documents, run
configs, and the sandbox's metric report. This module pins down those
shapes so the rest of the package never has to import the engine.

Sandbox layout seen by a candidate program:

* ``data/<view>/`` holds each mounted data view (read-only copies);
* ``out/`` is writable for artifacts;
* ``EVAL_SPLIT`` names the split to score (``validation`` during
  refinement, ``test`` in the one-shot final evaluation);
* the program writes ``metrics.json``:
  ``{"metrics": {<id>: <finite real>, ...}, "split": <split tag>}``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

RUN_SCHEMA = "run/1"
LIBRARY_SCHEMA = "lib/1"
HYPOTHESIS_SCHEMA = "hyp/1"
TOPOLOGY_SCHEMA = "hrt/1"

REPORT_NAME = "metrics.json"
TRACE_NAME = "trace.jsonl"

# Suite shipped with every generated task. "pcc" is scored on the split
# named by EVAL_SPLIT; "train_pcc" is the training fit; "batch_gap" is
# their difference and feeds the batch-shortcut diagnostic plugin.
METRIC_IDS = ("pcc", "train_pcc", "batch_gap")
SELECTION_METRIC = "pcc"
BATCH_GAP_ALERT = 0.25

# Components the engine must never let an edit or repair touch.
PROTECTED_COMPONENTS = (
    "dataset_split",
    "target_definition",
    "validation_protocol",
    "evaluation_metrics",
    "test_protocol",
)


def canonical_dumps(doc: Any) -> str:
    """Compact JSON with sorted keys; the engine hashes documents in
    exactly this form."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_digest(doc: Any) -> str:
    return hashlib.sha256(canonical_dumps(doc).encode("utf-8")).hexdigest()


def split_manifest_doc(
    train_ids: Sequence[str], val_ids: Sequence[str], test_ids: Sequence[str]
) -> dict:
    return {
        "train": sorted(train_ids),
        "val": sorted(val_ids),
        "test": sorted(test_ids),
    }


def split_hash(manifest: Mapping) -> str:
    """Content hash of a split manifest, matching the hash the engine
    stamps into every trace header and record."""
    return content_digest(
        split_manifest_doc(manifest["train"], manifest["val"], manifest["test"])
    )


def suite_doc() -> dict:
    return {
        "metric_ids": list(METRIC_IDS),
        "selection_metric": SELECTION_METRIC,
        "direction": "max",
        "plugins": [
            {
                "kind": "batch_shortcut_risk",
                "metric": "batch_gap",
                "op": "gt",
                "threshold": BATCH_GAP_ALERT,
            }
        ],
    }


@dataclass(frozen=True)
class MetricReport:
    """Parsed metric report, or the reason it does not parse."""

    metrics: Mapping[str, float] | None
    split: str | None
    error: str | None

    @property
    def ok(self) -> bool:
        return self.error is None


def parse_metric_report(path: Path) -> MetricReport:
    """Validate a metrics.json against the report grammar.

    Mirrors the engine's reader: a mapping under "metrics" with real
    values and a string "split" tag. Missing files and malformed
    documents come back as errors, never exceptions.
    """
    if not path.exists():
        return MetricReport(None, None, "metric report absent")
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        return MetricReport(None, None, f"metric report unparseable: {exc}")
    if not isinstance(doc, dict) or not isinstance(doc.get("metrics"), dict):
        return MetricReport(None, None, "metric report missing 'metrics' mapping")
    metrics: dict[str, float] = {}
    for key, value in doc["metrics"].items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return MetricReport(None, None, f"metric {key!r} is not a real number")
        metrics[str(key)] = float(value)
    split = doc.get("split")
    if not isinstance(split, str):
        return MetricReport(None, None, "metric report missing 'split' tag")
    return MetricReport(metrics, split, None)


def write_json(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def read_trace_documents(trace_dir: Path) -> list[dict]:
    """All well-formed JSON lines of a trace, in file order."""
    path = Path(trace_dir) / TRACE_NAME
    docs: list[dict] = []
    for line in path.read_text("utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            docs.append(doc)
    return docs


def trace_records(trace_dir: Path) -> list[dict]:
    return [d for d in read_trace_documents(trace_dir) if d.get("kind") == "record"]
