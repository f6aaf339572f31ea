"""Seeded generation of desk-scale perturbation-response tasks.

Each task is a table of unit-scale cell-state features, a categorical
perturbation id with a dose scalar, a synthetic plate (batch) id, and a
real-valued response. The response mixes a linear feature signal, a
per-perturbation dose effect (additive or dose-gated multiplicative),
an optional plate confounder, and a little noise.

Two split disciplines:

* ``by_perturbation`` holds out whole perturbation ids, so a model must
  generalize to unseen treatments through shared feature and dose
  structure;
* ``by_plate_analog`` holds out whole plate ids. Each plate shifts the
  observed features along its own signature direction and adds its own
  response level, with levels spread across the plates of every
  partition. The level is arbitrary per plate rather than a fixed
  function of the signature, so the only way features explain it is by
  memorizing training plates; that shortcut collapses on held-out
  plates and shows up as a train-minus-validation metric gap.

The train and val partitions live under ``data/``; the test partition
is written under ``holdout/`` so refinement-time sandboxes never mount
it. Everything is a pure function of the seed and sizes.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from pathlib import Path

from . import contract

SPLIT_MODES = ("by_perturbation", "by_plate_analog")
EFFECTS = ("additive", "multiplicative")

MIN_SAMPLES = 60
MIN_UNITS = 5  # smallest unit pool that still yields a 3/1/1 split

FIXTURE_TRAIN_ROWS = 32
FIXTURE_VAL_ROWS = 16

# Response composition weights, frozen so metrics are comparable across
# seeds. The multiplicative task keeps a small additive component so the
# plain concatenation fusion also has signal to find.
BASE_SCALE = 1.0
ADDITIVE_SCALE = 0.9
GATED_SCALE = 1.2
GATED_ADDITIVE_SCALE = 0.3

DEFAULT_PLATE_FEATURE_SHIFT = 1.0
DEFAULT_PLATE_TARGET_OFFSET = 1.0


@dataclass(frozen=True)
class ToyTask:
    """Locations and identity of one generated task."""

    root: str
    dataset: str
    seed: int
    split_mode: str
    effect: str
    split_hash: str
    n_train: int
    n_val: int
    n_test: int

    @property
    def train_view(self) -> str:
        return str(Path(self.root) / "data" / "train")

    @property
    def val_view(self) -> str:
        return str(Path(self.root) / "data" / "val")

    @property
    def test_view(self) -> str:
        return str(Path(self.root) / "holdout" / "test")

    @property
    def fixture_view(self) -> str:
        return str(Path(self.root) / "fixture")

    @property
    def task_doc_path(self) -> str:
        return str(Path(self.root) / "task.json")

    def refinement_views(self) -> dict[str, str]:
        return {"train": self.train_view, "val": self.val_view}

    def final_views(self) -> dict[str, str]:
        return {"train": self.train_view, "test": self.test_view}


@dataclass(frozen=True)
class _Row:
    sample_id: str
    features: tuple[float, ...]
    pert: str
    dose: float
    batch: str
    target: float


def _dot(u: list[float], x: tuple[float, ...] | list[float]) -> float:
    return sum(a * b for a, b in zip(u, x))


def _write_view(directory: Path, rows: list[_Row], n_features: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    header = (
        ["sample_id"]
        + [f"x{j:02d}" for j in range(n_features)]
        + ["pert", "dose", "batch", "target"]
    )
    with open(directory / "samples.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow(
                [r.sample_id]
                + [repr(v) for v in r.features]
                + [r.pert, repr(r.dose), r.batch, repr(r.target)]
            )


def _partition_units(rng: random.Random, units: list[str]) -> tuple[set, set, set]:
    order = rng.sample(units, len(units))
    n_train = max(1, round(0.6 * len(order)))
    n_val = max(1, round(0.2 * len(order)))
    if n_train + n_val >= len(order):
        n_train = len(order) - n_val - 1
    return set(order[:n_train]), set(order[n_train : n_train + n_val]), set(
        order[n_train + n_val :]
    )


def _spread_levels(groups: tuple[set, ...]) -> dict[str, float]:
    """Per-unit levels in [-1, 1], equally spaced within each group so
    every partition sees the full range (a single-member group sits at
    zero, which a correlation metric ignores anyway)."""
    levels: dict[str, float] = {}
    for group in groups:
        members = sorted(group)
        k = len(members)
        for i, name in enumerate(members):
            levels[name] = -1.0 + 2.0 * i / (k - 1) if k > 1 else 0.0
    return levels


def generate_task(
    root: str | Path,
    seed: int,
    split_mode: str = "by_perturbation",
    n_samples: int = 240,
    n_features: int = 6,
    n_perturbations: int = 12,
    n_batches: int = 8,
    effect: str = "multiplicative",
    noise: float = 0.02,
    plate_feature_shift: float | None = None,
    plate_target_offset: float | None = None,
) -> ToyTask:
    """Write one task to ``root`` and return its locations.

    The plate confounder is on by default only in ``by_plate_analog``
    mode; pass explicit shift/offset scales to override. Raises
    ValueError when sizes fall below the minimums.
    """
    if split_mode not in SPLIT_MODES:
        raise ValueError(f"unknown split mode {split_mode!r}")
    if effect not in EFFECTS:
        raise ValueError(f"unknown effect kind {effect!r}")
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n_samples}")
    if n_features < 2:
        raise ValueError("need at least 2 features")
    if not MIN_UNITS <= n_perturbations <= n_samples:
        raise ValueError(f"need {MIN_UNITS} <= perturbations <= samples")
    if not MIN_UNITS <= n_batches <= n_samples:
        raise ValueError(f"need {MIN_UNITS} <= batches <= samples")

    plate_mode = split_mode == "by_plate_analog"
    shift = (
        plate_feature_shift
        if plate_feature_shift is not None
        else (DEFAULT_PLATE_FEATURE_SHIFT if plate_mode else 0.0)
    )
    offset = (
        plate_target_offset
        if plate_target_offset is not None
        else (DEFAULT_PLATE_TARGET_OFFSET if plate_mode else 0.0)
    )

    rng = random.Random(seed)
    scale = 1.0 / math.sqrt(n_features)
    w_base = [rng.uniform(-1.0, 1.0) for _ in range(n_features)]
    w_gate = [rng.uniform(-1.0, 1.0) for _ in range(n_features)]

    perts = [f"pert{k:02d}" for k in range(n_perturbations)]
    strength = {p: rng.uniform(0.6, 1.4) for p in perts}
    batches = [f"plate{b:02d}" for b in range(n_batches)]
    plate_sig = {
        b: [rng.uniform(-1.0, 1.0) for _ in range(n_features)] for b in batches
    }

    units = batches if plate_mode else perts
    train_units, val_units, test_units = _partition_units(rng, units)
    groups = (train_units, val_units, test_units)
    if plate_mode:
        plate_level = _spread_levels(groups)
        # Each held-out plate mirrors the signature of the training
        # plate with the nearest level, so a model that learned to read
        # plate levels out of the features predicts roughly the negated
        # level there. The shortcut anti-generalizes by construction
        # instead of merely averaging out.
        train_plates = sorted(train_units)
        for b in sorted(set(batches) - train_units):
            twin = min(
                train_plates, key=lambda p: abs(plate_level[p] - plate_level[b])
            )
            plate_sig[b] = [-s for s in plate_sig[twin]]
    else:
        plate_level = {b: 0.0 for b in batches}

    rows: list[_Row] = []
    for i in range(n_samples):
        x_true = [rng.uniform(-1.0, 1.0) for _ in range(n_features)]
        pert = perts[i % n_perturbations]
        batch = batches[i % n_batches]
        dose = rng.uniform(0.1, 1.0)
        s = strength[pert]
        y = BASE_SCALE * _dot(w_base, x_true) * scale
        if effect == "additive":
            y += ADDITIVE_SCALE * s * dose
        else:
            y += GATED_SCALE * s * dose * _dot(w_gate, x_true) * scale
            y += GATED_ADDITIVE_SCALE * s * dose
        sig = plate_sig[batch]
        y += offset * plate_level[batch]
        y += rng.gauss(0.0, noise)
        x_obs = tuple(v + shift * sv for v, sv in zip(x_true, sig))
        rows.append(_Row(f"s{i:04d}", x_obs, pert, dose, batch, y))

    unit_of = (lambda r: r.batch) if plate_mode else (lambda r: r.pert)
    train = [r for r in rows if unit_of(r) in train_units]
    val = [r for r in rows if unit_of(r) in val_units]
    test = [r for r in rows if unit_of(r) in test_units]

    root = Path(root)
    _write_view(root / "data" / "train", train, n_features)
    _write_view(root / "data" / "val", val, n_features)
    _write_view(root / "holdout" / "test", test, n_features)
    _write_view(root / "fixture" / "train", train[:FIXTURE_TRAIN_ROWS], n_features)
    _write_view(root / "fixture" / "val", val[:FIXTURE_VAL_ROWS], n_features)

    manifest = contract.split_manifest_doc(
        [r.sample_id for r in train],
        [r.sample_id for r in val],
        [r.sample_id for r in test],
    )
    split_hash = contract.content_digest(manifest)
    contract.write_json(root / "split.json", manifest)

    short = "byplate" if plate_mode else "bypert"
    dataset = f"toypr-{short}-s{seed}"
    task = ToyTask(
        root=str(root),
        dataset=dataset,
        seed=seed,
        split_mode=split_mode,
        effect=effect,
        split_hash=split_hash,
        n_train=len(train),
        n_val=len(val),
        n_test=len(test),
    )

    contract.write_json(
        Path(task.task_doc_path),
        {
            "dataset": dataset,
            "suite": contract.suite_doc(),
            "split": manifest,
            "inputs_ref": "samples.csv#x*",
            "perturbation_ref": "samples.csv#pert,dose",
            "targets_ref": "samples.csv#target",
            "train_view": task.train_view,
            "val_view": task.val_view,
            "test_view": task.test_view,
            "fixture_view": task.fixture_view,
            "protected_tags": list(contract.PROTECTED_COMPONENTS),
        },
    )
    contract.write_json(
        root / "meta.json",
        {
            "schema": "toytask/1",
            "dataset": dataset,
            "seed": seed,
            "split_mode": split_mode,
            "effect": effect,
            "n_samples": n_samples,
            "n_features": n_features,
            "n_perturbations": n_perturbations,
            "n_batches": n_batches,
            "noise": noise,
            "plate_feature_shift": shift,
            "plate_target_offset": offset,
            "split_hash": split_hash,
            "rows": {"train": len(train), "val": len(val), "test": len(test)},
        },
    )
    return task
