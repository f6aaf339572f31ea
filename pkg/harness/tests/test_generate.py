"""Task generator: determinism, split discipline, layout, validation."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from taskharness import contract, generate_task, run_candidate, template_suite
from taskharness.generate import FIXTURE_TRAIN_ROWS, FIXTURE_VAL_ROWS, MIN_SAMPLES


def _view_rows(view: str) -> list[dict]:
    with open(Path(view) / "samples.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _view_bytes(view: str) -> bytes:
    return (Path(view) / "samples.csv").read_bytes()


def test_same_seed_reproduces_identical_bytes(tmp_path):
    a = generate_task(tmp_path / "a", seed=7)
    b = generate_task(tmp_path / "b", seed=7)
    assert a.split_hash == b.split_hash
    for va, vb in (
        (a.train_view, b.train_view),
        (a.val_view, b.val_view),
        (a.test_view, b.test_view),
        (a.fixture_view + "/train", b.fixture_view + "/train"),
    ):
        assert _view_bytes(va) == _view_bytes(vb)
    assert (Path(a.root) / "split.json").read_bytes() == (
        Path(b.root) / "split.json"
    ).read_bytes()


def test_split_hash_tracks_seed_and_mode(tmp_path):
    hashes = {
        generate_task(tmp_path / "s0", seed=0).split_hash,
        generate_task(tmp_path / "s1", seed=1).split_hash,
        generate_task(
            tmp_path / "p0", seed=0, split_mode="by_plate_analog"
        ).split_hash,
    }
    assert len(hashes) == 3


@pytest.mark.parametrize(
    "mode,column", [("by_perturbation", "pert"), ("by_plate_analog", "batch")]
)
def test_split_holds_out_whole_units(tmp_path, mode, column):
    task = generate_task(tmp_path / mode, seed=2, split_mode=mode)
    units = [
        {r[column] for r in _view_rows(v)}
        for v in (task.train_view, task.val_view, task.test_view)
    ]
    assert units[0] and units[1] and units[2]
    assert not units[0] & units[1]
    assert not units[0] & units[2]
    assert not units[1] & units[2]


def test_sample_ids_partition_cleanly(pert_task):
    ids = [
        {r["sample_id"] for r in _view_rows(v)}
        for v in (pert_task.train_view, pert_task.val_view, pert_task.test_view)
    ]
    assert not ids[0] & ids[1] and not ids[0] & ids[2] and not ids[1] & ids[2]
    assert len(ids[0] | ids[1] | ids[2]) == (
        pert_task.n_train + pert_task.n_val + pert_task.n_test
    )


def test_manifest_file_matches_views_and_hash(pert_task):
    manifest = json.loads((Path(pert_task.root) / "split.json").read_text("utf-8"))
    assert manifest["train"] == sorted(
        r["sample_id"] for r in _view_rows(pert_task.train_view)
    )
    assert manifest["test"] == sorted(
        r["sample_id"] for r in _view_rows(pert_task.test_view)
    )
    assert contract.split_hash(manifest) == pert_task.split_hash


def test_holdout_partition_lives_outside_data(pert_task):
    root = Path(pert_task.root)
    assert (root / "holdout" / "test" / "samples.csv").exists()
    assert not (root / "data" / "test").exists()


def test_fixture_views_are_small_prefixes(pert_task):
    fix_train = _view_rows(pert_task.fixture_view + "/train")
    fix_val = _view_rows(pert_task.fixture_view + "/val")
    assert len(fix_train) == FIXTURE_TRAIN_ROWS
    assert len(fix_val) == FIXTURE_VAL_ROWS
    assert fix_train == _view_rows(pert_task.train_view)[:FIXTURE_TRAIN_ROWS]


def test_task_doc_carries_engine_contract(pert_task):
    doc = json.loads(Path(pert_task.task_doc_path).read_text("utf-8"))
    assert doc["dataset"] == pert_task.dataset
    assert doc["suite"]["selection_metric"] == "pcc"
    assert doc["suite"]["metric_ids"] == list(contract.METRIC_IDS)
    assert doc["suite"]["plugins"][0]["kind"] == "batch_shortcut_risk"
    assert doc["protected_tags"] == list(contract.PROTECTED_COMPONENTS)
    for key in ("train_view", "val_view", "test_view", "fixture_view"):
        assert Path(doc[key]).is_absolute() and Path(doc[key]).is_dir()
    assert sorted(doc["split"]["val"]) == doc["split"]["val"]


def test_rejects_undersized_or_unknown_requests(tmp_path):
    with pytest.raises(ValueError):
        generate_task(tmp_path / "x1", seed=0, split_mode="by_moon_phase")
    with pytest.raises(ValueError):
        generate_task(tmp_path / "x2", seed=0, effect="subtractive")
    with pytest.raises(ValueError):
        generate_task(tmp_path / "x3", seed=0, n_samples=MIN_SAMPLES - 1)
    with pytest.raises(ValueError):
        generate_task(tmp_path / "x4", seed=0, n_features=1)
    with pytest.raises(ValueError):
        generate_task(tmp_path / "x5", seed=0, n_perturbations=3)
    with pytest.raises(ValueError):
        generate_task(tmp_path / "x6", seed=0, n_batches=2)


def test_smallest_allowed_task_still_splits_three_ways(tmp_path):
    task = generate_task(tmp_path / "tiny", seed=5, n_samples=MIN_SAMPLES)
    assert task.n_train and task.n_val and task.n_test
    assert task.n_train + task.n_val + task.n_test == MIN_SAMPLES


def test_baseline_metric_reproducible_across_regeneration(tmp_path):
    baseline = template_suite()["baseline"]
    values = []
    for name in ("r1", "r2"):
        task = generate_task(tmp_path / name, seed=11)
        res = run_candidate(baseline.files, task.refinement_views())
        assert res.ok
        values.append(res.report.metrics["pcc"])
    assert abs(values[0] - values[1]) <= 1e-9
