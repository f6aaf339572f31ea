"""Shared fixtures: generated tasks and the shipped template suite."""

from __future__ import annotations

import pytest

from taskharness import generate_task, run_candidate, template_suite


@pytest.fixture(scope="session")
def suite():
    return template_suite()


@pytest.fixture(scope="session")
def pert_task(tmp_path_factory):
    return generate_task(tmp_path_factory.mktemp("pert"), seed=0)


@pytest.fixture(scope="session")
def plate_task(tmp_path_factory):
    return generate_task(
        tmp_path_factory.mktemp("plate"), seed=3, split_mode="by_plate_analog"
    )


@pytest.fixture(scope="session")
def val_metrics(suite, pert_task):
    """Validation metrics of every template on the perturbation task."""
    out = {}
    for name, tpl in suite.items():
        res = run_candidate(tpl.files, pert_task.refinement_views())
        assert res.ok, (name, res.report.error, res.stderr)
        out[name] = res.report.metrics
    return out
