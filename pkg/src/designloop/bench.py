"""Benchmark harness: run the engine modes on synthetic landscapes.

Glue between the landscape generators and the controller so tests, the
CLI, and scripts share one construction path instead of re-deriving rule
sets and budgets.
"""

from __future__ import annotations

from pathlib import Path

from .controller import (
    ControllerBudget,
    WorkflowResult,
    mode_config,
    run_workflow,
)
from .feedback import default_templates
from .landscape import (
    LandscapeBackend,
    LandscapeSpec,
    build_catalogs,
    build_landscape_topology,
    build_task,
    initial_hypothesis,
    make_gating_landscape,
)
from .realization import default_implementation_rules
from .rules import default_structural_rules
from .trace import TraceStore

MODES = ("M0", "M1", "M2", "M3", "M4")


def run_landscape_mode(
    land: LandscapeSpec,
    workdir: str | Path,
    mode: str,
    seed: int = 0,
    iterations: int = 6,
    repair_rounds: int = 3,
    step_timeout: float = 30.0,
    naive_retries: int = 1,
    trace_dir: str | Path | None = None,
) -> WorkflowResult:
    """One full engine run of ``mode`` on a materialized landscape."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    spec = build_task(land, workdir)
    topology = build_landscape_topology(land)
    catalogs = build_catalogs(land)
    h0 = initial_hypothesis(land, catalogs)
    backend = LandscapeBackend(land)

    severities = {"repr_loss_compatibility": "hard"} if land.incompatible_cross else None
    structural = default_structural_rules(
        catalogs, spec.suite.metric_ids, severities=severities
    )
    # synthetic tasks ship no fixture view; static checks only
    impl = default_implementation_rules(include_dry_run=False)

    return run_workflow(
        spec=spec,
        topology=topology,
        catalogs=catalogs,
        h0=h0,
        backend=backend,
        structural_rules=structural,
        impl_rules=impl,
        templates=default_templates(),
        budget=ControllerBudget(
            iterations=iterations,
            repair_rounds=repair_rounds,
            step_timeout=step_timeout,
        ),
        config=mode_config(mode, seed=seed, naive_retries=naive_retries),
        trace=TraceStore(trace_dir) if trace_dir is not None else None,
    )


def ablation_table(
    seed: int,
    workdir: str | Path,
    modes: tuple[str, ...] = MODES,
    iterations: int = 6,
) -> dict[str, dict]:
    """Efficiency summary per mode on one gating landscape."""
    land = make_gating_landscape(seed)
    out: dict[str, dict] = {}
    for mode in modes:
        result = run_landscape_mode(
            land, Path(workdir) / mode, mode, seed=seed, iterations=iterations
        )
        doc = result.efficiency.to_doc()
        doc["selection"] = result.selection.to_doc() if result.selection else None
        doc["reason"] = result.reason
        out[mode] = doc
    return out
