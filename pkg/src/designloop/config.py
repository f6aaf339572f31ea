"""Run configuration: one JSON document that names every engine input.

The ``run/1`` document (or any sub-document) may inline its value or
point at another JSON file by path, resolved relative to the config file;
``load_run_setup`` returns fully constructed engine objects ready for
``run_workflow``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .controller import (
    ControllerBudget,
    ControllerConfig,
    SelectionPolicy,
    mode_config,
)
from .errors import DesignLoopError
from .feedback import RoutingTemplate, default_templates
from .hypothesis_state import Catalogs, HypothesisState, OptionCatalog, new_hypothesis
from .landscape import LandscapeSpec, LandscapeBackend
from .proposers import HttpProposer, MockProposer, Proposer, TemplateLibrary
from .realization import ImplementationRuleSet, default_implementation_rules
from .rules import StructuralRuleSet, default_structural_rules
from .taskspec import TaskSpec
from .topology import Topology

SCHEMA = "run/1"


class ConfigError(DesignLoopError):
    pass


def _resolve(value, base: Path):
    """Inline document, or a path string pointing at a JSON file."""
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute():
            path = base / path
        try:
            return json.loads(path.read_text("utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read referenced file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"referenced file {path} is not JSON: {exc}") from exc
    return value


def catalogs_to_doc(catalogs: Catalogs) -> dict:
    return {t: c.to_doc() for t, c in sorted(catalogs.items())}


def catalogs_from_doc(doc: Mapping) -> Catalogs:
    return {t: OptionCatalog.from_doc(c) for t, c in doc.items()}


def space_to_doc(
    topology: Topology, catalogs: Catalogs, initial: HypothesisState | None = None
) -> dict:
    return {
        "topology": topology.to_doc(),
        "catalogs": catalogs_to_doc(catalogs),
        "initial": initial.to_doc() if initial is not None else None,
    }


def space_from_doc(doc: Mapping) -> tuple[Topology, Catalogs, HypothesisState | None]:
    topology = Topology.from_doc(doc["topology"])
    catalogs = catalogs_from_doc(doc["catalogs"])
    initial = None
    if doc.get("initial") is not None:
        initial = HypothesisState.from_doc(doc["initial"])
    return topology, catalogs, initial


def build_backend(doc: Mapping, base: Path) -> Proposer:
    kind = doc.get("kind")
    if kind == "mock":
        library = TemplateLibrary.from_doc(_resolve(doc["library"], base))
        return MockProposer(library)
    if kind == "http":
        return HttpProposer(
            endpoint=doc["endpoint"],
            model=doc["model"],
            api_key_env=doc.get("api_key_env", "DESIGNLOOP_API_KEY"),
            temperature=doc.get("temperature", 0.5),
            proposal_temperature=doc.get("proposal_temperature", 0.7),
            context_limit_tokens=doc.get("context_limit_tokens", 40000),
            max_retries=doc.get("max_retries", 3),
            backoff_s=doc.get("backoff_s", 1.0),
            timeout_s=doc.get("timeout_s", 120.0),
        )
    if kind == "landscape":
        return LandscapeBackend(LandscapeSpec.from_doc(_resolve(doc["landscape"], base)))
    raise ConfigError(f"unknown backend kind {kind!r}")


@dataclass(frozen=True)
class RunSetup:
    spec: TaskSpec
    topology: Topology
    catalogs: Catalogs
    h0: HypothesisState
    backend: Proposer
    structural_rules: StructuralRuleSet
    impl_rules: ImplementationRuleSet
    templates: tuple[RoutingTemplate, ...]
    budget: ControllerBudget
    config: ControllerConfig
    policy: SelectionPolicy
    trace_dir: str | None


def load_run_setup(doc_or_path: Mapping | str | Path) -> RunSetup:
    """Construct every engine object a run needs from one document."""
    if isinstance(doc_or_path, (str, Path)):
        path = Path(doc_or_path)
        base = path.parent
        try:
            doc = json.loads(path.read_text("utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not JSON: {exc}") from exc
    else:
        doc = dict(doc_or_path)
        base = Path.cwd()

    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"expected schema {SCHEMA!r}, got {doc.get('schema')!r}")

    spec = TaskSpec.from_doc(_resolve(doc["task"], base))
    topology, catalogs, initial = space_from_doc(_resolve(doc["space"], base))
    if initial is None:
        initial = new_hypothesis(topology, catalogs)

    backend = build_backend(_resolve(doc["backend"], base), base)

    mode = doc.get("mode", "M4")
    if isinstance(mode, str):
        config = mode_config(mode, seed=doc.get("seed", 0))
    else:
        config = ControllerConfig(
            mode=mode.get("mode", "custom"),
            structural_rules=mode.get("structural_rules", True),
            impl_rules=mode.get("impl_rules", True),
            repair=mode.get("repair", True),
            edit_policy=mode.get("edit_policy", "routed"),
            refine=mode.get("refine", True),
            post_exec_check=mode.get("post_exec_check", False),
            naive_retries=mode.get("naive_retries", 0),
            seed=doc.get("seed", 0),
        )

    rules_doc = doc.get("rules", {})
    sdoc = rules_doc.get("structural", {})
    structural = default_structural_rules(
        catalogs,
        spec.suite.metric_ids,
        weights=sdoc.get("weights"),
        severities=sdoc.get("severities"),
    )
    idoc = rules_doc.get("implementation", {})
    impl = default_implementation_rules(
        include_dry_run=idoc.get(
            "include_dry_run", spec.fixture_view is not None
        ),
        include=idoc.get("include"),
        severities=idoc.get("severities"),
    )

    if "templates" in doc:
        templates = tuple(RoutingTemplate.from_doc(t) for t in _resolve(doc["templates"], base))
    else:
        templates = default_templates()

    budget = ControllerBudget.from_doc(doc.get("budget", {}))
    sel = doc.get("selection")
    policy = (
        SelectionPolicy.from_doc(sel)
        if sel
        else SelectionPolicy(spec.suite.selection_metric, spec.suite.direction)
    )
    return RunSetup(
        spec=spec,
        topology=topology,
        catalogs=catalogs,
        h0=initial,
        backend=backend,
        structural_rules=structural,
        impl_rules=impl,
        templates=templates,
        budget=budget,
        config=config,
        policy=policy,
        trace_dir=doc.get("trace_dir"),
    )
