"""Candidate-program templates and their engine-consumable documents.

Every template is one runnable Python program assembled from per-option
source fragments: a CSV loader, a feature scaler, a dose encoding, a
fusion step, a closed-form ridge fit, and a metric reporter. Assembly
order is the sorted node-id order, between a shared preamble and a
shared driver, which is exactly how the engine's mock backend builds
candidates from the same fragments.

Templates train in milliseconds, use no randomness, and write the
metric report contract. Two variants are deliberately wrong: one keeps
a guarded reference to the held-out test view (tripping the static
leakage check while running cleanly), one drops a required metric from
its report (tripping the dry-run completeness check). Each carries its
paired fix so a repairing engine run can recover.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import contract

PREAMBLE = "import csv\nimport json\nimport math\nimport os\n"

# -- per-node fragments ------------------------------------------------

_LOAD_CSV = '''\
TRAIN_DIR = "data/train"


def load_rows(dirpath):
    with open(os.path.join(dirpath, "samples.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = sorted(k for k in rows[0] if k.startswith("x"))
    feats = [[float(r[k]) for k in cols] for r in rows]
    dose = [float(r["dose"]) for r in rows]
    target = [float(r["target"]) for r in rows]
    return feats, dose, target
'''

_SCALE_NONE = '''\
def prep_fit(feats):
    return None


def prep_apply(state, feats):
    return feats
'''

_SCALE_TRAIN_STATS = '''\
def prep_fit(feats):
    cols = list(zip(*feats))
    mu = [sum(c) / len(c) for c in cols]
    sd = []
    for c, m in zip(cols, mu):
        var = sum((u - m) ** 2 for u in c) / len(c)
        sd.append(math.sqrt(var) if var > 1e-12 else 1.0)
    return mu, sd


def prep_apply(state, feats):
    mu, sd = state
    return [[(u - m) / s for u, m, s in zip(row, mu, sd)] for row in feats]
'''

_DOSE_LINEAR = '''\
def pert_features(dose):
    return [dose]
'''

_DOSE_POLY2 = '''\
def pert_features(dose):
    return [dose, dose * dose]
'''

_FUSE_FEATS_ONLY = '''\
def fuse(x, p):
    return list(x)
'''

_FUSE_CONCAT = '''\
def fuse(x, p):
    return list(x) + list(p)
'''

_FUSE_DOSE_GATE = '''\
def fuse(x, p):
    gated = [xi * p[0] for xi in x]
    return list(x) + list(p) + gated
'''

# Guarded peek at the held-out view: inert in any sandbox that does not
# mount it, but the reference alone is a leakage violation.
_FUSE_DOSE_GATE_PEEK = '''\
PEEK_DIR = "data/test"


def extra_train_source():
    if os.path.isdir(PEEK_DIR):
        return PEEK_DIR
    return None


def fuse(x, p):
    gated = [xi * p[0] for xi in x]
    return list(x) + list(p) + gated
'''

_RIDGE_LIGHT = '''\
RIDGE_LAMBDA = 0.05


def fit_model(feats, target):
    return ridge_fit(feats, target, RIDGE_LAMBDA)
'''

_RIDGE_HEAVY = '''\
RIDGE_LAMBDA = 0.5


def fit_model(feats, target):
    return ridge_fit(feats, target, RIDGE_LAMBDA)
'''

_REPORT_ALL = '''\
def report_metrics(metrics):
    return dict(metrics)
'''

_REPORT_DROP_GAP = '''\
def report_metrics(metrics):
    out = dict(metrics)
    out.pop("batch_gap", None)
    return out
'''

# -- shared driver -----------------------------------------------------

POSTAMBLE = '''\
def ridge_fit(feats, target, lam):
    rows = [list(f) + [1.0] for f in feats]
    n = len(rows[0])
    aug = [[0.0] * (n + 1) for _ in range(n)]
    for row, t in zip(rows, target):
        for i in range(n):
            ri = row[i]
            acc = aug[i]
            for j in range(n):
                acc[j] += ri * row[j]
            acc[n] += ri * t
    penalty = lam * len(rows)
    for i in range(n - 1):
        aug[i][i] += penalty
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(aug[r][col]))
        if abs(aug[piv][col]) < 1e-12:
            aug[piv][col] = 1e-12
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = 1.0 / aug[col][col]
        for j in range(col, n + 1):
            aug[col][j] *= inv
        for r in range(n):
            if r != col and aug[r][col] != 0.0:
                f = aug[r][col]
                for j in range(col, n + 1):
                    aug[r][j] -= f * aug[col][j]
    return [aug[r][n] for r in range(n)]


def pearson(pred, truth):
    n = len(truth)
    mp = sum(pred) / n
    mt = sum(truth) / n
    cp = [u - mp for u in pred]
    ct = [v - mt for v in truth]
    vp = sum(u * u for u in cp)
    vt = sum(v * v for v in ct)
    if vp <= 1e-12 or vt <= 1e-12:
        return 0.0
    return sum(u * v for u, v in zip(cp, ct)) / math.sqrt(vp * vt)


def predict(w, feats):
    return sum(wi * fi for wi, fi in zip(w, feats)) + w[-1]


def main():
    train_x, train_dose, train_y = load_rows(TRAIN_DIR)
    source = globals().get("extra_train_source")
    if source is not None:
        extra = source()
        if extra is not None:
            more_x, more_dose, more_y = load_rows(extra)
            train_x = train_x + more_x
            train_dose = train_dose + more_dose
            train_y = train_y + more_y
    split = os.environ.get("EVAL_SPLIT", "validation")
    view = "val" if split == "validation" else split
    eval_x, eval_dose, eval_y = load_rows("data/" + view)

    state = prep_fit(train_x)
    fused_train = [
        fuse(x, pert_features(d))
        for x, d in zip(prep_apply(state, train_x), train_dose)
    ]
    fused_eval = [
        fuse(x, pert_features(d))
        for x, d in zip(prep_apply(state, eval_x), eval_dose)
    ]
    w = fit_model(fused_train, train_y)
    train_pcc = pearson([predict(w, f) for f in fused_train], train_y)
    eval_pcc = pearson([predict(w, f) for f in fused_eval], eval_y)
    metrics = {
        "pcc": eval_pcc,
        "train_pcc": train_pcc,
        "batch_gap": train_pcc - eval_pcc,
    }

    os.makedirs("out", exist_ok=True)
    with open("out/model.json", "w", encoding="utf-8") as fh:
        json.dump({"weights": w, "train_rows": len(fused_train)}, fh)
    with open("metrics.json", "w", encoding="utf-8") as fh:
        json.dump({"metrics": report_metrics(metrics), "split": split}, fh)


main()
'''

# -- design space ------------------------------------------------------

NODE_IDS = (
    "n00_load",
    "n01_scale",
    "n02_dose",
    "n03_fuse",
    "n04_model",
    "n05_report",
)

NODE_TYPES = {
    "n00_load": "data_adapter",
    "n01_scale": "preprocessing",
    "n02_dose": "perturbation_representation",
    "n03_fuse": "fusion",
    "n04_model": "architecture",
    "n05_report": "evaluation_adapter",
}

_METRIC_TAGS = [f"metric:{m}" for m in contract.METRIC_IDS]
_REPORT_TAGS = sorted(
    _METRIC_TAGS
    + [
        "realizes:evaluation_metrics",
        "realizes:validation_protocol",
        "realizes:test_protocol",
    ]
)

# (node_type, option_id, body, tags, fault_rules, fixed_body)
_FRAGMENTS = (
    (
        "data_adapter",
        "csv_rows",
        _LOAD_CSV,
        ["realizes:dataset_split", "realizes:target_definition"],
        (),
        None,
    ),
    ("preprocessing", "scale_train_stats", _SCALE_TRAIN_STATS, [], (), None),
    ("preprocessing", "scale_none", _SCALE_NONE, [], (), None),
    ("perturbation_representation", "dose_linear", _DOSE_LINEAR, [], (), None),
    ("perturbation_representation", "dose_poly2", _DOSE_POLY2, [], (), None),
    ("fusion", "fuse_feats_only", _FUSE_FEATS_ONLY, [], (), None),
    ("fusion", "fuse_concat", _FUSE_CONCAT, [], (), None),
    ("fusion", "fuse_dose_gate", _FUSE_DOSE_GATE, [], (), None),
    (
        "fusion",
        "fuse_dose_gate_peek",
        _FUSE_DOSE_GATE_PEEK,
        [],
        ("leakage_check",),
        _FUSE_DOSE_GATE,
    ),
    ("architecture", "ridge_light", _RIDGE_LIGHT, [], (), None),
    ("architecture", "ridge_heavy", _RIDGE_HEAVY, [], (), None),
    ("evaluation_adapter", "report_all", _REPORT_ALL, _REPORT_TAGS, (), None),
    (
        "evaluation_adapter",
        "report_drop_gap",
        _REPORT_DROP_GAP,
        _REPORT_TAGS,
        ("metric_completeness",),
        _REPORT_ALL,
    ),
)

_BASE_ASSIGNMENTS = {
    "n00_load": "csv_rows",
    "n01_scale": "scale_train_stats",
    "n02_dose": "dose_linear",
    "n04_model": "ridge_light",
    "n05_report": "report_all",
}


@dataclass(frozen=True)
class ProgramTemplate:
    """One assembled candidate program plus its design-space claim."""

    name: str
    description: str
    assignments: Mapping[str, str]
    fault_rule: str | None
    files: Mapping[str, str]
    entrypoint: str = "main.py"

    @property
    def manifest(self) -> dict[str, str]:
        return dict(self.assignments)


def _fragment_body(node_type: str, option_id: str) -> str:
    for ntype, oid, body, _tags, _faults, _fixed in _FRAGMENTS:
        if ntype == node_type and oid == option_id:
            return body
    raise KeyError(f"no fragment for ({node_type}, {option_id})")


def assemble(assignments: Mapping[str, str]) -> str:
    """Build one program the way the engine's mock backend does:
    preamble, fragment bodies in sorted node-id order, driver."""
    parts = [PREAMBLE.rstrip("\n")]
    for node in sorted(assignments):
        parts.append(_fragment_body(NODE_TYPES[node], assignments[node]).rstrip("\n"))
    parts.append(POSTAMBLE.rstrip("\n"))
    return "\n".join(parts) + "\n"


def _template(
    name: str, description: str, fault_rule: str | None, **overrides: str
) -> ProgramTemplate:
    assignments = dict(_BASE_ASSIGNMENTS)
    assignments.update(overrides)
    return ProgramTemplate(
        name=name,
        description=description,
        assignments=assignments,
        fault_rule=fault_rule,
        files={"main.py": assemble(assignments)},
    )


def template_suite() -> dict[str, ProgramTemplate]:
    """The five shipped programs, keyed by name."""
    templates = (
        _template(
            "baseline",
            "ridge on scaled cell-state features alone; ignores the dose",
            None,
            n03_fuse="fuse_feats_only",
        ),
        _template(
            "additive_fusion",
            "ridge on features concatenated with the dose encoding",
            None,
            n03_fuse="fuse_concat",
        ),
        _template(
            "gated_fusion",
            "ridge on features, dose, and dose-gated feature products",
            None,
            n03_fuse="fuse_dose_gate",
        ),
        _template(
            "leaky_fusion",
            "gated fusion that also references the held-out test view",
            "leakage_check",
            n03_fuse="fuse_dose_gate_peek",
        ),
        _template(
            "partial_report",
            "gated fusion whose report omits the batch_gap metric",
            "metric_completeness",
            n03_fuse="fuse_dose_gate",
            n05_report="report_drop_gap",
        ),
    )
    return {t.name: t for t in templates}


def library_doc() -> dict:
    """Template library in the engine's lib/1 document shape."""
    fragments = []
    for node_type, option_id, body, _tags, fault_rules, fixed_body in _FRAGMENTS:
        fragments.append(
            {
                "node_type": node_type,
                "option_id": option_id,
                "body": body,
                "fault_rules": list(fault_rules),
                "fixed_body": fixed_body,
                "claim_option": None,
            }
        )
    return {
        "schema": contract.LIBRARY_SCHEMA,
        "version": "1",
        "preamble": PREAMBLE,
        "postamble": POSTAMBLE,
        "fragments": fragments,
    }


def _catalogs_doc() -> dict:
    catalogs: dict[str, dict] = {}
    for node_type, option_id, _body, tags, _faults, _fixed in _FRAGMENTS:
        entry = catalogs.setdefault(node_type, {"node_type": node_type, "options": []})
        entry["options"].append(
            {
                "id": option_id,
                "params": {},
                "declares": [],
                "obsoletes": [],
                "tags": sorted(tags),
            }
        )
    return catalogs


def hypothesis_doc(assignments: Mapping[str, str]) -> dict:
    return {
        "schema": contract.HYPOTHESIS_SCHEMA,
        "version": 0,
        "assignments": {
            node: {"option_id": assignments[node], "params": {}}
            for node in sorted(assignments)
        },
    }


def space_doc(initial: Mapping[str, str] | None = None) -> dict:
    """Design-space document: typed nodes, a dataflow chain in pipeline
    order, a fusion/model coupling edge, option catalogs, and the
    starting assignment (the baseline template unless overridden)."""
    if initial is None:
        initial = template_suite()["baseline"].assignments
    return {
        "topology": {
            "schema": contract.TOPOLOGY_SCHEMA,
            "routing_degree_bound": 8,
            "nodes": [
                {
                    "id": node,
                    "node_type": NODE_TYPES[node],
                    "option_catalog_ref": NODE_TYPES[node],
                }
                for node in NODE_IDS
            ],
            "hyperedges": [
                {
                    "id": "e000001",
                    "members": list(NODE_IDS),
                    "relation_type": "dataflow",
                },
                {
                    "id": "e000002",
                    "members": ["n03_fuse", "n04_model"],
                    "relation_type": "coupling",
                },
            ],
        },
        "catalogs": _catalogs_doc(),
        "initial": hypothesis_doc(initial),
    }
