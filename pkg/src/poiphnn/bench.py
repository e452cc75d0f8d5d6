"""Labels, experiment runs and gap reporting.

A dataset is a directory of ``*.poip.json`` files, optionally grouped into
one subdirectory per scale. Labels live next to each instance as
``<stem>.label.json`` and hold the optimal assignment of the binarized
instance.

Experiment plans are JSON documents::

    {
      "dataset": "data/qmkp",
      "methods": [
        {"name": "exact", "kind": "exact", "solver": "bnb"},
        {"name": "hnn", "kind": "model", "checkpoint": "model.json", "solver": "bnb"}
      ],
      "time_limit": 10,
      "time_limits": {"small": 5},
      "node_limit": null,
      "repetitions": 1,
      "seeds": [0],
      "repair": {"alpha0": 0.1},
      "search": {"neighborhood_fraction": 0.5}
    }

Relative paths are resolved against the plan file's directory.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .hnn import ConfigError, ModelConfig, ModelState, Prediction, load_checkpoint, predict
from .metrics import gap_pct, sgm
from .model import Instance, binarize, read_instance
from .search import RepairConfig, SearchConfig, solve_with_prediction
from .subsolver import Solver, Status, get_solver, solve_instance

log = logging.getLogger(__name__)

INSTANCE_SUFFIX = ".poip.json"
LABEL_SUFFIX = ".label.json"
CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "instance", "scale", "method", "repetition", "seed", "status",
    "obj", "bks", "gap_pct", "elapsed",
)

__all__ = [
    "gap_pct", "sgm", "GapRecord", "ExperimentPlan", "MethodSpec", "instance_paths",
    "label_path", "generate_labels", "load_labeled", "run_experiment", "finalize_gaps", "summarize",
    "prediction_quality",
]


def instance_paths(root: str | Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset directory {root} does not exist")
    return sorted(root.rglob(f"*{INSTANCE_SUFFIX}"))


def label_path(instance_path: str | Path) -> Path:
    p = Path(instance_path)
    return p.with_name(p.name[: -len(INSTANCE_SUFFIX)] + LABEL_SUFFIX)


def _scale_of(path: Path, root: Path) -> str:
    rel = path.relative_to(root)
    return rel.parts[0] if len(rel.parts) > 1 else "all"


# ---------------------------------------------------------------------------
# labels


@dataclass
class LabelOutcome:
    path: str
    labeled: bool
    reason: str = ""
    objective: float | None = None


def generate_labels(
    dataset: str | Path,
    solver: str | Solver = "bnb",
    time_limit: float | None = None,
    node_limit: int | None = None,
) -> list[LabelOutcome]:
    """Solve every instance of ``dataset`` exactly and write its label file.

    Instances not proven optimal within the budget get no label; the reason
    is logged and returned.
    """
    out = []
    for path in instance_paths(dataset):
        inst = read_instance(path)
        try:
            binst, _ = binarize(inst)
        except ValueError as exc:
            out.append(LabelOutcome(str(path), False, f"cannot binarize: {exc}"))
            log.warning("skipping %s: %s", path, out[-1].reason)
            continue
        res = solve_instance(binst, solver, time_limit=time_limit, node_limit=node_limit)
        if res.status is not Status.OPTIMAL:
            out.append(LabelOutcome(str(path), False, res.status.value))
            log.warning("no label for %s: %s", path, res.status.value)
            continue
        obj = binst.objective_value(res.best)
        doc = {
            "instance": inst.name,
            "solver": solver if isinstance(solver, str) else getattr(solver, "__name__", "custom"),
            "objective": obj,
            "labels": [int(v) for v in res.best],
        }
        label_path(path).write_text(json.dumps(doc) + "\n")
        out.append(LabelOutcome(str(path), True, objective=obj))
    return out


def load_labeled(dataset: str | Path) -> list[tuple[Instance, np.ndarray, float]]:
    """``(binarized instance, labels, optimal objective)`` for every labeled instance."""
    items = []
    for path in instance_paths(dataset):
        lp = label_path(path)
        if not lp.exists():
            continue
        binst, _ = binarize(read_instance(path))
        doc = json.loads(lp.read_text())
        y = np.asarray(doc["labels"], dtype=np.float64)
        if y.shape != (binst.n,):
            raise ConfigError(f"{lp} has {y.size} labels for {binst.n} binary variables")
        items.append((binst, y, float(doc["objective"])))
    return items


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str  # "exact" or "model"
    solver: str = "bnb"
    checkpoint: str | None = None

    def __post_init__(self):
        if self.kind not in ("exact", "model"):
            raise ConfigError(f"method {self.name}: kind must be 'exact' or 'model'")
        if self.kind == "model" and not self.checkpoint:
            raise ConfigError(f"method {self.name}: a model method needs a checkpoint")
        get_solver(self.solver)


@dataclass
class ExperimentPlan:
    dataset: Path
    methods: list[MethodSpec]
    time_limit: float | None = None
    time_limits: dict[str, float] = field(default_factory=dict)
    node_limit: int | None = None
    repetitions: int = 1
    seeds: list[int] = field(default_factory=lambda: [0])
    repair: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not self.methods:
            raise ConfigError("plan has no methods")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError("method names must be unique")

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "ExperimentPlan":
        try:
            methods = [MethodSpec(**m) for m in doc["methods"]]
            methods = [
                m if m.checkpoint is None else MethodSpec(m.name, m.kind, m.solver, str(base / m.checkpoint))
                for m in methods
            ]
            return cls(
                dataset=base / doc["dataset"],
                methods=methods,
                time_limit=doc.get("time_limit"),
                time_limits=dict(doc.get("time_limits", {})),
                node_limit=doc.get("node_limit"),
                repetitions=int(doc.get("repetitions", 1)),
                seeds=list(doc.get("seeds", [0])),
                repair=dict(doc.get("repair", {})),
                search=dict(doc.get("search", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed plan: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentPlan":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read plan {path}: {exc}") from None
        return cls.from_dict(doc, path.parent)

    def limit_for(self, scale: str) -> float | None:
        return self.time_limits.get(scale, self.time_limit)

    def seed_for(self, rep: int) -> int:
        return self.seeds[rep % len(self.seeds)]

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["dataset"] = str(self.dataset)
        return doc


@dataclass
class GapRecord:
    instance: str
    scale: str
    method: str
    repetition: int
    seed: int
    status: str
    obj: float | None
    bks: float | None = None
    gap_pct: float | None = None
    elapsed: float = 0.0


def _repair_config(plan: ExperimentPlan, budget: float | None) -> RepairConfig:
    kw = dict(plan.repair)
    kw.setdefault("total_time_limit", None if budget is None else budget / 2)
    kw.setdefault("subproblem_node_limit", plan.node_limit)
    return RepairConfig(**kw)


def _search_config(plan: ExperimentPlan, n: int, budget: float | None, seed: int) -> SearchConfig:
    kw = dict(plan.search)
    frac = kw.pop("neighborhood_fraction", None)
    if frac is not None:
        kw["neighborhood_size"] = max(1, min(n, math.ceil(frac * n)))
    kw.setdefault("total_time_limit", budget)
    kw.setdefault("subproblem_node_limit", plan.node_limit)
    return SearchConfig(seed=seed, **kw)


def _run_one(inst: Instance, method: MethodSpec, model, plan: ExperimentPlan,
             budget: float | None, seed: int) -> tuple[str, float | None]:
    if method.kind == "exact":
        binst, mapping = binarize(inst)
        res = solve_instance(binst, method.solver, time_limit=budget, node_limit=plan.node_limit)
        if res.best is None:
            return res.status.value, None
        return res.status.value, inst.objective_value(mapping.decode(res.best))
    st, cfg = model
    nb = binarize(inst)[0].n
    rep = solve_with_prediction(
        inst, lambda b: predict(b, st, cfg), method.solver,
        _repair_config(plan, budget), _search_config(plan, nb, budget, seed),
    )
    return rep.status, rep.final_objective


def _better(a: float, b: float, minimize: bool) -> bool:
    return a < b if minimize else a > b


def finalize_gaps(records: Sequence[GapRecord], minimize: dict[str, bool]) -> None:
    """Set ``bks`` and ``gap_pct`` of every record from the best objective per instance (in place)."""
    bks: dict[str, float] = {}
    for r in records:
        if r.obj is not None and (r.instance not in bks or _better(r.obj, bks[r.instance], minimize[r.instance])):
            bks[r.instance] = r.obj
    for r in records:
        if r.obj is not None:
            r.bks = bks[r.instance]
            r.gap_pct = gap_pct(r.obj, r.bks)


def run_experiment(plan: ExperimentPlan, out_dir: str | Path) -> dict:
    """Run every (instance, method, repetition), finalize gaps and write reports.

    The best-known value of an instance is the best objective found by any
    run of the experiment, so the smallest gap per instance is always 0.
    """
    paths = instance_paths(plan.dataset)
    if not paths:
        raise ConfigError(f"no {INSTANCE_SUFFIX} files under {plan.dataset}")
    models = {}
    for m in plan.methods:
        if m.kind == "model":
            if not Path(m.checkpoint).exists():
                raise ConfigError(f"checkpoint {m.checkpoint} does not exist")
            models[m.name] = load_checkpoint(m.checkpoint)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    records: list[GapRecord] = []
    senses: dict[str, bool] = {}
    for path in paths:
        inst = read_instance(path)
        scale = _scale_of(path, plan.dataset)
        senses[inst.name] = inst.minimize
        budget = plan.limit_for(scale)
        for method in plan.methods:
            for rep in range(plan.repetitions):
                seed = plan.seed_for(rep)
                t = time.perf_counter()
                status, obj = _run_one(inst, method, models.get(method.name), plan, budget, seed)
                records.append(GapRecord(inst.name, scale, method.name, rep, seed, status, obj,
                                         elapsed=time.perf_counter() - t))
                log.info("%s %s rep %d: %s %s", inst.name, method.name, rep, status, obj)

    finalize_gaps(records, senses)
    summary = summarize(records)
    _write_csv(records, out_dir / "results.csv")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    manifest = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "plan": plan.to_dict(),
        "instances": len(paths),
        "runs": len(records),
        "elapsed": time.perf_counter() - t0,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return summary


def summarize(records: Sequence[GapRecord]) -> dict:
    """Per scale and method: mean, standard deviation and shifted geometric mean of gaps."""
    groups: dict[tuple[str, str], list[GapRecord]] = {}
    for r in records:
        groups.setdefault((r.scale, r.method), []).append(r)
    out: dict[str, dict] = {}
    for (scale, method), rs in sorted(groups.items()):
        gaps = [r.gap_pct for r in rs if r.gap_pct is not None]
        out.setdefault(scale, {})[method] = {
            "runs": len(rs),
            "failures": len(rs) - len(gaps),
            "mean_gap": statistics.fmean(gaps) if gaps else None,
            "std_gap": statistics.pstdev(gaps) if gaps else None,
            "sgm_gap": sgm(gaps) if gaps else None,
            "mean_elapsed": statistics.fmean(r.elapsed for r in rs),
        }
    return out


def _write_csv(records: Iterable[GapRecord], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow({k: ("" if v is None else v) for k, v in asdict(r).items()})


# ---------------------------------------------------------------------------
# prediction quality


@dataclass
class QualityResult:
    mean_gap: float | None
    gaps: list[float]
    failures: int
    instances: int


def prediction_quality(
    dataset: Sequence[tuple[Instance, float]],
    predictor: Callable[[Instance], Prediction] | tuple[ModelState, ModelConfig] | str | Path,
    solver: str | Solver = "bnb",
    rcfg: RepairConfig = RepairConfig(),
) -> QualityResult:
    """Mean gap of repaired predictions with no refinement.

    ``dataset`` pairs each instance with its best-known objective in the
    instance's own sense. ``predictor`` is a callable on binarized instances,
    a loaded model or a checkpoint path.
    """
    if isinstance(predictor, (str, Path)):
        predictor = load_checkpoint(predictor)
    if isinstance(predictor, tuple):
        st, cfg = predictor
        predictor = lambda b: predict(b, st, cfg)  # noqa: E731
    gaps, failures = [], 0
    for inst, best in dataset:
        rep = solve_with_prediction(inst, predictor, solver, rcfg, SearchConfig())
        if rep.final_objective != rep.repaired_objective:
            raise RuntimeError("refinement ran despite a zero budget")
        if not rep.ok:
            failures += 1
            continue
        gaps.append(gap_pct(rep.repaired_objective, best))
    return QualityResult(statistics.fmean(gaps) if gaps else None, gaps, failures, len(dataset))

