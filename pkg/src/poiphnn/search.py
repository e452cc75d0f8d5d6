"""Turning predictions into good feasible solutions.

``repair`` grows a neighborhood around the least certain predictions and
over provably violated constraints until the exact subsolver finds a
feasible completion. ``refine`` then runs iterated multi-neighborhood
search: constraint-driven neighborhoods, pairwise crossover neighborhoods,
best candidate becomes the next starting point.

Budgets are either wall-clock seconds or, for reproducible runs, node
counts handed to the subsolver.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .hnn import ModelConfig, ModelState, Prediction, load_checkpoint, predict
from .metrics import gap_pct
from .model import FEAS_TOL, Instance, binarize, check_feasible, constraint_provably_unsat, evaluate_polynomial
from .subsolver import Solver, SubProblem, get_solver

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RepairConfig:
    alpha0: float = 0.1
    alpha_ub: float = 1.0
    alpha_step: float = 0.05
    subproblem_time_limit: float | None = None
    subproblem_node_limit: int | None = None
    total_time_limit: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha0 <= self.alpha_ub <= 1:
            raise ValueError("need 0 < alpha0 <= alpha_ub <= 1")
        if self.alpha_step <= 0:
            raise ValueError("alpha_step must be positive")


@dataclass(frozen=True)
class SearchConfig:
    neighborhood_size: int | None = None  # default: ceil(n / 2)
    subproblem_time_limit: float | None = None
    subproblem_node_limit: int | None = None
    total_time_limit: float | None = None
    total_node_limit: int | None = None
    max_iterations: int | None = None
    seed: int = 0

    def size_for(self, n: int) -> int:
        k = self.neighborhood_size if self.neighborhood_size is not None else math.ceil(n / 2)
        if not 1 <= k <= max(n, 1):
            raise ValueError(f"neighborhood size {k} outside [1, {n}]")
        return k


@dataclass(frozen=True)
class Neighborhood:
    var_ids: tuple[int, ...]

    def __len__(self):
        return len(self.var_ids)

    def __contains__(self, v):
        return v in self.var_ids


def _ceil_frac(frac: float, n: int) -> int:
    # guard against 0.1 * 30 = 3.0000000000000004
    return min(n, math.ceil(round(frac * n, 9)))


def _grow_over_unsat(
    inst: Instance, fixed: dict[int, float], chosen: list[int], limit: int, tol: float = FEAS_TOL
) -> None:
    """Add the fixed variables of provably unsatisfiable constraints to ``chosen`` (in place)."""
    bounds = inst.bounds()
    in_nb = set(chosen)
    for c, cvars in zip(inst.constraints, inst.constraint_vars):
        if len(chosen) >= limit:
            return
        if not constraint_provably_unsat(c, fixed, bounds, tol):
            continue
        for v in cvars:
            if len(chosen) >= limit:
                return
            if v not in in_nb:
                chosen.append(v)
                in_nb.add(v)
                fixed.pop(v, None)


def q_repair(inst: Instance, pred: Prediction, alpha: float, cfg: RepairConfig = RepairConfig()) -> Neighborhood:
    """Neighborhood of the ``ceil(alpha n)`` least certain variables plus violated-constraint variables."""
    n = inst.n
    limit = _ceil_frac(cfg.alpha_ub, n)
    k = min(_ceil_frac(alpha, n), limit)
    ranked = sorted(range(n), key=lambda i: (-pred.uncertainty[i], i))
    chosen = ranked[:k]
    fixed = {i: float(pred.rounded[i]) for i in ranked[k:]}
    _grow_over_unsat(inst, fixed, chosen, limit)
    return Neighborhood(tuple(chosen))


class _Clock:
    def __init__(self, limit: float | None):
        self.t0 = time.perf_counter()
        self.limit = limit

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def remaining(self) -> float | None:
        return None if self.limit is None else self.limit - self.elapsed()

    def expired(self) -> bool:
        return self.limit is not None and self.elapsed() >= self.limit

    def cap(self, sub: float | None) -> float | None:
        rem = self.remaining()
        if rem is None:
            return sub
        return max(0.0, rem if sub is None else min(sub, rem))


@dataclass
class RepairResult:
    feasible: bool
    assignment: np.ndarray | None
    objective: float | None  # maximization form
    alphas: list[float] = field(default_factory=list)
    neighborhood_sizes: list[int] = field(default_factory=list)
    statuses: list[str] = field(default_factory=list)
    final_alpha: float | None = None
    nodes: int = 0
    elapsed: float = 0.0


def _verified(inst: Instance, x: np.ndarray) -> np.ndarray:
    if not check_feasible(inst, x).feasible:
        raise RuntimeError("search produced an infeasible assignment")
    return x


def repair(inst: Instance, pred: Prediction, solver: Solver, cfg: RepairConfig = RepairConfig()) -> RepairResult:
    """Find a feasible solution near the rounded prediction, widening the neighborhood on failure.

    After a failed attempt the next fraction is ``alpha_step + |N| / n``,
    clamped to 1 so that the last attempt frees every variable. The loop
    stops once a neighborhood at the ``alpha_ub`` cap has failed; with the
    default cap a failed result therefore reports ``final_alpha > 1``.
    """
    clock = _Clock(cfg.total_time_limit)
    n = inst.n
    largest = _ceil_frac(cfg.alpha_ub, n)
    out = RepairResult(False, None, None)
    alpha = cfg.alpha0
    while True:
        nb = q_repair(inst, pred, alpha, cfg)
        out.alphas.append(alpha)
        out.neighborhood_sizes.append(len(nb))
        sp = SubProblem.around(
            inst, pred.rounded, nb.var_ids,
            time_limit=clock.cap(cfg.subproblem_time_limit), node_limit=cfg.subproblem_node_limit,
        )
        res = solver(sp, pred.rounded)
        out.nodes += res.nodes
        out.statuses.append(res.status.value)
        if res.best is not None:
            out.feasible = True
            out.assignment = _verified(inst, res.best)
            out.objective = evaluate_polynomial(inst.objective, res.best)
            out.final_alpha = alpha
            break
        log.debug("repair at alpha=%.3f (%d vars) failed: %s", alpha, len(nb), res.status.value)
        nxt = cfg.alpha_step + len(nb) / n if n else math.inf
        out.final_alpha = nxt
        # a neighborhood at the size cap cannot grow any further
        if clock.expired() or len(nb) >= largest:
            break
        alpha = min(nxt, 1.0)
    out.elapsed = clock.elapsed()
    return out


def build_initial_neighborhoods(inst: Instance, cfg: SearchConfig, rng: np.random.Generator) -> list[Neighborhood]:
    """Sequentially fill neighborhoods with the variables of randomly ordered constraints."""
    n = inst.n
    limit = cfg.size_for(n)
    groups: list[list[int]] = []
    current: list[int] = []
    for j in rng.permutation(inst.m):
        for v in inst.constraint_vars[j]:
            if v in current:
                continue
            if len(current) == limit:
                groups.append(current)
                current = []
            current.append(v)
    if current:
        groups.append(current)
    covered = {v for g in groups for v in g}
    loose = [v for v in range(n) if v not in covered]
    slot = 0
    for v in loose:
        open_slots = [g for g in groups if len(g) < limit]
        if not open_slots:
            groups.append([])
            open_slots = [groups[-1]]
        open_slots[slot % len(open_slots)].append(v)
        slot += 1
    return [Neighborhood(tuple(g)) for g in groups]


def crossover_neighborhood(
    n1: Neighborhood, n2: Neighborhood, x1: np.ndarray, x2: np.ndarray, inst: Instance,
    alpha_ub: float = 1.0,
) -> tuple[Neighborhood, np.ndarray]:
    """Merge ``x1`` on ``n1`` with ``x2`` elsewhere; free the variables of violated constraints."""
    xc = np.array(x2, dtype=np.float64)
    idx = list(n1.var_ids)
    xc[idx] = np.asarray(x1, dtype=np.float64)[idx]
    chosen: list[int] = []
    fixed = {v: float(xc[v]) for v in range(inst.n)}
    _grow_over_unsat(inst, fixed, chosen, _ceil_frac(alpha_ub, inst.n))
    return Neighborhood(tuple(chosen)), xc


@dataclass
class RefineResult:
    assignment: np.ndarray
    objective: float  # maximization form
    trajectory: list[float] = field(default_factory=list)
    iterations: int = 0
    nodes: int = 0
    elapsed: float = 0.0


def refine(inst: Instance, start: np.ndarray, solver: Solver, cfg: SearchConfig = SearchConfig()) -> RefineResult:
    """Iterated multi-neighborhood search from a feasible ``start``."""
    clock = _Clock(cfg.total_time_limit)
    rng = np.random.default_rng(cfg.seed)
    best = _verified(inst, np.asarray(start, dtype=np.float64).copy())
    best_obj = evaluate_polynomial(inst.objective, best)
    out = RefineResult(best, best_obj, [best_obj])

    def budget_left() -> bool:
        if cfg.total_time_limit is None and cfg.total_node_limit is None and cfg.max_iterations is None:
            return False
        if clock.expired():
            return False
        if cfg.total_node_limit is not None and out.nodes >= cfg.total_node_limit:
            return False
        return cfg.max_iterations is None or out.iterations < cfg.max_iterations

    def node_cap() -> int | None:
        caps = [c for c in (cfg.subproblem_node_limit,
                            None if cfg.total_node_limit is None else max(cfg.total_node_limit - out.nodes, 0))
                if c is not None]
        return min(caps) if caps else None

    def solve(x: np.ndarray, nb: Neighborhood) -> np.ndarray | None:
        sp = SubProblem.around(
            inst, x, nb.var_ids,
            time_limit=clock.cap(cfg.subproblem_time_limit), node_limit=node_cap(),
        )
        if check_feasible(inst, x).feasible:
            sp.incumbent = (x, evaluate_polynomial(inst.objective, x))
        res = solver(sp, x)
        out.nodes += res.nodes
        return res.best

    while budget_left():
        nbs = build_initial_neighborhoods(inst, cfg, rng)
        sols = []
        for nb in nbs:
            x = solve(best, nb)
            sols.append(x if x is not None else best)
        candidates = list(sols)
        for a in range(0, len(nbs) - 1, 2):
            b = a + 1
            ia, ib = (a, b) if (evaluate_polynomial(inst.objective, sols[a])
                                >= evaluate_polynomial(inst.objective, sols[b])) else (b, a)
            nb, xc = crossover_neighborhood(nbs[ia], nbs[ib], sols[ia], sols[ib], inst)
            if len(nb) == 0:
                if check_feasible(inst, xc).feasible:
                    candidates.append(xc)
                continue
            x = solve(xc, nb)
            if x is not None:
                candidates.append(x)
        objs = [evaluate_polynomial(inst.objective, x) for x in candidates]
        top = int(np.argmax(objs))
        if objs[top] >= best_obj:
            best, best_obj = _verified(inst, candidates[top]), objs[top]
        out.iterations += 1
        out.trajectory.append(best_obj)
    out.assignment, out.objective = best, best_obj
    out.elapsed = clock.elapsed()
    return out


# ---------------------------------------------------------------------------
# end-to-end pipeline


@dataclass
class SolveReport:
    instance: str
    sense: str
    status: str  # "solved" or "repair_failed"
    n_original: int
    n_binary: int
    rounded_feasible: bool
    mean_uncertainty: float
    repaired_objective: float | None  # original sense, as are all objectives below
    final_objective: float | None
    final_assignment: list[float] | None
    bks: float | None
    repaired_gap_pct: float | None
    gap_pct: float | None
    alpha_trajectory: list[float]
    repair_statuses: list[str]
    refine_trajectory: list[float]
    refine_iterations: int
    nodes: int
    timings: dict[str, float]

    @property
    def ok(self) -> bool:
        return self.status == "solved"

    def to_dict(self) -> dict:
        return asdict(self)


Predictor = Callable[[Instance], Prediction]


def solve_with_prediction(
    inst: Instance,
    predictor: Predictor,
    solver: str | Solver = "bnb",
    rcfg: RepairConfig = RepairConfig(),
    scfg: SearchConfig = SearchConfig(),
) -> SolveReport:
    """Binarize, predict, repair, refine and decode back to ``inst``'s variables.

    ``predictor`` receives the binarized instance. A refine budget of zero
    (no time, node or iteration limit) reports the repaired solution as final.
    """
    solve = get_solver(solver) if isinstance(solver, str) else solver
    t0 = time.perf_counter()
    binst, mapping = binarize(inst)
    pred = predictor(binst)
    t_pred = time.perf_counter()
    fixed_point = np.asarray(pred.rounded, dtype=np.float64)
    rep = repair(binst, pred, solve, rcfg)
    t_rep = time.perf_counter()

    def original(xb: np.ndarray) -> tuple[np.ndarray, float]:
        x = mapping.decode(xb)
        if not check_feasible(inst, x).feasible:
            raise RuntimeError("decoded solution violates the original instance")
        return x, inst.objective_value(x)

    report = SolveReport(
        instance=inst.name, sense=inst.sense, status="repair_failed",
        n_original=inst.n, n_binary=binst.n,
        rounded_feasible=check_feasible(binst, fixed_point).feasible,
        mean_uncertainty=float(np.mean(pred.uncertainty)) if binst.n else 0.0,
        repaired_objective=None, final_objective=None, final_assignment=None,
        bks=inst.bks, repaired_gap_pct=None, gap_pct=None,
        alpha_trajectory=list(rep.alphas), repair_statuses=list(rep.statuses),
        refine_trajectory=[], refine_iterations=0, nodes=rep.nodes,
        timings={"predict": t_pred - t0, "repair": t_rep - t_pred},
    )
    if not rep.feasible:
        report.timings["total"] = time.perf_counter() - t0
        return report

    _, report.repaired_objective = original(rep.assignment)
    ref = refine(binst, rep.assignment, solve, scfg)
    x, report.final_objective = original(ref.assignment)
    report.status = "solved"
    report.final_assignment = x.tolist()
    report.refine_trajectory = [inst.from_internal(v) for v in ref.trajectory]
    report.refine_iterations = ref.iterations
    report.nodes += ref.nodes
    if inst.bks is not None:
        report.repaired_gap_pct = gap_pct(report.repaired_objective, inst.bks)
        report.gap_pct = gap_pct(report.final_objective, inst.bks)
    report.timings["refine"] = ref.elapsed
    report.timings["total"] = time.perf_counter() - t0
    return report


def solve_with_model(
    inst: Instance,
    checkpoint: str | Path | tuple[ModelState, ModelConfig],
    solver: str | Solver = "bnb",
    rcfg: RepairConfig = RepairConfig(),
    scfg: SearchConfig = SearchConfig(),
) -> SolveReport:
    st, cfg = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
    return solve_with_prediction(inst, lambda b: predict(b, st, cfg), solver, rcfg, scfg)
