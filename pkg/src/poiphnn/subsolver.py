"""Exact solvers for pure-binary subproblems.

``solve_bnb`` is a depth-first branch-and-bound whose node bound is the sum
of per-term interval upper bounds of the objective; nodes are also cut when
some constraint is provably unsatisfiable under the current fixing.
``solve_enumerate`` scans every completion and serves as the reference.

Objective values in a :class:`SolveOutcome` are in maximization form, i.e.
``evaluate_polynomial(inst.objective, x)``.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .model import (
    FEAS_TOL, Instance, Sense, UnsupportedInstanceError, check_feasible,
    evaluate_polynomial, term_interval,
)

MAX_ENUM_FREE = 25
_REL_GUARD = 1e-9


class SolverConfigError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class Status(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE_TIMEOUT = "feasible_timeout"
    INFEASIBLE = "infeasible"
    UNKNOWN_TIMEOUT = "unknown_timeout"


@dataclass
class SubProblem:
    base: Instance
    fixed: Mapping[int, int] = field(default_factory=dict)
    free: Sequence[int] | None = None
    time_limit: float | None = None
    node_limit: int | None = None
    incumbent: Optional[tuple[np.ndarray, float]] = None

    def __post_init__(self):
        n = self.base.n
        if self.free is None:
            self.free = [v for v in range(n) if v not in self.fixed]
        self.free = sorted(int(v) for v in self.free)
        free = set(self.free)
        if len(free) != len(self.free):
            raise ValueError("duplicate free variables")
        if free & set(self.fixed):
            raise ValueError("a variable cannot be both fixed and free")
        if len(free) + len(self.fixed) != n:
            raise ValueError("fixed and free variables must cover the instance")

    @classmethod
    def whole(cls, inst: Instance, **kw) -> "SubProblem":
        return cls(inst, {}, None, **kw)

    @classmethod
    def around(cls, inst: Instance, x: Sequence[float], free: Sequence[int], **kw) -> "SubProblem":
        """Free ``free`` and fix every other variable to its value in ``x``."""
        free_set = set(int(v) for v in free)
        fixed = {v: int(round(x[v])) for v in range(inst.n) if v not in free_set}
        return cls(inst, fixed, sorted(free_set), **kw)


@dataclass
class SolveOutcome:
    status: Status
    best: np.ndarray | None
    objective: float | None
    nodes: int
    elapsed: float

    @property
    def has_solution(self) -> bool:
        return self.best is not None


class Solver(Protocol):
    def __call__(self, sp: SubProblem, warm_start: Sequence[float] | None = None) -> SolveOutcome: ...


def _require_binary(inst: Instance) -> None:
    if not inst.is_binary:
        raise UnsupportedInstanceError(f"instance {inst.name} has non-binary variables")


def _finish(sp: SubProblem, status: Status, best, obj, nodes: int, t0: float) -> SolveOutcome:
    if best is not None:
        best = np.asarray(best, dtype=np.float64)
        if not check_feasible(sp.base, best).feasible:
            raise RuntimeError("solver produced an infeasible assignment")
    return SolveOutcome(status, best, obj, nodes, time.perf_counter() - t0)


def node_bound(inst: Instance, fixed: Mapping[int, float]) -> float:
    """Objective upper bound of a node: constant plus every term's interval maximum."""
    bounds = inst.bounds()
    return inst.objective.constant + sum(term_interval(t, fixed, bounds).hi for t in inst.objective.terms)


class _Compiled:
    """Flat term tables for incremental interval bookkeeping.

    Group 0 is the objective, group ``j + 1`` is constraint ``j``.
    """

    def __init__(self, inst: Instance):
        self.n = inst.n
        coefs, tvars, group = [], [], []
        polys = [inst.objective] + [c.lhs for c in inst.constraints]
        for g, poly in enumerate(polys):
            for t in poly.terms:
                coefs.append(t.coef)
                tvars.append(t.var_ids)
                group.append(g)
        self.coefs = coefs
        self.tvars = tvars
        self.group = group
        self.var_terms: list[list[int]] = [[] for _ in range(inst.n)]
        for k, vs in enumerate(tvars):
            for v in vs:
                self.var_terms[v].append(k)
        self.var_groups = [sorted({group[k] for k in ts if group[k] > 0}) for ts in self.var_terms]
        self.sense = [None] + [c.sense for c in inst.constraints]
        self.rhs = [0.0] + [c.rhs for c in inst.constraints]
        scale = [abs(inst.objective.constant)] + [abs(c.rhs) for c in inst.constraints]
        for k, g in enumerate(group):
            scale[g] += abs(coefs[k])
        self.guard = [_REL_GUARD * (1.0 + s) for s in scale]
        mass = [0.0] * inst.n
        for k, vs in enumerate(tvars):
            if group[k] == 0:
                for v in vs:
                    mass[v] += abs(coefs[k])
        self.mass = mass


def _compiled(inst: Instance) -> _Compiled:
    cache = inst.__dict__.get("_bnb_compiled")
    if cache is None:
        cache = _Compiled(inst)
        inst.__dict__["_bnb_compiled"] = cache
    return cache


def solve_bnb(sp: SubProblem, warm_start: Sequence[float] | None = None, tol: float = FEAS_TOL) -> SolveOutcome:
    t0 = time.perf_counter()
    inst = sp.base
    _require_binary(inst)
    C = _compiled(inst)
    coefs, tvars, group, var_terms = C.coefs, C.tvars, C.group, C.var_terms
    n_groups = len(C.rhs)

    n_free = [len(vs) for vs in tvars]
    dead = [0] * len(coefs)
    lo = [0.0] * n_groups
    hi = [0.0] * n_groups
    for k, c in enumerate(coefs):
        lo[group[k]] += min(0.0, c)
        hi[group[k]] += max(0.0, c)

    def contrib(k):
        if dead[k]:
            return 0.0, 0.0
        c = coefs[k]
        if n_free[k] == 0:
            return c, c
        return (c, 0.0) if c < 0 else (0.0, c)

    def assign(v, val):
        """Fix v; returns saved group aggregates for exact undo."""
        saved = {}
        for k in var_terms[v]:
            g = group[k]
            if g not in saved:
                saved[g] = (lo[g], hi[g])
            a0, b0 = contrib(k)
            n_free[k] -= 1
            if val == 0:
                dead[k] += 1
            a1, b1 = contrib(k)
            lo[g] += a1 - a0
            hi[g] += b1 - b0
        return saved

    def unassign(v, val, saved):
        for k in var_terms[v]:
            n_free[k] += 1
            if val == 0:
                dead[k] -= 1
        for g, (a, b) in saved.items():
            lo[g] = a
            hi[g] = b

    def unsat(g):
        s, r, eps = C.sense[g], C.rhs[g], tol + C.guard[g]
        if s is Sense.LE:
            return lo[g] > r + eps
        if s is Sense.GE:
            return hi[g] < r - eps
        return lo[g] > r + eps or hi[g] < r - eps

    x = np.zeros(inst.n)
    for v, val in sp.fixed.items():
        x[v] = val
        assign(v, val)
    const = inst.objective.constant
    obj_guard = C.guard[0]

    best = None
    best_obj = -np.inf
    if sp.incumbent is not None:
        best = np.asarray(sp.incumbent[0], dtype=np.float64).copy()
        best_obj = evaluate_polynomial(inst.objective, best)

    order = sorted(sp.free, key=lambda v: (-C.mass[v], v))
    if warm_start is not None:
        first = [1 if warm_start[v] >= 0.5 else 0 for v in range(inst.n)]
    else:
        first = [1] * inst.n

    nodes = 0
    deadline = None if sp.time_limit is None else t0 + sp.time_limit
    aborted = False

    class _Abort(Exception):
        pass

    def tick():
        nonlocal nodes
        if sp.node_limit is not None and nodes >= sp.node_limit:
            raise _Abort
        nodes += 1
        if deadline is not None and (nodes & 63) == 0 and time.perf_counter() > deadline:
            raise _Abort

    def leaf():
        nonlocal best, best_obj
        val = evaluate_polynomial(inst.objective, x)
        if val <= best_obj:
            return
        if check_feasible(inst, x, tol).feasible:
            best, best_obj = x.copy(), val

    def dfs(depth):
        tick()
        if depth == len(order):
            leaf()
            return
        v = order[depth]
        a = first[v]
        for val in (a, 1 - a):
            saved = assign(v, val)
            x[v] = val
            if not any(unsat(g) for g in C.var_groups[v]) and const + hi[0] > best_obj + obj_guard:
                dfs(depth + 1)
            unassign(v, val, saved)
            x[v] = 0.0

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * len(order) + 200))
    try:
        root_ok = not any(unsat(g) for g in range(1, n_groups))
        if root_ok and const + hi[0] > best_obj + obj_guard:
            dfs(0)
    except _Abort:
        aborted = True
    finally:
        sys.setrecursionlimit(limit)

    if aborted:
        status = Status.FEASIBLE_TIMEOUT if best is not None else Status.UNKNOWN_TIMEOUT
    else:
        status = Status.OPTIMAL if best is not None else Status.INFEASIBLE
    return _finish(sp, status, best, None if best is None else best_obj, nodes, t0)


def solve_enumerate(sp: SubProblem, warm_start: Sequence[float] | None = None, tol: float = FEAS_TOL,
                    chunk_bits: int = 15) -> SolveOutcome:
    """Exhaustive scan of all ``2**len(free)`` completions (ties keep the first found).

    A node limit caps the number of completions scanned; the time limit is
    checked between chunks.
    """
    t0 = time.perf_counter()
    inst = sp.base
    _require_binary(inst)
    free = list(sp.free)
    k = len(free)
    if k > MAX_ENUM_FREE:
        raise CapacityError(f"{k} free variables exceed the enumeration limit of {MAX_ENUM_FREE}")
    C = _compiled(inst)
    base = np.zeros(inst.n)
    for v, val in sp.fixed.items():
        base[v] = val

    best, best_obj = None, -np.inf
    if sp.incumbent is not None:
        best = np.asarray(sp.incumbent[0], dtype=np.float64).copy()
        best_obj = evaluate_polynomial(inst.objective, best)
    total = 1 << k
    scan = total if sp.node_limit is None else min(total, sp.node_limit)
    deadline = None if sp.time_limit is None else t0 + sp.time_limit
    step = 1 << min(k, chunk_bits)
    bits = np.arange(k, dtype=np.int64)
    scanned = 0
    for start in range(0, scan, step):
        if deadline is not None and time.perf_counter() > deadline:
            break
        codes = np.arange(start, min(start + step, scan), dtype=np.int64)
        scanned += codes.size
        X = np.tile(base, (codes.size, 1))
        if k:
            X[:, free] = (codes[:, None] >> bits[None, :]) & 1
        ok = np.ones(codes.size, dtype=bool)
        for j, c in enumerate(inst.constraints):
            lhs = c.lhs.evaluate_many(X)
            slack = tol + C.guard[j + 1]
            if c.sense is Sense.LE:
                ok &= lhs <= c.rhs + slack
            elif c.sense is Sense.GE:
                ok &= lhs >= c.rhs - slack
            else:
                ok &= np.abs(lhs - c.rhs) <= slack
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            continue
        vals = inst.objective.evaluate_many(X[idx])
        for pos in np.argsort(-vals, kind="stable"):
            if vals[pos] < best_obj - C.guard[0]:
                break
            row = X[idx[pos]]
            val = evaluate_polynomial(inst.objective, row)
            if val > best_obj and check_feasible(inst, row, tol).feasible:
                best, best_obj = row.copy(), val
    if scanned < total:
        status = Status.FEASIBLE_TIMEOUT if best is not None else Status.UNKNOWN_TIMEOUT
    else:
        status = Status.OPTIMAL if best is not None else Status.INFEASIBLE
    return _finish(sp, status, best, None if best is None else best_obj, scanned, t0)


SOLVERS: dict[str, Callable[..., SolveOutcome]] = {
    "bnb": solve_bnb,
    "enum": solve_enumerate,
}


def get_solver(name: str) -> Solver:
    try:
        return SOLVERS[name]
    except KeyError:
        raise SolverConfigError(f"unknown solver {name!r}; available: {sorted(SOLVERS)}") from None


def solve_instance(inst: Instance, solver: str | Solver = "bnb", time_limit: float | None = None,
                   node_limit: int | None = None, warm_start=None) -> SolveOutcome:
    fn = get_solver(solver) if isinstance(solver, str) else solver
    return fn(SubProblem.whole(inst, time_limit=time_limit, node_limit=node_limit), warm_start)
