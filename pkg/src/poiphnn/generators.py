"""Seeded generators for the QMKP, RandQCP and CFLPTC benchmark families.

Every random field draws from its own PCG64 stream derived from
``(seed, stream id)``, so adding a parameter never shifts unrelated draws.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass

import numpy as np

from .model import (
    Constraint, Instance, InstanceError, Polynomial, PolyTerm, Sense, VariableDef, VarType,
)

_STREAMS = {
    "profit": 1, "pairs": 2, "pair_profit": 3, "weights": 4,
    "edge_size": 5, "edge_members": 6, "vertex_weight": 7, "vertex_coef": 8, "pair_coef": 9,
    "customers": 10, "facilities": 11, "demand": 12, "open_cost": 13, "capacity": 14,
    "traffic_cap": 15, "background": 16,
}


def stream(seed: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), _STREAMS[name]])
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class QmkpParams:
    n_items: int
    n_dims: int
    density: float = 0.5
    seed: int = 0
    profit_range: tuple[int, int] = (1, 100)
    pair_profit_range: tuple[int, int] = (1, 50)
    weight_range: tuple[int, int] = (1, 100)
    capacity_ratio: float = 0.5

    def __post_init__(self):
        if self.n_items < 1 or self.n_dims < 0:
            raise ValueError("n_items must be >= 1 and n_dims >= 0")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError("density must lie in [0, 1]")


def gen_qmkp(p: QmkpParams) -> Instance:
    """Quadratic multiple knapsack: linear + pairwise profits, one knapsack row per dimension."""
    n = p.n_items
    c = stream(p.seed, "profit").integers(p.profit_range[0], p.profit_range[1] + 1, size=n)
    pick = stream(p.seed, "pairs").random(n * (n - 1) // 2)
    q = stream(p.seed, "pair_profit").integers(
        p.pair_profit_range[0], p.pair_profit_range[1] + 1, size=n * (n - 1) // 2
    )
    a = stream(p.seed, "weights").integers(p.weight_range[0], p.weight_range[1] + 1, size=(p.n_dims, n))

    terms = [PolyTerm(float(c[i]), ((i, 1),)) for i in range(n)]
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            if pick[k] < p.density:
                terms.append(PolyTerm(float(q[k]), ((i, 1), (j, 1))))
            k += 1
    constraints = [
        Constraint(d, Polynomial.linear({i: float(a[d, i]) for i in range(n)}), Sense.LE,
                   float(round(p.capacity_ratio * a[d].sum())))
        for d in range(p.n_dims)
    ]
    return Instance(
        name=f"qmkp_n{n}_m{p.n_dims}_s{p.seed}",
        variables=tuple(VariableDef.binary(i, f"x{i}") for i in range(n)),
        objective=Polynomial(terms),
        constraints=tuple(constraints),
    )


@dataclass(frozen=True)
class RandQcpParams:
    n_vertices: int
    n_hyperedges: int
    edge_size: tuple[int, int] = (2, 4)
    seed: int = 0
    weight_range: tuple[int, int] = (1, 100)
    linear_range: tuple[float, float] = (0.5, 1.5)
    pair_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.edge_size[0] < 2 or self.edge_size[1] < self.edge_size[0]:
            raise ValueError("hyperedge sizes must be >= 2")
        if self.n_vertices < 2:
            raise ValueError("need at least two vertices")


def gen_randqcp(p: RandQcpParams) -> Instance:
    """Quadratically constrained independent-set extension on a random hypergraph.

    Each hyperedge ``e`` yields ``sum a_i x_i + sum_{i<j} q_ij x_i x_j <= |e|``.
    """
    n = p.n_vertices
    c = stream(p.seed, "vertex_weight").integers(p.weight_range[0], p.weight_range[1] + 1, size=n)
    a = np.round(stream(p.seed, "vertex_coef").uniform(*p.linear_range, size=n), 4)
    sizes = stream(p.seed, "edge_size").integers(p.edge_size[0], p.edge_size[1] + 1, size=p.n_hyperedges)
    members_rng = stream(p.seed, "edge_members")
    pair_rng = stream(p.seed, "pair_coef")
    pair_q: dict[tuple[int, int], float] = {}

    constraints = []
    for e, size in enumerate(sizes):
        members = np.sort(members_rng.choice(n, size=min(int(size), n), replace=False))
        terms = [PolyTerm(float(a[i]), ((int(i), 1),)) for i in members]
        for x in range(len(members)):
            for y in range(x + 1, len(members)):
                key = (int(members[x]), int(members[y]))
                if key not in pair_q:
                    pair_q[key] = float(np.round(pair_rng.uniform(*p.pair_range), 4))
                terms.append(PolyTerm(pair_q[key], ((key[0], 1), (key[1], 1))))
        constraints.append(Constraint(e, Polynomial(terms), Sense.LE, float(len(members))))
    return Instance(
        name=f"randqcp_v{n}_e{p.n_hyperedges}_s{p.seed}",
        variables=tuple(VariableDef.binary(i, f"x{i}") for i in range(n)),
        objective=Polynomial.linear({i: float(c[i]) for i in range(n)}),
        constraints=tuple(constraints),
    )


@dataclass(frozen=True)
class CflptcParams:
    m_customers: int
    n_facilities: int
    coord_range: tuple[float, float] = (10.0, 200.0)
    demand_range: tuple[int, int] = (10, 50)
    open_cost_range: tuple[int, int] = (300, 700)
    capacity_range: tuple[int, int] = (100, 500)
    alpha: float = 1.0
    beta: int = 4
    seed: int = 0
    explicit_e: bool = False

    def __post_init__(self):
        if self.m_customers < 1 or self.n_facilities < 1:
            raise ValueError("need at least one customer and one facility")
        if self.beta < 1:
            raise ValueError("beta must be a positive integer")


@dataclass(frozen=True)
class CflptcData:
    """Sampled numbers behind a CFLPTC instance (useful for independent checks)."""

    distance: np.ndarray  # (n, m)
    demand: np.ndarray  # (m,)
    open_cost: np.ndarray  # (n,)
    capacity: np.ndarray  # (n,)
    traffic_cap: np.ndarray  # (n,)
    background: np.ndarray  # (n,)
    alpha: float
    beta: int


def cflptc_data(p: CflptcParams) -> CflptcData:
    m, n = p.m_customers, p.n_facilities
    cust = stream(p.seed, "customers").uniform(*p.coord_range, size=(m, 2))
    fac = stream(p.seed, "facilities").uniform(*p.coord_range, size=(n, 2))
    dist = np.sqrt(((fac[:, None, :] - cust[None, :, :]) ** 2).sum(axis=2))
    demand = stream(p.seed, "demand").integers(p.demand_range[0], p.demand_range[1] + 1, size=m).astype(float)
    open_cost = stream(p.seed, "open_cost").integers(
        p.open_cost_range[0], p.open_cost_range[1] + 1, size=n).astype(float)
    capacity = stream(p.seed, "capacity").integers(
        p.capacity_range[0], p.capacity_range[1] + 1, size=n).astype(float)
    traffic = stream(p.seed, "traffic_cap").uniform(1.0, 4.0, size=n) * capacity
    background = stream(p.seed, "background").uniform(0.1, 1.0, size=n) * traffic
    return CflptcData(dist, demand, open_cost, capacity, traffic, background, p.alpha, p.beta)


def cflptc_var_ids(m: int, n: int) -> dict[str, object]:
    """Variable layout: ``y[i]`` first, then ``x[i,j]`` row-major, then ``e[i]``."""
    return {
        "y": lambda i: i,
        "x": lambda i, j: n + i * m + j,
        "e": lambda i: n + n * m + i,
    }


def gen_cflptc(p: CflptcParams) -> Instance:
    """Capacitated facility location with BPR congestion costs.

    By default the congestion level of each facility is substituted into the
    objective, giving a pure-binary polynomial of degree ``beta + 1``. With
    ``explicit_e`` the levels stay as continuous variables tied to the
    assignment by one equality per facility.
    """
    m, n = p.m_customers, p.n_facilities
    d = cflptc_data(p)
    ids = cflptc_var_ids(m, n)
    y, x, e = ids["y"], ids["x"], ids["e"]

    variables = [VariableDef.binary(y(i), f"y[{i}]") for i in range(n)]
    variables += [VariableDef.binary(x(i, j), f"x[{i},{j}]") for i in range(n) for j in range(m)]

    terms = [PolyTerm(-d.open_cost[i], ((y(i), 1),)) for i in range(n)]
    terms += [PolyTerm(-d.alpha * d.distance[i, j], ((x(i, j), 1),)) for i in range(n) for j in range(m)]
    for i in range(n):
        if p.explicit_e:
            level_pow = Polynomial([PolyTerm(1.0, ((e(i), p.beta),))])
        else:
            level = Polynomial.linear(
                {x(i, j): d.demand[j] / d.traffic_cap[i] for j in range(m)},
                d.background[i] / d.traffic_cap[i],
            )
            level_pow = level.power(p.beta)
        for j in range(m):
            scale = -d.alpha * 0.15 * d.distance[i, j]
            terms += level_pow.multiply(Polynomial.var(x(i, j))).scale(scale).terms
    obj = Polynomial(terms)

    cons: list[Constraint] = []

    def add(lhs: Polynomial, sense: Sense, rhs: float):
        cons.append(Constraint.build(len(cons), lhs, sense, rhs))

    for j in range(m):
        add(Polynomial.linear({x(i, j): 1.0 for i in range(n)}), Sense.EQ, 1.0)
    for i in range(n):
        for j in range(m):
            add(Polynomial.linear({x(i, j): 1.0, y(i): -1.0}), Sense.LE, 0.0)
    for i in range(n):
        lhs = {x(i, j): d.demand[j] for j in range(m)}
        lhs[y(i)] = -d.capacity[i]
        add(Polynomial.linear(lhs), Sense.LE, 0.0)
    if p.explicit_e:
        for i in range(n):
            lo = d.background[i] / d.traffic_cap[i]
            hi = (d.demand.sum() + d.background[i]) / d.traffic_cap[i]
            variables.append(VariableDef(e(i), f"e[{i}]", VarType.CONTINUOUS, lo, hi))
            lhs = {x(i, j): -d.demand[j] / d.traffic_cap[i] for j in range(m)}
            lhs[e(i)] = 1.0
            add(Polynomial.linear(lhs), Sense.EQ, lo)

    tag = "e" if p.explicit_e else ""
    return Instance(
        name=f"cflptc{tag}_m{m}_n{n}_s{p.seed}",
        variables=tuple(variables),
        objective=obj,
        constraints=tuple(cons),
    )


_E_NAME = re.compile(r"^e\[(\d+)\]$")


def cflptc_quadratic_reformulation(inst: Instance) -> Instance:
    """Rewrite an explicit-level CFLPTC instance so every term has degree <= 2.

    Adds ``e1[i] = e[i]**2`` and ``e2[i] = e1[i]**2`` per facility and replaces
    powers of ``e[i]`` accordingly; exponents other than 1, 2 and 4 are rejected.
    """
    levels = {}
    for v in inst.variables:
        mt = _E_NAME.match(v.name)
        if mt and v.vtype is VarType.CONTINUOUS:
            levels[v.id] = int(mt.group(1))
    if not levels:
        raise InstanceError("instance has no explicit congestion variables e[i]")

    variables = list(inst.variables)
    e1, e2 = {}, {}
    for vid, i in sorted(levels.items(), key=lambda kv: kv[1]):
        v = inst.variables[vid]
        e1[vid] = len(variables)
        variables.append(VariableDef(e1[vid], f"e1[{i}]", VarType.CONTINUOUS, v.lb ** 2, v.ub ** 2))
        e2[vid] = len(variables)
        variables.append(VariableDef(e2[vid], f"e2[{i}]", VarType.CONTINUOUS, v.lb ** 4, v.ub ** 4))

    # only these powers become a single variable, which keeps e**k * x quadratic
    replacement = {1: lambda v: ((v, 1),), 2: lambda v: ((e1[v], 1),), 4: lambda v: ((e2[v], 1),)}
    terms = []
    for t in inst.objective.terms:
        powers = []
        for v, k in t.powers:
            if v in levels:
                if k not in replacement:
                    raise InstanceError(f"cannot reduce e[{levels[v]}]**{k} to quadratic form")
                powers.extend(replacement[k](v))
            else:
                powers.append((v, k))
        terms.append(PolyTerm(t.coef, tuple(powers)))

    cons = list(inst.constraints)
    for vid in sorted(levels, key=levels.get):
        for new, old in ((e1[vid], vid), (e2[vid], e1[vid])):
            lhs = Polynomial([PolyTerm(1.0, ((new, 1),)), PolyTerm(-1.0, ((old, 2),))])
            cons.append(Constraint(len(cons), lhs, Sense.EQ, 0.0))
    return inst.replace(
        name=inst.name + "_quad",
        variables=tuple(variables),
        objective=Polynomial(terms, inst.objective.constant),
        constraints=tuple(cons),
    )


def params_to_dict(p) -> dict:
    out = asdict(p)
    out["family"] = {QmkpParams: "qmkp", RandQcpParams: "randqcp", CflptcParams: "cflptc"}[type(p)]
    return out


def generate(p) -> Instance:
    if isinstance(p, QmkpParams):
        return gen_qmkp(p)
    if isinstance(p, RandQcpParams):
        return gen_randqcp(p)
    if isinstance(p, CflptcParams):
        return gen_cflptc(p)
    raise TypeError(f"unknown parameter type {type(p).__name__}")
