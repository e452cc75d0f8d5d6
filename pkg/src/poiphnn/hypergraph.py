"""High-degree-term-aware hypergraph encoding of an instance.

Vertices are variables and constraints. Every objective or constraint term
of total degree >= 2 becomes a hyperedge over the variables it contains; a
hyperedge coming from a constraint term also lists the owning constraint as
a member with exponent 0. Variable/constraint incidence is kept as ordinary
edges.

Raw feature layouts::

    variable    [continuous, binary, integer, lb, ub, inf_lb, inf_ub, avg_obj_coe, avg_obj_deg]
    constraint  [le, ge, eq, rhs]
    membership  [deg, coe]
    edge        [avg_coe, avg_deg]
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .model import Instance, Sense, VarType

VAR_DIM, CONS_DIM, MEMBER_DIM, EDGE_DIM = 9, 4, 2, 2
MODES = ("full", "no-hyper", "no-vc")

_TYPE_COL = {VarType.CONTINUOUS: 0, VarType.BINARY: 1, VarType.INTEGER: 2}
_SENSE_COL = {Sense.LE: 0, Sense.GE: 1, Sense.EQ: 2}


@dataclass(frozen=True)
class Hypergraph:
    var_feat: np.ndarray
    cons_feat: np.ndarray
    # variable memberships of hyperedges
    mem_var: np.ndarray
    mem_edge: np.ndarray
    mem_feat: np.ndarray
    # constraint memberships of hyperedges (constraint-term hyperedges only)
    cmem_cons: np.ndarray
    cmem_edge: np.ndarray
    cmem_feat: np.ndarray
    he_source: np.ndarray  # -1 for objective terms, else constraint id
    he_degree: np.ndarray
    edge_var: np.ndarray
    edge_cons: np.ndarray
    edge_feat: np.ndarray

    @property
    def n(self) -> int:
        return self.var_feat.shape[0]

    @property
    def m(self) -> int:
        return self.cons_feat.shape[0]

    @property
    def n_h(self) -> int:
        return self.he_source.shape[0]

    @property
    def s(self) -> int:
        return self.mem_var.shape[0]

    @property
    def n_e(self) -> int:
        return self.edge_var.shape[0]

    def members(self, h: int) -> list[tuple[int, float, float]]:
        """``(var_id, coef, exponent)`` for each variable member of hyperedge ``h``."""
        idx = np.flatnonzero(self.mem_edge == h)
        return [(int(self.mem_var[k]), float(self.mem_feat[k, 1]), float(self.mem_feat[k, 0])) for k in idx]

    def var_hyperedges(self, v: int) -> np.ndarray:
        return np.unique(self.mem_edge[self.mem_var == v])

    def to_dict(self) -> dict:
        return {
            "n": self.n, "m": self.m,
            "var_features": self.var_feat.tolist(),
            "cons_features": self.cons_feat.tolist(),
            "hyperedges": [
                {
                    "source": int(self.he_source[h]),
                    "degree": int(self.he_degree[h]),
                    "vars": [[v, c, e] for v, c, e in self.members(h)],
                    "cons": [[int(self.cmem_cons[k]), float(self.cmem_feat[k, 1])]
                             for k in np.flatnonzero(self.cmem_edge == h)],
                }
                for h in range(self.n_h)
            ],
            "edges": [
                [int(v), int(c), float(f[0]), float(f[1])]
                for v, c, f in zip(self.edge_var, self.edge_cons, self.edge_feat)
            ],
        }


def _order_free_mean(xs: list[float]) -> float:
    # fsum is correctly rounded, so relabeling variables cannot change the bits
    return math.fsum(xs) / len(xs)


def encode(inst: Instance, mode: str = "full") -> Hypergraph:
    """Build the hypergraph and raw features of ``inst``.

    ``mode`` selects the representation used by the ablation variants:
    ``"no-hyper"`` drops all hyperedges; ``"no-vc"`` drops the edges and
    instead turns every constraint term (any degree) into a hyperedge that
    includes its constraint.
    """
    if mode not in MODES:
        raise ValueError(f"unknown encoding mode {mode!r}; expected one of {MODES}")
    n, m = inst.n, inst.m

    var_feat = np.zeros((n, VAR_DIM))
    obj_coe = defaultdict(list)
    obj_deg = defaultdict(list)
    for t in inst.objective.terms:
        for v, e in t.powers:
            obj_coe[v].append(t.coef)
            obj_deg[v].append(e)
    for v in inst.variables:
        row = var_feat[v.id]
        row[_TYPE_COL[v.vtype]] = 1.0
        row[3] = 0.0 if v.lb_is_neg_inf else v.lb
        row[4] = 0.0 if v.ub_is_pos_inf else v.ub
        row[5] = float(v.lb_is_neg_inf)
        row[6] = float(v.ub_is_pos_inf)
        if obj_coe[v.id]:
            row[7] = _order_free_mean(obj_coe[v.id])
            row[8] = _order_free_mean(obj_deg[v.id])

    cons_feat = np.zeros((m, CONS_DIM))
    for c in inst.constraints:
        cons_feat[c.id, _SENSE_COL[c.sense]] = 1.0
        cons_feat[c.id, 3] = c.rhs

    mem_var, mem_edge, mem_feat = [], [], []
    cmem_cons, cmem_edge, cmem_feat = [], [], []
    he_source, he_degree = [], []

    def add_hyperedge(term, source: int):
        h = len(he_source)
        he_source.append(source)
        he_degree.append(term.degree)
        for v, e in term.powers:
            mem_var.append(v)
            mem_edge.append(h)
            mem_feat.append((float(e), term.coef))
        if source >= 0:
            cmem_cons.append(source)
            cmem_edge.append(h)
            cmem_feat.append((0.0, term.coef))

    if mode != "no-hyper":
        for t in inst.objective.terms:
            if t.degree >= 2:
                add_hyperedge(t, -1)
        for c in inst.constraints:
            for t in c.lhs.terms:
                if t.degree >= 2 or mode == "no-vc":
                    add_hyperedge(t, c.id)

    edge_var, edge_cons, edge_feat = [], [], []
    if mode != "no-vc":
        for c in inst.constraints:
            coe = defaultdict(list)
            deg = defaultdict(list)
            for t in c.lhs.terms:
                for v, e in t.powers:
                    coe[v].append(t.coef)
                    deg[v].append(e)
            for v in sorted(coe):
                edge_var.append(v)
                edge_cons.append(c.id)
                edge_feat.append((_order_free_mean(coe[v]), _order_free_mean(deg[v])))

    def ints(xs):
        return np.asarray(xs, dtype=np.int64)

    def feats(xs, d):
        return np.asarray(xs, dtype=np.float64).reshape(-1, d)

    return Hypergraph(
        var_feat=var_feat,
        cons_feat=cons_feat,
        mem_var=ints(mem_var), mem_edge=ints(mem_edge), mem_feat=feats(mem_feat, MEMBER_DIM),
        cmem_cons=ints(cmem_cons), cmem_edge=ints(cmem_edge), cmem_feat=feats(cmem_feat, MEMBER_DIM),
        he_source=ints(he_source), he_degree=ints(he_degree),
        edge_var=ints(edge_var), edge_cons=ints(edge_cons), edge_feat=feats(edge_feat, EDGE_DIM),
    )


def memory_estimate(n: int, m: int, s: int, n_e: int) -> int:
    """Bytes to store the representation: 4-byte indices, 8-byte float features."""
    return 76 * n + 36 * m + 20 * s + 24 * n_e


def graph_stats(hg: Hypergraph) -> dict:
    return {
        "n": hg.n,
        "m": hg.m,
        "n_h": hg.n_h,
        "s": hg.s,
        "n_e": hg.n_e,
        "max_degree": int(hg.he_degree.max(initial=0)),
        "estimated_bytes": memory_estimate(hg.n, hg.m, hg.s, hg.n_e),
    }


def batch(graphs: list[Hypergraph]) -> tuple[Hypergraph, np.ndarray]:
    """Disjoint union of ``graphs``; also returns the graph index of every variable."""
    offs = {"n": 0, "m": 0, "h": 0}
    parts = defaultdict(list)
    owner = []
    for g_id, g in enumerate(graphs):
        n0, m0, h0 = offs["n"], offs["m"], offs["h"]
        parts["var_feat"].append(g.var_feat)
        parts["cons_feat"].append(g.cons_feat)
        parts["mem_var"].append(g.mem_var + n0)
        parts["mem_edge"].append(g.mem_edge + h0)
        parts["mem_feat"].append(g.mem_feat)
        parts["cmem_cons"].append(g.cmem_cons + m0)
        parts["cmem_edge"].append(g.cmem_edge + h0)
        parts["cmem_feat"].append(g.cmem_feat)
        parts["he_source"].append(np.where(g.he_source >= 0, g.he_source + m0, -1))
        parts["he_degree"].append(g.he_degree)
        parts["edge_var"].append(g.edge_var + n0)
        parts["edge_cons"].append(g.edge_cons + m0)
        parts["edge_feat"].append(g.edge_feat)
        owner.append(np.full(g.n, g_id, dtype=np.int64))
        offs["n"] += g.n
        offs["m"] += g.m
        offs["h"] += g.n_h
    merged = Hypergraph(**{k: np.concatenate(v) for k, v in parts.items()})
    return merged, np.concatenate(owner) if owner else np.zeros(0, dtype=np.int64)
