# %% [markdown]
# # Instances, binarization and the hypergraph view
#
# A small facility-location instance with congestion costs: every term of
# degree two or more becomes a hyperedge, constraints become vertices linked
# to their variables.

# %%
import json

import numpy as np

from poiphnn.generators import CflptcParams, gen_cflptc
from poiphnn.hypergraph import encode, graph_stats
from poiphnn.model import (
    Constraint, Instance, Polynomial, PolyTerm, Sense, VariableDef, VarType, binarize, check_feasible,
)
from poiphnn.subsolver import SubProblem, solve_bnb

inst = gen_cflptc(CflptcParams(4, 2, seed=7))
print(inst.name, "variables:", inst.n, "constraints:", len(inst.constraints))
print("highest degree in the objective:", max(sum(e for _, e in t.powers) for t in inst.objective.terms))

# %% [markdown]
# Hypergraph statistics, including the byte estimate used to size batches.

# %%
print(json.dumps(graph_stats(encode(inst)), indent=2))

# %% [markdown]
# Exact branch and bound. The objective is a negated cost, so the reported
# value is negative.

# %%
res = solve_bnb(SubProblem.whole(inst))
print(res.status.value, res.objective, "nodes:", res.nodes)
print("open facilities:", [v.name for v in inst.variables if v.name.startswith("y") and res.best[v.id] == 1])

# %% [markdown]
# Integer variables are replaced by power-of-two bits. Here `z` lives in
# [1, 6]: three bits plus an offset, and a bound constraint keeps the
# decoded value inside the range.

# %%
z = VariableDef(0, "z", VarType.INTEGER, 1, 6)
obj = Polynomial([PolyTerm(3.0, [(0, 1)]), PolyTerm(-0.5, [(0, 2)]), PolyTerm(2.0, [(1, 1)])])
cap = Constraint.build(0, Polynomial.linear({0: 1, 1: 4}), Sense.LE, 7)
small = Instance("toy", [z, VariableDef.binary(1, "b")], obj, [cap])
binst, mapping = binarize(small)
print("binary variables:", binst.n, "constraints:", len(binst.constraints))
best = solve_bnb(SubProblem.whole(binst))
x = mapping.decode(best.best)
print("decoded optimum:", x, "objective:", small.objective_value(x), check_feasible(small, x).feasible)
assert np.isclose(small.objective_value(x), best.objective)
