# %% [markdown]
# # Train a predictor, then repair and refine its guesses
#
# Label a batch of small quadratic knapsack instances with the exact
# solver, fit the hypergraph network and use its predictions to seed the
# neighborhood search. Runs in about two minutes on one core.

# %%
import numpy as np

from poiphnn.generators import QmkpParams, gen_qmkp
from poiphnn.hnn import ModelConfig, Prediction, TrainConfig, init_params, mean_loss, predict, train
from poiphnn.search import RepairConfig, SearchConfig, solve_with_model, solve_with_prediction
from poiphnn.subsolver import SubProblem, solve_bnb

instances = [gen_qmkp(QmkpParams(16, 3, seed=s)) for s in range(150)]
labeled = []
for inst in instances:
    res = solve_bnb(SubProblem.whole(inst))
    labeled.append((inst, res.best, res.objective))
train_set = [(i, y) for i, y, _ in labeled[:130]]
held_out = labeled[130:]
print("items per instance:", instances[0].n, "mean share of packed items:",
      round(float(np.mean([y.mean() for _, y in train_set])), 3))

# %% [markdown]
# A short run with a larger step size than the default.

# %%
cfg = ModelConfig(seed=0)
state, curve = train(train_set, TrainConfig(learning_rate=1e-3, epochs=40, seed=0), cfg, init_params(cfg))
print("training loss:", [round(c, 3) for c in curve[::8]])
print("held-out loss:", round(mean_loss([(i, y) for i, y, _ in held_out], state, cfg), 4), "vs ln 2 =",
      round(np.log(2), 4))

# %% [markdown]
# Probabilities for one held-out instance, next to its optimal assignment.

# %%
inst, y, best = held_out[0]
pred = predict(inst, state, cfg)
print("p :", np.round(pred.prob, 2))
print("y :", y.astype(int))

# %% [markdown]
# Repair turns the rounded prediction into a feasible point, refine improves
# it with a few rounds of neighborhood search.

# %%
for inst, _, best in held_out[:4]:
    inst = inst.replace(bks=best)
    rep = solve_with_model(inst, (state, cfg), "bnb", RepairConfig(subproblem_node_limit=500),
                           SearchConfig(subproblem_node_limit=500, max_iterations=3))
    print(f"{inst.name}: repaired gap {rep.repaired_gap_pct:6.2f}%  final gap {rep.gap_pct:6.2f}%  "
          f"alphas {rep.alpha_trajectory}")

# %% [markdown]
# The same pipeline with a flat 0.5 prediction: rounding packs every item,
# so repair frees the whole instance and leans on the subsolver.

# %%
inst, _, best = held_out[0]
flat = solve_with_prediction(inst.replace(bks=best), lambda b: Prediction.from_probabilities(np.full(b.n, 0.5)),
                             "bnb", RepairConfig(subproblem_node_limit=500))
print("flat prediction: repaired gap", round(flat.repaired_gap_pct, 2), "alphas", flat.alpha_trajectory)
