# %% [markdown]
# # A small benchmark through the command line
#
# Generate two scales of random quadratically constrained instances, label
# them, train the full model and the variant without hyperedge convolution,
# then compare both against exact solving under a node budget.

# %%
import json
import tempfile
from pathlib import Path

from poiphnn.cli import main

work = Path(tempfile.mkdtemp(prefix="poiphnn-demo-"))
data = work / "data"
for scale, n in (("small", 12), ("medium", 18)):
    main(["generate", "--family", "randqcp", "--seed", "0", "--count", "6", "--out-dir", str(data / scale),
          "--n-vertices", str(n), "--n-hyperedges", str(n // 2)])
main(["labels", "--data-dir", str(data)])

# %%
for name, ablation in (("full", "none"), ("nohyper", "no-hyper")):
    main(["train", "--data-dir", str(data), "--epochs", "10", "--lr", "1e-3", "--ablation", ablation,
          "--seed", "0", "--out", str(work / f"{name}.json")])

# %% [markdown]
# The plan file. Paths are relative to the plan; the best objective across
# all runs serves as the reference value of each instance.

# %%
plan = {
    "dataset": "data",
    "methods": [
        {"name": "exact-200", "kind": "exact", "solver": "bnb"},
        {"name": "hnn", "kind": "model", "checkpoint": "full.json"},
        {"name": "hnn-no-hyper", "kind": "model", "checkpoint": "nohyper.json"},
    ],
    "node_limit": 200,
    "repetitions": 1,
    "search": {"max_iterations": 2},
}
(work / "plan.json").write_text(json.dumps(plan, indent=2))
main(["bench", "--plan", str(work / "plan.json"), "--out", str(work / "results")])

# %%
print((work / "results" / "results.csv").read_text().splitlines()[0])
print("artifacts in", work)
