# %% [markdown]
# # Goal-oriented braking on a FashionMNIST subset
#
# 784-64-32-10 tanh network, 10k training images, batch 128, alpha = 0.01.
# The goal is an EMA training loss of 0.15 L0; when it is met friction is
# multiplied by 5 for the rest of the run.  Data comes from
# tools/fetch_fashion_mnist.py.

# %%
import copy
from pathlib import Path

import numpy as np

from goalphs import harness

root = Path(__file__).resolve().parents[1]
base = harness.load_config(root / "configs" / "fmnist_compare.yaml")
base["seeds"] = [0]
configs = []
for v in base.pop("compare"):
    c = copy.deepcopy(base)
    c["optimizer"], c["policy"] = v["optimizer"], v.get("policy")
    configs.append(c)

table, records = harness.compare(configs, data_root=root / "data")
print(table.to_text())

# %% [markdown]
# Accuracy per epoch, and where the brake engaged.

# %%
for recs in records:
    r = recs[0]
    print(f"{r.method:9s} " + " ".join(f"{a:.3f}" for a in r.test_accuracy))
goal = records[2][0]
k = goal.trigger_step
assert k is not None, "goal not reached within the budget"
print(f"trigger at step {k} (epoch {k / 79:.1f}), EMA loss {goal.ema_losses[k]:.3f}, "
      f"L0 {goal.initial_loss:.3f}")

# %% [markdown]
# Energy around the trigger: the kinetic part collapses once friction jumps.

# %%
kin = np.array([e.kinetic for e in goal.energies])
for lo, hi in ((k - 50, k), (k, k + 50), (k + 50, k + 100)):
    print(f"steps {lo:4d}-{hi:4d}: mean kinetic energy {kin[lo:hi].mean():.3e}")

# %%
out = Path("runs/fmnist-notebook")
out.mkdir(parents=True, exist_ok=True)
print("history:", harness.emit_history(goal, "csv", out, stem="goal_phs_seed0"))
