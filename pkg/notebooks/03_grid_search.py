# %% [markdown]
# # Friction x mass grid on three Gaussian blobs
#
# A small tanh network trained with the momentum step over a 4 x 4 grid of
# friction and mass.  Cells whose step map is unstable blow up and are
# flagged instead of aborting the sweep.

# %%
import warnings
from pathlib import Path

import numpy as np

from goalphs import harness

cfg = harness.load_config(Path(__file__).resolve().parents[1] / "configs" / "blobs_grid.yaml")
axes = cfg["grid"]
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    grid = harness.grid_search(cfg, axes)

alpha = cfg["optimizer"]["alpha"]
acc = grid.matrix(alpha)
print("final test accuracy (rows: friction, columns: mass)")
print("friction\\mass " + " ".join(f"{m:>7g}" for m in axes["mass"]))
for fr, row in zip(axes["friction"], acc):
    print(f"{fr:>13g} " + " ".join("  diverg" if np.isnan(v) else f"{v:7.3f}" for v in row))

# %% [markdown]
# Along a direction where the loss is flat the momentum is multiplied by
# 1 - alpha gamma / m every step, so any cell with alpha gamma / m > 2 is
# unstable no matter what the network looks like.  The flags line up with
# that bound.

# %%
c = alpha * np.array(axes["friction"])[:, None] / np.array(axes["mass"])[None, :]
print("alpha*gamma/m > 2:")
print(c > 2)
print("flagged matches the bound:", np.array_equal(np.isnan(acc), c > 2))

# %%
out = Path("runs/blobs-grid")
for p in grid.write(out, cfg["name"]):
    print("wrote", p)
