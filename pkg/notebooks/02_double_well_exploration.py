# %% [markdown]
# # Escaping a shallow basin
#
# The tilted double well (x^2 - 1)^2 + 0.3 x has a deep minimum near -1.04
# and a shallow one near 0.96.  We start at x = 1.6, above the shallow basin,
# with a little gradient noise, and compare plain gradient steps, low-friction
# momentum and momentum that brakes hard once the loss goal is met.

# %%
import numpy as np

from goalphs import GoalPolicy, Monitor, NoisyGradient, PhsConfig, PhsState, StepBudget
from goalphs import double_well, run_optimizer

dw = double_well(0.3)
left, top, right = dw.stationary_points()
for name, x in (("deep minimum", left), ("barrier", top), ("shallow minimum", right)):
    print(f"{name:16s} x = {x:+.5f}  L = {dw.loss(np.array([x])):+.6f}")

f = NoisyGradient(dw, sigma=0.05)
x0 = PhsState([1.6])
print(f"start: L(1.6) = {dw.loss(x0.theta):.4f}")

# %%
budget = StepBudget(steps=15_000)
runs = {}
for seed in range(5):
    runs.setdefault("SGD", []).append(
        run_optimizer(f, x0, PhsConfig(0.01), None, budget, seed, method="sgd"))
    runs.setdefault("PHS", []).append(
        run_optimizer(f, x0, PhsConfig(0.01, 1.0, 0.2), None, budget, seed))
    goal = GoalPolicy(0.95, 10.0, monitor=Monitor.minibatch())
    runs.setdefault("GOAL_PHS", []).append(
        run_optimizer(f, x0, PhsConfig(0.01, 1.0, 0.2), goal, budget, seed))

for name, recs in runs.items():
    finals = [r.final_loss for r in recs]
    xs = [r.final_state.theta[0] for r in recs]
    print(f"{name:9s} median final loss {np.median(finals):+.5f}   final x {np.round(xs, 3)}")

# %% [markdown]
# Plain gradient steps slide into the nearest basin.  The momentum run carries
# enough energy over the barrier and then rattles around the deep well until
# friction drains it.  The goal threshold 0.05 L0 is only reachable in the
# deep well, so braking fires after the crossing and the run settles.

# %%
for r in runs["GOAL_PHS"]:
    k = r.trigger_step
    pre, post = np.var(r.losses[:k]), np.var(r.losses[k:])
    print(f"seed {r.seed}: trigger at step {k:5d}, loss variance before {pre:.3e} after {post:.3e}")

# %% [markdown]
# Time to settle: first step after which the loss stays within 1e-3 of the
# deep-well value.

# %%
deep = dw.loss(np.array([left]))
for name in ("PHS", "GOAL_PHS"):
    settle = []
    for r in runs[name]:
        off = np.flatnonzero(np.abs(np.array(r.losses) - deep) > 1e-3)
        settle.append(int(off[-1]) + 1 if off.size else 0)
    print(f"{name:9s} settles after steps {settle}")
