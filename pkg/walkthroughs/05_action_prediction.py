"""Walkthrough 5: predicting the next move, with and without joint planning.

Run with ``python3 walkthroughs/05_action_prediction.py``.
"""

# %% [markdown]
# Prediction mixes each hypothesis's Luce policy by its posterior weight
# (BMA), or uses the single most probable hypothesis (ML). The Level-K
# baseline runs the same pipeline over best-response towers only, so it cannot
# represent hunters who plan together.

# %%
from cth.experiments import RunConfig, action_key, run_action_prediction
from cth.scenario import builtin_scenarios, load_scenario

scen = next(load_scenario(p) for p in builtin_scenarios() if p.stem == "a")
res = run_action_prediction([scen], RunConfig())

# %% [markdown]
# At step 1 of fixture ``a``, A and B keep closing in on the stag. CTH
# expects that; Level-K does not.

# %%
for k in scen.prediction_steps:
    for hid in ("A", "B"):
        move = scen.trajectory[k].hunters[scen.hunter_index(hid)]
        key = action_key(hid, move)
        vals = {v: res.value("a", k, "action_prob", key, v) for v in ("BMA-CTH", "ML-CTH", "LevelK")}
        print(f"step {k} {key:10s}", "  ".join(f"{v}={p:.3f}" for v, p in vals.items()))
