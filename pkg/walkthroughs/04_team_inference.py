"""Walkthrough 4: inferring who is on whose team.

Run with ``python3 walkthroughs/04_team_inference.py``.
"""

# %% [markdown]
# An observer watches the hunters and keeps, for each hunter, a posterior over
# its five depth-one hypotheses. Each observed move is scored by the Luce
# (softmax) rule over that hypothesis's Q-values at the observed state.

# %%
from cth.experiments import RunConfig, depth1_sets
from cth.inference import infer_trace, membership, team_probability
from cth.scenario import builtin_scenarios, load_scenario

scen = {p.stem: load_scenario(p) for p in builtin_scenarios()}
cfg = RunConfig()

# %% [markdown]
# Fixture ``a``: A and B converge on a stag. Their pairwise team probability
# climbs with every step.

# %%
a = scen["a"]
inf = infer_trace(a.replay(), depth1_sets(a, cfg), cfg.team_beta, cfg.planner_cfg(a))
series = [team_probability(inf.posteriors[0][t], inf.posteriors[1][t], 0, 1) for t in range(4)]
print("a: P(A,B same team) over time:", [round(v, 3) for v in series])
final = inf.posteriors[0][-1]
for h, p in zip(final.hypotheses, final.probs):
    print(f"   A {h!s:26s} {p:.3f}")

# %% [markdown]
# Fixture ``b``: A and B look like a team for two steps, then B turns to a
# hare. One step is enough to flip the judgment.

# %%
b = scen["b"]
inf = infer_trace(b.replay(), depth1_sets(b, cfg), cfg.team_beta, cfg.planner_cfg(b))
print("b: P(A,B same team):", [round(team_probability(inf.posteriors[0][t], inf.posteriors[1][t], 0, 1), 3) for t in range(4)])
print("b: B's mass on plans with A:", [round(membership(p, 0), 3) for p in inf.posteriors[1]])
