"""Walkthrough 2: best response, joint planning, and UCT.

Run with ``python3 walkthroughs/02_planning.py``.
"""

# %% [markdown]
# A stag pinned in a corner can only be taken by two hunters stepping onto it
# together. A joint planner sees that; a lone best responder facing a random
# partner values the same move much lower.

# %%
from cth.game import replace
from cth.planner import UCT, PlannerConfig, best_response, exact_q, joint_plan, uct_q
from cth.staghunt import GridWorld, Move, StagHuntGame

world = GridWorld.create(3, 3, hunters=[(1, 0), (0, 1)], stags=[(0, 0)], hares=[(2, 2)])
game = StagHuntGame(world, horizon=3, discount=0.95)
s0 = game.initial_state
cfg = PlannerConfig(horizon=3)

team = joint_plan(game, cfg, s0)
print("joint plan, hunter 0:", {m.label(): round(q, 3) for m, q in team.q_row(0, 0).items()})
print("joint plan policy:", {m.label(): p for m, p in team.policy_row(0, 0).items()})

solo = best_response(replace(game, {1: lambda s: game.base_policy(s, 1)}), cfg, s0)
print("best response to a random partner:", {m.label(): round(q, 3) for m, q in solo.q_row(0, 0).items()})

# %% [markdown]
# ``exact_q`` is a memoized expectimax used as an independent check of the
# tabular planner.

# %%
oracle = exact_q(game, s0, 3).root_row()
print("oracle Q of (W, S):", oracle[(Move.WEST, Move.SOUTH)])

# %% [markdown]
# UCT estimates the same root values by sampling. More budget gives tighter
# estimates; the seed makes a run reproducible.

# %%
for budget in (100, 1_000, 10_000):
    est = uct_q(game, s0, PlannerConfig(mode=UCT, horizon=3, budget=budget, seed=0)).root_row()
    best = max(est, key=est.get)
    print(f"budget {budget:>6}: best joint move {tuple(m.label() for m in best)} Q~{est[best]:.3f}")
