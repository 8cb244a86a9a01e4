"""Walkthrough 1: the stag-hunt grid, its dynamics, and REPLACE.

Run with ``python3 walkthroughs/01_stag_hunt_world.py``.
"""

# %% [markdown]
# A world holds hunters, stags and hares on a grid. Hunters move one cell per
# step; stags flee from nearby hunters; hares stay put. A stag needs two
# hunters on its cell at once and pays 20, split evenly. A hare pays 1.

# %%
from cth.game import UNIFORM, replace
from cth.staghunt import GridWorld, Move, StagHuntGame, step_dist

world = GridWorld.create(4, 3, hunters=[(0, 1), (3, 1)], stags=[(1, 1)], hares=[(3, 2)])
stags = {c for c, _ in world.stags}
hares = {c for c, _ in world.hares}
for y in reversed(range(world.height)):
    row = ["H" if (x, y) in world.hunters else "S" if (x, y) in stags else "h" if (x, y) in hares else "." for x in range(world.width)]
    print(" ".join(row))

# %% [markdown]
# ``step_dist`` lists every outcome of one joint move. Hunter 0 steps next to
# the stag, so it flees. Ties between escape cells split the probability.

# %%
for out in step_dist(world, (Move.STAY, Move.NORTH)):
    print(f"p={out.prob:.3f} stag at {out.world.stags[0][0]} rewards={out.rewards}")

# %% [markdown]
# Wrapped as a stochastic game with a clock, an episode lasts ``horizon`` steps.

# %%
game = StagHuntGame(world, horizon=4, discount=0.95)
s0 = game.initial_state
print("joint actions at the start:", len(game.joint_actions(s0)))

# %% [markdown]
# REPLACE folds fixed policies into the dynamics. With hunter 1 playing
# uniformly at random, the reduced game has one agent, and each of its moves
# leads to a mixture over hunter 1's moves.

# %%
solo = replace(game, {1: lambda s: game.base_policy(s, 1, UNIFORM)})
print("agents left:", solo.agent_ids)
dist = solo.transition_dist(s0, (Move.EAST,))
print(f"{len(dist)} successor states; total probability {sum(dist.values()):.12f}")
