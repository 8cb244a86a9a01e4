"""Walkthrough 3: composable team hierarchies.

Run with ``python3 walkthroughs/03_hierarchies.py``.
"""

# %% [markdown]
# A hierarchy is a tree of three node kinds: ``BASE`` (a non-strategic leaf),
# ``BR`` (one hunter best-responds to the policies below it) and ``JP`` (a
# team plans jointly against the policies below it). Text and trees convert
# both ways.

# %%
from cth.hierarchy import (
    compile,
    cooperates,
    enumerate_depth1,
    enumerate_levelk,
    parse,
    to_text,
)
from cth.planner import PlannerConfig
from cth.staghunt import GridWorld, StagHuntGame

node = parse("BR(A; JP(B,C; BASE(A)))")
print(to_text(node), "| A cooperates with B:", cooperates(node, 1))

# %% [markdown]
# Inference uses the depth-one hypotheses of each hunter. With three hunters
# there are five: the base policy, a solo best response, two pair teams and the
# full team. Level-K towers never contain ``JP``.

# %%
for h in enumerate_depth1(3, 0):
    print("depth-1:", to_text(h))
for h in enumerate_levelk(3, 0, 2):
    print("level-k:", to_text(h))

# %% [markdown]
# Compiling a hierarchy against a game yields policies for every agent it
# covers. Here A best-responds to B and C, who hunt together while assuming A
# moves at random.

# %%
world = GridWorld.create(5, 3, hunters=[(0, 1), (4, 0), (4, 2)], stags=[(2, 1)], hares=[(0, 2)])
game = StagHuntGame(world, horizon=3)
out = compile(node, game, PlannerConfig(horizon=3), game.initial_state)
print("A", {m.label(): round(p, 3) for m, p in out.policy_row(0).items()})

# %% [markdown]
# A ``BR`` node provides only its own hunter's policy. Compiling the inner
# team shows what A is responding to.

# %%
inner = compile(parse("JP(B,C; BASE(A))"), game, PlannerConfig(horizon=3), game.initial_state)
for agent in (1, 2):
    print("ABC"[agent], {m.label(): round(p, 3) for m, p in inner.policy_row(agent).items()})
