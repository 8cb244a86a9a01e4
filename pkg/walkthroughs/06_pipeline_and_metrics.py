"""Walkthrough 6: results tables, metrics, plot files and simulation.

Run with ``python3 walkthroughs/06_pipeline_and_metrics.py``. The same steps
are available from the ``cth`` command line.
"""

# %% [markdown]
# Runners produce long-format tables: one record per scenario, step, quantity,
# key and model variant. Tables round-trip through CSV byte for byte.

# %%
import tempfile
from dataclasses import replace
from pathlib import Path

from cth.experiments import (
    ResultTable,
    RunConfig,
    emit_plot_data,
    evaluate,
    references_from_results,
    run_team_inference,
    simulate,
    simulation_scenario,
)
from cth.scenario import builtin_scenarios, load_scenario

scens = [load_scenario(p) for p in builtin_scenarios() if p.stem in "abg"]
res = run_team_inference(scens, RunConfig())
print(res.to_csv().splitlines()[:4])
assert ResultTable.from_csv(res.to_csv()).to_csv() == res.to_csv()

# %% [markdown]
# ``evaluate`` scores a table against reference judgments stored in the
# scenarios. With no human data available, the model's own BMA output serves
# as a reference: BMA scores perfectly, and ML and Level-K show how far they
# sit from it.

# %%
refs = references_from_results(res)
scored = [replace(s, references=refs[s.id]) for s in scens]
print(evaluate(res, scored).to_text())

# %% [markdown]
# Plot files hold one CSV per scenario, ready for any plotting tool.

# %%
out = Path(tempfile.mkdtemp())
print([p.name for p in emit_plot_data(res, out)])

# %% [markdown]
# ``simulate`` samples an episode under chosen policies and can save it as a
# new scenario file.

# %%
a = scens[0]
sim = simulate(a, {0: "JP(A,B; BASE(C))", 1: "JP(A,B; BASE(C))", 2: "greedy"}, seed=1)
print(f"{len(sim.trace)} steps, rewards {sim.rewards}, truncated={sim.truncated}")
new = simulation_scenario(a, sim, "a-sim")
print("moves:", [[m.label() for m in step.hunters] for step in new.trajectory])
