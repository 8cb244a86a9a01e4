from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from cth.experiments import RunConfig, run_action_prediction, run_team_inference
from cth.scenario import builtin_scenarios, load_scenario

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def fixtures():
    """The nine built-in scenarios keyed by id."""
    return {s.id: s for s in (load_scenario(p) for p in builtin_scenarios())}


@pytest.fixture(scope="session")
def team_results(fixtures):
    return run_team_inference(list(fixtures.values()), RunConfig())


@pytest.fixture(scope="session")
def action_results(fixtures):
    return run_action_prediction(list(fixtures.values()), RunConfig())
