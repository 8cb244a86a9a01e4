"""Cooperative theory-of-mind hierarchies for inferring teams in a spatial stag hunt.

Modules:
    game: abstract stochastic games and fixed-policy marginalization.
    staghunt: the grid hunting domain.
    hierarchy: Base/BR/JP hierarchy nodes, enumeration and compilation.
    planner: exact backward induction and UCT.
    inference: Luce likelihoods, posteriors, team and action prediction.
    scenario: scenario files.
    experiments: batch runners, metrics and simulation.
    cli: the ``cth`` command.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    ArityError,
    CapacityError,
    ConfigError,
    CthError,
    DegeneracyError,
    DomainError,
    TerminalStateError,
    ValidationError,
)
from .game import ExplicitGame, StochasticGame, random_game, replace
from .hierarchy import (
    BR,
    JP,
    Base,
    HypothesisSet,
    enumerate_depth1,
    enumerate_levelk,
    level_k,
    parse,
    to_text,
)
from .inference import (
    ChoiceCache,
    ObservationTrace,
    Posterior,
    infer_trace,
    luce_distribution,
    predict_distribution,
    team_probability,
    update,
)
from .planner import PlannerConfig, bellman_residual, best_response, joint_plan
from .scenario import Scenario, builtin_scenarios, load_scenario, save_scenario
from .staghunt import GridWorld, Move, StagHuntGame

__all__ = [
    "BR",
    "JP",
    "ArityError",
    "Base",
    "CapacityError",
    "ChoiceCache",
    "ConfigError",
    "CthError",
    "DegeneracyError",
    "DomainError",
    "ExplicitGame",
    "GridWorld",
    "HypothesisSet",
    "Move",
    "ObservationTrace",
    "PlannerConfig",
    "Posterior",
    "Scenario",
    "StagHuntGame",
    "StochasticGame",
    "TerminalStateError",
    "ValidationError",
    "__version__",
    "bellman_residual",
    "best_response",
    "builtin_scenarios",
    "enumerate_depth1",
    "enumerate_levelk",
    "infer_trace",
    "joint_plan",
    "level_k",
    "load_scenario",
    "luce_distribution",
    "parse",
    "predict_distribution",
    "random_game",
    "replace",
    "save_scenario",
    "team_probability",
    "to_text",
    "update",
]
