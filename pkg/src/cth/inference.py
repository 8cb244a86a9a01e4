"""Bayesian inverse planning over CTH hypotheses.

Each observed agent gets its own posterior over a :class:`HypothesisSet`.
An action's likelihood under a strategic hypothesis is the Luce (softmax)
choice rule over the root Q-values the compiled hierarchy gives that agent
at the observed state; a base hypothesis uses its own action distribution.

Q-values come from receding-horizon planning: at every observed state the
game is re-rooted (:meth:`StochasticGame.recede`) and all hypotheses are
compiled once against that state, sharing subtrees.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, DomainError, ValidationError
from .game import StochasticGame
from .hierarchy import (
    Compiler,
    HypothesisSet,
    cooperates,
    enumerate_levelk,
    root_choice,
    to_text,
)
from .planner import PlannerConfig

TEAM_BETA = 1.0
PREDICT_BETA = 5.0
BMA = "bma"
ML = "ml"
PRODUCT = "product"
MEAN = "mean"


# ---------------------------------------------------------------------------
# Luce choice
# ---------------------------------------------------------------------------


def luce_distribution(q: Sequence[float], beta: float) -> np.ndarray:
    """``exp(beta*q) / sum exp(beta*q)`` with max subtraction."""
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise DomainError("empty action set")
    if beta < 0 or not math.isfinite(beta):
        raise DomainError(f"beta must be finite and >= 0, got {beta}")
    if not np.all(np.isfinite(q)):
        raise DomainError("Q-values must be finite")
    z = beta * (q - q.max())
    e = np.exp(z)
    return e / e.sum()


def luce_likelihood(q_row: Mapping, action, beta: float) -> float:
    """Probability of ``action`` under the Luce rule over ``q_row`` (action -> Q)."""
    if not q_row:
        raise DomainError("empty action set")
    acts = list(q_row)
    if action not in q_row:
        raise DomainError(f"action {action!r} is not in the Q row {acts!r}")
    p = luce_distribution([q_row[a] for a in acts], beta)
    return float(p[acts.index(action)])


@dataclass(frozen=True)
class Choice:
    """What one hypothesis says about one agent at one state.

    ``q`` is ``None`` for base hypotheses, whose ``policy`` is used directly.
    """

    actions: tuple
    q: np.ndarray | None
    policy: np.ndarray

    def distribution(self, beta: float) -> np.ndarray:
        return self.policy if self.q is None else luce_distribution(self.q, beta)

    def likelihood(self, action, beta: float) -> float:
        try:
            k = self.actions.index(action)
        except ValueError:
            raise DomainError(f"action {action!r} not available; legal: {self.actions!r}") from None
        return float(self.distribution(beta)[k])

    def as_dict(self, beta: float) -> dict:
        return dict(zip(self.actions, self.distribution(beta).tolist()))


# ---------------------------------------------------------------------------
# posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Posterior:
    """Normalized posterior over one agent's hypotheses, stored in log space."""

    hypotheses: HypothesisSet
    log_probs: np.ndarray
    log_evidence: float = 0.0

    @classmethod
    def prior(cls, hypotheses: HypothesisSet, weights: Sequence[float] | None = None) -> Posterior:
        """Uniform prior, or ``weights`` normalized."""
        n = len(hypotheses)
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
                raise DomainError(f"prior must be {n} non-negative weights with positive sum")
            w = w / w.sum()
        with np.errstate(divide="ignore"):
            return cls(hypotheses, np.log(w), 0.0)

    @property
    def probs(self) -> np.ndarray:
        p = np.exp(self.log_probs)
        return p / p.sum()

    def argmax(self) -> int:
        """Index of the most probable hypothesis; ties go to the lowest index."""
        lp = self.log_probs
        return int(np.flatnonzero(lp >= lp.max() - 1e-12)[0])

    def mass(self, predicate) -> float:
        return float(sum(p for h, p in zip(self.hypotheses, self.probs) if predicate(h)))


def bayes_update(posterior: Posterior, likelihoods: Sequence[float]) -> Posterior:
    """Multiply by per-hypothesis likelihoods and renormalize."""
    lik = np.asarray(likelihoods, dtype=float)
    if lik.shape != posterior.log_probs.shape:
        raise DomainError(f"expected {len(posterior.log_probs)} likelihoods, got {lik.shape}")
    if np.any(lik < 0) or not np.all(np.isfinite(lik)):
        raise DomainError("likelihoods must be finite and non-negative")
    with np.errstate(divide="ignore"):
        joint = posterior.log_probs + np.log(lik)
    top = joint.max()
    if not np.isfinite(top):
        raise DegeneracyError("every hypothesis assigns zero probability to the observation")
    log_z = top + math.log(np.exp(joint - top).sum())
    return Posterior(posterior.hypotheses, joint - log_z, posterior.log_evidence + log_z)


def update(posterior: Posterior, action, choices: Sequence[Choice], beta: float) -> Posterior:
    """Condition on one observed action given each hypothesis's choice model."""
    return bayes_update(posterior, [c.likelihood(action, beta) for c in choices])


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationTrace:
    """States ``s_0 .. s_{T-1}`` and the joint actions taken in them.

    ``final`` is the state reached after the last action, when known.
    """

    game: StochasticGame
    states: tuple
    joint_actions: tuple
    final: object = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "joint_actions", tuple(tuple(a) for a in self.joint_actions))
        if len(self.states) != len(self.joint_actions):
            raise ValidationError(f"{len(self.states)} states but {len(self.joint_actions)} joint actions")

    def __len__(self):
        return len(self.states)

    def validate(self) -> None:
        """Check legality and that consecutive states are reachable."""
        nxt = list(self.states[1:]) + ([self.final] if self.final is not None else [])
        for t, (s, a) in enumerate(zip(self.states, self.joint_actions)):
            try:
                dist = self.game.transition_dist(s, a)
            except DomainError as e:
                raise ValidationError(f"step {t}: {e}") from None
            if t < len(nxt) and dist.get(nxt[t], 0.0) <= 0.0:
                raise ValidationError(f"step {t}: next state is unreachable under {a!r}")


class ChoiceCache:
    """Per-state hypothesis choice models, compiled once per observed state."""

    def __init__(self, cfg: PlannerConfig):
        self.cfg = cfg
        self._rows: dict = {}

    def choices(self, game: StochasticGame, state, sets: Mapping[int, HypothesisSet]) -> dict:
        """``{agent: [Choice per hypothesis]}`` at ``state``."""
        missing = [(a, h) for a, hs in sets.items() for h in hs if (state, a, h) not in self._rows]
        if missing:
            sub, root = game.recede(state, self.cfg.horizon)
            compiler = Compiler(sub, self.cfg, root, keep_plans=False)
            for a, h in missing:
                self._rows[(state, a, h)] = Choice(*root_choice(compiler.compile(h), a))
        return {a: [self._rows[(state, a, h)] for h in hs] for a, hs in sets.items()}


@dataclass
class TraceInference:
    """Posteriors after each prefix of a trace.

    ``posteriors[a][t]`` conditions on the first ``t`` actions of agent
    ``a`` (``t = 0`` is the prior). ``choices[t]`` holds the choice models
    at ``trace.states[t]``.
    """

    trace: ObservationTrace
    beta: float
    posteriors: dict
    choices: list = field(default_factory=list)


def infer_trace(
    trace: ObservationTrace,
    sets: Mapping[int, HypothesisSet],
    beta: float = TEAM_BETA,
    cfg: PlannerConfig | None = None,
    priors: Mapping[int, Sequence[float]] | None = None,
    cache: ChoiceCache | None = None,
    validate: bool = True,
) -> TraceInference:
    """Per-agent posteriors over ``sets`` after every step of ``trace``."""
    cfg = cfg or PlannerConfig()
    cache = cache or ChoiceCache(cfg)
    if validate:
        trace.validate()
    priors = priors or {}
    post = {a: [Posterior.prior(hs, priors.get(a))] for a, hs in sets.items()}
    all_choices = []
    for s, joint in zip(trace.states, trace.joint_actions):
        ch = cache.choices(trace.game, s, sets)
        all_choices.append(ch)
        for a in sets:
            post[a].append(update(post[a][-1], joint[trace.game.index_of(a)], ch[a], beta))
    return TraceInference(trace, beta, post, all_choices)


# ---------------------------------------------------------------------------
# readouts
# ---------------------------------------------------------------------------


def membership(posterior: Posterior, other: int) -> float:
    """Posterior mass on hypotheses whose root plans jointly with ``other``."""
    return posterior.mass(lambda h: cooperates(h, other))


def team_probability(
    post_i: Posterior, post_j: Posterior, agent_i: int, agent_j: int, rule: str = PRODUCT, mode: str = BMA
) -> float:
    """Probability that agents ``i`` and ``j`` are on the same team.

    ``mode='bma'`` combines the membership masses by ``rule`` (product or
    mean); ``mode='ml'`` returns 1.0 iff both most-probable hypotheses name
    the other agent as a teammate.
    """
    if agent_i == agent_j:
        raise DomainError("team probability needs two distinct agents")
    if mode == ML:
        hi = post_i.hypotheses[post_i.argmax()]
        hj = post_j.hypotheses[post_j.argmax()]
        return float(cooperates(hi, agent_j) and cooperates(hj, agent_i))
    if mode != BMA:
        raise DomainError(f"unknown mode {mode!r}")
    pi, pj = membership(post_i, agent_j), membership(post_j, agent_i)
    if rule == PRODUCT:
        return pi * pj
    if rule == MEAN:
        return 0.5 * (pi + pj)
    raise DomainError(f"unknown team rule {rule!r}")


def predict_distribution(posterior: Posterior, choices: Sequence[Choice], beta: float, mode: str = BMA) -> dict:
    """Next-action distribution of one agent: posterior mixture or the ML hypothesis."""
    acts = choices[0].actions
    if any(c.actions != acts for c in choices):
        raise DomainError("hypotheses disagree on the legal actions")
    if mode == ML:
        p = choices[posterior.argmax()].distribution(beta)
    elif mode == BMA:
        w = posterior.probs
        p = sum(wk * c.distribution(beta) for wk, c in zip(w, choices) if wk > 0)
        p = p / p.sum()
    else:
        raise DomainError(f"unknown mode {mode!r}")
    return dict(zip(acts, np.asarray(p, dtype=float).tolist()))


def predict_actions(posteriors: Mapping[int, Posterior], choices: Mapping[int, Sequence[Choice]], beta: float = PREDICT_BETA, mode: str = BMA) -> dict:
    """``{agent: {action: prob}}`` from current posteriors and choice models at one state."""
    return {a: predict_distribution(posteriors[a], choices[a], beta, mode) for a in posteriors}


def levelk_sets(n_agents: int, k_max: int, agents: Sequence[int] | None = None, base_kind: str = "uniform") -> dict:
    agents = range(n_agents) if agents is None else agents
    return {a: enumerate_levelk(n_agents, a, k_max, base_kind) for a in agents}


def levelk_predict(
    trace: ObservationTrace,
    k_max: int,
    beta: float = PREDICT_BETA,
    cfg: PlannerConfig | None = None,
    step: int | None = None,
    cache: ChoiceCache | None = None,
) -> dict:
    """BMA prediction over level-0..k_max towers at ``trace.states[step]``.

    The posterior conditions on the actions before ``step`` (default: the
    whole trace except its last action).
    """
    step = len(trace) - 1 if step is None else step
    if not 0 <= step < len(trace):
        raise DomainError(f"step {step} outside a trace of length {len(trace)}")
    sets = levelk_sets(trace.game.n_agents, k_max, trace.game.agent_ids)
    prefix = ObservationTrace(trace.game, trace.states[:step], trace.joint_actions[:step], trace.states[step])
    cache = cache or ChoiceCache(cfg or PlannerConfig())
    inf = infer_trace(prefix, sets, beta, cache.cfg, cache=cache)
    ch = cache.choices(trace.game, trace.states[step], sets)
    return predict_actions({a: inf.posteriors[a][-1] for a in sets}, ch, beta, BMA)


def labels(sets: Mapping[int, HypothesisSet]) -> dict:
    return {a: [to_text(h) for h in hs] for a, hs in sets.items()}
