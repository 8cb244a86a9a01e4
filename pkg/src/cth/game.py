"""Simultaneous-move stochastic games and the REPLACE operator.

A game is the tuple ``<n, S, A_1..n, T, R_1..n, gamma>``. States are opaque
hashable values; transitions are finite discrete distributions returned as
``{next_state: probability}`` dicts. Agents are addressed two ways:

* the *local index* ``0..n_agents-1`` used for joint-action positions, and
* the *agent id* (``game.agent_ids[i]``), which survives REPLACE so that
  nested policy trees can keep referring to the same hunter.
"""

from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from collections.abc import Callable, Hashable, Iterable, Mapping, Sequence
from typing import Union

import numpy as np

from .errors import ArityError, ConfigError, DomainError, TerminalStateError

State = Hashable
Action = Hashable
JointAction = tuple
Policy = Union[Mapping, Callable]

DIST_TOL = 1e-12

UNIFORM = "uniform"
GREEDY = "greedy"


class PolicyTable(dict):
    """Mapping ``state -> {action: probability}`` that is also callable."""

    def __call__(self, state):
        return self[state]


def policy_row(policy: Policy, state: State) -> Mapping:
    """Action distribution of ``policy`` at ``state`` (mapping or callable)."""
    if isinstance(policy, Mapping):
        try:
            return policy[state]
        except KeyError:
            raise DomainError(f"policy is undefined at state {state!r}") from None
    return policy(state)


def uniform(actions: Sequence) -> dict:
    p = 1.0 / len(actions)
    return {a: p for a in actions}


class StochasticGame(ABC):
    """Abstract simultaneous-move stochastic game.

    Subclasses implement :meth:`is_terminal`, :meth:`legal_actions`,
    :meth:`_transition` and :meth:`_reward`; the public methods add argument
    validation on top. Instances are treated as immutable.
    """

    def __init__(self, n_agents: int, discount: float, agent_ids: Sequence | None = None):
        if n_agents < 1:
            raise ArityError(f"a game needs at least one agent, got {n_agents}")
        if not 0.0 < discount <= 1.0:
            raise ConfigError(f"discount must lie in (0, 1], got {discount}")
        self.n_agents = int(n_agents)
        self.discount = float(discount)
        ids = tuple(range(n_agents)) if agent_ids is None else tuple(agent_ids)
        if len(ids) != n_agents or len(set(ids)) != n_agents:
            raise DomainError(f"agent_ids {ids!r} do not name {n_agents} distinct agents")
        self.agent_ids = ids

    # -- to implement -------------------------------------------------------

    @abstractmethod
    def is_terminal(self, state: State) -> bool: ...

    @abstractmethod
    def legal_actions(self, state: State, agent: int) -> tuple:
        """Legal actions of the agent at local index ``agent``."""

    @abstractmethod
    def _transition(self, state: State, joint: JointAction) -> dict:
        """Unchecked transition distribution."""

    @abstractmethod
    def _reward(self, state: State, joint: JointAction, next_state: State) -> tuple:
        """Unchecked reward vector."""

    # -- optional hooks -----------------------------------------------------

    def steps_left(self, state: State) -> int | None:
        """Steps until forced termination, when the state encodes a clock."""
        return None

    def base_policy(self, state: State, agent: int, kind: str = UNIFORM) -> dict:
        """Non-strategic policy of a local agent at ``state``."""
        actions = self.legal_actions(state, agent)
        if kind == UNIFORM:
            return uniform(actions)
        raise DomainError(f"{type(self).__name__} has no {kind!r} base policy")

    def recede(self, state: State, horizon: int) -> tuple[StochasticGame, State]:
        """``(game, root)`` for planning ``horizon`` steps ahead from ``state``.

        Games with a clock in the state override this so that lookahead is
        measured from the observed state rather than the episode start.
        """
        return self, state

    def _replaced(self, fixed: dict) -> StochasticGame:
        return ReplacedGame(self, fixed)

    # -- public API ---------------------------------------------------------

    def index_of(self, agent_id) -> int:
        try:
            return self.agent_ids.index(agent_id)
        except ValueError:
            raise DomainError(f"unknown agent id {agent_id!r}; game has {self.agent_ids}") from None

    def joint_actions(self, state: State) -> list[JointAction]:
        if self.is_terminal(state):
            return []
        return list(itertools.product(*(self.legal_actions(state, i) for i in range(self.n_agents))))

    def check_joint(self, state: State, joint: Sequence) -> JointAction:
        if self.is_terminal(state):
            raise TerminalStateError(f"state {state!r} is terminal")
        joint = tuple(joint)
        if len(joint) != self.n_agents:
            raise ArityError(f"joint action has {len(joint)} entries, game has {self.n_agents} agents")
        for i, a in enumerate(joint):
            if a not in self.legal_actions(state, i):
                raise DomainError(f"action {a!r} is illegal for agent {self.agent_ids[i]!r} at {state!r}")
        return joint

    def transition_dist(self, state: State, joint: Sequence) -> dict:
        """Distribution over next states after ``joint`` is played at ``state``."""
        return self._transition(state, self.check_joint(state, joint))

    def reward_vector(self, state: State, joint: Sequence, next_state: State) -> tuple:
        """Per-agent rewards for the transition ``state --joint--> next_state``."""
        dist = self.transition_dist(state, joint)
        if dist.get(next_state, 0.0) <= 0.0:
            raise DomainError(f"{next_state!r} is unreachable from {state!r} under {tuple(joint)!r}")
        return tuple(self._reward(state, tuple(joint), next_state))

    def sample_transition(self, state: State, joint: JointAction, rng: np.random.Generator):
        """Draw ``(next_state, rewards)``; the caller owns ``rng``."""
        dist = self._transition(state, joint)
        if len(dist) == 1:
            (nxt,) = dist
        else:
            keys = list(dist)
            u = rng.random()
            acc = 0.0
            nxt = keys[-1]
            for k in keys:
                acc += dist[k]
                if u < acc:
                    nxt = k
                    break
        return nxt, self._reward(state, joint, nxt)


class ExplicitGame(StochasticGame):
    """Game given by explicit tables; intended for small test and toy games.

    Args:
        actions: ``state -> per-agent action lists``; states missing from the
            mapping, or listed in ``terminal``, are terminal.
        transitions: ``(state, joint) -> {next: prob}``.
        rewards: ``(state, joint, next) -> vector`` mapping or callable.
            Missing keys default to all-zero rewards.
    """

    def __init__(
        self,
        n_agents: int,
        actions: Mapping,
        transitions: Mapping,
        rewards: Mapping | Callable | None = None,
        discount: float = 1.0,
        terminal: Iterable = (),
        agent_ids: Sequence | None = None,
    ):
        super().__init__(n_agents, discount, agent_ids)
        self._actions = {s: tuple(tuple(a) for a in acts) for s, acts in actions.items()}
        self._terminal = frozenset(terminal)
        self._transitions = {k: dict(v) for k, v in transitions.items()}
        self._rewards = rewards if rewards is not None else {}
        for s, acts in self._actions.items():
            if s in self._terminal:
                continue
            if len(acts) != n_agents or not all(acts):
                raise DomainError(f"state {s!r} needs a non-empty action list for each of {n_agents} agents")
        for key, dist in self._transitions.items():
            total = sum(dist.values())
            if abs(total - 1.0) > DIST_TOL:
                raise DomainError(f"transition {key!r} sums to {total!r}, not 1")

    @property
    def states(self) -> list:
        seen = dict.fromkeys(self._actions)
        for dist in self._transitions.values():
            seen.update(dict.fromkeys(dist))
        return list(seen)

    def is_terminal(self, state):
        return state in self._terminal or state not in self._actions

    def legal_actions(self, state, agent):
        if self.is_terminal(state):
            return ()
        return self._actions[state][agent]

    def _transition(self, state, joint):
        try:
            return dict(self._transitions[(state, joint)])
        except KeyError:
            raise DomainError(f"no transition defined for {(state, joint)!r}") from None

    def _reward(self, state, joint, next_state):
        if callable(self._rewards):
            return tuple(self._rewards(state, joint, next_state))
        return tuple(self._rewards.get((state, joint, next_state), (0.0,) * self.n_agents))


class ReplacedGame(StochasticGame):
    """``REPLACE(G, pi_R)``: the agents in ``fixed`` become part of the dynamics.

    Transitions marginalize the replaced agents' actions under their
    (possibly stochastic) policies::

        T'(s' | s, a_rest) = sum_{a_R} T(s' | s, a_rest, a_R) * prod_r pi_r(a_r | s)

    Rewards of the remaining agents are the conditional expectation of the
    original reward given ``(s, a_rest, s')``, which keeps expected returns
    identical to playing ``G`` against the fixed policies. Replaced agents'
    rewards are dropped.
    """

    def __init__(self, inner: StochasticGame, fixed: Mapping):
        self.inner = inner
        self.fixed_local = {inner.index_of(aid): pol for aid, pol in fixed.items()}
        self.remaining = tuple(i for i in range(inner.n_agents) if i not in self.fixed_local)
        super().__init__(len(self.remaining), inner.discount, tuple(inner.agent_ids[i] for i in self.remaining))
        self._cache: dict = {}

    def is_terminal(self, state):
        return self.inner.is_terminal(state)

    def legal_actions(self, state, agent):
        return self.inner.legal_actions(state, self.remaining[agent])

    def steps_left(self, state):
        return self.inner.steps_left(state)

    def base_policy(self, state, agent, kind=UNIFORM):
        return self.inner.base_policy(state, self.remaining[agent], kind)

    def _full_joints(self, state, joint):
        """Yield ``(weight, full_joint)`` over the replaced agents' actions."""
        fixed = sorted(self.fixed_local)
        rows = [[(a, p) for a, p in policy_row(self.fixed_local[i], state).items() if p > 0.0] for i in fixed]
        for combo in itertools.product(*rows):
            full = [None] * self.inner.n_agents
            for i, a in zip(self.remaining, joint):
                full[i] = a
            w = 1.0
            for i, (a, p) in zip(fixed, combo):
                full[i] = a
                w *= p
            yield w, tuple(full)

    def _expand(self, state, joint):
        key = (state, joint)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        dist: dict = {}
        parts = []
        for w, full in self._full_joints(state, joint):
            inner_dist = self.inner.transition_dist(state, full)
            parts.append((w, full, inner_dist))
            for nxt, p in inner_dist.items():
                dist[nxt] = dist.get(nxt, 0.0) + w * p
        self._cache[key] = (dist, parts)
        return dist, parts

    def _transition(self, state, joint):
        return dict(self._expand(state, joint)[0])

    def _reward(self, state, joint, next_state):
        dist, parts = self._expand(state, joint)
        total = np.zeros(self.n_agents)
        for w, full, inner_dist in parts:
            p = inner_dist.get(next_state, 0.0)
            if p > 0.0:
                r = self.inner._reward(state, full, next_state)
                total += w * p * np.array([r[i] for i in self.remaining], dtype=float)
        return tuple(total / dist[next_state])


def replace(game: StochasticGame, fixed: Mapping) -> StochasticGame:
    """Embed fixed policies for some agents into ``game``.

    Args:
        game: the game to reduce.
        fixed: ``agent_id -> policy``; a policy is a mapping or a callable
            from state to ``{action: probability}``.

    Returns:
        A game over the remaining agents, in ascending original-id order,
        whose ``agent_ids`` keep the original names.
    """
    if not fixed:
        raise DomainError("replace() needs at least one fixed policy")
    for aid in fixed:
        game.index_of(aid)
    if len(fixed) >= game.n_agents:
        raise ArityError(f"cannot replace all {game.n_agents} agents")
    return game._replaced(dict(fixed))


def random_game(
    rng: np.random.Generator,
    n_agents: int = 2,
    n_states: int = 6,
    n_actions: int = 3,
    terminal_fraction: float = 0.2,
    max_support: int = 3,
    deterministic: bool = False,
    discount: float = 0.9,
) -> ExplicitGame:
    """Random small game with integer states and state-dependent action sets."""
    n_term = max(1, int(round(terminal_fraction * n_states)))
    terminal = set(range(n_states - n_term, n_states))
    actions, transitions, rewards = {}, {}, {}
    for s in range(n_states):
        if s in terminal:
            continue
        acts = []
        for _ in range(n_agents):
            k = int(rng.integers(1, n_actions + 1))
            acts.append(sorted(rng.choice(n_actions, size=k, replace=False).tolist()))
        actions[s] = acts
        for joint in itertools.product(*acts):
            k = 1 if deterministic else int(rng.integers(1, max_support + 1))
            nxts = rng.choice(n_states, size=k, replace=False).tolist()
            probs = rng.dirichlet(np.ones(k))
            probs[-1] = 1.0 - probs[:-1].sum()
            transitions[(s, joint)] = dict(zip(nxts, probs.tolist()))
            for nxt in nxts:
                rewards[(s, joint, nxt)] = tuple(np.round(rng.normal(size=n_agents), 3).tolist())
    return ExplicitGame(n_agents, actions, transitions, rewards, discount, terminal)
