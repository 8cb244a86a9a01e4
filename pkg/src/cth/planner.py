"""Planners realizing BR and JP.

Two routes compute the same finite-horizon Bellman values:

* :func:`solve_table` does vectorized backward induction on a
  :class:`~cth.tabular.TabularGame` and is what :func:`best_response` and
  :func:`joint_plan` use in ``exact`` mode;
* :func:`exact_q` is a plain memoized expectimax over ``transition_dist``
  and serves as the independent oracle.

:func:`uct_q` is the sampling-based route (UCT / MCTS). Every planner treats
the agents of the game it is given as one team whose reward is the sum of
their rewards, so BR is simply the one-agent case.
"""

from __future__ import annotations

import math
import zlib
from collections.abc import Hashable
from dataclasses import dataclass, field
from dataclasses import replace as dc_replace

import numpy as np

from .errors import ArityError, CapacityError, ConfigError, DomainError
from .game import GREEDY, UNIFORM, PolicyTable, StochasticGame
from .tabular import DEFAULT_MAX_NODES, TabularGame, tabulate

EXACT = "exact"
UCT = "uct"
TIE_TOL = 1e-6


@dataclass(frozen=True)
class PlannerConfig:
    """Planner settings.

    ``gamma=None`` keeps the discount of the game being solved.
    """

    mode: str = EXACT
    horizon: int = 10
    gamma: float | None = None
    budget: int = 10_000
    exploration: float = 1.4
    rollout: str = UNIFORM
    seed: int = 0
    tie_tol: float = TIE_TOL
    max_nodes: int = DEFAULT_MAX_NODES

    def __post_init__(self):
        if self.mode not in (EXACT, UCT):
            raise ConfigError(f"unknown planner mode {self.mode!r}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.mode == UCT and self.budget < 1:
            raise ConfigError(f"UCT budget must be >= 1, got {self.budget}")
        if self.gamma is not None and not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.rollout not in (UNIFORM, GREEDY):
            raise ConfigError(f"unknown rollout policy {self.rollout!r}")

    def discount_for(self, game: StochasticGame) -> float:
        return game.discount if self.gamma is None else self.gamma


def tie_break(q: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Uniform distribution over entries within ``tol`` of the max.

    Works row-wise on 2-D input; ``-inf`` marks unavailable actions. Rows
    with no finite entry come back all-zero.
    """
    q = np.asarray(q, dtype=float)
    best = np.max(q, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        mask = np.isfinite(q) & (q >= best - tol)
    count = mask.sum(-1, keepdims=True)
    return np.divide(mask, count, out=np.zeros(q.shape), where=count > 0)


@dataclass
class QTable:
    """Q-values keyed by ``(state, steps_remaining)``.

    Rows map joint actions (tuples, one entry per agent) to values.
    """

    rows: dict
    horizon: int
    discount: float
    root: Hashable = None
    root_key: tuple | None = None
    visits: dict = field(default_factory=dict)

    def root_row(self) -> dict:
        return self.rows[self.root_key]

    def __getitem__(self, key):
        return self.rows[key]

    def __len__(self):
        return len(self.rows)


# ---------------------------------------------------------------------------
# exact: tabular backward induction
# ---------------------------------------------------------------------------


class TablePlan:
    """Solution of a tabulated game for the team of all its agents.

    Attributes:
        game: the solved table.
        q: ``[n_nodes, n_joint]`` team Q-values, ``-inf`` where illegal.
        value: ``[n_nodes]`` optimal team values.
    """

    def __init__(self, game: TabularGame, q: np.ndarray, value: np.ndarray, tie_tol: float):
        self.game = game
        self.q = q
        self.value = value
        self.tie_tol = tie_tol
        self._policies: dict = {}

    def marginal_q(self, agent: int) -> np.ndarray:
        """``[n_nodes, |A_agent|]``: max of team Q over the teammates' actions."""
        g = self.game
        full = self.q.reshape((g.n_nodes,) + g.shape)
        others = tuple(1 + j for j in range(g.n_agents) if j != agent)
        return full.max(axis=others) if others else full

    def policy(self, agent: int = 0) -> np.ndarray:
        """Tie-broken policy array of a local agent."""
        if agent not in self._policies:
            self._policies[agent] = tie_break(self.marginal_q(agent), self.tie_tol)
        return self._policies[agent]

    def q_row(self, node: int = 0, agent: int | None = None) -> dict:
        """Root-agent Q row (marginalized) or full joint row when ``agent`` is None."""
        g = self.game
        if agent is None:
            out = {}
            for j in np.flatnonzero(np.isfinite(self.q[node])):
                idx = np.unravel_index(j, g.shape)
                out[tuple(g.alphabets[i][k] for i, k in enumerate(idx))] = float(self.q[node, j])
            return out
        mq = self.marginal_q(agent)[node]
        return {g.alphabets[agent][k]: float(mq[k]) for k in np.flatnonzero(np.isfinite(mq))}

    def policy_row(self, node: int = 0, agent: int = 0) -> dict:
        p = self.policy(agent)[node]
        return {self.game.alphabets[agent][k]: float(p[k]) for k in np.flatnonzero(p)}

    def policy_table(self, agent: int = 0) -> PolicyTable:
        """Policy keyed by original state (nodes of the shallowest depth win)."""
        out = PolicyTable()
        for n in np.flatnonzero(self.game.expanded)[::-1]:
            out[self.game.states[n]] = self.policy_row(int(n), agent)
        return out

    def qtable(self) -> QTable:
        g = self.game
        rows = {}
        for n in np.flatnonzero(g.expanded):
            rows[(g.states[n], g.horizon - int(g.depth[n]))] = self.q_row(int(n))
        key = (g.states[0], g.horizon)
        return QTable(rows, g.horizon, g.discount, g.states[0], key if key in rows else None)


def solve_table(game: TabularGame, gamma: float | None = None, tie_tol: float = TIE_TOL) -> TablePlan:
    """Finite-horizon backward induction over the whole table.

    The team objective is the sum of the rewards of every agent in ``game``.
    """
    gamma = game.discount if gamma is None else gamma
    S, J = game.n_nodes, game.n_joint
    team_r = game.reward.sum(axis=1)
    keys = game.src * J + game.joint
    legal = game.joint_legal()
    legal[~game.expanded] = False
    q = np.zeros(S * J)
    value = np.zeros(S)
    for k, sl in reversed(list(enumerate(game.layer_slices()))):
        if sl.start == sl.stop:
            continue
        contrib = game.prob[sl] * (team_r[sl] + gamma * value[game.dst[sl]])
        q += np.bincount(keys[sl], contrib, S * J)
        nodes = np.flatnonzero((game.depth == k) & game.expanded)
        block = np.where(legal[nodes], q.reshape(S, J)[nodes], -np.inf)
        value[nodes] = block.max(axis=1)
    q = np.where(legal, q.reshape(S, J), -np.inf)
    return TablePlan(game, q, value, tie_tol)


# ---------------------------------------------------------------------------
# exact: generic memoized expectimax (oracle)
# ---------------------------------------------------------------------------


def exact_q(
    game: StochasticGame,
    root,
    horizon: int,
    gamma: float | None = None,
    max_states: int = DEFAULT_MAX_NODES,
) -> QTable:
    """Finite-horizon expectimax from ``root``, memoized on ``(state, depth)``.

    Values are team values (summed rewards of all agents in ``game``).
    Lookahead is capped by :meth:`StochasticGame.steps_left` when the state
    carries a clock, so equal states share memo entries.
    """
    if horizon < 0:
        raise ConfigError(f"horizon must be >= 0, got {horizon}")
    gamma = game.discount if gamma is None else gamma
    rows: dict = {}
    values: dict = {}

    def cap(s, h):
        left = game.steps_left(s)
        return h if left is None else min(h, left)

    def value(s, h):
        h = cap(s, h)
        if h <= 0 or game.is_terminal(s):
            return 0.0
        key = (s, h)
        v = values.get(key)
        if v is None:
            v = values[key] = max(q_row(s, h).values())
        return v

    def q_row(s, h):
        key = (s, h)
        row = rows.get(key)
        if row is not None:
            return row
        if len(rows) >= max_states:
            raise CapacityError(f"expectimax expanded more than {max_states} (state, depth) pairs")
        row = {}
        for joint in game.joint_actions(s):
            total = 0.0
            for s2, p in game._transition(s, joint).items():
                total += p * (sum(game._reward(s, joint, s2)) + gamma * value(s2, h - 1))
            row[joint] = total
        rows[key] = row
        return row

    h0 = cap(root, horizon)
    if not game.is_terminal(root):
        if h0 > 0:
            q_row(root, h0)
        else:
            rows[(root, h0)] = dict.fromkeys(game.joint_actions(root), 0.0)
    return QTable(rows, horizon, gamma, root, (root, h0) if (root, h0) in rows else None)


def bellman_residual(game: StochasticGame, qtable: QTable) -> float:
    """Largest ``|Q(s,a) - sum_s' T (R + gamma max Q')|`` over the expanded rows."""
    worst = 0.0
    for (s, h), row in qtable.rows.items():
        for joint, q in row.items():
            if h <= 0:
                worst = max(worst, abs(q))
                continue
            backup = 0.0
            for s2, p in game.transition_dist(s, joint).items():
                h2 = h - 1
                left = game.steps_left(s2)
                if left is not None:
                    h2 = min(h2, left)
                nxt = qtable.rows.get((s2, h2))
                v = 0.0 if (h2 <= 0 or game.is_terminal(s2) or not nxt) else max(nxt.values())
                backup += p * (sum(game.reward_vector(s, joint, s2)) + qtable.discount * v)
            worst = max(worst, abs(q - backup))
    return worst


# ---------------------------------------------------------------------------
# UCT
# ---------------------------------------------------------------------------


class _UctNode:
    __slots__ = ("actions", "n", "total", "untried", "w")

    def __init__(self, actions):
        self.actions = actions
        self.n = [0] * len(actions)
        self.w = [0.0] * len(actions)
        self.total = 0
        self.untried = 0

    def select(self, c: float) -> int:
        """Next untried action in order, then the UCB1 maximizer (first on ties)."""
        if self.untried < len(self.actions):
            k = self.untried
            self.untried += 1
            return k
        log_total = math.log(self.total)
        best, best_k = -math.inf, 0
        for k, (n, w) in enumerate(zip(self.n, self.w)):
            u = w / n + c * math.sqrt(log_total / n)
            if u > best:
                best, best_k = u, k
        return best_k


def _rollout_joint(game, s, rng, kind):
    joint = []
    for i in range(game.n_agents):
        if kind == UNIFORM:
            acts = game.legal_actions(s, i)
            joint.append(acts[int(rng.integers(len(acts)))])
        else:
            dist = game.base_policy(s, i, kind)
            keys = list(dist)
            joint.append(keys[int(rng.choice(len(keys), p=np.fromiter(dist.values(), float, len(keys))))])
    return tuple(joint)


def uct_q(game: StochasticGame, root, cfg: PlannerConfig, seed: int | None = None) -> QTable:
    """Root Q estimates from UCT over joint actions of the whole team.

    Selection maximizes ``mean + c * sqrt(ln N_parent / N_child)`` with
    untried actions first; new leaves are valued by a rollout. The result is
    a pure function of the arguments and the seed.
    """
    if cfg.budget < 1:
        raise ConfigError(f"UCT budget must be >= 1, got {cfg.budget}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    gamma = cfg.discount_for(game)
    c = cfg.exploration
    tree: dict = {}

    def steps(s, d):
        left = game.steps_left(s)
        h = cfg.horizon - d
        return h if left is None else min(h, left)

    def rollout(s, d):
        ret, disc = 0.0, 1.0
        while steps(s, d) > 0 and not game.is_terminal(s):
            joint = _rollout_joint(game, s, rng, cfg.rollout)
            s, r = game.sample_transition(s, joint, rng)
            ret += disc * sum(r)
            disc *= gamma
            d += 1
        return ret

    def simulate(s, d):
        if steps(s, d) <= 0 or game.is_terminal(s):
            return 0.0
        node = tree.get((s, d))
        if node is None:
            tree[(s, d)] = _UctNode(game.joint_actions(s))
            if d > 0:
                return rollout(s, d)
            node = tree[(s, d)]
        k = node.select(c)
        s2, r = game.sample_transition(s, node.actions[k], rng)
        g = sum(r) + gamma * simulate(s2, d + 1)
        node.n[k] += 1
        node.w[k] += g
        node.total += 1
        return g

    if game.is_terminal(root):
        return QTable({}, cfg.horizon, gamma, root, None)
    for _ in range(cfg.budget):
        simulate(root, 0)
    node = tree[(root, 0)]
    row = {a: w / n for a, w, n in zip(node.actions, node.w, node.n) if n > 0}
    visits = {a: int(n) for a, n in zip(node.actions, node.n)}
    key = (root, steps(root, 0))
    return QTable({key: row}, cfg.horizon, gamma, root, key, visits)


def state_seed(seed: int, state) -> int:
    """Seed derived from a base seed and a state's ``repr``, stable across processes."""
    return (seed * 1_000_003 + zlib.crc32(repr(state).encode())) % (2**32)


class UctPlan:
    """Lazy UCT solution: runs a search from each state the first time it is queried."""

    def __init__(self, game: StochasticGame, cfg: PlannerConfig):
        self.game = game
        self.cfg = cfg
        self._rows: dict = {}

    def joint_row(self, state) -> dict:
        row = self._rows.get(state)
        if row is None:
            qt = uct_q(self.game, state, self.cfg, seed=state_seed(self.cfg.seed, state))
            row = self._rows[state] = qt.root_row() if qt.root_key else {}
        return row

    def q_row(self, state, agent: int | None = None) -> dict:
        row = self.joint_row(state)
        if agent is None:
            return dict(row)
        out: dict = {}
        for joint, q in row.items():
            a = joint[agent]
            out[a] = max(out.get(a, -math.inf), q)
        return out

    def policy_row(self, state, agent: int = 0) -> dict:
        row = self.q_row(state, agent)
        if not row:
            return self.game.base_policy(state, agent, UNIFORM)
        acts = list(row)
        p = tie_break(np.array([row[a] for a in acts]), self.cfg.tie_tol)
        return {a: float(x) for a, x in zip(acts, p) if x > 0}

    def policy(self, agent: int = 0):
        return lambda state: self.policy_row(state, agent)


# ---------------------------------------------------------------------------
# BR / JP
# ---------------------------------------------------------------------------


def _plan(game: StochasticGame, cfg: PlannerConfig, root):
    if cfg.mode == UCT:
        if isinstance(game, TabularGame):
            raise DomainError("UCT mode expects an untabulated game")
        return UctPlan(game, cfg)
    if not isinstance(game, TabularGame):
        game = tabulate(game, root, cfg.horizon, cfg.max_nodes)
    return solve_table(game, cfg.gamma, cfg.tie_tol)


def best_response(game: StochasticGame, cfg: PlannerConfig, root=None):
    """BR: optimal policy of the single agent of ``game``.

    Returns a :class:`TablePlan` (exact) or :class:`UctPlan` (uct); both
    expose ``q_row`` and ``policy_row``.
    """
    if game.n_agents != 1:
        raise ArityError(f"best_response needs a one-agent game, got {game.n_agents} agents")
    return _plan(game, cfg, root)


def joint_plan(game: StochasticGame, cfg: PlannerConfig, root=None):
    """JP: plan for all agents of ``game`` as one team maximizing summed reward.

    Per-agent policies (``policy(i)``/``policy_row``) maximize the team Q over
    the teammates' actions and break ties uniformly.
    """
    return _plan(game, cfg, root)


def with_seed(cfg: PlannerConfig, seed: int) -> PlannerConfig:
    return dc_replace(cfg, seed=seed)
