"""Enumerated, array-backed games for exact desk-scale planning.

:func:`tabulate` unrolls the reachable part of a game from a root state to a
fixed depth. Nodes are ``(state, depth)`` pairs, so games with cycles unroll
into a layered DAG. Transitions are stored as flat COO arrays (one entry per
``(node, joint action, next node)``), which makes REPLACE a reweighting of
entries and backward induction a handful of ``bincount`` calls.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import CapacityError, DomainError
from .game import UNIFORM, StochasticGame, policy_row, uniform

DEFAULT_MAX_NODES = 2_000_000


class TabularGame(StochasticGame):
    """A game unrolled from ``root`` (node 0) for ``horizon`` steps.

    Node ids are the states of this game. Nodes that are terminal in the
    source game or sit at the depth limit are not expanded and behave as
    terminal here.

    Attributes:
        source: the game this table was built from (before any REPLACE).
        states: original state of every node.
        depth: ``int`` array, steps from the root.
        expanded: ``bool`` array, node has outgoing entries.
        alphabets: per active agent, the tuple of action labels; per-node
            legality is in ``legal[i]`` (``bool`` array ``[n_nodes, len(alphabet)]``).
        src, joint, dst, prob, reward: COO transition entries; ``joint`` is
            the row-major index of the joint action over ``alphabets``.
    """

    def __init__(
        self,
        source: StochasticGame,
        states: list,
        depth: np.ndarray,
        expanded: np.ndarray,
        alphabets: Sequence[tuple],
        legal: Sequence[np.ndarray],
        src: np.ndarray,
        joint: np.ndarray,
        dst: np.ndarray,
        prob: np.ndarray,
        reward: np.ndarray,
        horizon: int,
        agent_ids: Sequence,
    ):
        super().__init__(len(alphabets), source.discount, agent_ids)
        self.source = source
        self.states = states
        self.depth = depth
        self.expanded = expanded
        self.alphabets = tuple(tuple(a) for a in alphabets)
        self.legal = list(legal)
        self.src, self.joint, self.dst = src, joint, dst
        self.prob, self.reward = prob, reward
        self.horizon = int(horizon)
        self.shape = tuple(len(a) for a in self.alphabets)
        self._lookup = None
        self._node_of = None

    @property
    def n_nodes(self) -> int:
        return len(self.states)

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.shape))

    def joint_legal(self) -> np.ndarray:
        """``bool`` array ``[n_nodes, n_joint]`` of legal joint actions."""
        mask = self.legal[0]
        for m in self.legal[1:]:
            mask = (mask[:, :, None] & m[:, None, :]).reshape(len(self.states), -1)
        return mask

    def layer_slices(self) -> list[slice]:
        """Entry ranges grouped by source depth (entries are depth-sorted)."""
        d = self.depth[self.src]
        return [
            slice(int(np.searchsorted(d, k, "left")), int(np.searchsorted(d, k, "right")))
            for k in range(self.horizon)
        ]

    def node_of(self, state, depth: int | None = None) -> int:
        """Node id of ``state`` (shallowest occurrence unless ``depth`` given)."""
        if self._node_of is None:
            table: dict = {}
            for n, s in enumerate(self.states):
                table.setdefault((s, int(self.depth[n])), n)
                table.setdefault((s, None), n)
            self._node_of = table
        try:
            return self._node_of[(state, depth)]
        except KeyError:
            raise DomainError(f"state {state!r} is not in the table") from None

    def action_index(self, agent: int, action) -> int:
        try:
            return self.alphabets[agent].index(action)
        except ValueError:
            raise DomainError(f"unknown action {action!r} for agent {self.agent_ids[agent]!r}") from None

    def encode_joint(self, joint: Sequence) -> int:
        return int(np.ravel_multi_index([self.action_index(i, a) for i, a in enumerate(joint)], self.shape))

    # -- StochasticGame -----------------------------------------------------

    def is_terminal(self, node):
        return not bool(self.expanded[node])

    def legal_actions(self, node, agent):
        return tuple(a for a, ok in zip(self.alphabets[agent], self.legal[agent][node]) if ok)

    def steps_left(self, node):
        return self.horizon - int(self.depth[node])

    def base_policy(self, node, agent, kind=UNIFORM):
        if kind == UNIFORM:
            return uniform(self.legal_actions(node, agent))
        inner = self.source.index_of(self.agent_ids[agent])
        return self.source.base_policy(self.states[node], inner, kind)

    def _entries(self, node, joint):
        if self._lookup is None:
            keys = self.src * self.n_joint + self.joint
            order = np.argsort(keys, kind="stable")
            self._lookup = (keys[order], order)
        keys, order = self._lookup
        k = node * self.n_joint + self.encode_joint(joint)
        lo, hi = np.searchsorted(keys, k, "left"), np.searchsorted(keys, k, "right")
        return order[lo:hi]

    def _transition(self, node, joint):
        dist: dict = {}
        for e in self._entries(node, joint):
            d = int(self.dst[e])
            dist[d] = dist.get(d, 0.0) + float(self.prob[e])
        return dist

    def _reward(self, node, joint, next_node):
        rows = [e for e in self._entries(node, joint) if self.dst[e] == next_node]
        p = self.prob[rows]
        return tuple((p[:, None] * self.reward[rows]).sum(0) / p.sum())

    # -- REPLACE ------------------------------------------------------------

    def policy_array(self, agent: int, policy) -> np.ndarray:
        """Dense ``[n_nodes, len(alphabet)]`` version of a policy for a local agent."""
        if isinstance(policy, np.ndarray):
            arr = np.asarray(policy, dtype=float)
        else:
            arr = np.zeros((self.n_nodes, self.shape[agent]))
            for n in np.flatnonzero(self.expanded):
                for a, p in policy_row(policy, int(n)).items():
                    arr[n, self.action_index(agent, a)] = p
        live = self.expanded
        if np.any(arr[live] < 0) or np.any(arr[live][~self.legal[agent][live]] > 0):
            raise DomainError(f"policy for agent {self.agent_ids[agent]!r} puts mass on illegal actions")
        if np.any(np.abs(arr[live].sum(1) - 1.0) > 1e-9):
            raise DomainError(f"policy for agent {self.agent_ids[agent]!r} is not normalized")
        return arr

    def _replaced(self, fixed: dict) -> TabularGame:
        local = {self.index_of(aid): self.policy_array(self.index_of(aid), pol) for aid, pol in fixed.items()}
        idx = np.unravel_index(self.joint, self.shape)
        w = np.ones(len(self.joint))
        for i, arr in local.items():
            w *= arr[self.src, idx[i]]
        keep = w > 0.0
        rest = [i for i in range(self.n_agents) if i not in local]
        shape = tuple(self.shape[i] for i in rest)
        joint = np.ravel_multi_index([idx[i][keep] for i in rest], shape).astype(np.int64)
        return TabularGame(
            self.source,
            self.states,
            self.depth,
            self.expanded,
            [self.alphabets[i] for i in rest],
            [self.legal[i] for i in rest],
            self.src[keep],
            joint,
            self.dst[keep],
            self.prob[keep] * w[keep],
            self.reward[keep][:, rest],
            self.horizon,
            [self.agent_ids[i] for i in rest],
        )


def tabulate(game: StochasticGame, root, horizon: int, max_nodes: int = DEFAULT_MAX_NODES) -> TabularGame:
    """Unroll ``game`` from ``root`` for ``horizon`` steps.

    Games may provide a faster ``_tabulate(root, horizon, max_nodes)``; the
    generic path below calls :meth:`StochasticGame._transition` for every
    reachable ``(node, joint action)``.
    """
    if isinstance(game, TabularGame):
        raise DomainError("game is already tabulated")
    fast = getattr(game, "_tabulate", None)
    if fast is not None:
        return fast(root, horizon, max_nodes)

    states = [root]
    depth = [0]
    index = {(root, 0): 0}
    expanded = [False]
    rows = []
    layer = [0]
    for d in range(horizon):
        nxt_layer = []
        for n in layer:
            s = states[n]
            if game.is_terminal(s):
                continue
            expanded[n] = True
            for joint in game.joint_actions(s):
                for s2, p in game._transition(s, joint).items():
                    if p <= 0.0:
                        continue
                    key = (s2, d + 1)
                    m = index.get(key)
                    if m is None:
                        m = index[key] = len(states)
                        states.append(s2)
                        depth.append(d + 1)
                        expanded.append(False)
                        nxt_layer.append(m)
                        if len(states) > max_nodes:
                            raise CapacityError(f"more than {max_nodes} nodes within horizon {horizon}")
                    rows.append((n, joint, m, p, game._reward(s, joint, s2)))
        layer = nxt_layer

    alphabets: list[dict] = [{} for _ in range(game.n_agents)]
    for n, s in enumerate(states):
        if expanded[n]:
            for i in range(game.n_agents):
                for a in game.legal_actions(s, i):
                    alphabets[i].setdefault(a, len(alphabets[i]))
    legal = [np.zeros((len(states), max(len(al), 1)), dtype=bool) for al in alphabets]
    for n, s in enumerate(states):
        if expanded[n]:
            for i in range(game.n_agents):
                for a in game.legal_actions(s, i):
                    legal[i][n, alphabets[i][a]] = True
    shape = tuple(max(len(al), 1) for al in alphabets)
    k = len(rows)
    src = np.fromiter((r[0] for r in rows), np.int64, k)
    dst = np.fromiter((r[2] for r in rows), np.int64, k)
    prob = np.fromiter((r[3] for r in rows), float, k)
    reward = np.array([r[4] for r in rows], dtype=float).reshape(k, game.n_agents)
    if k:
        codes = np.array([[alphabets[i][a] for i, a in enumerate(r[1])] for r in rows], dtype=np.int64)
        joint = np.ravel_multi_index(codes.T, shape).astype(np.int64)
    else:
        joint = np.zeros(0, np.int64)
    return TabularGame(
        game,
        states,
        np.asarray(depth, dtype=np.int64),
        np.asarray(expanded, dtype=bool),
        [tuple(al) if al else (None,) for al in alphabets],
        legal,
        src,
        joint,
        dst,
        prob,
        reward,
        horizon,
        game.agent_ids,
    )


def check_normalized(table: TabularGame) -> float:
    """Largest deviation from 1 of any legal joint action's outgoing mass."""
    mass = np.bincount(table.src * table.n_joint + table.joint, table.prob, table.n_nodes * table.n_joint)
    legal = table.joint_legal()
    legal[~table.expanded] = False
    return float(np.max(np.abs(mass.reshape(table.n_nodes, -1)[legal] - 1.0), initial=0.0))
