"""Composable Team Hierarchies.

A hierarchy is a tree of three node kinds:

``Base(agent, kind)``
    a non-strategic policy for ``agent`` (uniform random or greedy).
``BR(agent; children)``
    ``agent`` best responds in the game where every other agent is replaced
    by the policy its child subtree produces.
``JP(team; children)``
    the team plans jointly in the game where every non-member is replaced by
    its child subtree's policy.

A child subtree *provides* policies for the agents it names (``Base``/``BR``:
its agent; ``JP``: its team). Each agent the parent needs must be provided by
exactly one child; a single ``JP`` child can cover several agents.

Text form, used in CLI output and CSV headers::

    node   := BASE(agent[,kind]) | BR(agent[; nodes]) | JP(agent,...[; nodes])
    nodes  := node (, node)*
    agent  := A | B | C | ...     (agent id 0 is A)
    kind   := uniform | greedy

e.g. ``BR(A; JP(B,C; BASE(A)))`` is A best responding to B and C, who plan
jointly against a naive A.
"""

from __future__ import annotations

import itertools
import re
import zlib
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DomainError
from .game import GREEDY, UNIFORM, StochasticGame, replace
from .planner import EXACT, PlannerConfig, UctPlan, solve_table, with_seed
from .tabular import TabularGame, tabulate

BASE_KINDS = (UNIFORM, GREEDY)


def agent_name(agent: int) -> str:
    if not 0 <= agent < 26:
        raise DomainError(f"agent id {agent} has no letter name")
    return chr(ord("A") + agent)


def agent_index(name: str) -> int:
    name = name.strip().upper()
    if len(name) != 1 or not "A" <= name <= "Z":
        raise DomainError(f"bad agent name {name!r}")
    return ord(name) - ord("A")


def _norm_children(children) -> tuple:
    if isinstance(children, Mapping):
        children = children.values()
    unique = []
    for c in children:
        if c not in unique:
            unique.append(c)
    return tuple(sorted(unique, key=lambda c: (min(c.provides), to_text(c))))


@dataclass(frozen=True)
class Base:
    agent: int
    kind: str = UNIFORM

    def __post_init__(self):
        if self.kind not in BASE_KINDS:
            raise DomainError(f"unknown base policy kind {self.kind!r}")

    @property
    def provides(self) -> tuple:
        return (self.agent,)

    @property
    def children(self) -> tuple:
        return ()

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class BR:
    agent: int
    children: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "children", _norm_children(self.children))

    @property
    def provides(self) -> tuple:
        return (self.agent,)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class JP:
    team: tuple
    children: tuple = ()

    def __post_init__(self):
        team = tuple(sorted(set(self.team)))
        if not team:
            raise DomainError("a JP team needs at least one member")
        object.__setattr__(self, "team", team)
        object.__setattr__(self, "children", _norm_children(self.children))
        if len(team) < 2 and self.children:
            raise DomainError("a JP node with non-team children needs at least two members")

    @property
    def provides(self) -> tuple:
        return self.team

    def __str__(self):
        return to_text(self)


CthNode = Union[Base, BR, JP]


def planners(node: CthNode) -> tuple:
    """Agents whose decisions the node's own planning step controls."""
    return node.team if isinstance(node, JP) else (node.agent,)


def depth(node: CthNode) -> int:
    if isinstance(node, Base):
        return 0
    return 1 + max((depth(c) for c in node.children), default=0)


def child_for(node: CthNode, agent: int) -> CthNode:
    """The child subtree that provides ``agent``'s policy."""
    hits = [c for c in node.children if agent in c.provides]
    if len(hits) != 1:
        raise DomainError(f"{to_text(node)} has {len(hits)} children providing agent {agent_name(agent)}")
    return hits[0]


def validate(node: CthNode, agents: Sequence[int]) -> None:
    """Check that every level covers exactly the agents it replaces."""
    agents = tuple(agents)
    for a in planners(node):
        if a not in agents:
            raise DomainError(f"{to_text(node)} names agent {a} outside {agents}")
    if isinstance(node, Base):
        return
    rest = [a for a in agents if a not in planners(node)]
    for a in rest:
        child_for(node, a)
    for c in node.children:
        if not set(c.provides) & set(rest):
            raise DomainError(f"child {to_text(c)} of {to_text(node)} provides no replaced agent")
        validate(c, agents)


def iter_nodes(node: CthNode) -> Iterator[CthNode]:
    yield node
    for c in node.children:
        yield from iter_nodes(c)


# ---------------------------------------------------------------------------
# text form
# ---------------------------------------------------------------------------


def to_text(node: CthNode) -> str:
    if isinstance(node, Base):
        kind = "" if node.kind == UNIFORM else f",{node.kind}"
        return f"BASE({agent_name(node.agent)}{kind})"
    head = agent_name(node.agent) if isinstance(node, BR) else ",".join(agent_name(a) for a in node.team)
    op = "BR" if isinstance(node, BR) else "JP"
    if not node.children:
        return f"{op}({head})"
    return f"{op}({head}; {', '.join(to_text(c) for c in node.children)})"


_TOKEN = re.compile(r"\s*(BASE|BR|JP|[A-Za-z]+|[(),;])")


def parse(text: str) -> CthNode:
    """Inverse of :func:`to_text`."""
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise DomainError(f"unexpected character {text[pos]!r} at {pos} in {text!r}")
        tokens.append(m.group(1))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    node, k = _parse_node(tokens, 0, text)
    if k != len(tokens):
        raise DomainError(f"trailing input after {to_text(node)!r} in {text!r}")
    return node


def _expect(tokens, k, tok, text):
    if k >= len(tokens) or tokens[k] != tok:
        got = tokens[k] if k < len(tokens) else "end of input"
        raise DomainError(f"expected {tok!r}, got {got!r} in {text!r}")
    return k + 1


def _parse_node(tokens, k, text):
    if k >= len(tokens):
        raise DomainError(f"unexpected end of input in {text!r}")
    op = tokens[k].upper()
    if op not in ("BASE", "BR", "JP"):
        raise DomainError(f"expected BASE, BR or JP, got {tokens[k]!r} in {text!r}")
    k = _expect(tokens, k + 1, "(", text)
    agents = []
    kind = UNIFORM
    while True:
        if k >= len(tokens):
            raise DomainError(f"unexpected end of input in {text!r}")
        tok = tokens[k]
        if op == "BASE" and agents and tok.lower() in BASE_KINDS:
            kind = tok.lower()
        else:
            agents.append(agent_index(tok))
        k += 1
        if k < len(tokens) and tokens[k] == ",":
            k += 1
            continue
        break
    children = []
    if op != "BASE" and k < len(tokens) and tokens[k] == ";":
        k += 1
        while True:
            child, k = _parse_node(tokens, k, text)
            children.append(child)
            if k < len(tokens) and tokens[k] == ",":
                k += 1
                continue
            break
    k = _expect(tokens, k, ")", text)
    if op == "JP":
        return JP(tuple(agents), tuple(children)), k
    if len(agents) != 1:
        raise DomainError(f"{op} takes exactly one agent in {text!r}")
    if op == "BASE":
        return Base(agents[0], kind), k
    return BR(agents[0], tuple(children)), k


# ---------------------------------------------------------------------------
# hypothesis spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisSet:
    """Ordered hypotheses about one observed agent; indices are stable."""

    agent: int
    hypotheses: tuple

    def __post_init__(self):
        if not self.hypotheses:
            raise DomainError("a hypothesis set cannot be empty")
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))

    def __len__(self):
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)

    def __getitem__(self, k):
        return self.hypotheses[k]

    def labels(self) -> list[str]:
        return [to_text(h) for h in self.hypotheses]


def enumerate_depth1(n_agents: int, agent: int, include_base: bool = True, base_kind: str = UNIFORM) -> HypothesisSet:
    """Depth-1 hypotheses for ``agent`` in canonical order.

    ``[BASE(agent)]`` (optional), then ``BR`` against base policies of all
    others, then one ``JP`` per team containing ``agent`` of size >= 2,
    ordered by team size and then lexicographically, with non-members at
    their base policies.
    """
    if n_agents < 2:
        raise DomainError(f"need at least two agents, got {n_agents}")
    if not 0 <= agent < n_agents:
        raise DomainError(f"agent {agent} is not one of {n_agents} agents")
    others = [a for a in range(n_agents) if a != agent]
    out = []
    if include_base:
        out.append(Base(agent, base_kind))
    out.append(BR(agent, tuple(Base(a, base_kind) for a in others)))
    for size in range(1, len(others) + 1):
        for mates in itertools.combinations(others, size):
            team = (agent,) + mates
            rest = [a for a in others if a not in mates]
            out.append(JP(team, tuple(Base(a, base_kind) for a in rest)))
    return HypothesisSet(agent, tuple(out))


def level_k(n_agents: int, agent: int, k: int, base_kind: str = UNIFORM) -> CthNode:
    """Level-k tower: ``agent`` best responds to level-(k-1) models of the others."""
    if k < 0:
        raise DomainError(f"level must be >= 0, got {k}")
    if k == 0:
        return Base(agent, base_kind)
    return BR(agent, tuple(level_k(n_agents, a, k - 1, base_kind) for a in range(n_agents) if a != agent))


def enumerate_levelk(n_agents: int, agent: int, k_max: int, base_kind: str = UNIFORM) -> HypothesisSet:
    """Level-0 through level-``k_max`` towers for ``agent`` (no JP nodes)."""
    if k_max < 0:
        raise DomainError(f"k_max must be >= 0, got {k_max}")
    if not 0 <= agent < n_agents:
        raise DomainError(f"agent {agent} is not one of {n_agents} agents")
    return HypothesisSet(agent, tuple(level_k(n_agents, agent, k, base_kind) for k in range(k_max + 1)))


def cooperates(node: CthNode, other: int) -> bool:
    """True iff the root of ``node`` is a joint plan whose team includes ``other``."""
    return isinstance(node, JP) and other in node.team


# ---------------------------------------------------------------------------
# compilation
# ---------------------------------------------------------------------------


@dataclass
class Compiled:
    """Result of compiling one node against one game.

    ``policies`` maps each provided agent id to a policy: a
    ``[n_nodes, |A|]`` array over the shared table in exact mode, or a
    callable ``state -> dist`` in UCT mode. ``root_q`` holds the root Q row
    (team Q maximized over teammates' actions) of every planning agent and
    is empty for base policies. ``plan`` and ``game`` (the reduced game that
    was solved) are kept only when the compiler is asked to keep them.
    """

    node: CthNode
    policies: dict
    root_q: dict
    root_actions: dict
    plan: object = None
    game: StochasticGame | None = None
    root: object = None
    alphabets: dict = field(default_factory=dict)

    def q_row(self, agent: int) -> dict | None:
        """Root Q-values of ``agent``, or ``None`` for a base policy."""
        return self.root_q.get(agent)

    def policy_row(self, agent: int, state=None) -> dict:
        """Action distribution of ``agent`` at the root (or at a table node / state)."""
        pol = self.policies[agent]
        if isinstance(pol, np.ndarray):
            row = pol[0 if state is None else state]
            return {a: float(row[k]) for k, a in enumerate(self.alphabets[agent]) if row[k] > 0}
        return dict(pol(self.root if state is None else state))


class Compiler:
    """Compiles hierarchies against one game and root state, memoizing subtrees.

    In exact mode the game is tabulated once from ``root`` and every subtree
    is solved on that shared table; in UCT mode policies are lazy and each
    state is searched the first time it is queried.
    """

    def __init__(self, game: StochasticGame, cfg: PlannerConfig, root=None, keep_plans: bool = True):
        self.cfg = cfg
        self.keep_plans = keep_plans
        if cfg.mode == EXACT:
            self.game = game if isinstance(game, TabularGame) else tabulate(game, root, cfg.horizon, cfg.max_nodes)
            self.root = 0
        else:
            if isinstance(game, TabularGame):
                raise DomainError("UCT compilation expects an untabulated game")
            self.game = game
            self.root = root
        self._memo: dict = {}

    def compile(self, node: CthNode) -> Compiled:
        hit = self._memo.get(node)
        if hit is None:
            validate(node, self.game.agent_ids)
            hit = self._memo[node] = self._compile(node)
        return hit

    def _root_actions(self, agents) -> dict:
        g = self.game
        return {a: tuple(sorted(g.legal_actions(self.root, g.index_of(a)))) for a in agents}

    def _finish(self, out: Compiled) -> Compiled:
        out.root = self.root
        g = self.game
        if isinstance(g, TabularGame):
            out.alphabets = {a: g.alphabets[g.index_of(a)] for a in out.policies}
        return out

    def _compile(self, node: CthNode) -> Compiled:
        game = self.game
        if isinstance(node, Base):
            pol = {node.agent: self._base(node)}
            return self._finish(Compiled(node, pol, {}, self._root_actions(pol)))
        team = planners(node)
        fixed = {}
        for a in game.agent_ids:
            if a not in team:
                fixed[a] = self.compile(child_for(node, a)).policies[a]
        sub = replace(game, fixed) if fixed else game
        if self.cfg.mode == EXACT:
            plan = solve_table(sub, self.cfg.gamma, self.cfg.tie_tol)
            policies = {a: plan.policy(sub.index_of(a)) for a in team}
            root_q = {a: plan.q_row(0, sub.index_of(a)) for a in team}
        else:
            seed = (self.cfg.seed + zlib.crc32(to_text(node).encode())) % (2**32)
            plan = UctPlan(sub, with_seed(self.cfg, seed))
            policies = {a: plan.policy(sub.index_of(a)) for a in team}
            root_q = {a: plan.q_row(self.root, sub.index_of(a)) for a in team}
        out = Compiled(node, policies, root_q, self._root_actions(team))
        if self.keep_plans or self.cfg.mode != EXACT:
            out.plan, out.game = plan, sub
        return self._finish(out)

    def _base(self, node: Base):
        game = self.game
        i = game.index_of(node.agent)
        if isinstance(game, TabularGame):
            legal = game.legal[i].astype(float)
            if node.kind == UNIFORM:
                count = legal.sum(1, keepdims=True)
                return np.divide(legal, count, out=np.zeros_like(legal), where=count > 0)
            arr = np.zeros_like(legal)
            for n in np.flatnonzero(game.expanded):
                for a, p in game.base_policy(int(n), i, node.kind).items():
                    arr[n, game.action_index(i, a)] = p
            return arr
        return lambda state: game.base_policy(state, i, node.kind)


def compile(node: CthNode, game: StochasticGame, cfg: PlannerConfig, root=None) -> Compiled:
    """Compile one hierarchy; see :class:`Compiler` to share work across trees."""
    return Compiler(game, cfg, root).compile(node)


def root_choice(compiled: Compiled, agent: int) -> tuple[tuple, np.ndarray | None, np.ndarray]:
    """``(actions, q, policy)`` of ``agent`` at the root, aligned by action.

    ``q`` is ``None`` for base policies.
    """
    acts = compiled.root_actions[agent]
    q = compiled.q_row(agent)
    pol = compiled.policy_row(agent)
    policy = np.array([pol.get(a, 0.0) for a in acts])
    if q is None:
        return acts, None, policy
    return acts, np.array([q[a] for a in acts]), policy
