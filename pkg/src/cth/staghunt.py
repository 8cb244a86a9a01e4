"""Spatial stag hunt.

Hunters and stags move one cell per step in the four cardinal directions or
stay; hares never move. Moves are simultaneous and hunters may share cells.
A hare is caught when at least one hunter ends the step on its cell (worth
1, split among the hunters there); a stag is caught when at least two
hunters end the step on the stag's post-move cell (worth 20, split equally).
Any capture ends the episode; every capture made in that step scores.

Stags are part of the dynamics: a stag with a hunter within ``flee_radius``
(Manhattan) moves to a legal cell maximizing its distance to the nearest
hunter, measured against the hunters' pre-move positions; ties are resolved
uniformly at random. Otherwise it stays.

Coordinates: ``x`` grows East, ``y`` grows North, origin at the bottom-left.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CapacityError, DomainError, TerminalStateError, ValidationError
from .game import GREEDY, UNIFORM, StochasticGame, uniform
from .tabular import TabularGame, tabulate

Cell = tuple[int, int]

HARE_VALUE = 1.0
STAG_VALUE = 20.0
DEFAULT_FLEE_RADIUS = 2
DEFAULT_DISCOUNT = 0.95
DEFAULT_HORIZON = 10


class Move(enum.IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3
    STAY = 4

    @property
    def delta(self) -> Cell:
        return _DELTAS[self]

    @classmethod
    def parse(cls, text: str) -> Move:
        key = str(text).strip().upper()
        for m in cls:
            if key in (m.name, m.name[0]):
                return m
        raise DomainError(f"unknown move {text!r}")

    def label(self) -> str:
        return self.name.capitalize()


_DELTAS = {Move.NORTH: (0, 1), Move.SOUTH: (0, -1), Move.EAST: (1, 0), Move.WEST: (-1, 0), Move.STAY: (0, 0)}
MOVES = tuple(Move)


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


@dataclass(frozen=True)
class GridWorld:
    """Stag-hunt configuration.

    ``stags`` and ``hares`` are tuples of ``(cell, alive)``; captured prey
    keep their last cell. The world is terminal once any prey is captured.
    """

    width: int
    height: int
    walls: frozenset = frozenset()
    hunters: tuple = ()
    stags: tuple = ()
    hares: tuple = ()
    flee_radius: int = DEFAULT_FLEE_RADIUS

    @classmethod
    def create(cls, width, height, hunters, stags=(), hares=(), walls=(), flee_radius=DEFAULT_FLEE_RADIUS):
        """Build and validate an initial world from plain cell lists."""
        world = cls(
            int(width),
            int(height),
            frozenset(tuple(w) for w in walls),
            tuple(tuple(h) for h in hunters),
            tuple((tuple(s), True) for s in stags),
            tuple((tuple(h), True) for h in hares),
            int(flee_radius),
        )
        world.validate(initial=True)
        return world

    def validate(self, initial: bool = False) -> None:
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if self.flee_radius < 0:
            raise ValidationError(f"flee radius must be >= 0, got {self.flee_radius}")
        for w in self.walls:
            if not self.in_bounds(w):
                raise ValidationError(f"wall {w} is out of bounds")
        named = [(f"hunter {i}", c) for i, c in enumerate(self.hunters)]
        named += [(f"stag {i}", c) for i, (c, _) in enumerate(self.stags)]
        named += [(f"hare {i}", c) for i, (c, _) in enumerate(self.hares)]
        for name, c in named:
            if not self.in_bounds(c):
                raise ValidationError(f"{name} at {c} is out of bounds")
            if c in self.walls:
                raise ValidationError(f"{name} starts on wall {c}")
        if not self.hunters:
            raise ValidationError("world has no hunters")
        if initial:
            prey = [c for c, _ in self.stags] + [c for c, _ in self.hares]
            if len(set(prey)) != len(prey):
                raise ValidationError("at most one stag or hare may start in each cell")

    def __hash__(self):
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.width, self.height, self.walls, self.hunters, self.stags, self.hares, self.flee_radius))
            object.__setattr__(self, "_hash", h)
        return h

    def __getstate__(self):
        # Cached values are per process (string hashing is salted).
        return {k: v for k, v in self.__dict__.items() if not k.startswith("_")}

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def is_open(self, c: Cell) -> bool:
        return self.in_bounds(c) and c not in self.walls

    @property
    def terminal(self) -> bool:
        t = self.__dict__.get("_terminal")
        if t is None:
            t = any(not alive for _, alive in self.stags) or any(not alive for _, alive in self.hares)
            object.__setattr__(self, "_terminal", t)
        return t

    def layout_key(self) -> tuple:
        return (self.width, self.height, self.walls, self.flee_radius)


@dataclass(frozen=True)
class CaptureEvent:
    kind: str
    index: int
    hunters: tuple
    rewards: tuple


class StepOutcome(NamedTuple):
    prob: float
    world: GridWorld
    rewards: tuple
    events: tuple


def _open_moves(world: GridWorld, cell: Cell) -> tuple:
    out = []
    for m in MOVES:
        dx, dy = m.delta
        if world.is_open((cell[0] + dx, cell[1] + dy)):
            out.append(m)
    return tuple(out)


def legal_moves(world: GridWorld, hunter: int) -> tuple:
    """Moves available to a hunter, in ``Move`` order; ``STAY`` is always legal."""
    if not 0 <= hunter < len(world.hunters):
        raise DomainError(f"no hunter {hunter}; world has {len(world.hunters)}")
    if world.terminal:
        raise TerminalStateError("world is terminal")
    return _open_moves(world, world.hunters[hunter])


def _flee(world: GridWorld, cell: Cell, hunters: Sequence) -> dict:
    nearest = min(manhattan(cell, h) for h in hunters)
    if nearest > world.flee_radius:
        return {Move.STAY: 1.0}
    scored = []
    for m in _open_moves(world, cell):
        dx, dy = m.delta
        to = (cell[0] + dx, cell[1] + dy)
        scored.append((min(manhattan(to, h) for h in hunters), m))
    best = max(d for d, _ in scored)
    return uniform([m for d, m in scored if d == best])


def stag_flee_dist(world: GridWorld, stag: int) -> dict:
    """Distribution over the stag's move given the current hunter positions."""
    if not 0 <= stag < len(world.stags):
        raise DomainError(f"no stag {stag}")
    cell, alive = world.stags[stag]
    if not alive:
        raise DomainError(f"stag {stag} has been captured")
    return _flee(world, cell, world.hunters)


def _shift(c: Cell, m: Move) -> Cell:
    dx, dy = m.delta
    return (c[0] + dx, c[1] + dy)


def _resolve(world: GridWorld, hunters: tuple, stag_cells: tuple):
    """Captures on post-move cells; returns ``(world', rewards, events)``."""
    rewards = [0.0] * len(hunters)
    events = []
    hares = list(world.hares)
    stags = []
    for k, (c, alive) in enumerate(world.hares):
        on = tuple(i for i, h in enumerate(hunters) if h == c)
        if alive and on:
            share = HARE_VALUE / len(on)
            for i in on:
                rewards[i] += share
            hares[k] = (c, False)
            events.append(CaptureEvent("hare", k, on, (share,) * len(on)))
    for k, c in enumerate(stag_cells):
        on = tuple(i for i, h in enumerate(hunters) if h == c)
        if len(on) >= 2:
            share = STAG_VALUE / len(on)
            for i in on:
                rewards[i] += share
            stags.append((c, False))
            events.append(CaptureEvent("stag", k, on, (share,) * len(on)))
        else:
            stags.append((c, True))
    nxt = GridWorld(world.width, world.height, world.walls, hunters, tuple(stags), tuple(hares), world.flee_radius)
    return nxt, tuple(rewards), tuple(events)


def step_dist(world: GridWorld, actions: Sequence) -> list[StepOutcome]:
    """All outcomes of one simultaneous step, with their probabilities."""
    if world.terminal:
        raise TerminalStateError("world is terminal")
    if len(actions) != len(world.hunters):
        raise DomainError(f"expected {len(world.hunters)} hunter actions, got {len(actions)}")
    moved = []
    for i, a in enumerate(actions):
        a = Move(a)
        if a not in legal_moves(world, i):
            raise DomainError(f"move {a.label()} is illegal for hunter {i} at {world.hunters[i]}")
        moved.append(_shift(world.hunters[i], a))
    moved = tuple(moved)
    flee = [stag_flee_dist(world, k) for k in range(len(world.stags))]
    merged: dict = {}
    for combo in itertools.product(*(d.items() for d in flee)):
        p = 1.0
        cells = []
        for (m, q), (c, _) in zip(combo, world.stags):
            p *= q
            cells.append(_shift(c, m))
        nxt, rewards, events = _resolve(world, moved, tuple(cells))
        if nxt in merged:
            merged[nxt] = merged[nxt]._replace(prob=merged[nxt].prob + p)
        else:
            merged[nxt] = StepOutcome(p, nxt, rewards, events)
    return list(merged.values())


class HuntState(NamedTuple):
    world: GridWorld
    t: int


class StagHuntGame(StochasticGame):
    """The stag hunt as a stochastic game over ``HuntState(world, t)``.

    States with a capture or with ``t >= horizon`` are terminal.
    """

    def __init__(self, world: GridWorld, horizon: int = DEFAULT_HORIZON, discount: float = DEFAULT_DISCOUNT):
        world.validate()
        super().__init__(len(world.hunters), discount)
        self.world = world
        self.horizon = int(horizon)
        self.initial_state = HuntState(world, 0)
        self._layout = world.layout_key()
        self._cache: dict = {}
        self._dist_cache: dict = {}

    def is_terminal(self, state):
        return state.world.terminal or state.t >= self.horizon

    def legal_actions(self, state, agent):
        if self.is_terminal(state):
            return ()
        return _open_moves(state.world, state.world.hunters[agent])

    def steps_left(self, state):
        return max(self.horizon - state.t, 0)

    def _outcomes(self, state, joint):
        key = (state, joint)
        hit = self._cache.get(key)
        if hit is None:
            hit = {}
            for o in step_dist(state.world, joint):
                hit[HuntState(o.world, state.t + 1)] = (o.prob, o.rewards)
            self._cache[key] = hit
        return hit

    def _transition(self, state, joint):
        return {s: p for s, (p, _) in self._outcomes(state, joint).items()}

    def _reward(self, state, joint, next_state):
        return self._outcomes(state, joint)[next_state][1]

    def recede(self, state, horizon):
        """Plan from ``state`` for ``horizon`` steps, or fewer if the episode ends sooner."""
        game = StagHuntGame(state.world, max(min(horizon, self.horizon - state.t), 0), self.discount)
        return game, game.initial_state

    # -- base policies --------------------------------------------------------

    def _distances(self, world: GridWorld, target: Cell) -> dict:
        """BFS path lengths to ``target`` over open cells."""
        hit = self._dist_cache.get(target)
        if hit is None:
            hit = {target: 0}
            queue = deque([target])
            while queue:
                c = queue.popleft()
                for m in MOVES[:4]:
                    n = _shift(c, m)
                    if world.is_open(n) and n not in hit:
                        hit[n] = hit[c] + 1
                        queue.append(n)
            self._dist_cache[target] = hit
        return hit

    def base_policy(self, state, agent, kind=UNIFORM):
        """``uniform`` over legal moves, or ``greedy``: step along a shortest
        path toward the nearest live hare (a lone hunter cannot take a stag).
        Falls back to uniform when no hare is reachable.
        """
        moves = self.legal_actions(state, agent)
        if kind == UNIFORM:
            return uniform(moves)
        if kind != GREEDY:
            raise DomainError(f"unknown base policy {kind!r}")
        world = state.world
        here = world.hunters[agent]
        best, chosen = None, []
        for c, alive in world.hares:
            if not alive:
                continue
            dist = self._distances(world, c)
            if here not in dist:
                continue
            d0 = dist[here]
            if best is None or d0 < best:
                best, chosen = d0, []
            if d0 == best:
                chosen += [m for m in moves if dist.get(_shift(here, m), 1 << 30) < d0]
        if not chosen:
            return uniform(moves)
        return uniform(sorted(set(chosen)))

    # -- fast tabulation ------------------------------------------------------

    def _tabulate(self, root: HuntState, horizon: int, max_nodes: int) -> TabularGame:
        if root.world.layout_key() != self._layout:
            raise DomainError("root state does not use this game's layout")
        return _StagHuntTabulator(self, root, horizon, max_nodes).build()


def as_stochastic_game(world: GridWorld, horizon: int = DEFAULT_HORIZON, discount: float = DEFAULT_DISCOUNT) -> StagHuntGame:
    """Adapter from a world to a game whose root is ``game.initial_state``."""
    return StagHuntGame(world, horizon, discount)


class _LazyStates(Sequence):
    """Node states decoded on demand from integer codes."""

    def __init__(self, codes: np.ndarray, decode):
        self.codes = codes
        self.decode = decode
        self._memo: dict = {}

    def __len__(self):
        return len(self.codes)

    def __getitem__(self, n):
        if isinstance(n, slice):
            return [self[i] for i in range(*n.indices(len(self)))]
        n = int(n)
        if n < 0:
            n += len(self)
        s = self._memo.get(n)
        if s is None:
            s = self._memo[n] = self.decode(int(self.codes[n]))
        return s


class _StagHuntTabulator:
    """Vectorized unrolling of a :class:`StagHuntGame`.

    A non-terminal state is fully described by hunter cells, stag cells and
    the clock (every prey is alive). Hunter moves are deterministic and stag
    flight depends only on pre-move positions, so each layer is processed as
    arrays over ``(branch, joint action)`` where a branch is one stag outcome
    of one node.
    """

    def __init__(self, game: StagHuntGame, root: HuntState, horizon: int, max_nodes: int):
        self.game = game
        self.root = root
        self.horizon = horizon
        self.max_nodes = max_nodes
        w = root.world
        self.world = w
        self.W, self.H = w.width, w.height
        self.C = w.width * w.height
        self.nh = len(w.hunters)
        self.ns = len(w.stags)
        self.nr = len(w.hares)
        move_to = np.full((self.C, 5), -1, dtype=np.int64)
        for x in range(self.W):
            for y in range(self.H):
                if (x, y) in w.walls:
                    continue
                for m in MOVES:
                    n = _shift((x, y), m)
                    if w.is_open(n):
                        move_to[self.cell((x, y)), m] = self.cell(n)
        self.move_to = move_to
        self.J = 5**self.nh
        self.jidx = np.array(list(itertools.product(range(5), repeat=self.nh)), dtype=np.int64).reshape(self.J, self.nh)
        self.hare_cells = np.array([self.cell(c) for c, _ in w.hares], dtype=np.int64)
        # code layout: hunters, stags, stag-alive bits, hare-alive bits, t
        self.radix = [self.C] * (self.nh + self.ns) + [2] * (self.ns + self.nr) + [root.t + horizon + 1]
        self.fits = float(np.prod([float(r) for r in self.radix])) < 2.0**62
        self._flee_cache: dict = {}

    def cell(self, c: Cell) -> int:
        return c[1] * self.W + c[0]

    def uncell(self, k: int) -> Cell:
        return (k % self.W, k // self.W)

    def encode(self, cols: list) -> np.ndarray:
        code = np.zeros(len(cols[0]), dtype=np.int64)
        for col, r in zip(cols, self.radix):
            code = code * r + col
        return code

    def decode(self, code: int) -> HuntState:
        vals = []
        for r in reversed(self.radix):
            vals.append(code % r)
            code //= r
        vals.reverse()
        nh, ns, nr = self.nh, self.ns, self.nr
        hunters = tuple(self.uncell(v) for v in vals[:nh])
        stag_cells = [self.uncell(v) for v in vals[nh : nh + ns]]
        stag_alive = vals[nh + ns : nh + 2 * ns]
        hare_alive = vals[nh + 2 * ns : nh + 2 * ns + nr]
        w = self.world
        world = GridWorld(
            w.width,
            w.height,
            w.walls,
            hunters,
            tuple((c, bool(a)) for c, a in zip(stag_cells, stag_alive)),
            tuple((c, bool(a)) for (c, _), a in zip(w.hares, hare_alive)),
            w.flee_radius,
        )
        return HuntState(world, int(vals[-1]))

    def flee(self, hunters: tuple, stag: int) -> list:
        key = (hunters, stag)
        hit = self._flee_cache.get(key)
        if hit is None:
            cell = self.uncell(stag)
            dist = _flee(self.world, cell, [self.uncell(h) for h in hunters])
            hit = [(self.cell(_shift(cell, m)), p) for m, p in dist.items()]
            self._flee_cache[key] = hit
        return hit

    def build(self) -> TabularGame:
        game, root = self.game, self.root
        if not self.fits or not self.ns + self.nr:
            return generic_tabulate(game, root, self.horizon, self.max_nodes)
        rw = root.world
        nh, ns, nr, J = self.nh, self.ns, self.nr, self.J
        hunters0 = [self.cell(c) for c in rw.hunters]
        stags0 = [self.cell(c) for c, _ in rw.stags]
        alive0 = [int(a) for _, a in rw.stags] + [int(a) for _, a in rw.hares]
        root_code = self.encode([np.array([v]) for v in hunters0 + stags0 + alive0 + [root.t]])

        codes = [root_code]
        depth = [np.zeros(1, np.int64)]
        expand_flags = []
        layer_codes = root_code
        layer_ids = np.zeros(1, np.int64)
        layer_live = np.array([not game.is_terminal(root)])
        n_nodes = 1
        parts = {k: [] for k in ("src", "joint", "dst", "prob", "reward")}
        legal_rows: dict[int, np.ndarray] = {}

        for d in range(self.horizon):
            expand_flags.append(layer_live)
            live_ids = layer_ids[layer_live]
            live_codes = layer_codes[layer_live]
            if not len(live_ids):
                break
            vals = self._unpack(live_codes)
            hcells = vals[:, :nh]
            scells = vals[:, nh : nh + ns]
            t_next = vals[:, -1] + 1
            # legality per node and hunter
            legal = self.move_to[hcells] >= 0  # [L, nh, 5]
            for r, nid in enumerate(live_ids):
                legal_rows[int(nid)] = legal[r]
            jlegal = np.ones((len(live_ids), J), dtype=bool)
            for i in range(nh):
                jlegal &= legal[:, i, self.jidx[:, i]]
            # branches: one per (node, stag outcome)
            b_node, b_prob, b_stags = [], [], []
            for r in range(len(live_ids)):
                hs = tuple(int(h) for h in hcells[r])
                opts = [self.flee(hs, int(s)) for s in scells[r]]
                for combo in itertools.product(*opts):
                    p = 1.0
                    for _, q in combo:
                        p *= q
                    b_node.append(r)
                    b_prob.append(p)
                    b_stags.append([c for c, _ in combo])
            b_node = np.asarray(b_node, np.int64)
            b_prob = np.asarray(b_prob)
            b_stags = np.asarray(b_stags, np.int64).reshape(len(b_node), ns)
            # entries over (branch, joint) restricted to legal joints
            bi, ji = np.nonzero(jlegal[b_node])
            rows = b_node[bi]
            new_h = np.take_along_axis(self.move_to[hcells[rows]], self.jidx[ji][:, :, None], axis=2)[:, :, 0]
            new_s = b_stags[bi]
            reward = np.zeros((len(bi), nh))
            captured = np.zeros(len(bi), dtype=bool)
            hare_alive = np.ones((len(bi), nr), dtype=np.int64)
            for k in range(nr):
                on = new_h == self.hare_cells[k]
                cnt = on.sum(1)
                hit = cnt > 0
                reward += np.where(hit[:, None], on * (HARE_VALUE / np.maximum(cnt, 1))[:, None], 0.0)
                hare_alive[hit, k] = 0
                captured |= hit
            stag_alive = np.ones((len(bi), ns), dtype=np.int64)
            for k in range(ns):
                on = new_h == new_s[:, k : k + 1]
                cnt = on.sum(1)
                hit = cnt >= 2
                reward += np.where(hit[:, None], on * (STAG_VALUE / np.maximum(cnt, 1))[:, None], 0.0)
                stag_alive[hit, k] = 0
                captured |= hit
            cols = [new_h[:, i] for i in range(nh)] + [new_s[:, k] for k in range(ns)]
            cols += [stag_alive[:, k] for k in range(ns)] + [hare_alive[:, k] for k in range(nr)]
            cols.append(t_next[rows])
            nxt_codes = self.encode(cols)
            uniq, first, inverse = np.unique(nxt_codes, return_index=True, return_inverse=True)
            if n_nodes + len(uniq) > self.max_nodes:
                raise CapacityError(f"more than {self.max_nodes} nodes within horizon {self.horizon}")
            new_ids = np.arange(n_nodes, n_nodes + len(uniq), dtype=np.int64)
            n_nodes += len(uniq)
            parts["src"].append(live_ids[rows])
            parts["joint"].append(ji)
            parts["dst"].append(new_ids[inverse.ravel()])
            parts["prob"].append(b_prob[bi])
            parts["reward"].append(reward)
            codes.append(uniq)
            depth.append(np.full(len(uniq), d + 1, np.int64))
            layer_codes, layer_ids = uniq, new_ids
            term = captured[first] | (t_next[rows][first] >= game.horizon)
            layer_live = ~term if d + 1 < self.horizon else np.zeros(len(uniq), dtype=bool)
        codes_arr = np.concatenate(codes)
        depth_arr = np.concatenate(depth)
        expanded = np.zeros(n_nodes, dtype=bool)
        flags = np.concatenate(expand_flags) if expand_flags else np.zeros(0, bool)
        expanded[: len(flags)] = flags
        legal = [np.zeros((n_nodes, 5), dtype=bool) for _ in range(nh)]
        for nid, rows_ in legal_rows.items():
            for i in range(nh):
                legal[i][nid] = rows_[i]

        def cat(key, shape):
            return np.concatenate(parts[key]) if parts[key] else np.zeros(shape)

        return TabularGame(
            game,
            _LazyStates(codes_arr, self.decode),
            depth_arr,
            expanded,
            [MOVES] * nh,
            legal,
            cat("src", 0).astype(np.int64),
            cat("joint", 0).astype(np.int64),
            cat("dst", 0).astype(np.int64),
            cat("prob", 0).astype(float),
            cat("reward", (0, nh)).astype(float).reshape(-1, nh),
            self.horizon,
            game.agent_ids,
        )

    def _unpack(self, codes: np.ndarray) -> np.ndarray:
        out = np.zeros((len(codes), len(self.radix)), dtype=np.int64)
        c = codes.copy()
        for j in range(len(self.radix) - 1, -1, -1):
            out[:, j] = c % self.radix[j]
            c //= self.radix[j]
        return out


class _Untabulated(StochasticGame):
    """View of a game that hides its fast tabulator (forces the generic path)."""

    def __init__(self, game: StochasticGame):
        super().__init__(game.n_agents, game.discount, game.agent_ids)
        self._g = game

    def is_terminal(self, s):
        return self._g.is_terminal(s)

    def legal_actions(self, s, i):
        return self._g.legal_actions(s, i)

    def steps_left(self, s):
        return self._g.steps_left(s)

    def base_policy(self, s, i, kind=UNIFORM):
        return self._g.base_policy(s, i, kind)

    def _transition(self, s, joint):
        return self._g._transition(s, joint)

    def _reward(self, s, joint, s2):
        return self._g._reward(s, joint, s2)


def generic_tabulate(game: StochasticGame, root, horizon: int, max_nodes: int = 2_000_000) -> TabularGame:
    """Tabulate through ``transition_dist`` only, bypassing any fast path."""
    table = tabulate(_Untabulated(game), root, horizon, max_nodes)
    table.source = game
    return table
