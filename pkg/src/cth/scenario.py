"""Scenario files: a stag-hunt layout, model settings and an observed trajectory.

Scenarios are JSON documents checked against ``data/scenario.schema.json``
and then against the game rules. A trajectory step lists every hunter's move
by id and, optionally, each stag's move. Stag moves are needed only when
fleeing is ambiguous (several equally good escape cells); replay fails with
a message naming the step otherwise.

Minimal example::

    {
      "schema_version": 1,
      "id": "demo",
      "grid": {"width": 3, "height": 3, "walls": []},
      "hunters": [{"id": "A", "start": [0, 0]}, {"id": "B", "start": [2, 0]}],
      "stags": [[1, 2]],
      "hares": [[2, 2]],
      "trajectory": [{"hunters": {"A": "north", "B": "stay"}}]
    }

The grid may instead be drawn as ``{"map": ["...", ".#.", "..."]}``: one
string per row, top row first, ``#`` for walls.

Optional fields and their defaults: ``flee_radius`` 2, ``gamma`` 0.95,
``horizon`` 10 (episode length: an episode ends after this many steps, so
the lookahead from step ``t`` is ``horizon - t``), ``elicitation`` ``[1, 2, 3]`` (team
judgments after that many steps), ``prediction_steps`` (next-action
judgments; defaults to ``elicitation``), ``structure`` (authored intent,
used by tests), ``references`` (reference judgments to score against).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import DomainError, ValidationError
from .inference import ObservationTrace
from .staghunt import (
    DEFAULT_DISCOUNT,
    DEFAULT_FLEE_RADIUS,
    DEFAULT_HORIZON,
    GridWorld,
    HuntState,
    Move,
    StagHuntGame,
    legal_moves,
    step_dist,
)

SCHEMA_VERSION = 1
DEFAULT_ELICITATION = (1, 2, 3)


def schema() -> dict:
    return json.loads(resources.files("cth").joinpath("data/scenario.schema.json").read_text())


_VALIDATOR = None


def _validator():
    global _VALIDATOR
    if _VALIDATOR is None:
        s = schema()
        _VALIDATOR = jsonschema.Draft202012Validator(s)
    return _VALIDATOR


def _where(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


@dataclass(frozen=True)
class Step:
    hunters: tuple  # Move per hunter, in declaration order
    stags: tuple | None = None  # Move or None per stag; None when unspecified


@dataclass(frozen=True)
class Scenario:
    id: str
    world: GridWorld
    hunter_ids: tuple
    trajectory: tuple
    gamma: float = DEFAULT_DISCOUNT
    horizon: int = DEFAULT_HORIZON
    elicitation: tuple = DEFAULT_ELICITATION
    prediction_steps: tuple = DEFAULT_ELICITATION
    description: str = ""
    structure: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)
    source: str = "<memory>"

    @property
    def n_hunters(self) -> int:
        return len(self.hunter_ids)

    def hunter_index(self, hid: str) -> int:
        try:
            return self.hunter_ids.index(hid)
        except ValueError:
            raise ValidationError(f"{self.source}: unknown hunter id {hid!r}") from None

    def episode_game(self) -> StagHuntGame:
        """The game the trajectory is played in; episodes last ``horizon`` steps."""
        return StagHuntGame(self.world, self.horizon, self.gamma)

    def with_settings(self, **changes) -> Scenario:
        """A re-validated copy with ``horizon`` and/or ``gamma`` replaced."""
        new = replace(self, **changes)
        new.replay()
        return new

    def replay(self) -> ObservationTrace:
        """Observed states and joint actions; raises :class:`ValidationError` on bad steps."""
        if len(self.trajectory) > self.horizon:
            raise ValidationError(f"{self.source}: {len(self.trajectory)}-step trajectory is longer than the horizon {self.horizon}")
        game = self.episode_game()
        s = game.initial_state
        states = []
        for k, step in enumerate(self.trajectory, start=1):
            where = f"{self.source}: step {k}"
            if s.world.terminal:
                raise ValidationError(f"{where}: the episode already ended with a capture")
            for i, m in enumerate(step.hunters):
                if m not in legal_moves(s.world, i):
                    cell = s.world.hunters[i]
                    dx, dy = m.delta
                    target = (cell[0] + dx, cell[1] + dy)
                    why = "out of bounds" if not s.world.in_bounds(target) else "a wall"
                    raise ValidationError(
                        f"{where}: hunter {self.hunter_ids[i]} cannot move {m.label()} from {cell}; {target} is {why}"
                    )
            states.append(s)
            s = HuntState(_pick_outcome(s.world, step, where), s.t + 1)
        trace = ObservationTrace(game, states, [st.hunters for st in self.trajectory], s)
        return trace

    def states(self) -> list:
        """States ``s_0 .. s_T`` including the final one."""
        tr = self.replay()
        return list(tr.states) + [tr.final]


def _pick_outcome(world: GridWorld, step: Step, where: str) -> GridWorld:
    outcomes = step_dist(world, step.hunters)
    if step.stags is not None and len(step.stags) != len(world.stags):
        raise ValidationError(f"{where}: {len(step.stags)} stag moves given for {len(world.stags)} stags")
    matches = []
    for o in outcomes:
        ok = True
        for k, ((c0, _), (c1, _)) in enumerate(zip(world.stags, o.world.stags)):
            want = None if step.stags is None else step.stags[k]
            if want is not None and (c0[0] + want.delta[0], c0[1] + want.delta[1]) != c1:
                ok = False
        if ok:
            matches.append(o)
    if not matches:
        raise ValidationError(f"{where}: the given stag moves {_fmt(step.stags)} have zero probability")
    if len(matches) > 1:
        raise ValidationError(f"{where}: stag flight is ambiguous ({len(matches)} outcomes); list the stag moves")
    return matches[0].world


def _fmt(moves) -> str:
    return "[" + ", ".join("null" if m is None else m.label() for m in moves) + "]"


def _parse_moves(values, where: str) -> tuple:
    try:
        return tuple(None if v is None else Move.parse(v) for v in values)
    except DomainError as e:
        raise ValidationError(f"{where}: {e}") from None


def scenario_from_dict(data: dict, source: str = "<memory>") -> Scenario:
    """Validate a parsed document and build a :class:`Scenario` (replay included)."""
    errors = sorted(_validator().iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ValidationError(f"{source}: field {_where(e.absolute_path)}: {e.message}")

    width, height, walls = _grid(data["grid"], source)
    ids = [h["id"] for h in data["hunters"]]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{source}: duplicate hunter ids in {ids}")

    def check_cell(name, c):
        c = tuple(c)
        if not (0 <= c[0] < width and 0 <= c[1] < height):
            raise ValidationError(f"{source}: {name} starts out of bounds at ({c[0]},{c[1]}) on a {width}x{height} grid")
        if c in walls:
            raise ValidationError(f"{source}: {name} starts on wall ({c[0]},{c[1]})")
        return c

    for w in walls:
        if not (0 <= w[0] < width and 0 <= w[1] < height):
            raise ValidationError(f"{source}: wall ({w[0]},{w[1]}) is out of bounds")
    hunters = [check_cell(f"hunter {h['id']}", h["start"]) for h in data["hunters"]]
    stags = [check_cell(f"stag {k}", c) for k, c in enumerate(data.get("stags", []))]
    hares = [check_cell(f"hare {k}", c) for k, c in enumerate(data.get("hares", []))]
    prey = stags + hares
    for c in prey:
        if prey.count(c) > 1:
            raise ValidationError(f"{source}: more than one prey starts on ({c[0]},{c[1]})")
    world = GridWorld.create(width, height, hunters, stags, hares, walls, data.get("flee_radius", DEFAULT_FLEE_RADIUS))

    steps = []
    for k, raw in enumerate(data["trajectory"], start=1):
        where = f"{source}: step {k}"
        moves = raw["hunters"]
        if set(moves) != set(ids):
            missing = sorted(set(ids) - set(moves))
            extra = sorted(set(moves) - set(ids))
            raise ValidationError(f"{where}: hunter moves must name exactly {ids}; missing {missing}, unknown {extra}")
        hm = _parse_moves([moves[i] for i in ids], where)
        sm = _parse_moves(raw["stags"], where) if "stags" in raw else None
        steps.append(Step(hm, sm))

    n = len(steps)
    elicit = tuple(data.get("elicitation", [s for s in DEFAULT_ELICITATION if s <= n]))
    predict = tuple(data.get("prediction_steps", elicit))
    for name, seq in (("elicitation", elicit), ("prediction_steps", predict)):
        for s in seq:
            if s > n:
                raise ValidationError(f"{source}: {name} step {s} is past the {n}-step trajectory")
        if list(seq) != sorted(set(seq)):
            raise ValidationError(f"{source}: {name} steps must be strictly increasing")

    structure = data.get("structure", {})
    for team in structure.get("teams", []):
        for hid in team:
            if hid not in ids:
                raise ValidationError(f"{source}: structure names unknown hunter {hid!r}")
    rev = structure.get("reversal")
    if rev is not None:
        if any(hid not in ids for hid in rev["pair"]):
            raise ValidationError(f"{source}: reversal pair {rev['pair']} names an unknown hunter")
        if "defector" in rev and rev["defector"] not in rev["pair"]:
            raise ValidationError(f"{source}: reversal defector {rev['defector']!r} is not in the pair {rev['pair']}")
    refs = data.get("references", {})
    for r in refs.get("team", []):
        for hid in r["pair"]:
            if hid not in ids:
                raise ValidationError(f"{source}: reference pair names unknown hunter {hid!r}")
        if r["step"] > n:
            raise ValidationError(f"{source}: team reference at step {r['step']} is past the {n}-step trajectory")
    for r in refs.get("actions", []):
        if r["hunter"] not in ids:
            raise ValidationError(f"{source}: action reference names unknown hunter {r['hunter']!r}")
        if r["step"] > n:
            raise ValidationError(f"{source}: action reference at step {r['step']} is past the {n}-step trajectory")
        total = sum(r["probs"].values())
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"{source}: action reference at step {r['step']} for {r['hunter']} sums to {total}")
        _parse_moves(list(r["probs"]), source)

    scen = Scenario(
        id=data["id"],
        world=world,
        hunter_ids=tuple(ids),
        trajectory=tuple(steps),
        gamma=float(data.get("gamma", DEFAULT_DISCOUNT)),
        horizon=int(data.get("horizon", DEFAULT_HORIZON)),
        elicitation=elicit,
        prediction_steps=predict,
        description=data.get("description", ""),
        structure=structure,
        references=refs,
        source=source,
    )
    states = scen.states()
    for s in predict:
        if states[s].world.terminal:
            raise ValidationError(f"{source}: prediction step {s} falls after the capture that ends the episode")
    return scen


def _grid(grid: dict, source: str) -> tuple:
    """``(width, height, walls)`` from either grid form."""
    if "map" not in grid:
        return grid["width"], grid["height"], {tuple(w) for w in grid.get("walls", [])}
    rows = grid["map"]
    height, width = len(rows), len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValidationError(f"{source}: grid map rows must all have the same length")
    if grid.get("walls"):
        raise ValidationError(f"{source}: give walls either as a map or as a list, not both")
    if grid.get("width", width) != width or grid.get("height", height) != height:
        raise ValidationError(f"{source}: grid map is {width}x{height} but width/height say {grid.get('width')}x{grid.get('height')}")
    walls = {(x, height - 1 - r) for r, row in enumerate(rows) for x, ch in enumerate(row) if ch == "#"}
    return width, height, walls


def grid_map(world: GridWorld) -> list[str]:
    """Rows of ``'#'``/``'.'``, top row first."""
    return ["".join("#" if (x, y) in world.walls else "." for x in range(world.width)) for y in reversed(range(world.height))]


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ValidationError(f"{path}: cannot read ({e.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    return scenario_from_dict(data, str(path))


def scenario_to_dict(scen: Scenario) -> dict:
    """Inverse of :func:`scenario_from_dict` (stag moves are always written out)."""
    w = scen.world
    states = scen.states()
    traj = []
    for k, step in enumerate(scen.trajectory):
        before, after = states[k].world, states[k + 1].world
        stag_moves = []
        for (c0, _), (c1, _) in zip(before.stags, after.stags):
            d = (c1[0] - c0[0], c1[1] - c0[1])
            stag_moves.append(next(m.name.lower() for m in Move if m.delta == d))
        traj.append(
            {
                "hunters": {hid: m.name.lower() for hid, m in zip(scen.hunter_ids, step.hunters)},
                "stags": stag_moves,
            }
        )
    out = {
        "schema_version": SCHEMA_VERSION,
        "id": scen.id,
        "description": scen.description,
        "grid": {"map": grid_map(w)},
        "hunters": [{"id": hid, "start": list(c)} for hid, c in zip(scen.hunter_ids, w.hunters)],
        "stags": [list(c) for c, _ in w.stags],
        "hares": [list(c) for c, _ in w.hares],
        "flee_radius": w.flee_radius,
        "flee_rule": "uniform-ties",
        "gamma": scen.gamma,
        "horizon": scen.horizon,
        "trajectory": traj,
        "elicitation": list(scen.elicitation),
        "prediction_steps": list(scen.prediction_steps),
    }
    if scen.structure:
        out["structure"] = scen.structure
    if scen.references:
        out["references"] = scen.references
    return out


def dump_scenario(scen: Scenario) -> str:
    """Scenario JSON laid out for reading: one line per map row and per step."""
    d = scenario_to_dict(scen)

    def inline(v):
        return json.dumps(v, ensure_ascii=False)

    lines = []
    for key, value in d.items():
        if key == "grid":
            rows = ",\n".join(f"    {inline(r)}" for r in value["map"])
            text = '{"map": [\n' + rows + "\n  ]}"
        elif key == "trajectory" and value:
            text = "[\n" + ",\n".join(f"    {inline(st)}" for st in value) + "\n  ]"
        else:
            text = inline(value)
        lines.append(f"  {inline(key)}: {text}")
    return "{\n" + ",\n".join(lines) + "\n}\n"


def save_scenario(scen: Scenario, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(scen), encoding="utf-8", newline="\n")


def builtin_scenarios() -> list[Path]:
    """Paths of the nine bundled fixture scenarios, sorted by id."""
    root = resources.files("cth").joinpath("data/scenarios")
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))
