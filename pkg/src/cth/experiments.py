"""Experiment runners over scenario files.

Two analyses mirror the judgment tasks the model is meant to explain:

* team inference: after each elicitation step, the probability that each
  pair of hunters is cooperating (BMA over depth-1 hypotheses, or the 0/1
  answer of the most probable hypotheses);
* action prediction: at each prediction step, every hunter's next-action
  distribution under BMA-CTH, ML-CTH and a level-K baseline.

Results are long-format :class:`ResultTable` records; :func:`evaluate`
scores them against reference judgments with Pearson R and RMSE.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .game import GREEDY, UNIFORM
from .hierarchy import Base, HypothesisSet, enumerate_depth1, enumerate_levelk, parse
from .inference import (
    BMA,
    ML,
    PREDICT_BETA,
    PRODUCT,
    TEAM_BETA,
    ChoiceCache,
    ObservationTrace,
    infer_trace,
    predict_distribution,
    team_probability,
)
from .planner import EXACT, PlannerConfig
from .scenario import Scenario, load_scenario, scenario_from_dict, scenario_to_dict
from .staghunt import Move, legal_moves

TEAM_PROB = "team_prob"
ACTION_PROB = "action_prob"
BMA_CTH = "BMA-CTH"
ML_CTH = "ML-CTH"
LEVEL_K = "LevelK"
VARIANT_NAMES = {"bma": BMA_CTH, "ml": ML_CTH, "levelk": LEVEL_K}
TEAM_VARIANTS = (BMA_CTH, ML_CTH)
ACTION_VARIANTS = (BMA_CTH, ML_CTH, LEVEL_K)
FIELDS = ("scenario", "step", "kind", "key", "variant", "value")


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by the runners; ``None`` means "use the scenario's value"."""

    planner: str = EXACT
    horizon: int | None = None
    gamma: float | None = None
    budget: int = 10_000
    exploration: float = 1.4
    seed: int = 0
    team_beta: float = TEAM_BETA
    predict_beta: float = PREDICT_BETA
    prior: tuple | None = None
    team_rule: str = PRODUCT
    include_base: bool = True
    base_kind: str = UNIFORM
    k_max: int = 2
    variants: tuple | None = None
    jobs: int = 1

    def apply(self, scen: Scenario) -> Scenario:
        """``scen`` with this config's horizon and discount overrides applied."""
        changes = {}
        if self.horizon is not None:
            changes["horizon"] = self.horizon
        if self.gamma is not None:
            changes["gamma"] = self.gamma
        return scen.with_settings(**changes) if changes else scen

    def planner_cfg(self, scen: Scenario) -> PlannerConfig:
        scen = self.apply(scen)
        return PlannerConfig(
            mode=self.planner,
            horizon=scen.horizon,
            budget=self.budget,
            exploration=self.exploration,
            seed=self.seed,
        )

    def manifest(self) -> dict:
        d = asdict(self)
        d["prior"] = "uniform" if self.prior is None else list(self.prior)
        d["variants"] = "default" if self.variants is None else list(self.variants)
        return d


# ---------------------------------------------------------------------------
# result tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Record:
    scenario: str
    step: int
    kind: str
    key: str
    variant: str
    value: float


class ResultTable:
    """Long-format records sorted by ``(scenario, step, kind, key, variant)``."""

    def __init__(self, records: Iterable[Record] = ()):
        recs = sorted(records, key=lambda r: (r.scenario, r.step, r.kind, r.key, r.variant))
        for r in recs:
            if not (0.0 <= r.value <= 1.0) or math.isnan(r.value):
                raise ValidationError(f"record value {r.value} outside [0, 1]: {r}")
        self.records = tuple(recs)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __add__(self, other: ResultTable) -> ResultTable:
        return ResultTable(self.records + other.records)

    def select(self, **where) -> ResultTable:
        return ResultTable(r for r in self.records if all(getattr(r, k) == v for k, v in where.items()))

    def scenarios(self) -> list[str]:
        return sorted({r.scenario for r in self.records})

    def value(self, scenario, step, kind, key, variant) -> float:
        for r in self.records:
            if (r.scenario, r.step, r.kind, r.key, r.variant) == (scenario, step, kind, key, variant):
                return r.value
        raise KeyError((scenario, step, kind, key, variant))

    def to_csv(self, fmt: str = ".17g") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        for r in self.records:
            w.writerow((r.scenario, r.step, r.kind, r.key, r.variant, format(r.value, fmt)))
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="")

    @classmethod
    def from_csv(cls, text: str) -> ResultTable:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != FIELDS:
            raise ValidationError(f"result header must be {','.join(FIELDS)}")
        out = []
        for n, row in enumerate(rows[1:], start=2):
            if len(row) != len(FIELDS):
                raise ValidationError(f"line {n}: expected {len(FIELDS)} fields, got {len(row)}")
            try:
                out.append(Record(row[0], int(row[1]), row[2], row[3], row[4], float(row[5])))
            except ValueError as e:
                raise ValidationError(f"line {n}: {e}") from None
        return cls(out)

    @classmethod
    def read(cls, path: str | Path) -> ResultTable:
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def pair_key(a: str, b: str) -> str:
    return f"{a}-{b}"


def action_key(hunter: str, move) -> str:
    return f"{hunter}:{Move(move).name.lower()}"


# ---------------------------------------------------------------------------
# per-scenario analyses
# ---------------------------------------------------------------------------


def _variants(cfg: RunConfig, allowed: Sequence[str]) -> tuple:
    if cfg.variants is None:
        return tuple(allowed)
    out = []
    for v in cfg.variants:
        name = VARIANT_NAMES.get(v, v)
        if name not in VARIANT_NAMES.values():
            raise ConfigError(f"unknown variant {v!r}")
        if name in allowed:
            out.append(name)
    return tuple(out)


def depth1_sets(scen: Scenario, cfg: RunConfig) -> dict:
    n = scen.n_hunters
    return {a: enumerate_depth1(n, a, cfg.include_base, cfg.base_kind) for a in range(n)}


def levelk_sets(scen: Scenario, cfg: RunConfig) -> dict:
    n = scen.n_hunters
    return {a: enumerate_levelk(n, a, cfg.k_max, cfg.base_kind) for a in range(n)}


def _union(*sets: Mapping) -> dict:
    out: dict = {}
    for s in sets:
        for a, hs in s.items():
            seen = list(out.get(a, HypothesisSet(a, tuple(hs))).hypotheses)
            seen += [h for h in hs if h not in seen]
            out[a] = HypothesisSet(a, tuple(seen))
    return out


def _priors(sets: Mapping, cfg: RunConfig) -> dict | None:
    if cfg.prior is None:
        return None
    for a, hs in sets.items():
        if len(cfg.prior) != len(hs):
            raise ConfigError(f"prior has {len(cfg.prior)} weights but hunter {a} has {len(hs)} hypotheses")
    return {a: cfg.prior for a in sets}


def team_records(scen: Scenario, cfg: RunConfig, cache: ChoiceCache | None = None) -> list[Record]:
    """Pairwise team probabilities at each elicitation step."""
    variants = _variants(cfg, TEAM_VARIANTS + (LEVEL_K,))
    scen = cfg.apply(scen)
    trace = scen.replay()
    cache = cache or ChoiceCache(cfg.planner_cfg(scen))
    out = []
    pairs = list(itertools.combinations(range(scen.n_hunters), 2))
    families = []
    if BMA_CTH in variants or ML_CTH in variants:
        families.append((depth1_sets(scen, cfg), [v for v in (BMA_CTH, ML_CTH) if v in variants], _priors))
    if LEVEL_K in variants:
        families.append((levelk_sets(scen, cfg), [LEVEL_K], lambda s, c: None))
    if not families or not scen.elicitation:
        return out
    trace = _prefix(trace, max(scen.elicitation))
    _prime(cache, trace, [f[0] for f in families], range(len(trace)))
    for sets, names, prior_fn in families:
        inf = infer_trace(trace, sets, cfg.team_beta, cache.cfg, prior_fn(sets, cfg), cache, validate=False)
        for k in scen.elicitation:
            for i, j in pairs:
                pi, pj = inf.posteriors[i][k], inf.posteriors[j][k]
                key = pair_key(scen.hunter_ids[i], scen.hunter_ids[j])
                for v in names:
                    mode = ML if v == ML_CTH else BMA
                    val = team_probability(pi, pj, i, j, cfg.team_rule, mode)
                    out.append(Record(scen.id, k, TEAM_PROB, key, v, float(val)))
    return out


def _prefix(trace: ObservationTrace, k: int) -> ObservationTrace:
    """The first ``k`` steps of a trace."""
    if k >= len(trace):
        return trace
    return ObservationTrace(trace.game, trace.states[:k], trace.joint_actions[:k], trace.states[k])


def _prime(cache: ChoiceCache, trace: ObservationTrace, families: Sequence[Mapping], steps, extra=()) -> None:
    """Compile every needed hypothesis at each state in one pass per state."""
    union = _union(*families)
    idx = sorted(set(steps) | set(extra))
    states = list(trace.states) + [trace.final]
    for k in idx:
        cache.choices(trace.game, states[k], union)


def action_records(scen: Scenario, cfg: RunConfig, cache: ChoiceCache | None = None) -> list[Record]:
    """Next-action distributions at each prediction step."""
    variants = _variants(cfg, ACTION_VARIANTS)
    scen = cfg.apply(scen)
    trace = scen.replay()
    cache = cache or ChoiceCache(cfg.planner_cfg(scen))
    steps = scen.prediction_steps
    if not steps or not variants:
        return []
    families = []
    if BMA_CTH in variants or ML_CTH in variants:
        families.append((depth1_sets(scen, cfg), [v for v in (BMA_CTH, ML_CTH) if v in variants], True))
    if LEVEL_K in variants:
        families.append((levelk_sets(scen, cfg), [LEVEL_K], False))
    trace = _prefix(trace, max(steps))
    _prime(cache, trace, [f[0] for f in families], range(len(trace)), steps)
    states = list(trace.states) + [trace.final]
    out = []
    for sets, names, use_prior in families:
        priors = _priors(sets, cfg) if use_prior else None
        inf = infer_trace(trace, sets, cfg.predict_beta, cache.cfg, priors, cache, validate=False)
        for k in steps:
            choices = cache.choices(trace.game, states[k], sets)
            for a in sets:
                hid = scen.hunter_ids[a]
                for v in names:
                    mode = ML if v == ML_CTH else BMA
                    dist = predict_distribution(inf.posteriors[a][k], choices[a], cfg.predict_beta, mode)
                    for m, p in dist.items():
                        out.append(Record(scen.id, k, ACTION_PROB, action_key(hid, m), v, float(min(max(p, 0.0), 1.0))))
    return out


def _scenario(s) -> Scenario:
    return s if isinstance(s, Scenario) else load_scenario(s)


def _work(args):
    task, scen, cfg = args
    scen = _scenario(scen)
    try:
        if task == TEAM_PROB:
            return team_records(scen, cfg)
        return action_records(scen, cfg)
    except ValidationError:
        raise
    except Exception as e:  # add scenario context, keep the type
        e.args = (f"scenario {scen.id}: {e}",) + e.args[1:]
        raise


def _run(task: str, scenarios: Sequence, cfg: RunConfig) -> ResultTable:
    items = [_scenario(s) for s in scenarios]
    ids = [s.id for s in items]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate scenario ids in {ids}")
    jobs = [(task, s, cfg) for s in items]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            parts = list(pool.map(_work, jobs))
    else:
        parts = [_work(j) for j in jobs]
    return ResultTable(r for part in parts for r in part)


def run_team_inference(scenarios: Sequence, cfg: RunConfig = RunConfig()) -> ResultTable:
    """Team probabilities for every scenario x elicitation step x hunter pair x variant."""
    return _run(TEAM_PROB, scenarios, cfg)


def run_action_prediction(scenarios: Sequence, cfg: RunConfig = RunConfig()) -> ResultTable:
    """Action probabilities for every scenario x prediction step x hunter x legal action x variant."""
    return _run(ACTION_PROB, scenarios, cfg)


def check_complete(results: ResultTable, scenarios: Sequence[Scenario]) -> list[str]:
    """Missing ``(scenario, step, kind, key, variant)`` cells, as strings."""
    have = {(r.scenario, r.step, r.kind, r.key, r.variant) for r in results}
    variants = {(r.kind, r.variant) for r in results}
    missing = []
    for scen in scenarios:
        states = scen.states()
        for kind, v in sorted(variants):
            if kind == TEAM_PROB:
                for k in scen.elicitation:
                    for i, j in itertools.combinations(scen.hunter_ids, 2):
                        if (scen.id, k, kind, pair_key(i, j), v) not in have:
                            missing.append(f"{scen.id} step {k} {pair_key(i, j)} {v}")
            else:
                for k in scen.prediction_steps:
                    w = states[k].world
                    for a, hid in enumerate(scen.hunter_ids):
                        for m in legal_moves(w, a):
                            if (scen.id, k, kind, action_key(hid, m), v) not in have:
                                missing.append(f"{scen.id} step {k} {action_key(hid, m)} {v}")
    return missing


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson correlation, or ``None`` when either vector has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"vectors must be 1-d and equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.fsum(dx * dx), math.fsum(dy * dy)
    if sx == 0.0 or sy == 0.0:
        return None
    r = math.fsum(dx * dy) / math.sqrt(sx * sy)
    return max(-1.0, min(1.0, r))


def rmse(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size == 0:
        raise ValidationError(f"vectors must be non-empty and equal length, got {x.shape} and {y.shape}")
    return math.sqrt(math.fsum((x - y) ** 2) / x.size)


@dataclass(frozen=True)
class MetricRow:
    kind: str
    variant: str
    scope: str  # "all" or a scenario id
    n: int
    r: float | None
    rmse: float


@dataclass
class MetricsReport:
    rows: list

    def get(self, kind: str, variant: str, scope: str = "all") -> MetricRow:
        for row in self.rows:
            if (row.kind, row.variant, row.scope) == (kind, variant, scope):
                return row
        raise KeyError((kind, variant, scope))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("kind", "variant", "scope", "n", "r", "rmse"))
        for row in self.rows:
            w.writerow((row.kind, row.variant, row.scope, row.n, "undefined" if row.r is None else format(row.r, ".17g"), format(row.rmse, ".17g")))
        return buf.getvalue()

    def to_text(self) -> str:
        lines = []
        for row in self.rows:
            r = "R undefined (zero variance)" if row.r is None else f"R = {row.r:.4f}"
            lines.append(f"{row.kind:12s} {row.variant:8s} {row.scope:10s} n={row.n:<4d} {r}  RMSE = {row.rmse:.4f}")
        return "\n".join(lines) + "\n"


def reference_table(scenarios: Sequence[Scenario]) -> dict:
    """``{(scenario, step, kind, key): value}`` from the scenarios' reference blocks."""
    out = {}
    for scen in scenarios:
        refs = scen.references or {}
        for r in refs.get("team", []):
            a, b = r["pair"]
            if scen.hunter_index(a) > scen.hunter_index(b):
                a, b = b, a
            out[(scen.id, r["step"], TEAM_PROB, pair_key(a, b))] = float(r["value"])
        for r in refs.get("actions", []):
            for m, p in r["probs"].items():
                out[(scen.id, r["step"], ACTION_PROB, action_key(r["hunter"], Move.parse(m)))] = float(p)
    return out


def evaluate(results: ResultTable, scenarios: Sequence[Scenario]) -> MetricsReport:
    """Pearson R and RMSE of every (kind, variant), overall and per scenario."""
    refs = reference_table(scenarios)
    gaps = [f"{r.scenario} step {r.step} {r.kind} {r.key}" for r in results if (r.scenario, r.step, r.kind, r.key) not in refs]
    if gaps:
        shown = "; ".join(sorted(set(gaps))[:20])
        more = "" if len(set(gaps)) <= 20 else f" (and {len(set(gaps)) - 20} more)"
        raise ValidationError(f"missing reference judgments for {len(set(gaps))} cells: {shown}{more}")
    groups: dict = {}
    for r in results:
        ref = refs[(r.scenario, r.step, r.kind, r.key)]
        for scope in ("all", r.scenario):
            groups.setdefault((r.kind, r.variant, scope), []).append((r.value, ref))
    rows = []
    for (kind, variant, scope), pairs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] != "all", kv[0][2])):
        m = [p[0] for p in pairs]
        h = [p[1] for p in pairs]
        rows.append(MetricRow(kind, variant, scope, len(pairs), pearson(m, h), rmse(m, h)))
    return MetricsReport(rows)


def references_from_results(results: ResultTable, variant: str = BMA_CTH) -> dict:
    """Reference blocks (one per scenario) copying a variant's model output."""
    out: dict = {}
    for r in results.select(variant=variant):
        block = out.setdefault(r.scenario, {"team": [], "actions": []})
        if r.kind == TEAM_PROB:
            block["team"].append({"step": r.step, "pair": r.key.split("-"), "value": r.value})
        else:
            hunter, move = r.key.split(":")
            acts = block["actions"]
            if not acts or acts[-1]["step"] != r.step or acts[-1]["hunter"] != hunter:
                acts.append({"step": r.step, "hunter": hunter, "probs": {}})
            acts[-1]["probs"][move] = r.value
    return out


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def emit_plot_data(results: ResultTable, out_dir: str | Path, scenarios: Sequence[str] | None = None) -> list[Path]:
    """Write ``<scenario>.csv`` (step, kind, key, variant, value) per scenario."""
    if not len(results):
        raise ValidationError("no results to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for sid in scenarios or results.scenarios():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("step", "kind", "key", "variant", "value"))
        for r in results.select(scenario=sid):
            w.writerow((r.step, r.kind, r.key, r.variant, format(r.value, ".12g")))
        p = out_dir / f"{sid}.csv"
        p.write_text(buf.getvalue(), encoding="utf-8", newline="")
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass
class Simulation:
    trace: ObservationTrace
    rewards: tuple
    truncated: bool
    stag_moves: list = field(default_factory=list)


def _policy_source(spec, agent: int) -> object:
    if isinstance(spec, str):
        if spec in (UNIFORM, GREEDY):
            return Base(agent, spec)
        return parse(spec)
    return spec


def simulate(scen: Scenario, policies: Mapping, seed: int = 0, max_steps: int | None = None, cfg: RunConfig = RunConfig()) -> Simulation:
    """Sample an episode from the scenario's start with the given per-hunter policies.

    ``policies`` maps hunter index to a CTH node (or its text), ``"uniform"``,
    ``"greedy"``, or a callable ``state -> {move: prob}``. CTH hunters
    replan at every state (receding horizon) and play their tie-broken
    policy. Stag flight is sampled from the same random stream.
    """
    n = scen.n_hunters
    if set(policies) != set(range(n)):
        raise ConfigError(f"policies must cover hunters 0..{n - 1}")
    scen = cfg.apply(scen)
    max_steps = scen.horizon if max_steps is None else min(max_steps, scen.horizon)
    pcfg = cfg.planner_cfg(scen)
    rng = np.random.default_rng(seed)
    game = scen.episode_game()
    srcs = {a: _policy_source(p, a) for a, p in policies.items()}
    nodes = {a: s for a, s in srcs.items() if not callable(s)}
    cache = ChoiceCache(pcfg)
    s = game.initial_state
    states, joints, stag_moves = [], [], []
    total = np.zeros(n)
    for _ in range(max_steps):
        if s.world.terminal:
            break
        choice = cache.choices(game, s, {a: HypothesisSet(a, (nodes[a],)) for a in nodes}) if nodes else {}
        joint = []
        for a in range(n):
            if a in nodes:
                c = choice[a][0]
                acts, p = c.actions, c.policy
            else:
                d = srcs[a](s)
                acts = tuple(sorted(d))
                p = np.array([d[m] for m in acts])
            joint.append(acts[int(rng.choice(len(acts), p=p / p.sum()))])
        joint = tuple(joint)
        nxt, r = game.sample_transition(s, joint, rng)
        stag_moves.append(
            [next(m for m in Move if (c0[0] + m.delta[0], c0[1] + m.delta[1]) == c1) for (c0, _), (c1, _) in zip(s.world.stags, nxt.world.stags)]
        )
        states.append(s)
        joints.append(joint)
        total += r
        s = nxt
    trace = ObservationTrace(game, states, joints, s)
    return Simulation(trace, tuple(float(x) for x in total), not s.world.terminal, stag_moves)


def simulation_scenario(scen: Scenario, sim: Simulation, new_id: str | None = None) -> Scenario:
    """A copy of ``scen`` whose trajectory is the simulated one (stag moves explicit)."""
    d = scenario_to_dict(replace(scen, trajectory=()))
    d["id"] = new_id or f"{scen.id}-sim"
    d["trajectory"] = [
        {"hunters": {hid: m.name.lower() for hid, m in zip(scen.hunter_ids, joint)}, "stags": [m.name.lower() for m in sm]}
        for joint, sm in zip(sim.trace.joint_actions, sim.stag_moves)
    ]
    n = len(d["trajectory"])
    d["elicitation"] = [k for k in scen.elicitation if k <= n]
    d.pop("references", None)
    states_ok = scenario_from_dict({**d, "prediction_steps": []}, d["id"]).states()
    d["prediction_steps"] = [k for k in scen.prediction_steps if k <= n and not states_ok[k].world.terminal]
    return scenario_from_dict(d, d["id"])
