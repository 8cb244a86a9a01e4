"""Command-line entry point: ``cth <subcommand> [options]``.

Every command that writes files also writes ``run-manifest.json`` next to
them, holding the full configuration (defaults included) and the SHA-256 of
each input so a run can be repeated exactly.

Exit codes: 0 success, 2 invalid input or configuration, 3 engine failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import ConfigError, CthError, ValidationError
from .experiments import (
    ACTION_PROB,
    TEAM_PROB,
    VARIANT_NAMES,
    ResultTable,
    RunConfig,
    check_complete,
    emit_plot_data,
    evaluate,
    references_from_results,
    run_action_prediction,
    run_team_inference,
    simulate,
    simulation_scenario,
)
from .game import UNIFORM
from .hierarchy import (
    BASE_KINDS,
    agent_name,
    enumerate_depth1,
    enumerate_levelk,
    to_text,
)
from .planner import EXACT, UCT
from .scenario import Scenario, builtin_scenarios, load_scenario, save_scenario

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ENGINE = 3

TEAM_FILE = "team_probs.csv"
ACTION_FILE = "action_probs.csv"
MANIFEST = "run-manifest.json"


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--seed", type=int, default=d(0), help="seed for UCT and simulation (default 0)")
    p.add_argument("--beta", type=float, default=d(None), help="rationality; default 1 for infer-teams, 5 for predict-actions")
    p.add_argument("--planner", choices=(EXACT, UCT), default=d(EXACT), help="planner (default exact)")
    p.add_argument("--budget", type=int, default=d(10_000), help="UCT simulations per decision (default 10000)")
    p.add_argument("--horizon", type=int, default=d(None), help="episode length; default: each scenario's own")
    p.add_argument("--gamma", type=float, default=d(None), help="discount; default: each scenario's own")
    p.add_argument("--prior", default=d("uniform"), help="'uniform' or comma-separated weights over the hypothesis list")
    p.add_argument(
        "--variant",
        action="append",
        choices=sorted(VARIANT_NAMES),
        default=d(None),
        help="model variant; repeat for several (default: all that apply)",
    )
    p.add_argument("--out", default=d("cth-out"), help="output directory (default ./cth-out)")
    p.add_argument("--jobs", type=int, default=d(1), help="worker processes across scenarios (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cth", description="Team-structure inference in the spatial stag hunt.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def scenarios_arg(p):
        p.add_argument("scenarios", nargs="*", help="scenario files or directories (default: the built-in set)")

    p = sub.add_parser("validate", parents=[common], help="check scenario files (schema, rules, replay)")
    scenarios_arg(p)

    p = sub.add_parser("enumerate-hypotheses", parents=[common], help="list one hunter's hypothesis space")
    p.add_argument("--agents", type=int, default=3, help="number of hunters (default 3)")
    p.add_argument("--agent", default="A", help="hunter letter (default A)")
    p.add_argument("--family", choices=("depth1", "levelk"), default="depth1")
    p.add_argument("--k-max", type=int, default=2, help="deepest level for --family levelk (default 2)")
    p.add_argument("--base", choices=BASE_KINDS, default=UNIFORM, help="leaf base policy (default uniform)")

    p = sub.add_parser("infer-teams", parents=[common], help="pairwise team probabilities at each elicitation step")
    scenarios_arg(p)

    p = sub.add_parser("predict-actions", parents=[common], help="next-action distributions at each prediction step")
    scenarios_arg(p)

    p = sub.add_parser("evaluate", parents=[common], help="Pearson R and RMSE against scenario references")
    p.add_argument("--results", action="append", required=True, help="result CSV (repeatable)")
    p.add_argument(
        "--references",
        action="append",
        default=None,
        help="result CSV whose values replace the scenarios' reference blocks, e.g. another run (repeatable)",
    )
    p.add_argument("--reference-variant", default="bma", help="variant read from --references (default bma)")
    scenarios_arg(p)

    p = sub.add_parser("emit-plots", parents=[common], help="split results into one plottable CSV per scenario")
    p.add_argument("--results", action="append", required=True, help="result CSV (repeatable)")

    p = sub.add_parser("simulate", parents=[common], help="sample an episode and save it as a scenario")
    p.add_argument("scenario", help="scenario file providing the layout")
    p.add_argument(
        "--policy",
        action="append",
        default=[],
        metavar="HUNTER=SPEC",
        help="per-hunter policy: a hierarchy such as 'JP(A,B; BASE(C))', 'uniform' or 'greedy' (default uniform)",
    )
    p.add_argument("--max-steps", type=int, default=None, help="stop after this many steps (default: the horizon)")
    p.add_argument("--id", default=None, help="id of the saved scenario (default <id>-sim<seed>)")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _scenario_paths(items) -> list[Path]:
    if not items:
        return builtin_scenarios()
    out = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            found = sorted(f for f in p.glob("*.json") if f.name != MANIFEST)
            if not found:
                raise ValidationError(f"{p}: no .json scenario files")
            out.extend(found)
        elif p.exists():
            out.append(p)
        else:
            raise ValidationError(f"{p}: no such file or directory")
    return out


def _prior(text: str):
    if text == "uniform":
        return None
    try:
        weights = tuple(float(w) for w in text.split(","))
    except ValueError:
        raise ConfigError(f"--prior must be 'uniform' or comma-separated numbers, got {text!r}") from None
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ConfigError("--prior weights must be non-negative with a positive sum")
    return weights


def _config(args, kind: str | None = None) -> RunConfig:
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    if args.budget < 1:
        raise ConfigError("--budget must be at least 1")
    if args.beta is not None and args.beta < 0:
        raise ConfigError("--beta must be non-negative")
    extra = {}
    if args.beta is not None:
        extra["team_beta" if kind == TEAM_PROB else "predict_beta"] = args.beta
    return RunConfig(
        planner=args.planner,
        horizon=args.horizon,
        gamma=args.gamma,
        budget=args.budget,
        seed=args.seed,
        prior=_prior(args.prior),
        variants=tuple(args.variant) if args.variant else None,
        jobs=args.jobs,
        **extra,
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, config: dict, inputs, outputs) -> None:
    """Record one command's settings; runs of other commands in ``out`` are kept."""
    path = out / MANIFEST
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        doc = {}
    if not isinstance(doc.get("runs"), dict):
        doc = {"runs": {}}
    doc.update(tool="cth", version=__version__)
    doc["runs"][command] = {
        "config": config,
        "inputs": [{"path": str(p), "sha256": _sha256(Path(p))} for p in inputs],
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    bad = 0
    for p in _scenario_paths(args.scenarios):
        try:
            scen = load_scenario(p)
        except ValidationError as e:
            print(f"error: {e}", file=sys.stderr)
            bad += 1
            continue
        print(f"ok {p}: {scen.id}, {scen.n_hunters} hunters, {len(scen.trajectory)} steps")
    return EXIT_INVALID if bad else EXIT_OK


def cmd_enumerate(args) -> int:
    agent = args.agent.strip().upper()
    if len(agent) != 1 or not "A" <= agent < agent_name(args.agents):
        raise ConfigError(f"--agent must be a letter among the first {args.agents} hunters")
    idx = ord(agent) - ord("A")
    if args.family == "depth1":
        hs = enumerate_depth1(args.agents, idx, base_kind=args.base)
    else:
        hs = enumerate_levelk(args.agents, idx, args.k_max, args.base)
    for k, h in enumerate(hs):
        print(f"{k}\t{to_text(h)}")
    return EXIT_OK


def _run_table(args, kind: str) -> int:
    paths = _scenario_paths(args.scenarios)
    scens = [load_scenario(p) for p in paths]
    cfg = _config(args, kind)
    runner = run_team_inference if kind == TEAM_PROB else run_action_prediction
    results = runner(scens, cfg)
    missing = check_complete(results, [cfg.apply(s) for s in scens])
    if missing:
        raise CthError(f"incomplete results: {missing[:5]}")
    out = _outdir(args)
    target = out / (TEAM_FILE if kind == TEAM_PROB else ACTION_FILE)
    results.write(target)
    _write_manifest(out, args.command, cfg.manifest(), paths, [target])
    print(f"wrote {len(results)} records for {len(scens)} scenarios to {target}")
    return EXIT_OK


def _read_results(paths) -> ResultTable:
    table = ResultTable()
    for p in paths:
        table = table + ResultTable.read(p)
    return table


def cmd_evaluate(args) -> int:
    paths = _scenario_paths(args.scenarios)
    scens = [load_scenario(p) for p in paths]
    results = _read_results(args.results)
    inputs = [*paths, *args.results]
    if args.references:
        variant = VARIANT_NAMES.get(args.reference_variant, args.reference_variant)
        refs = references_from_results(_read_results(args.references), variant)
        if not refs:
            raise ValidationError(f"no {variant} records in {', '.join(args.references)}")
        scens = [replace(s, references=refs.get(s.id, s.references)) for s in scens]
        inputs.extend(args.references)
    report = evaluate(results, scens)
    out = _outdir(args)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8", newline="")
    (out / "metrics.txt").write_text(report.to_text(), encoding="utf-8", newline="")
    settings = {"results": list(args.results), "references": args.references, "reference_variant": args.reference_variant}
    _write_manifest(out, args.command, settings, inputs, [out / "metrics.csv", out / "metrics.txt"])
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_emit_plots(args) -> int:
    results = _read_results(args.results)
    out = _outdir(args)
    written = emit_plot_data(results, out)
    _write_manifest(out, args.command, {"results": list(args.results)}, args.results, written)
    print(f"wrote {len(written)} plot files to {out}")
    return EXIT_OK


def _policies(scen: Scenario, specs) -> dict:
    out = {a: "uniform" for a in range(scen.n_hunters)}
    for item in specs:
        hid, sep, spec = item.partition("=")
        if not sep or not spec.strip():
            raise ConfigError(f"--policy expects HUNTER=SPEC, got {item!r}")
        out[scen.hunter_index(hid.strip())] = spec.strip()
    return out


def cmd_simulate(args) -> int:
    path = Path(args.scenario)
    scen = load_scenario(path)
    cfg = _config(args)
    policies = _policies(scen, args.policy)
    sim = simulate(scen, policies, seed=args.seed, max_steps=args.max_steps, cfg=cfg)
    new = simulation_scenario(cfg.apply(scen), sim, args.id or f"{scen.id}-sim{args.seed}")
    out = _outdir(args)
    target = out / f"{new.id}.json"
    save_scenario(new, target)
    manifest = cfg.manifest() | {"policies": {scen.hunter_ids[a]: str(p) for a, p in policies.items()}, "max_steps": args.max_steps}
    _write_manifest(out, args.command, manifest, [path], [target])
    status = "truncated" if sim.truncated else "ended with a capture"
    rewards = ", ".join(f"{h}={r:g}" for h, r in zip(scen.hunter_ids, sim.rewards))
    print(f"{len(sim.trace)} steps, {status}; rewards {rewards}; saved {target}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "enumerate-hypotheses": cmd_enumerate,
    "infer-teams": lambda a: _run_table(a, TEAM_PROB),
    "predict-actions": lambda a: _run_table(a, ACTION_PROB),
    "evaluate": cmd_evaluate,
    "emit-plots": cmd_emit_plots,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except CthError as e:
        print(f"engine error: {e}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
