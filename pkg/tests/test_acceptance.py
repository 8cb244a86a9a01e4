"""Acceptance criteria 1 to 9. Each test prints one PASS/FAIL line."""

from __future__ import annotations

import dataclasses
import time

import numpy as np
import pytest
from oracles import (
    brute_replace_dist,
    naive_pearson,
    naive_rmse,
    random_policy,
    toy_game,
    toy_likelihood,
)

from cth.experiments import (
    ACTION_PROB,
    BMA_CTH,
    LEVEL_K,
    TEAM_PROB,
    Record,
    ResultTable,
    RunConfig,
    action_key,
    evaluate,
    pair_key,
    references_from_results,
    run_action_prediction,
    run_team_inference,
)
from cth.game import random_game, replace
from cth.hierarchy import enumerate_depth1
from cth.inference import (
    ObservationTrace,
    Posterior,
    bayes_update,
    infer_trace,
    luce_distribution,
)
from cth.planner import (
    UCT,
    PlannerConfig,
    bellman_residual,
    best_response,
    exact_q,
    joint_plan,
    uct_q,
)
from cth.scenario import scenario_from_dict
from cth.staghunt import GridWorld, HuntState, StagHuntGame


@pytest.fixture
def verdict(capsys):
    """``verdict(n, title, failures, detail)`` prints the line, then fails on any failure."""

    def report(n: int, title: str, failures: list, detail: str = "") -> None:
        status = "PASS" if not failures else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {n}] {status}: {title}{' | ' + detail if detail else ''}")
        assert not failures, failures[:10]

    return report


def test_criterion_1_replace(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures, entries = [], 0
    for g in range(50):
        n_agents = int(rng.integers(2, 4))
        game = random_game(rng, n_agents=n_agents, n_states=int(rng.integers(4, 21)), n_actions=int(rng.integers(2, 5)))
        agent = int(rng.integers(n_agents))
        for deterministic in (False, True):
            fixed = {agent: random_policy(game, agent, rng, deterministic)}
            reduced = replace(game, fixed)
            for s in game.states:
                for joint in reduced.joint_actions(s):
                    got = reduced.transition_dist(s, joint)
                    if deterministic:
                        full = list(joint)
                        (a,) = fixed[agent][s]
                        full.insert(agent, a)
                        want = {k: v for k, v in game.transition_dist(s, tuple(full)).items() if v > 0}
                        if got != want:
                            failures.append(("indicator", g, s, joint))
                    else:
                        want = brute_replace_dist(game, s, joint, fixed)
                        for k in set(got) | set(want):
                            if abs(got.get(k, 0.0) - want.get(k, 0.0)) > 1e-12:
                                failures.append(("marginal", g, s, joint, k))
                    entries += 1
    elapsed = time.perf_counter() - start
    if elapsed >= 10:
        failures.append(f"runtime {elapsed:.1f}s")
    verdict(1, "REPLACE equals brute-force marginalization and the indicator form", failures, f"{entries} rows in {elapsed:.2f}s")


def test_criterion_2_bellman_and_oracle(verdict):
    rng = np.random.default_rng(7)
    failures, worst = [], 0.0
    for g in range(40):
        game = random_game(rng, n_agents=int(rng.integers(1, 4)), n_states=12, n_actions=3, discount=float(rng.uniform(0.5, 1.0)))
        res = bellman_residual(game, exact_q(game, 0, int(rng.integers(1, 7))))
        worst = max(worst, res)
        if res >= 1e-9:
            failures.append(("residual", g, res))
    world = GridWorld.create(4, 4, hunters=[(0, 0), (3, 3)], stags=[(1, 2)], hares=[(3, 0)])
    hunt = StagHuntGame(world, horizon=4)
    res = bellman_residual(hunt, exact_q(hunt, hunt.initial_state, 4))
    worst = max(worst, res)
    if res >= 1e-9:
        failures.append(("residual", "stag hunt", res))
    gap = 0.0
    for g in range(40):
        game = random_game(rng, n_agents=1, n_states=12, n_actions=4)
        cfg = PlannerConfig(horizon=int(rng.integers(1, 7)))
        br, jp = best_response(game, cfg, 0), joint_plan(game, cfg, 0)
        live = np.isfinite(br.q)
        d = float(np.max(np.abs(br.q[live] - jp.q[live]), initial=0.0))
        gap = max(gap, d)
        if d > 1e-9 or not np.array_equal(np.isfinite(br.q), np.isfinite(jp.q)):
            failures.append(("jp != br", g, d))
    verdict(2, "Bellman residual < 1e-9 and single-agent joint plan equals best response", failures, f"max residual {worst:.1e}, max |JP-BR| {gap:.1e}")


def test_criterion_3_uct_fidelity(verdict):
    start = time.perf_counter()
    hare = (2, 2)
    hits = total = 0
    for cell in [(x, y) for y in range(3) for x in range(3) if (x, y) != hare]:
        game = StagHuntGame(GridWorld.create(3, 3, hunters=[cell], hares=[hare]), horizon=5, discount=0.95)
        for t in range(5):
            state = HuntState(game.initial_state.world, t)
            exact = exact_q(game, state, 5).root_row()
            best = max(exact.values())
            argmax = {a for a, q in exact.items() if q >= best - 1e-6}
            for seed in range(5):
                cfg = PlannerConfig(mode=UCT, horizon=5, gamma=0.95, budget=10_000, exploration=1.4, seed=seed)
                est = uct_q(game, state, cfg).root_row()
                choice = max(est, key=est.get)
                hits += choice in argmax
                total += 1
    elapsed = time.perf_counter() - start
    rate = hits / total
    failures = [] if rate >= 0.95 and elapsed < 60 else [f"agreement {rate:.3f}, runtime {elapsed:.1f}s"]
    verdict(3, "UCT (budget 1e4) matches the exact argmax at >= 95% of states", failures, f"{hits}/{total} = {rate:.3f} in {elapsed:.1f}s")


def test_criterion_4_luce_limits(verdict):
    rng = np.random.default_rng(4)
    failures = []
    for _ in range(2000):
        k = int(rng.integers(2, 6))
        q = rng.normal(0, 10, size=k)
        if np.max(np.abs(luce_distribution(q, 0.0) - 1.0 / k)) > 1e-12:
            failures.append(("beta 0", q))
        gapped = rng.permutation(np.arange(k, dtype=float) * rng.uniform(1.0, 3.0))
        if luce_distribution(gapped, 50.0)[int(np.argmax(gapped))] < 1 - 1e-6:
            failures.append(("beta 50", gapped))
        beta, shift = float(rng.uniform(0, 50)), float(rng.uniform(-100, 100))
        if np.max(np.abs(luce_distribution(q + shift, beta) - luce_distribution(q, beta))) > 1e-12:
            failures.append(("shift", q, beta, shift))
    verdict(4, "Luce is uniform at beta 0, saturates at beta 50, and is shift invariant", failures, "2000 random rows")


def test_criterion_5_posterior_machinery(verdict):
    rng = np.random.default_rng(5)
    hs = enumerate_depth1(3, 0)
    failures = []
    for _ in range(500):
        liks = rng.uniform(1e-3, 1.0, size=(int(rng.integers(1, 20)), len(hs)))
        post = Posterior.prior(hs, rng.uniform(0.1, 1, len(hs)))
        batch = bayes_update(post, liks.prod(axis=0))
        for row in liks:
            post = bayes_update(post, row)
            if abs(post.probs.sum() - 1.0) > 1e-12:
                failures.append(("normalization", post.probs.sum()))
        if np.max(np.abs(post.probs - batch.probs)) > 1e-12:
            failures.append(("sequential vs batch", post.probs, batch.probs))
    game = toy_game()
    worst = 0.0
    for joints in [(("R", "L"), ("R", "R")), (("L", "R"), ("L", "L")), (("R", "R"), ("L", "R"))]:
        s1 = max(game.transition_dist("s0", joints[0]), key=game.transition_dist("s0", joints[0]).get)
        trace = ObservationTrace(game, ("s0", s1), joints)
        sets = {a: enumerate_depth1(2, a) for a in (0, 1)}
        for beta in (0.5, 1.0, 5.0):
            inf = infer_trace(trace, sets, beta, PlannerConfig(horizon=2))
            for agent in (0, 1):
                w = [
                    np.prod([toy_likelihood(game, agent, kind, s, h, j[agent], beta) for s, h, j in (("s0", 2, joints[0]), (s1, 1, joints[1]))])
                    for kind in ("base", "br", "jp")
                ]
                d = float(np.max(np.abs(inf.posteriors[agent][-1].probs - np.array(w) / sum(w))))
                worst = max(worst, d)
                if d > 1e-12:
                    failures.append(("hand-enumerated", joints, beta, agent, d))
    verdict(5, "sequential equals batch, posteriors normalized, engine equals hand-enumerated Bayes", failures, f"max toy gap {worst:.1e}")


@pytest.fixture(scope="module")
def timed_team_run(fixtures):
    start = time.perf_counter()
    res = run_team_inference(list(fixtures.values()), RunConfig())
    return res, time.perf_counter() - start


def test_criterion_6_fixture_patterns(verdict, fixtures, timed_team_run):
    res, elapsed = timed_team_run
    failures, notes = [], []

    def tp(scen, step, a, b):
        i, j = sorted((a, b), key=scen.hunter_index)
        return res.value(scen.id, step, TEAM_PROB, pair_key(i, j), BMA_CTH)

    for scen in fixtures.values():
        final = max(scen.elicitation)
        pairs = [(a, b) for k, a in enumerate(scen.hunter_ids) for b in scen.hunter_ids[k + 1 :]]
        kind = scen.structure["kind"]
        if kind == "pair":
            team = tuple(next(t for t in scen.structure["teams"] if len(t) == 2))
            for a, b in pairs:
                v = tp(scen, final, a, b)
                ok = v > 0.9 if {a, b} == set(team) else v < 0.2
                if not ok:
                    failures.append((scen.id, a, b, v))
        elif kind == "independent":
            failures += [(scen.id, a, b, tp(scen, final, a, b)) for a, b in pairs if not tp(scen, final, a, b) < 0.2]
        elif kind == "full":
            failures += [(scen.id, a, b, tp(scen, final, a, b)) for a, b in pairs if not tp(scen, final, a, b) > 0.8]
        rev = scen.structure.get("reversal")
        if rev:
            before, after = tp(scen, rev["step"] - 1, *rev["pair"]), tp(scen, rev["step"], *rev["pair"])
            notes.append(f"{scen.id} {pair_key(*rev['pair'])} {before:.3f}->{after:.3f}")
            if before - after <= 0.5:
                failures.append((scen.id, "reversal", before, after))
    if elapsed >= 300:
        failures.append(f"runtime {elapsed:.1f}s")
    verdict(6, "pair, independent, full-team and reversal patterns on the nine fixtures", failures, f"{'; '.join(notes)}; {elapsed:.1f}s")


def test_criterion_7_levelk_gap(verdict, fixtures, action_results):
    failures, checked = [], 0
    for scen in fixtures.values():
        for item in scen.structure.get("converging", []):
            k = item["step"]
            if k not in scen.prediction_steps:
                continue
            move = scen.trajectory[k].hunters[scen.hunter_index(item["hunter"])]
            key = action_key(item["hunter"], move)
            bma = action_results.value(scen.id, k, ACTION_PROB, key, BMA_CTH)
            lk = action_results.value(scen.id, k, ACTION_PROB, key, LEVEL_K)
            checked += 1
            if not (bma >= 0.5 and lk <= 0.5):
                failures.append((scen.id, k, key, bma, lk))
    if checked == 0:
        failures.append("no converging moves at prediction steps")
    verdict(7, "BMA-CTH >= 0.5 and Level-K <= 0.5 on observed stag-converging moves (beta 5)", failures, f"{checked} moves")


def _reference_scenario(refs):
    n = len(refs)
    return scenario_from_dict(
        {
            "schema_version": 1,
            "id": "m",
            "grid": {"width": 3, "height": 1, "walls": []},
            "hunters": [{"id": "A", "start": [0, 0]}, {"id": "B", "start": [2, 0]}],
            "horizon": n,
            "trajectory": [{"hunters": {"A": "stay", "B": "stay"}}] * n,
            "elicitation": list(range(1, n + 1)),
            "prediction_steps": [],
            "references": {"team": [{"step": k + 1, "pair": ["A", "B"], "value": float(v)} for k, v in enumerate(refs)]},
        }
    )


def test_criterion_8_metrics(verdict, team_results, fixtures):
    rng = np.random.default_rng(8)
    failures, worst = [], 0.0
    for _ in range(100):
        n = int(rng.integers(3, 40))
        model, human = rng.random(n), rng.random(n)
        table = ResultTable(Record("m", k + 1, TEAM_PROB, "A-B", BMA_CTH, float(v)) for k, v in enumerate(model))
        row = evaluate(table, [_reference_scenario(human)]).get(TEAM_PROB, BMA_CTH)
        dr = abs(row.r - naive_pearson(list(model), list(human)))
        de = abs(row.rmse - naive_rmse(list(model), list(human)))
        worst = max(worst, dr, de)
        if dr > 1e-12 or de > 1e-12:
            failures.append((n, dr, de))
    refs = references_from_results(team_results)
    scens = [dataclasses.replace(s, references=refs[s.id]) for s in fixtures.values()]
    self_row = evaluate(team_results.select(variant=BMA_CTH), scens).get(TEAM_PROB, BMA_CTH)
    if abs(self_row.r - 1.0) > 1e-12 or self_row.rmse != 0.0:
        failures.append(("self references", self_row))
    verdict(8, "evaluate matches naive Pearson/RMSE; self references give R=1, RMSE=0", failures, f"max gap {worst:.1e}; self R={self_row.r:.12f}")


def test_criterion_9_determinism(verdict, fixtures, team_results, action_results):
    scens = list(fixtures.values())
    failures = []
    for jobs in (1, 2):
        team = run_team_inference(scens, RunConfig(jobs=jobs)).to_csv().encode()
        actions = run_action_prediction(scens, RunConfig(jobs=jobs)).to_csv().encode()
        if team != team_results.to_csv().encode():
            failures.append(f"team CSV differs at jobs={jobs}")
        if actions != action_results.to_csv().encode():
            failures.append(f"action CSV differs at jobs={jobs}")
    verdict(9, "byte-identical result files across runs and job counts", failures, f"{len(team_results)} team + {len(action_results)} action records")
