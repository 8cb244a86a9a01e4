from __future__ import annotations

from collections import defaultdict
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import naive_pearson, naive_rmse

from cth.errors import ConfigError, ValidationError
from cth.experiments import (
    BMA_CTH,
    LEVEL_K,
    ML_CTH,
    TEAM_PROB,
    Record,
    ResultTable,
    RunConfig,
    check_complete,
    emit_plot_data,
    evaluate,
    pearson,
    references_from_results,
    rmse,
    run_action_prediction,
    run_team_inference,
    simulate,
    simulation_scenario,
)
from cth.hierarchy import JP
from cth.scenario import scenario_from_dict
from cth.staghunt import Move


def tiny_scenario(**changes):
    d = {
        "schema_version": 1,
        "id": "tiny",
        "grid": {"width": 3, "height": 3, "walls": []},
        "hunters": [{"id": "A", "start": [1, 0]}, {"id": "B", "start": [0, 1]}],
        "stags": [[0, 0]],
        "hares": [[2, 2]],
        "horizon": 3,
        "trajectory": [],
        "elicitation": [],
    }
    d.update(changes)
    return scenario_from_dict(d)


def table(values, kind=TEAM_PROB, variant=BMA_CTH) -> ResultTable:
    return ResultTable(Record("s", k + 1, kind, "A-B", variant, v) for k, v in enumerate(values))


def scen_with_refs(refs):
    traj = [{"hunters": {"A": "stay", "B": "stay"}}] * len(refs)
    team = [{"step": k + 1, "pair": ["A", "B"], "value": v} for k, v in enumerate(refs)]
    return tiny_scenario(
        id="s",
        hares=[],
        stags=[[2, 2]],
        trajectory=traj,
        elicitation=list(range(1, len(refs) + 1)),
        prediction_steps=[],
        references={"team": team},
        horizon=max(3, len(refs)),
    )


class TestSimulate:
    def test_uniform_hunters_are_reproducible(self, fixtures):
        scen = fixtures["e"]
        pol = {0: "uniform", 1: "uniform", 2: "uniform"}
        a = simulate(scen, pol, seed=11)
        b = simulate(scen, pol, seed=11)
        assert a.trace.joint_actions == b.trace.joint_actions
        assert a.trace.states == b.trace.states and a.rewards == b.rewards

    def test_joint_planners_take_a_cornered_stag(self):
        scen = tiny_scenario()
        team = JP((0, 1))
        sim = simulate(scen, {0: team, 1: team}, seed=0)
        assert len(sim.trace) == 1
        assert sum(sim.rewards) == pytest.approx(20.0, abs=1e-12)
        assert not sim.truncated

    def test_greedy_hunter_next_to_a_hare(self):
        scen = tiny_scenario(hunters=[{"id": "A", "start": [2, 1]}, {"id": "B", "start": [0, 2]}], stags=[])
        sim = simulate(scen, {0: "greedy", 1: "uniform"}, seed=3)
        assert len(sim.trace) == 1 and sim.rewards[0] == 1.0

    def test_truncation_is_a_flag(self):
        scen = tiny_scenario(hunters=[{"id": "A", "start": [0, 2]}, {"id": "B", "start": [1, 2]}], stags=[], hares=[[2, 0]], horizon=8)
        sim = simulate(scen, {0: "uniform", 1: "uniform"}, seed=0, max_steps=1)
        assert sim.truncated and len(sim.trace) == 1

    def test_policies_must_cover_every_hunter(self):
        with pytest.raises(ConfigError):
            simulate(tiny_scenario(), {0: "uniform"})

    def test_callable_policy_and_saved_scenario(self, fixtures):
        scen = fixtures["a"]
        sim = simulate(scen, {0: lambda s: {Move.STAY: 1.0}, 1: "greedy", 2: "BR(C; BASE(A), BASE(B))"}, seed=2, max_steps=3)
        assert all(j[0] == Move.STAY for j in sim.trace.joint_actions)
        saved = simulation_scenario(scen, sim, "a-sim")
        assert saved.id == "a-sim"
        assert saved.states() == list(sim.trace.states) + [sim.trace.final]


class TestTeamInference:
    def test_three_scenarios_give_27_records_per_variant(self, fixtures):
        res = run_team_inference([fixtures[k] for k in "abc"], RunConfig())
        for v in (BMA_CTH, ML_CTH, LEVEL_K):
            assert len(res.select(variant=v)) == 27
        assert check_complete(res, [fixtures[k] for k in "abc"]) == []

    def test_full_suite_is_complete(self, team_results, fixtures):
        assert len(team_results) == 9 * 3 * 3 * 3
        assert check_complete(team_results, list(fixtures.values())) == []

    def test_independent_fixture_ends_low(self, team_results):
        for r in team_results.select(scenario="e", step=3, variant=BMA_CTH):
            assert r.value < 0.1, r

    @pytest.mark.parametrize("sid", ["g", "i"])
    def test_full_team_fixture_ends_high(self, team_results, sid):
        for r in team_results.select(scenario=sid, step=3, variant=BMA_CTH):
            assert r.value > 0.9, r

    def test_ml_values_are_binary(self, team_results):
        assert {r.value for r in team_results.select(variant=ML_CTH)} <= {0.0, 1.0}

    def test_variant_filter(self, fixtures):
        res = run_team_inference([fixtures["a"]], RunConfig(variants=("ml",)))
        assert {r.variant for r in res} == {ML_CTH}
        with pytest.raises(ConfigError):
            run_team_inference([fixtures["a"]], RunConfig(variants=("vote",)))

    def test_prior_length_is_checked(self, fixtures):
        with pytest.raises(ConfigError):
            run_team_inference([fixtures["a"]], RunConfig(prior=(1.0, 1.0)))

    def test_cooperative_prior_raises_team_mass(self, fixtures):
        flat = run_team_inference([fixtures["b"]], RunConfig(variants=("bma",)))
        coop = run_team_inference([fixtures["b"]], RunConfig(variants=("bma",), prior=(1, 1, 3, 3, 3)))
        assert coop.value("b", 1, TEAM_PROB, "A-B", BMA_CTH) > flat.value("b", 1, TEAM_PROB, "A-B", BMA_CTH)


class TestActionPrediction:
    def test_216_cells_per_variant(self, action_results):
        for v in (BMA_CTH, ML_CTH, LEVEL_K):
            assert len(action_results.select(variant=v)) == 216

    def test_distributions_sum_to_one(self, action_results):
        sums = defaultdict(float)
        for r in action_results:
            sums[(r.scenario, r.step, r.key.split(":")[0], r.variant)] += r.value
        assert len(sums) == 9 * 2 * 3 * 3 - 3 * 3 * 2
        for key, total in sums.items():
            assert abs(total - 1.0) <= 1e-12, key

    def test_ml_equals_bma_at_a_point_mass(self, fixtures):
        # An extreme prior collapses every posterior onto the first hypothesis.
        cfg = RunConfig(prior=(1.0, 0.0, 0.0, 0.0, 0.0), variants=("bma", "ml"))
        res = run_action_prediction([fixtures["c"]], cfg)
        for r in res.select(variant=BMA_CTH):
            assert res.value(r.scenario, r.step, r.kind, r.key, ML_CTH) == pytest.approx(r.value, abs=1e-15)

    def test_complete(self, action_results, fixtures):
        assert check_complete(action_results, list(fixtures.values())) == []


class TestMetrics:
    def test_identical_vectors(self):
        x = [0.1, 0.5, 0.9, 0.3]
        assert pearson(x, x) == pytest.approx(1.0, abs=1e-15)
        assert rmse(x, x) == 0.0

    def test_two_point_anticorrelation(self):
        assert pearson([0.0, 1.0], [1.0, 0.0]) == -1.0
        assert rmse([0.0, 1.0], [1.0, 0.0]) == 1.0

    def test_zero_variance_is_undefined(self):
        assert pearson([0.5, 0.5, 0.5], [0.1, 0.2, 0.3]) is None
        assert pearson([0.5], [0.1]) is None

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            pearson([1, 2], [1, 2, 3])
        with pytest.raises(ValidationError):
            rmse([], [])

    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 200))
    def test_matches_naive_two_pass(self, seed, n):
        rng = np.random.default_rng(seed)
        x, y = rng.random(n), rng.random(n)
        assert abs(pearson(x, y) - naive_pearson(list(x), list(y))) <= 1e-12
        assert abs(rmse(x, y) - naive_rmse(list(x), list(y))) <= 1e-12


class TestEvaluate:
    def test_self_references(self, team_results, fixtures):
        refs = references_from_results(team_results)
        scens = [replace(s, references=refs[s.id]) for s in fixtures.values()]
        report = evaluate(team_results.select(variant=BMA_CTH), scens)
        row = report.get(TEAM_PROB, BMA_CTH)
        assert row.n == 81 and row.r == pytest.approx(1.0, abs=1e-12) and row.rmse == 0.0

    def test_anticorrelated_pair(self):
        report = evaluate(table([0.0, 1.0]), [scen_with_refs([1.0, 0.0])])
        row = report.get(TEAM_PROB, BMA_CTH)
        assert row.r == -1.0 and row.rmse == 1.0
        assert report.get(TEAM_PROB, BMA_CTH, "s").n == 2

    def test_constant_model_reports_undefined(self):
        report = evaluate(table([0.5, 0.5, 0.5]), [scen_with_refs([0.1, 0.2, 0.9])])
        assert report.get(TEAM_PROB, BMA_CTH).r is None
        assert "R undefined (zero variance)" in report.to_text()
        assert ",undefined," in report.to_csv()

    def test_missing_references_list_the_gaps(self):
        with pytest.raises(ValidationError, match=r"missing reference judgments for 1 cells: s step 3 team_prob A-B"):
            evaluate(table([0.2, 0.4, 0.6]), [scen_with_refs([0.1, 0.2])])


class TestResultTable:
    def test_csv_round_trip(self, team_results):
        again = ResultTable.from_csv(team_results.to_csv())
        assert again.records == team_results.records
        assert again.to_csv() == team_results.to_csv()

    def test_out_of_range_values(self):
        with pytest.raises(ValidationError):
            table([1.5])
        with pytest.raises(ValidationError):
            table([float("nan")])

    def test_bad_csv(self):
        with pytest.raises(ValidationError, match="header"):
            ResultTable.from_csv("a,b\n")
        with pytest.raises(ValidationError, match="line 2"):
            ResultTable.from_csv("scenario,step,kind,key,variant,value\ns,x,team_prob,A-B,BMA-CTH,0.5\n")

    def test_records_are_sorted(self):
        recs = [Record("b", 1, TEAM_PROB, "A-B", BMA_CTH, 0.2), Record("a", 2, TEAM_PROB, "A-B", BMA_CTH, 0.1)]
        assert [r.scenario for r in ResultTable(recs)] == ["a", "b"]

    def test_rerun_is_identical(self, fixtures, team_results):
        again = run_team_inference(list(fixtures.values()), RunConfig())
        assert again.to_csv() == team_results.to_csv()


class TestEmitPlotData:
    def test_rows_coverage_and_round_trip(self, tmp_path, team_results):
        paths = emit_plot_data(team_results, tmp_path)
        assert sorted(p.stem for p in paths) == list("abcdefghi")
        for p in paths:
            lines = p.read_text().splitlines()
            assert lines[0] == "step,kind,key,variant,value"
            rows = [line.split(",") for line in lines[1:]]
            per = defaultdict(int)
            for step, kind, key, variant, value in rows:
                per[(key, variant)] += 1
                ref = team_results.value(p.stem, int(step), kind, key, variant)
                assert float(value) == pytest.approx(ref, rel=1e-11, abs=1e-12)
            assert set(per.values()) == {3}

    def test_empty_results(self, tmp_path):
        with pytest.raises(ValidationError):
            emit_plot_data(ResultTable(), tmp_path)

    def test_action_plot_data(self, tmp_path, action_results):
        paths = emit_plot_data(action_results, tmp_path, ["a"])
        assert [p.name for p in paths] == ["a.csv"]
        assert len(paths[0].read_text().splitlines()) == 1 + len(action_results.select(scenario="a"))
