from __future__ import annotations

import copy
import json

import jsonschema
import pytest

from cth.errors import ValidationError
from cth.scenario import (
    builtin_scenarios,
    dump_scenario,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    schema,
)
from cth.staghunt import Move

MINIMAL = {
    "schema_version": 1,
    "id": "mini",
    "grid": {"width": 3, "height": 3, "walls": []},
    "hunters": [{"id": "A", "start": [0, 0]}, {"id": "B", "start": [2, 0]}],
    "stags": [[1, 2]],
    "hares": [[2, 2]],
    "horizon": 4,
    "trajectory": [{"hunters": {"A": "north", "B": "stay"}}],
}


def doc(**changes) -> dict:
    d = copy.deepcopy(MINIMAL)
    d.update(changes)
    return d


def write(tmp_path, data, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data) if isinstance(data, dict) else data)
    return p


class TestLoadScenario:
    def test_minimal_scenario_loads(self, tmp_path):
        scen = load_scenario(write(tmp_path, MINIMAL))
        assert scen.id == "mini" and scen.hunter_ids == ("A", "B")
        assert scen.world.hunters == ((0, 0), (2, 0))
        assert scen.trajectory[0].hunters == (Move.NORTH, Move.STAY)
        assert scen.elicitation == (1,)
        trace = scen.replay()
        assert len(trace) == 1 and trace.final.world.hunters == ((0, 1), (2, 0))

    def test_stag_on_a_wall_names_the_cell(self):
        with pytest.raises(ValidationError, match=r"stag 0 starts on wall \(1,2\)"):
            scenario_from_dict(doc(grid={"width": 3, "height": 3, "walls": [[1, 2]]}))

    def test_hunter_out_of_bounds(self):
        d = doc()
        d["hunters"][1]["start"] = [3, 0]
        with pytest.raises(ValidationError, match=r"hunter B starts out of bounds at \(3,0\)"):
            scenario_from_dict(d)

    def test_out_of_bounds_move_fails_at_its_step(self):
        d = doc(trajectory=[{"hunters": {"A": "north", "B": "stay"}}, {"hunters": {"A": "stay", "B": "east"}}])
        with pytest.raises(ValidationError, match=r"step 2: hunter B cannot move East from \(2, 0\); \(3, 0\) is out of bounds"):
            scenario_from_dict(d)

    def test_move_into_a_wall(self):
        d = doc(grid={"width": 3, "height": 3, "walls": [[0, 1]]})
        with pytest.raises(ValidationError, match=r"step 1: .* is a wall"):
            scenario_from_dict(d)

    def test_schema_errors_name_the_field(self):
        d = doc()
        d["hunters"][0]["start"] = "0,0"
        with pytest.raises(ValidationError, match=r"hunters\[0\]\.start"):
            scenario_from_dict(d)
        with pytest.raises(ValidationError, match="schema_version"):
            scenario_from_dict({k: v for k, v in MINIMAL.items() if k != "schema_version"})

    def test_bad_json_reports_the_line(self, tmp_path):
        with pytest.raises(ValidationError, match="line 2"):
            load_scenario(write(tmp_path, '{\n  "id": ,\n}'))
        with pytest.raises(ValidationError, match="cannot read"):
            load_scenario(tmp_path / "missing.json")

    def test_hunter_moves_must_cover_every_id(self):
        with pytest.raises(ValidationError, match="missing \\['B'\\]"):
            scenario_from_dict(doc(trajectory=[{"hunters": {"A": "north"}}]))

    def test_unknown_move_name(self):
        with pytest.raises(ValidationError, match=r"trajectory\[0\]\.hunters\.A"):
            scenario_from_dict(doc(trajectory=[{"hunters": {"A": "up", "B": "stay"}}]))

    def test_trajectory_longer_than_the_horizon(self):
        with pytest.raises(ValidationError, match="longer than the horizon"):
            scenario_from_dict(doc(horizon=1, trajectory=[{"hunters": {"A": "stay", "B": "stay"}}] * 2))

    def test_moves_after_a_capture(self):
        d = doc(stags=[], trajectory=[{"hunters": {"A": "stay", "B": "north"}}] * 3)
        with pytest.raises(ValidationError, match="step 3: the episode already ended"):
            scenario_from_dict(d)

    def test_ambiguous_stag_flight_needs_stag_moves(self):
        d = doc(
            grid={"width": 5, "height": 5, "walls": []},
            hunters=[{"id": "A", "start": [2, 0]}, {"id": "B", "start": [4, 4]}],
            stags=[[2, 2]],
            hares=[],
            trajectory=[{"hunters": {"A": "north", "B": "stay"}}],
        )
        with pytest.raises(ValidationError, match="ambiguous"):
            scenario_from_dict(d)
        d["trajectory"][0]["stags"] = ["east"]
        assert scenario_from_dict(d).states()[1].world.stags[0][0] == (3, 2)
        d["trajectory"][0]["stags"] = ["south"]
        with pytest.raises(ValidationError, match="zero probability"):
            scenario_from_dict(d)

    def test_step_lists_must_fit_the_trajectory(self):
        with pytest.raises(ValidationError, match="elicitation step 2 is past"):
            scenario_from_dict(doc(elicitation=[1, 2]))
        with pytest.raises(ValidationError, match="strictly increasing"):
            scenario_from_dict(doc(trajectory=MINIMAL["trajectory"] * 2, elicitation=[2, 1]))

    def test_reference_blocks_are_checked(self):
        refs = {"actions": [{"step": 1, "hunter": "A", "probs": {"north": 0.5, "stay": 0.4}}]}
        with pytest.raises(ValidationError, match="sums to"):
            scenario_from_dict(doc(references=refs))
        refs = {"team": [{"step": 1, "pair": ["A", "Z"], "value": 0.5}]}
        with pytest.raises(ValidationError, match="unknown hunter 'Z'"):
            scenario_from_dict(doc(references=refs))

    def test_reversal_defector_must_be_in_the_pair(self):
        s = {"kind": "independent", "reversal": {"pair": ["A", "B"], "step": 1, "defector": "C"}}
        with pytest.raises(ValidationError, match="defector"):
            scenario_from_dict(doc(structure=s))


class TestGridMap:
    def test_map_rows_are_top_first(self):
        d = doc(grid={"map": ["...", "...", ".#."]})
        d["stags"] = [[1, 2]]
        scen = scenario_from_dict(d)
        assert scen.world.walls == frozenset({(1, 0)})
        assert scen.world.width == 3 and scen.world.height == 3

    def test_map_errors(self):
        with pytest.raises(ValidationError, match="same length"):
            scenario_from_dict(doc(grid={"map": ["...", "..", "..."]}))
        with pytest.raises(ValidationError, match="not both"):
            scenario_from_dict(doc(grid={"map": ["..."] * 3, "walls": [[1, 1]]}))
        with pytest.raises(ValidationError, match="width/height"):
            scenario_from_dict(doc(grid={"map": ["..."] * 3, "width": 4}))


class TestRoundTrip:
    @pytest.mark.parametrize("path", builtin_scenarios(), ids=lambda p: p.stem)
    def test_builtin_fixture_round_trips(self, tmp_path, path):
        scen = load_scenario(path)
        out = tmp_path / path.name
        save_scenario(scen, out)
        again = load_scenario(out)
        assert scenario_to_dict(again) == scenario_to_dict(scen)
        assert again.states() == scen.states()
        assert dump_scenario(again) == out.read_text()

    def test_dump_is_valid_under_the_schema(self):
        scen = scenario_from_dict(MINIMAL)
        jsonschema.validate(json.loads(dump_scenario(scen)), schema())

    def test_with_settings_revalidates(self):
        scen = scenario_from_dict(MINIMAL)
        assert scen.with_settings(gamma=0.5).gamma == 0.5
        with pytest.raises(ValidationError):
            scen.with_settings(horizon=0)


class TestFixtures:
    def test_nine_fixtures_with_three_hunters(self, fixtures):
        assert sorted(fixtures) == list("abcdefghi")
        for scen in fixtures.values():
            assert scen.n_hunters == 3 and len(scen.trajectory) == 3
            assert scen.elicitation == (1, 2, 3)

    def test_structure_kinds(self, fixtures):
        kinds = {sid: s.structure["kind"] for sid, s in fixtures.items()}
        assert [k for k in "abcdefghi" if kinds[k] == "pair"] == ["a", "c", "d"]
        assert [k for k in "abcdefghi" if kinds[k] == "independent"] == ["b", "e", "f", "h"]
        assert [k for k in "abcdefghi" if kinds[k] == "full"] == ["g", "i"]
        assert [k for k in "abcdefghi" if "reversal" in fixtures[k].structure] == ["b", "h"]

    def test_replay_reaches_every_state_with_positive_probability(self, fixtures):
        for scen in fixtures.values():
            trace = scen.replay()
            trace.validate()
            nxt = list(trace.states[1:]) + [trace.final]
            for s, a, s2 in zip(trace.states, trace.joint_actions, nxt):
                assert trace.game.transition_dist(s, a)[s2] > 0
