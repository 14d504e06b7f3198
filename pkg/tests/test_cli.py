"""Argument parsing, scenario files, CSV/SVG outputs, and CLI exit codes."""

import json
import re
from pathlib import Path

import numpy as np
import pytest

from trustcbf.cli import (FLOAT_FMT, PAIRS_HEADER, TRACE_HEADER, load_scenario,
                          main, parse_args, read_pairs_csv, read_trace_csv,
                          scenario_to_dict, write_pairs_csv, write_trace_csv)
from trustcbf.sim import (Scenario, ValidationError, crossing_scenario,
                          headon_stress_scenario, run)

REPO = Path(__file__).resolve().parents[1]


def minimal_dict():
    return {
        "agents": [
            {"kind": "Intact", "model": "Unicycle", "start": [0.0, 0.0, 0.0],
             "target": [5.0, 0.0]},
            {"kind": "Uncooperative", "model": "SingleIntegrator",
             "start": [3.0, 0.0], "target": [3.0, 0.0]},
        ],
        "duration": 1.0,
    }


def write_json(tmp_path, obj, name="scn.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_parse_args_run_flags():
    cfg = parse_args(["run", "--scenario", "a.json", "--out", "o", "--dt", "0.1",
                      "--duration", "5", "--seed", "7", "--rho-bar-d", "0.4",
                      "--fixed-alpha", "--no-svg", "--strict"])
    assert cfg.command == "run"
    assert cfg.scenario == Path("a.json") and cfg.out == Path("o")
    assert cfg.dt == 0.1 and cfg.duration == 5.0 and cfg.seed == 7
    assert cfg.rho_bar_d == 0.4
    assert cfg.fixed_alpha and cfg.strict and not cfg.emit_svg


def test_parse_args_usage_errors_exit_2():
    for argv in (
        [],                                                   # missing subcommand
        ["run", "--scenario", "a.json"],                      # missing --out
        ["run", "--scenario", "a.json", "--out", "o", "--dt", "-1"],
        ["run", "--scenario", "a.json", "--out", "o", "--dt", "0"],
        ["frobnicate"],
    ):
        with pytest.raises(SystemExit) as exc:
            parse_args(argv)
        assert exc.value.code == 2


def test_parse_args_other_subcommands():
    cfg = parse_args(["validate", "--scenario", "x.json"])
    assert cfg.command == "validate" and cfg.scenario == Path("x.json")
    cfg = parse_args(["oracle", "--qp", "7", "--lp", "9", "--seed", "3"])
    assert (cfg.command, cfg.oracle_qp, cfg.oracle_lp, cfg.oracle_seed) == ("oracle", 7, 9, 3)


def test_load_scenario_minimal_defaults(tmp_path):
    s = load_scenario(write_json(tmp_path, minimal_dict()))
    assert s.dt == 0.05 and s.duration == 1.0
    assert s.trust.alpha0 == 0.8 and not s.fixed_alpha and s.rate_floor
    assert s.agents[0].target == (5.0, 0.0)
    assert s.agents[0].box.lo == (-3.0, -3.0)


def test_load_scenario_rejects_unknown_keys(tmp_path):
    base = minimal_dict()
    for mutate in (
        lambda d: d.update(extra=1),
        lambda d: d["agents"][0].update(color="red"),
        lambda d: d.update(trust={"betta": 1.0}),
        lambda d: d.update(flags={"fast": True}),
    ):
        d = json.loads(json.dumps(base))
        mutate(d)
        with pytest.raises(ValidationError):
            load_scenario(write_json(tmp_path, d))


def test_load_scenario_rejects_semantic_defects(tmp_path):
    d = minimal_dict()
    d["agents"].append({"kind": "Adversarial", "model": "SingleIntegrator",
                        "start": [8.0, 0.0]})      # adversary without prey
    with pytest.raises(ValidationError):
        load_scenario(write_json(tmp_path, d))
    d = minimal_dict()
    d["dt"] = -0.05
    with pytest.raises(ValidationError):
        load_scenario(write_json(tmp_path, d))
    d = minimal_dict()
    d["flags"] = {"fixed_alpha": "yes"}
    with pytest.raises(ValidationError):
        load_scenario(write_json(tmp_path, d))
    d = minimal_dict()
    d["agents"][0]["kind"] = "Sturdy"
    with pytest.raises(ValidationError):
        load_scenario(write_json(tmp_path, d))
    with pytest.raises(ValidationError):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValidationError):
        load_scenario(bad)


def test_load_scenario_unknown_target_and_trust_overrides(tmp_path):
    d = minimal_dict()
    d["agents"].append({"kind": "Adversarial", "model": "SingleIntegrator",
                        "start": [8.0, 0.0], "target": "unknown", "prey": 0,
                        "gain": 0.5})
    d["trust"] = {"alpha0": 0.3, "gamma_alpha": 5.0}
    d["flags"] = {"rate_floor": False, "alpha_update_order": "after"}
    s = load_scenario(write_json(tmp_path, d))
    assert s.agents[2].target is None and s.agents[2].gain == 0.5
    assert s.trust.alpha0 == 0.3 and s.trust.gamma_alpha == 5.0
    assert not s.rate_floor and s.alpha_update_order == "after"


def test_scenario_dict_round_trip(tmp_path):
    for s in (crossing_scenario(), headon_stress_scenario(rate_floor=False)):
        d = scenario_to_dict(s)
        s2 = load_scenario(write_json(tmp_path, d))
        assert scenario_to_dict(s2) == d


def test_shipped_scenarios_match_builders():
    loaded = load_scenario(REPO / "scenarios" / "crossing.json")
    assert scenario_to_dict(loaded) == scenario_to_dict(crossing_scenario())
    loaded = load_scenario(REPO / "scenarios" / "headon_stress.json")
    assert scenario_to_dict(loaded) == scenario_to_dict(headon_stress_scenario())


def small_trace():
    s = Scenario(agents=load_scenario(REPO / "scenarios" / "crossing.json").agents,
                 duration=0.5)
    return run(s), s


def test_csv_round_trip_is_exact(tmp_path):
    trace, s = small_trace()
    tp, pp = tmp_path / "trace.csv", tmp_path / "pairs.csv"
    write_trace_csv(trace, tp)
    write_pairs_csv(trace, pp)
    assert tp.read_text().splitlines()[0] == TRACE_HEADER
    assert pp.read_text().splitlines()[0] == PAIRS_HEADER

    cols = read_trace_csv(tp)
    n = len(s.agents)
    assert len(cols["t"]) == len(trace.times) * n
    for k in range(len(trace.times)):
        for i in range(n):
            row = k * n + i
            rec = trace.agents[k][i]
            assert cols["px"][row] == rec.px          # 17 digits: bitwise
            assert cols["py"][row] == rec.py
            assert cols["psi"][row] == rec.psi
            assert cols["u1"][row] == rec.u[0]
            assert cols["fallback"][row] == rec.fallback

    pcols = read_pairs_csv(pp)
    pair_keys = sorted(trace.pairs[0].keys())
    per_step = len(pair_keys)
    for k in range(len(trace.times)):
        for idx, (i, j) in enumerate(pair_keys):
            row = k * per_step + idx
            assert pcols["i"][row] == i and pcols["j"][row] == j
            assert pcols["h"][row] == trace.pairs[k][(i, j)].h
            assert pcols["alpha"][row] == trace.pairs[k][(i, j)].alpha


def test_run_command_end_to_end(tmp_path, capsys):
    scn = write_json(tmp_path, minimal_dict())
    out = tmp_path / "out"
    rc = main(["run", "--scenario", str(scn), "--out", str(out)])
    assert rc == 0
    for name in ("trace.csv", "pairs.csv", "summary.json", "trajectories.svg",
                 "alphas.svg", "trust.svg", "barriers.svg"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["dt"] == 0.05
    assert summary["metrics"]["min_h"] > 0.0
    # the barrier chart's plotted minimum equals the reported minimum exactly
    svg = (out / "barriers.svg").read_text()
    y_min = re.search(r'data-y-min="([^"]+)"', svg).group(1)
    assert y_min == FLOAT_FMT.format(summary["metrics"]["min_h"])
    assert 'viewBox="0 0 800 600"' in svg and "<polyline" in svg
    assert "run complete" in capsys.readouterr().out


def test_run_command_overrides_and_no_svg(tmp_path):
    scn = write_json(tmp_path, minimal_dict())
    out = tmp_path / "out"
    rc = main(["run", "--scenario", str(scn), "--out", str(out),
               "--duration", "0.2", "--dt", "0.1", "--no-svg"])
    assert rc == 0
    assert not list(out.glob("*.svg"))
    cols = read_trace_csv(out / "trace.csv")
    assert np.max(cols["t"]) == pytest.approx(0.2)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["duration"] == 0.2 and summary["config"]["dt"] == 0.1
    # unreachable goal in 0.2 s: the reach time serializes as JSON Infinity
    assert summary["metrics"]["agents"]["0"]["goal_reach_time"] == float("inf")


def test_run_command_fixed_alpha_freezes_rate_columns(tmp_path):
    scn = write_json(tmp_path, minimal_dict())
    out = tmp_path / "out"
    rc = main(["run", "--scenario", str(scn), "--out", str(out),
               "--duration", "0.5", "--fixed-alpha", "--no-svg"])
    assert rc == 0
    cols = read_pairs_csv(out / "pairs.csv")
    assert set(np.unique(cols["alpha"])) == {0.8}


def test_validate_command_writes_nothing(tmp_path, capsys):
    scn = write_json(tmp_path, minimal_dict())
    before = set(tmp_path.rglob("*"))
    assert main(["validate", "--scenario", str(scn)]) == 0
    assert set(tmp_path.rglob("*")) == before
    assert capsys.readouterr().out.startswith("OK:")


def test_exit_3_on_invalid_scenario(tmp_path, capsys):
    d = minimal_dict()
    d["extra"] = 1
    scn = write_json(tmp_path, d)
    assert main(["validate", "--scenario", str(scn)]) == 3
    assert main(["run", "--scenario", str(scn), "--out", str(tmp_path / "o")]) == 3
    assert "scenario error" in capsys.readouterr().err


def test_exit_4_on_unwritable_output(tmp_path, capsys):
    scn = write_json(tmp_path, minimal_dict())
    blocker = tmp_path / "blocker"
    blocker.write_text("a plain file, not a directory")
    rc = main(["run", "--scenario", str(scn), "--out",
               str(blocker / "out"), "--no-svg"])
    assert rc == 4
    assert "i/o error" in capsys.readouterr().err


def test_exit_5_on_strict_emergency(tmp_path, capsys):
    d = minimal_dict()
    # plant the neighbor inside the safety radius: the filter has no feasible
    # command and must emergency-stop from the first step
    d["agents"][1]["start"] = [0.4, 0.0]
    d["agents"][1]["target"] = [0.4, 0.0]
    d["duration"] = 0.2
    scn = write_json(tmp_path, d)
    out = tmp_path / "out"
    rc = main(["run", "--scenario", str(scn), "--out", str(out),
               "--strict", "--no-svg"])
    assert rc == 5
    assert "strict mode" in capsys.readouterr().err
    summary = json.loads((out / "summary.json").read_text())
    assert summary["metrics"]["emergency_events"] > 0
    # without --strict the same run reports the events but exits cleanly
    assert main(["run", "--scenario", str(scn), "--out", str(out), "--no-svg"]) == 0


def test_oracle_command_self_test():
    assert main(["oracle", "--qp", "25", "--lp", "25", "--seed", "1"]) == 0
