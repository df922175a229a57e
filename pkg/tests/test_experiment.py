import math

import numpy as np
import pytest

from vrslice.cli import main
from vrslice.experiment import (
    CSV_HEADER,
    DATA_DRIVEN,
    STATIC,
    AdmissionDenied,
    ExperimentConfig,
    ExperimentError,
    MetricsRow,
    RunSummary,
    Scenario,
    compare_static_equivalent,
    gain_percent,
    nearest_rank,
    read_csv,
    run_scenario,
    simulate,
    summarize,
    summarize_rows,
    write_csv,
)
from vrslice.ric_bridge import DECOUPLED, Ack
from vrslice.xapp import Decision, HandlerState, LatencyEstimate, control_decision


# -- configuration ---------------------------------------------------------------------


@pytest.mark.parametrize("text,expected", [
    ("no-slicing", Scenario("no_slicing")),
    ("static:18", Scenario(STATIC, rbgs=18)),
    ("data-driven:10", Scenario(DATA_DRIVEN, target_ms=10.0, slack_ms=1.0)),
    ("data-driven:12:0.5", Scenario(DATA_DRIVEN, target_ms=12.0, slack_ms=0.5)),
])
def test_scenario_parse(text, expected):
    assert Scenario.parse(text) == expected


@pytest.mark.parametrize("text", ["static", "static:0", "static:25", "static:x", "dd:10", "no-slicing:3"])
def test_scenario_parse_rejects(text):
    with pytest.raises(ValueError):
        Scenario.parse(text)


def test_config_duration_floor():
    with pytest.raises(ValueError):
        ExperimentConfig(Scenario.parse("no-slicing"), duration_s=59)


def test_config_json_round_trip():
    cfg = ExperimentConfig(Scenario.parse("static:12"), duration_s=90, seed=4, channel_variation=0.2)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_json('{"scenario": "static:12", "bogus": 1}')


# -- summaries -------------------------------------------------------------------------


def rows_from(lat, be_bits=None, rbgs=10, start=0):
    be_bits = be_bits or [10_000_000] * len(lat)
    return [MetricsRow(start + i, l, l, 10_000_000, b, rbgs) for i, (l, b) in enumerate(zip(lat, be_bits))]


def test_nearest_rank_example():
    col = [1, 2, 3, 4, 5]
    s = summarize_rows(rows_from(col), warmup_s=0)
    assert s.latency["mean"] == 3 and s.latency["median"] == 3
    assert s.latency["p5"] == 1 and s.latency["p95"] == 5
    assert nearest_rank(col, 25) == 2 and nearest_rank(col, 75) == 4


def test_nearest_rank_is_a_sample():
    vals = [0.3, 9.1, 4.4, 7.0, 2.2, 5.5, 1.0]
    for p in (1, 5, 33, 50, 90, 99, 100):
        assert nearest_rank(vals, p) in vals
    assert nearest_rank(vals, 100) == max(vals)


def test_warmup_is_trimmed():
    s = summarize_rows(rows_from([100.0] * 10 + [5.0] * 20))
    assert s.latency["mean"] == 5.0 and s.seconds == 20


def test_identical_files_identical_summaries(tmp_path):
    rows = rows_from(list(np.linspace(8, 12, 40)))
    a = write_csv(rows, tmp_path / "a.csv")
    b = write_csv(rows, tmp_path / "b.csv")
    sa, sb = summarize([a, b])
    assert sa.latency == sb.latency and sa.secondary_mbps == sb.secondary_mbps


def test_empty_csv_is_error(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text(",".join(CSV_HEADER) + "\n")
    with pytest.raises(ExperimentError):
        summarize([p])
    p.write_text("")
    with pytest.raises(ExperimentError):
        read_csv(p)
    with pytest.raises(ExperimentError):
        summarize([])


def test_csv_nan_round_trip(tmp_path):
    rows = [MetricsRow(0, math.nan, math.nan, 0, 5, 0), MetricsRow(1, 9.25, 9.5, 10, 5, 3)]
    back = read_csv(write_csv(rows, tmp_path / "x.csv"))
    assert math.isnan(back[0].vr_mean_latency_ms) and back[1] == rows[1]


# -- comparison ------------------------------------------------------------------------


def fake(lat, mbps):
    st = {k: lat for k in ("mean", "median", "p5", "p25", "p75", "p95")}
    bt = {k: mbps for k in st}
    return RunSummary("x", st, bt, lat, 0.0, 100)


def test_gain_examples():
    assert gain_percent(9.5, 8.2) == pytest.approx(15.85, abs=0.01)
    assert gain_percent(7.0, 7.0) == 0.0


def test_compare_picks_smallest_equivalent():
    sweep = {10: fake(15.0, 20.0), 12: fake(12.8, 17.7), 15: fake(10.7, 13.6),
             17: fake(9.8, 10.9), 18: fake(9.4, 9.5), 20: fake(8.7, 6.8)}
    c = compare_static_equivalent(fake(9.5, 12.0), sweep)
    assert c.comparable and c.static_rbgs == 18
    assert c.gain_pct == pytest.approx((12.0 / 9.5 - 1) * 100)
    assert "18 RBGs" in c.report()


def test_compare_not_comparable():
    sweep = {10: fake(15.0, 20.0), 12: fake(12.8, 17.7), 15: fake(10.7, 13.6), 17: fake(9.8, 10.9)}
    assert not compare_static_equivalent(fake(9.5, 12.0), sweep).comparable
    assert not compare_static_equivalent(fake(20.0, 12.0), sweep).comparable
    c = compare_static_equivalent(fake(11.0, 12.0), dict(list(sweep.items())[:3]))
    assert c.report().startswith("not comparable")


# -- end-to-end runs -------------------------------------------------------------------


@pytest.fixture(scope="module")
def no_slicing_run():
    return simulate(ExperimentConfig(Scenario.parse("no-slicing"), seed=0))


@pytest.fixture(scope="module")
def data_driven_run():
    return simulate(ExperimentConfig(Scenario.parse("data-driven:10:1"), duration_s=180, seed=5))


def test_no_slicing_surge_raises_latency(no_slicing_run):
    lat = [r.vr_mean_latency_ms for r in no_slicing_run.rows]
    pre = float(np.mean(lat[10:30]))
    assert any(x >= pre + 3.0 for x in lat[30:])
    assert all(r.vr_rbgs == 0 for r in no_slicing_run.rows)


def test_static_constant_trace_keeps_allocation():
    cfg = ExperimentConfig(Scenario.parse("static:18"), duration_s=60, trace="synth-constant")
    rows = simulate(cfg).rows
    assert {r.vr_rbgs for r in rows} == {18}


def test_data_driven_steps_bounded(data_driven_run):
    rb = [r.vr_rbgs for r in data_driven_run.rows]
    assert all(abs(b - a) <= 1 for a, b in zip(rb, rb[1:]))
    assert len(set(rb)) > 1
    assert all(isinstance(reply, Ack) for _, reply in data_driven_run.control_log)


def test_rows_are_well_formed(data_driven_run):
    rows = data_driven_run.rows
    assert [r.second for r in rows] == list(range(180))
    assert all(r.vr_bits >= 0 and r.be_bits >= 0 and 0 <= r.vr_rbgs <= 24 for r in rows)


def test_estimate_tracks_truth(data_driven_run):
    err = [r.vr_est_latency_ms - r.vr_mean_latency_ms for r in data_driven_run.rows[10:]]
    assert math.sqrt(np.mean(np.square(err))) <= 1.5


def test_band_convergence_constant_profile():
    cfg = ExperimentConfig(Scenario.parse("data-driven:10:1"), duration_s=120, seed=2, trace="synth-constant")
    res = simulate(cfg)
    decided = [r for r in res.telemetry if r.decision is not None][30:]
    holds = sum(r.decision is Decision.HOLD for r in decided)
    assert holds >= 0.9 * len(decided)
    lat = [r.vr_mean_latency_ms for r in res.rows[40:]]
    assert 9.0 - 0.5 <= np.mean(lat) <= 11.0 + 0.5


def test_monotone_response_to_better_channel():
    def raw(mean_bits):
        cfg = ExperimentConfig(Scenario.parse("static:15"), duration_s=90, seed=3, channel_mean_bits=mean_bits)
        res = simulate(cfg)
        return [None if r.average_latency_ms is None else r.average_latency_ms - res.offset_ms
                for r in res.telemetry if r.decision is not None]

    st = HandlerState("vr", 10.0, 60, 15, 8, 24)
    slow, fast = raw(1360.0), raw(1600.0)
    for a, b in zip(slow, fast):
        da = control_decision(LatencyEstimate(a + 2.0, 60), st).value
        db = control_decision(LatencyEstimate(b + 2.0, 60), st).value
        assert not (da is Decision.HOLD and db is Decision.INCREASE)
        assert not (da is Decision.DECREASE and db is not Decision.DECREASE)


def test_decoupled_bridge_runs():
    cfg = ExperimentConfig(Scenario.parse("data-driven:10"), duration_s=60, seed=1,
                           bridge_mode=DECOUPLED, transport_delay_ms=5)
    res = simulate(cfg)
    assert len(res.rows) == 60 and not math.isnan(res.offset_ms)


def test_admission_denied():
    cfg = ExperimentConfig(Scenario.parse("data-driven:10"), duration_s=60, bitrate_bps=50e6)
    with pytest.raises(AdmissionDenied, match="over_capacity"):
        simulate(cfg)


def test_run_scenario_is_byte_deterministic(tmp_path):
    paths = []
    for d in ("a", "b"):
        cfg = ExperimentConfig(Scenario.parse("data-driven:10"), duration_s=60, seed=9, out_dir=str(tmp_path / d))
        paths.append(run_scenario(cfg))
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].name == "data-driven-10-1_seed9.csv"
    assert (tmp_path / "a" / "data-driven-10-1_seed9.json").exists()


# -- command line ----------------------------------------------------------------------


def test_cli_run_summarize_compare(tmp_path, capsys):
    out = tmp_path / "sweep"
    for r in (8, 12, 15, 17, 20):
        assert main(["run", "--scenario", f"static:{r}", "--duration", "60", "--seed", "1", "--out", str(out)]) == 0
    assert main(["run", "--scenario", "data-driven:10", "--duration", "60", "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    dd = tmp_path / "data-driven-10-1_seed1.csv"
    assert main(["summarize", str(dd), str(out / "static-12_seed1.csv")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and lines[0].startswith("run\tlat_mean")
    rc = main(["compare", str(dd), str(out)])
    text = capsys.readouterr().out
    assert rc == 0 and "RBGs" in text


def test_cli_config_file_and_denial(tmp_path, capsys):
    cfg = ExperimentConfig(Scenario.parse("data-driven:10"), duration_s=60, bitrate_bps=50e6)
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "over_capacity" in capsys.readouterr().err
    assert main(["summarize", str(tmp_path / "missing.csv")]) == 1
