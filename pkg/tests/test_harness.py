import csv
import io
import json

import pytest

from tcpllm import cli
from tcpllm.harness import (DegenerateInput, ExperimentConfig, FlowMetrics, MetricsBundle, UnknownParameter,
                            conservation_violations, jain_index, metrics_csv, run_experiment, set_param,
                            summarize, sweep, sweep_csv, write_outputs)
from tcpllm.netsim import ConfigError
from tcpllm.simcore import SEC


def test_jain_examples():
    assert jain_index([1, 1, 1]) == pytest.approx(1.0)
    assert jain_index([35.6, 29.6, 33.2]) == pytest.approx(98.4 ** 2 / (3 * (35.6**2 + 29.6**2 + 33.2**2)))
    assert jain_index([35.6, 29.6, 33.2]) == pytest.approx(9682.56 / 9737.28)  # 0.994380...
    assert jain_index([5, 0, 0]) == pytest.approx(1 / 3)
    for bad in ([], [0, 0], [-1, 2]):
        with pytest.raises(DegenerateInput):
            jain_index(bad)


def fake_bundle(n_flows=1, secs=4, thr_mbps=10.0, queue=0):
    n = secs * 10
    per_bucket = int(thr_mbps * 1e6 / 8 / 10)
    flows = [FlowMetrics(flow_id=i, mode="NewReno", rtt_count=[1] * n, rtt_sum_us=[50_000] * n,
                         rtt_sumsq_ms=[2500.0] * n, delivered=[per_bucket] * n, bytes_sent=per_bucket * n,
                         bytes_delivered=per_bucket * n, segments_sent=10, segments_received=10, drops=0,
                         retransmits=0, timeouts=0, consults=0, send_violations=0) for i in range(n_flows)]
    return MetricsBundle(duration=secs * SEC, bucket=100_000, seed=0, flows=flows,
                         queue_samples=[[t * 10_000, queue] for t in range(secs * 100)], queue_capacity=100,
                         capacity_bits=[1e6] * n, bottleneck_bits_out=0, config={}, calibration={})


def test_summary_definitions():
    rep = summarize(fake_bundle())
    f = rep.flows[0]
    assert f.mean_throughput_mbps == pytest.approx(10.0)
    assert f.share_pct == pytest.approx(100.0)
    assert f.mean_rtt_ms == pytest.approx(50.0) and f.std_rtt_ms == pytest.approx(0.0, abs=1e-6)
    assert rep.queue_histogram["0-5"] == 400
    assert sum(rep.queue_histogram.values()) == 400
    assert len(rep.share_series) == 4


def test_summary_three_flows_shares():
    b = fake_bundle(n_flows=3, thr_mbps=3.3)
    rep = summarize(b)
    assert rep.share_sum_pct == pytest.approx(99.0, abs=0.1)
    assert rep.jain == pytest.approx(1.0)


def test_summary_window():
    b = fake_bundle(secs=10)
    b.flows[0].delivered[:50] = [0] * 50
    assert summarize(b, 5, 10).flows[0].mean_throughput_mbps == pytest.approx(10.0)
    assert summarize(b, 0, 5).flows[0].mean_throughput_mbps == 0.0


def test_conservation_detects_violations():
    b = fake_bundle()
    assert conservation_violations(b) == []
    b.flows[0].bytes_delivered = b.flows[0].bytes_sent + 1
    b.queue_samples.append([0, 101])
    msgs = conservation_violations(b)
    assert any("delivered" in m for m in msgs) and any("queue" in m for m in msgs)


def test_config_round_trip_and_errors(tmp_path):
    cfg = ExperimentConfig(n_senders=2, modes=["NewReno", "HeuristicCC"])
    p = tmp_path / "cfg.json"
    cfg.save(p)
    assert ExperimentConfig.load(p) == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"nope": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"trigger": {"gamma": 1}})
    with pytest.raises(ConfigError):
        ExperimentConfig(modes=["Cubic"]).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(n_senders=0, modes=[]).validate()


def test_replay_without_cassette_fails_fast(tmp_path):
    cfg = ExperimentConfig(modes=["TcpLlmG"], backend="replay", cassette=str(tmp_path / "missing.jsonl"))
    with pytest.raises(ConfigError):
        run_experiment(cfg)


def test_set_param():
    cfg = ExperimentConfig()
    out = set_param(cfg, "trigger.alpha", 0.5)
    assert out.trigger.alpha == 0.5 and cfg.trigger.alpha == 0.7
    assert set_param(cfg, "policy.H", 2).policy.H == 2
    for bad in ("trigger.gamma", "nosuch.alpha", "seed.x"):
        with pytest.raises(UnknownParameter):
            set_param(cfg, bad, 1)


def test_newreno_run_bins_and_outputs(tmp_path):
    cfg = ExperimentConfig(duration_s=12.0)
    b = run_experiment(cfg)
    assert len(b.throughput_bins(0)) == 12
    assert conservation_violations(b) == []
    rep = summarize(b)
    assert rep.flows[0].share_pct == pytest.approx(rep.flows[0].mean_throughput_mbps / 10 * 100)
    paths = write_outputs(b, tmp_path)
    rows = list(csv.reader(io.StringIO(paths["metrics.csv"].read_text())))
    assert rows[0] == ["t", "flow", "rtt_ms", "thr_mbps"] and len(rows) == 121
    assert paths["queue.csv"].read_text().startswith("t,qlen\n")
    again = summarize(MetricsBundle.load(paths["bundle.json"]))
    assert again.dumps() == rep.dumps()


def test_sweep_rows_and_seeds():
    base = ExperimentConfig(modes=["TcpLlmL"], duration_s=4.0, seed=10)
    base.trigger.baseline_latency_ms = 160
    rows = sweep(base, {"trigger.alpha": [0.5, 0.6, 0.7, 0.8]})
    assert len(rows) == 4
    assert [r["seed"] for r in rows] == [10, 11, 12, 13]
    assert [r["trigger.alpha"] for r in rows] == [0.5, 0.6, 0.7, 0.8]
    text = sweep_csv(rows)
    assert text.splitlines()[0].startswith("trigger.alpha,index,seed")
    with pytest.raises(UnknownParameter):
        sweep(base, {"trigger.gamma": [1]})


def test_cli_gen_trace_and_run(tmp_path, capsys):
    out = tmp_path / "li.csv"
    assert cli.main(["gen-trace", "longisland", "--out", str(out)]) == 0
    assert out.read_text().startswith("t_start_s,bandwidth_mbps")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trace": {"kind": "file", "path": str(out)}, "duration_s": 3}))
    assert cli.main(["run", "--config", str(cfg), "--modes", "NewReno,HeuristicCC", "--out",
                     str(tmp_path / "r")]) == 0
    assert "jain=" in capsys.readouterr().out
    assert cli.main(["report", str(tmp_path / "r" / "bundle.json")]) == 0
    assert json.loads(capsys.readouterr().out)["flows"][1]["mode"] == "HeuristicCC"


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_metrics_csv_deterministic():
    b = fake_bundle()
    assert metrics_csv(b) == metrics_csv(MetricsBundle.from_dict(json.loads(b.dumps())))
