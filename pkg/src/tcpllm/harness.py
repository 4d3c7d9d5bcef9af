"""Experiment runner, metrics, fairness, sweeps and report files."""

from __future__ import annotations

import copy
import csv
import dataclasses
import gc
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .heuristic import HeuristicControl, HeuristicParams, preset
from .llmclient import Cassette, LiveBackend, MockBackend, RecordingBackend, ReplayBackend, ReplayMiss
from .llmpolicy import GuardrailConfig, LlmControl, PromptScheme
from .mockmodel import RuleResponder
from .netsim import (MODES, SYNTHETIC_TRACES, BandwidthTrace, ConfigError, LinkSpec, TopologyConfig,
                     build_topology)
from .simcore import MSEC, SEC, Simulator, millis, seconds
from .transport import NewRenoControl, TcpReceiver, TcpSender, TransportConfig
from .trigger import (AckTriggerConfig, CalibrationRecord, LatencyTriggerConfig, NoLossObserved, calibrate_ack,
                      calibrate_latency)

BUCKET = 100 * MSEC
QUEUE_BIN_WIDTH = 5


class UnknownParameter(KeyError):
    pass


class DegenerateInput(ValueError):
    pass


# -- configuration ------------------------------------------------------------------


@dataclass
class NetworkSettings:
    bottleneck_delay_ms: float = 18.0
    queue_packets: int = 100
    access_mbps: float = 100.0
    access_delay_ms: float = 1.0
    egress_delay_ms: float = 1.0
    start_offsets_ms: list[float] | None = None


@dataclass
class TransportSettings:
    initial_cwnd: int = 14480
    initial_ssthresh: int = 65535
    min_rto_ms: float = 200.0
    rto_cap_s: float = 60.0
    throughput_window_s: float = 1.0


@dataclass
class TriggerSettings:
    alpha: float = 0.7
    beta: float = 0.1
    cooldown_s: float = 2.0
    baseline_latency_ms: float | None = None
    baseline_ack_count: int | None = None
    probe_mode: str = "NewReno"
    calibration_duration_s: float = 30.0


@dataclass
class PolicySettings:
    H: int = 4
    history_mode: str = "per_ack"
    history_stride: int = 1
    decision_delay_ms: float = 0.0
    model: str = "gpt-4o-mini"
    max_tokens: int = 64
    scheme_l: str = "NaturalL"
    l_mode_max_step_fraction: float = 0.5
    g_mode_min_fraction_of_current: float = 0.1
    cwnd_hard_cap: int = 10_000_000


@dataclass
class HeuristicSettings:
    preset: str = "static"
    consult_interval_s: float = 2.0
    overrides: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    n_senders: int = 1
    modes: list[str] = field(default_factory=lambda: ["NewReno"])
    duration_s: float = 120.0
    seed: int = 0
    trace: dict = field(default_factory=lambda: {"kind": "static", "mbps": 10.0})
    network: NetworkSettings = field(default_factory=NetworkSettings)
    transport: TransportSettings = field(default_factory=TransportSettings)
    trigger: TriggerSettings = field(default_factory=TriggerSettings)
    policy: PolicySettings = field(default_factory=PolicySettings)
    heuristic: HeuristicSettings = field(default_factory=HeuristicSettings)
    backend: str = "mock"
    cassette: str | None = None
    record_cassette: str | None = None
    queue_sample_interval_ms: float = 10.0

    def validate(self) -> None:
        if self.n_senders < 1:
            raise ConfigError("n_senders must be >= 1")
        if len(self.modes) != self.n_senders:
            raise ConfigError(f"{len(self.modes)} modes for {self.n_senders} senders")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}")
        if self.duration_s <= 0:
            raise ConfigError("duration must be positive")
        if self.backend not in ("live", "mock", "replay"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "replay":
            if not self.cassette:
                raise ConfigError("replay backend requires a cassette path")
            if not Path(self.cassette).is_file():
                raise ConfigError(f"cassette not found: {self.cassette}")
        if self.policy.history_mode not in ("per_trigger", "per_ack"):
            raise ConfigError("policy.history_mode must be per_trigger or per_ack")
        if self.policy.H < 1:
            raise ConfigError("policy.H must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _from_dict(cls, data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {cls.__name__}.{key}")
        default = known[key].default_factory() if known[key].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default) and isinstance(value, dict):
            kwargs[key] = _from_dict(type(default), value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def set_param(cfg: ExperimentConfig, path: str, value) -> ExperimentConfig:
    """Return a copy of ``cfg`` with the dotted ``path`` set to ``value``."""
    out = copy.deepcopy(cfg)
    target = out
    parts = path.split(".")
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(target) or not hasattr(target, part):
            raise UnknownParameter(path)
        target = getattr(target, part)
    leaf = parts[-1]
    if isinstance(target, dict):
        target[leaf] = value
    elif dataclasses.is_dataclass(target) and leaf in {f.name for f in dataclasses.fields(target)}:
        setattr(target, leaf, value)
    else:
        raise UnknownParameter(path)
    return out


def make_trace(spec: dict) -> BandwidthTrace:
    kind = spec.get("kind", "static")
    if kind == "static":
        return BandwidthTrace.constant(float(spec.get("mbps", 10.0)) * 1e6)
    if kind == "file":
        return BandwidthTrace.load(spec["path"])
    if kind == "steps":
        return BandwidthTrace.from_mbps(spec["steps"])
    if kind in SYNTHETIC_TRACES:
        return SYNTHETIC_TRACES[kind](spec.get("seed"))
    raise ConfigError(f"unknown trace kind {kind!r}")


def topology_for(cfg: ExperimentConfig, trace: BandwidthTrace, modes=None) -> TopologyConfig:
    net = cfg.network
    modes = list(modes or cfg.modes)
    access = LinkSpec(net.access_mbps * 1e6, millis(net.access_delay_ms), 1000)
    egress = LinkSpec(net.access_mbps * 1e6, millis(net.egress_delay_ms), 1000)
    bottleneck = LinkSpec(trace, millis(net.bottleneck_delay_ms), net.queue_packets)
    return TopologyConfig(n_senders=len(modes), modes=modes, bottleneck=bottleneck, access=access, egress=egress)


def transport_config(cfg: ExperimentConfig) -> TransportConfig:
    t = cfg.transport
    return TransportConfig(initial_cwnd=t.initial_cwnd, initial_ssthresh=t.initial_ssthresh,
                           min_rto=millis(t.min_rto_ms), rto_cap=seconds(t.rto_cap_s),
                           throughput_window=seconds(t.throughput_window_s),
                           history_mode=cfg.policy.history_mode, history_stride=cfg.policy.history_stride,
                           ring_size=max(64, 2 * cfg.policy.H))


def heuristic_params(cfg: ExperimentConfig) -> HeuristicParams:
    base = preset(cfg.heuristic.preset)
    base = dataclasses.replace(base, consult_interval=seconds(cfg.heuristic.consult_interval_s))
    if cfg.heuristic.overrides:
        conv = {}
        for k, v in cfg.heuristic.overrides.items():
            if k in ("t_probe", "wait", "consult_interval"):
                conv[k] = seconds(v)
            elif k in ("eps_rtt", "eps_rtt_plus"):
                conv[k] = millis(v)
            else:
                conv[k] = v
        try:
            base = dataclasses.replace(base, **conv)
        except TypeError as exc:
            raise ConfigError(f"bad heuristic override: {exc}") from None
    return base


def make_client(cfg: ExperimentConfig):
    if cfg.backend == "replay":
        return ReplayBackend(Cassette.load(cfg.cassette), strict=True)
    if cfg.backend == "live":
        inner = LiveBackend(model=cfg.policy.model)
    else:
        inner = MockBackend(RuleResponder())
    if cfg.record_cassette:
        path = Path(cfg.record_cassette)
        cas = Cassette.load(path) if path.is_file() else Cassette(path)
        return RecordingBackend(inner, cas)
    return inner


def _run_quiet(sim: Simulator, until: int) -> None:
    # The event loop allocates almost only acyclic objects; pausing the cyclic
    # collector keeps run time flat no matter how much the caller has retained.
    enabled = gc.isenabled()
    gc.disable()
    try:
        sim.run_until(until)
    finally:
        if enabled:
            gc.enable()


# -- calibration -----------------------------------------------------------------------


def run_probe(cfg: ExperimentConfig, duration_s: float | None = None) -> CalibrationRecord:
    """Single-flow probe run used to calibrate both triggers."""
    duration = seconds(duration_s or cfg.trigger.calibration_duration_s)
    trace = make_trace(cfg.trace)
    sim = Simulator(seed=cfg.seed)
    mode = cfg.trigger.probe_mode
    if mode not in ("NewReno", "HeuristicCC"):
        raise ConfigError(f"probe mode {mode!r} needs no policy backend; use NewReno or HeuristicCC")
    tcfg = transport_config(cfg)

    def factory(i, m, net):
        ctl = HeuristicControl(heuristic_params(cfg)) if m == "HeuristicCC" else NewRenoControl()
        snd = TcpSender(sim, i, net, tcfg, control=ctl, record_rtt=False)
        snd.ack_times = []
        return snd, TcpReceiver(sim, i, net)

    net = build_topology(topology_for(cfg, trace, [mode]), sim, factory)
    _run_quiet(sim, duration)
    snd = net.senders[0]
    return CalibrationRecord(first_loss_rtt=snd.first_loss_rtt, ack_times=snd.ack_times, duration=duration,
                             probe_mode=mode)


@dataclass
class Calibration:
    latency: LatencyTriggerConfig | None
    ack: AckTriggerConfig | None

    def to_dict(self) -> dict:
        out = {}
        if self.latency is not None:
            out["baseline_latency_ms"] = self.latency.baseline_first_loss_latency / MSEC
            out["alpha"] = self.latency.alpha
            out["latency_threshold_ms"] = self.latency.threshold / MSEC
        if self.ack is not None:
            out["baseline_ack_count"] = self.ack.baseline_ack_count_10s
            out["beta"] = self.ack.beta
            out["ack_threshold"] = self.ack.threshold_acks
        return out


def calibrate(cfg: ExperimentConfig, need_latency: bool = True, need_ack: bool = True) -> Calibration:
    t = cfg.trigger
    record = None
    latency = ack = None
    if need_latency:
        if t.baseline_latency_ms is not None:
            latency = LatencyTriggerConfig(millis(t.baseline_latency_ms), t.alpha, seconds(t.cooldown_s))
        else:
            record = run_probe(cfg)
            try:
                latency = calibrate_latency(record, t.alpha, seconds(t.cooldown_s))
            except NoLossObserved as exc:
                raise ConfigError(f"latency trigger calibration failed: {exc}") from None
    if need_ack:
        if t.baseline_ack_count is not None:
            ack = AckTriggerConfig(int(t.baseline_ack_count), t.beta)
        else:
            record = record or run_probe(cfg)
            ack = calibrate_ack(record, t.beta)
    return Calibration(latency, ack)


def store_calibration(cfg: ExperimentConfig, cal: Calibration) -> ExperimentConfig:
    out = copy.deepcopy(cfg)
    if cal.latency is not None:
        out.trigger.baseline_latency_ms = cal.latency.baseline_first_loss_latency / MSEC
    if cal.ack is not None:
        out.trigger.baseline_ack_count = cal.ack.baseline_ack_count_10s
    return out


# -- metrics ------------------------------------------------------------------------------


@dataclass
class FlowMetrics:
    flow_id: int
    mode: str
    rtt_count: list[int]
    rtt_sum_us: list[int]
    rtt_sumsq_ms: list[float]
    delivered: list[int]  # payload bytes per bucket
    bytes_sent: int
    bytes_delivered: int
    segments_sent: int
    segments_received: int
    drops: int
    retransmits: int
    timeouts: int
    consults: int
    send_violations: int
    cwnd_changes: list[list[int]] = field(default_factory=list)


@dataclass
class MetricsBundle:
    duration: int
    bucket: int
    seed: int
    flows: list[FlowMetrics]
    queue_samples: list[list[int]]
    queue_capacity: int
    capacity_bits: list[float]  # bottleneck capacity integral per bucket
    bottleneck_bits_out: int
    config: dict
    calibration: dict
    decisions: list[dict] = field(default_factory=list)

    @property
    def n_buckets(self) -> int:
        return -(-self.duration // self.bucket)

    def throughput_bins(self, flow: int, width: int = SEC) -> list[float]:
        """Per-``width`` delivered throughput of one flow in Mb/s."""
        per = width // self.bucket
        data = self.flows[flow].delivered
        return [sum(data[i:i + per]) * 8 / (width / SEC) / 1e6 for i in range(0, len(data), per)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsBundle":
        d = dict(d)
        d["flows"] = [FlowMetrics(**f) for f in d["flows"]]
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, path) -> "MetricsBundle":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _bucketize(times: list[int], values: list[int], n: int, bucket: int):
    count = [0] * n
    total = [0] * n
    sumsq = [0.0] * n
    for t, v in zip(times, values):
        b = min(t // bucket, n - 1)
        count[b] += 1
        total[b] += v
        ms = v / MSEC
        sumsq[b] += ms * ms
    return count, total, sumsq


def _collect(cfg: ExperimentConfig, net, trace: BandwidthTrace, duration: int, calibration: dict,
             decisions: list[dict]) -> MetricsBundle:
    n = -(-duration // BUCKET)
    flows = []
    for snd, rcv in zip(net.senders, net.receivers):
        count, total, sumsq = _bucketize(snd.rtt_log_t, snd.rtt_log_v, n, BUCKET)
        delivered = [0] * n
        for b, v in enumerate(rcv.delivered_bins[:n]):
            delivered[b] = v
        drops = sum(link.drops_by_flow.get(snd.flow_id, 0) for link in net.links())
        flows.append(FlowMetrics(
            flow_id=snd.flow_id, mode=snd.mode, rtt_count=count, rtt_sum_us=total, rtt_sumsq_ms=sumsq,
            delivered=delivered, bytes_sent=snd.bytes_sent, bytes_delivered=rcv.delivered_bytes,
            segments_sent=snd.segments_sent, segments_received=rcv.segments_received, drops=drops,
            retransmits=snd.retransmits_total, timeouts=snd.timeouts,
            consults=getattr(snd.control, "consults", 0), send_violations=snd.send_violations,
            cwnd_changes=[list(x) for x in snd.cwnd_log]))
    capacity = [trace.capacity_bits(b * BUCKET, min((b + 1) * BUCKET, duration)) for b in range(n)]
    return MetricsBundle(
        duration=duration, bucket=BUCKET, seed=cfg.seed, flows=flows,
        queue_samples=[list(s) for s in net.monitor.samples], queue_capacity=net.bottleneck.capacity,
        capacity_bits=capacity, bottleneck_bits_out=net.bottleneck.bytes_out * 8,
        config=cfg.to_dict(), calibration=calibration, decisions=decisions)


def run_experiment(cfg: ExperimentConfig, client=None) -> MetricsBundle:
    """Build the topology, install per-flow modes and run for ``cfg.duration_s``."""
    cfg.validate()
    needs_latency = "TcpLlmL" in cfg.modes
    needs_ack = any(m in ("TcpLlmG", "TcpLlmGAggressive") for m in cfg.modes)
    llm_modes = needs_latency or needs_ack
    if llm_modes and client is None:
        client = make_client(cfg)
    cal = calibrate(cfg, need_latency=needs_latency, need_ack=needs_ack) if llm_modes else Calibration(None, None)

    duration = seconds(cfg.duration_s)
    trace = make_trace(cfg.trace)
    sim = Simulator(seed=cfg.seed)
    tcfg = transport_config(cfg)
    pol = cfg.policy
    guard = GuardrailConfig(l_mode_max_step_fraction=pol.l_mode_max_step_fraction,
                            g_mode_min_fraction_of_current=pol.g_mode_min_fraction_of_current,
                            cwnd_hard_cap=pol.cwnd_hard_cap)
    llm_log: list = []
    heur_log: list = []
    offsets = cfg.network.start_offsets_ms or [0.0] * cfg.n_senders
    if len(offsets) != cfg.n_senders:
        raise ConfigError("start_offsets_ms length must equal n_senders")

    def factory(i, mode, net):
        if mode == "NewReno":
            ctl = NewRenoControl()
        elif mode == "HeuristicCC":
            ctl = HeuristicControl(heuristic_params(cfg), log=heur_log)
        else:
            scheme = PromptScheme(pol.scheme_l) if mode == "TcpLlmL" else None
            ctl = LlmControl(mode, client, latency_trigger=cal.latency, ack_trigger=cal.ack, scheme=scheme,
                             history_len=pol.H, guardrails=guard, model=pol.model, max_tokens=pol.max_tokens,
                             decision_delay=millis(pol.decision_delay_ms), log=llm_log)
        snd = TcpSender(sim, i, net, tcfg, control=ctl, start_at=millis(offsets[i]))
        return snd, TcpReceiver(sim, i, net, bin_width=BUCKET)

    net = build_topology(topology_for(cfg, trace), sim, factory)
    net.instrument(millis(cfg.queue_sample_interval_ms), duration + 1)
    _run_quiet(sim, duration)

    if isinstance(client, RecordingBackend):
        client.cassette.save()

    decisions = [dataclasses.asdict(d) for d in llm_log]
    decisions += [{"t": round(t / SEC, 6), "flow_id": f, "scheme": "HeuristicCC", "reason": reason,
                   "raw_text": kind, "applied_cwnd": cwnd, "clamped": False}
                  for t, f, reason, kind, cwnd in heur_log]
    decisions.sort(key=lambda d: (d["t"], d["flow_id"]))
    return _collect(cfg, net, trace, duration, cal.to_dict(), decisions)


# -- summaries ------------------------------------------------------------------------------


def jain_index(x) -> float:
    x = [float(v) for v in x]
    if not x:
        raise DegenerateInput("no flows")
    if any(v < 0 for v in x):
        raise DegenerateInput("negative throughput")
    sq = sum(v * v for v in x)
    if sq == 0:
        raise DegenerateInput("all throughputs are zero")
    return sum(x) ** 2 / (len(x) * sq)


@dataclass
class FlowSummary:
    flow_id: int
    mode: str
    mean_rtt_ms: float | None
    std_rtt_ms: float | None
    mean_throughput_mbps: float
    share_pct: float
    retransmits: int
    timeouts: int
    consults: int


@dataclass
class SummaryReport:
    window_s: list[float]
    flows: list[FlowSummary]
    mean_rtt_ms: float | None
    mean_throughput_mbps: float
    mean_capacity_mbps: float
    queue_histogram: dict[str, int]
    queue_bin_width: int
    jain: float | None
    share_sum_pct: float
    share_series: list[list[float]]
    calibration: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _window(b: MetricsBundle, t0_s: float | None, t1_s: float | None) -> tuple[int, int]:
    lo = 0 if t0_s is None else int(round(seconds(t0_s) / b.bucket))
    hi = b.n_buckets if t1_s is None else int(round(seconds(t1_s) / b.bucket))
    lo = max(0, min(lo, b.n_buckets))
    hi = max(lo, min(hi, b.n_buckets))
    return lo, hi


def _rtt_stats(count, total, sumsq) -> tuple[float | None, float | None]:
    n = sum(count)
    if n == 0:
        return None, None
    mean = sum(total) / n / MSEC
    var = max(sum(sumsq) / n - mean * mean, 0.0)
    return mean, math.sqrt(var)


def summarize(b: MetricsBundle, t0_s: float | None = None, t1_s: float | None = None) -> SummaryReport:
    """Pure function of the bundle; optional window ``[t0_s, t1_s)``."""
    lo, hi = _window(b, t0_s, t1_s)
    span_s = (hi - lo) * b.bucket / SEC if hi > lo else 0.0
    cap_bits = sum(b.capacity_bits[lo:hi])
    mean_cap = cap_bits / span_s / 1e6 if span_s else 0.0
    per_sec = SEC // b.bucket

    flows = []
    all_count, all_total, all_sq = [], [], []
    for f in b.flows:
        c, t, s = f.rtt_count[lo:hi], f.rtt_sum_us[lo:hi], f.rtt_sumsq_ms[lo:hi]
        all_count += c
        all_total += t
        all_sq += s
        mean_rtt, std_rtt = _rtt_stats(c, t, s)
        thr = sum(f.delivered[lo:hi]) * 8 / span_s / 1e6 if span_s else 0.0
        share = thr / mean_cap * 100 if mean_cap else 0.0
        flows.append(FlowSummary(f.flow_id, f.mode, mean_rtt, std_rtt, thr, share, f.retransmits, f.timeouts,
                                 f.consults))
    mean_rtt, _ = _rtt_stats(all_count, all_total, all_sq)

    t0_us, t1_us = lo * b.bucket, hi * b.bucket
    hist: dict[str, int] = {}
    nbins = b.queue_capacity // QUEUE_BIN_WIDTH + 1
    counts = [0] * nbins
    for t, q in b.queue_samples:
        if t0_us <= t < t1_us:
            counts[min(q // QUEUE_BIN_WIDTH, nbins - 1)] += 1
    for i, c in enumerate(counts):
        hist[f"{i * QUEUE_BIN_WIDTH}-{(i + 1) * QUEUE_BIN_WIDTH}"] = c

    series = []
    for sec_start in range(lo, hi, per_sec):
        sec_end = min(sec_start + per_sec, hi)
        cap = sum(b.capacity_bits[sec_start:sec_end])
        row = [sec_start * b.bucket / SEC]
        for f in b.flows:
            bits = sum(f.delivered[sec_start:sec_end]) * 8
            row.append(bits / cap * 100 if cap else 0.0)
        series.append(row)

    thr_list = [fs.mean_throughput_mbps for fs in flows]
    try:
        jain = jain_index(thr_list)
    except DegenerateInput:
        jain = None
    return SummaryReport(
        window_s=[lo * b.bucket / SEC, hi * b.bucket / SEC], flows=flows, mean_rtt_ms=mean_rtt,
        mean_throughput_mbps=sum(thr_list) / len(thr_list) if thr_list else 0.0, mean_capacity_mbps=mean_cap,
        queue_histogram=hist, queue_bin_width=QUEUE_BIN_WIDTH, jain=jain,
        share_sum_pct=sum(fs.share_pct for fs in flows), share_series=series, calibration=b.calibration)


def conservation_violations(b: MetricsBundle) -> list[str]:
    """Empty list when every flow and the bottleneck conserve bytes."""
    out = []
    for f in b.flows:
        if f.bytes_delivered > f.bytes_sent:
            out.append(f"flow {f.flow_id}: delivered {f.bytes_delivered} > sent {f.bytes_sent}")
        in_network = f.segments_sent - f.segments_received - f.drops
        if in_network < 0:
            out.append(f"flow {f.flow_id}: negative in-network count {in_network}")
        if f.send_violations:
            out.append(f"flow {f.flow_id}: {f.send_violations} sends exceeded cwnd")
    for t, q in b.queue_samples:
        if not 0 <= q <= b.queue_capacity:
            out.append(f"queue {q} outside [0, {b.queue_capacity}] at {t} us")
            break
    total_cap = sum(b.capacity_bits)
    delivered_bits = sum(f.bytes_delivered for f in b.flows) * 8
    if delivered_bits > total_cap:
        out.append(f"delivered {delivered_bits} bits > capacity {total_cap:.0f} bits")
    if b.bottleneck_bits_out > total_cap:
        out.append(f"bottleneck sent {b.bottleneck_bits_out} bits > capacity {total_cap:.0f} bits")
    return out


# -- outputs ------------------------------------------------------------------------------


def metrics_csv(b: MetricsBundle) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "flow", "rtt_ms", "thr_mbps"])
    bucket_s = b.bucket / SEC
    for i in range(b.n_buckets):
        for f in b.flows:
            c = f.rtt_count[i]
            rtt = f"{f.rtt_sum_us[i] / c / MSEC:.3f}" if c else ""
            thr = f.delivered[i] * 8 / bucket_s / 1e6
            w.writerow([f"{i * bucket_s:.1f}", f.flow_id, rtt, f"{thr:.4f}"])
    return buf.getvalue()


def queue_csv(b: MetricsBundle) -> str:
    buf = io.StringIO()
    buf.write("t,qlen\n")
    for t, q in b.queue_samples:
        buf.write(f"{t / SEC:.3f},{q}\n")
    return buf.getvalue()


def decisions_jsonl(b: MetricsBundle) -> str:
    return "".join(json.dumps(d, sort_keys=True) + "\n" for d in b.decisions)


def write_outputs(b: MetricsBundle, out_dir, summary: SummaryReport | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summary or summarize(b)
    files = {
        "summary.json": summary.dumps(),
        "metrics.csv": metrics_csv(b),
        "queue.csv": queue_csv(b),
        "decisions.jsonl": decisions_jsonl(b),
        "bundle.json": b.dumps(),
    }
    paths = {}
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths[name] = p
    return paths


# -- sweeps -------------------------------------------------------------------------------


def sweep(base: ExperimentConfig, grid: dict[str, list], client_factory=None) -> list[dict]:
    """One run per grid point; the seed of point ``i`` is ``base.seed + i``."""
    import itertools

    keys = list(grid)
    for k in keys:
        set_param(base, k, None)  # raises UnknownParameter early
    rows = []
    for i, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        cfg = base
        for k, v in zip(keys, combo):
            cfg = set_param(cfg, k, v)
        cfg = set_param(cfg, "seed", base.seed + i)
        client = client_factory(cfg) if client_factory else None
        rep = summarize(run_experiment(cfg, client))
        row: dict[str, Any] = {k: v for k, v in zip(keys, combo)}
        rtts = [f.mean_rtt_ms for f in rep.flows if f.mean_rtt_ms is not None]
        stds = [f.std_rtt_ms for f in rep.flows if f.std_rtt_ms is not None]
        row.update(
            index=i, seed=cfg.seed,
            rtt_avg_ms=rep.mean_rtt_ms,
            rtt_std_ms=sum(stds) / len(stds) if stds else None,
            thr_avg_mbps=rep.mean_throughput_mbps,
            thr_std_mbps=0.0 if len(rep.flows) == 1 else _std([f.mean_throughput_mbps for f in rep.flows]),
            jain=rep.jain, share_sum_pct=rep.share_sum_pct,
        )
        rows.append(row)
    return rows


def _std(x: list[float]) -> float:
    m = sum(x) / len(x)
    return math.sqrt(sum((v - m) ** 2 for v in x) / len(x))


def sweep_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


__all__ = [
    "ExperimentConfig", "MetricsBundle", "SummaryReport", "run_experiment", "summarize", "jain_index", "sweep",
    "calibrate", "conservation_violations", "write_outputs", "ReplayMiss", "UnknownParameter", "DegenerateInput",
]
