"""Links, drop-tail queues, bandwidth traces and topology wiring."""

from __future__ import annotations

import bisect
import csv
import io
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .simcore import MSEC, SEC, Simulator

MSS = 1448
HEADER_BYTES = 40
ACK_BYTES = 40

MODES = ("NewReno", "TcpLlmL", "TcpLlmG", "TcpLlmGAggressive", "HeuristicCC")


class ConfigError(ValueError):
    pass


class TraceFormatError(ValueError):
    pass


class BandwidthTrace:
    """Piecewise-constant, right-continuous bottleneck rate schedule.

    ``steps`` holds ``(start_time_us, rate_bps)`` pairs. The first step must
    start at 0 and start times must strictly increase.
    """

    def __init__(self, steps: Iterable[tuple[int, float]]):
        steps = [(int(t), float(r)) for t, r in steps]
        if not steps:
            raise TraceFormatError("trace has no steps")
        if steps[0][0] != 0:
            raise TraceFormatError("first step must start at t=0")
        for (t0, _), (t1, _) in zip(steps, steps[1:]):
            if t1 <= t0:
                raise TraceFormatError(f"start times not strictly increasing at {t1} us")
        for t, r in steps:
            if not r > 0:
                raise TraceFormatError(f"non-positive rate {r} at {t} us")
        self.steps = steps
        self._starts = [t for t, _ in steps]

    @classmethod
    def constant(cls, rate_bps: float) -> "BandwidthTrace":
        return cls([(0, rate_bps)])

    @classmethod
    def from_mbps(cls, pairs: Iterable[tuple[float, float]]) -> "BandwidthTrace":
        """Build from ``(t_start_s, mbps)`` pairs."""
        return cls((int(round(t * SEC)), m * 1e6) for t, m in pairs)

    def __eq__(self, other):
        return isinstance(other, BandwidthTrace) and self.steps == other.steps

    def __repr__(self):
        return f"BandwidthTrace({len(self.steps)} steps)"

    def rate_at(self, t: int) -> float:
        if t < 0:
            raise ValueError("negative time")
        i = bisect.bisect_right(self._starts, t) - 1
        return self.steps[i][1]

    def next_change_after(self, t: int) -> int | None:
        i = bisect.bisect_right(self._starts, t)
        return self._starts[i] if i < len(self._starts) else None

    def capacity_bits(self, t0: int, t1: int) -> float:
        """Time integral of the rate over ``[t0, t1]`` in bits."""
        if t1 <= t0:
            return 0.0
        total = 0.0
        t = t0
        while t < t1:
            nxt = self.next_change_after(t)
            end = t1 if nxt is None else min(nxt, t1)
            total += self.rate_at(t) * (end - t) / SEC
            t = end
        return total

    def mean_mbps(self, t0: int, t1: int) -> float:
        return self.capacity_bits(t0, t1) / ((t1 - t0) / SEC) / 1e6

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t_start_s,bandwidth_mbps\n")
        for t, r in self.steps:
            buf.write(f"{t / SEC:.6f},{r / 1e6:.6f}\n")
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv_text(cls, text: str) -> "BandwidthTrace":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError("empty trace file") from None
        if [h.strip() for h in header] != ["t_start_s", "bandwidth_mbps"]:
            raise TraceFormatError(f"bad header {header!r}")
        pairs = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise TraceFormatError(f"line {lineno}: expected 2 columns")
            try:
                t, m = float(row[0]), float(row[1])
            except ValueError:
                raise TraceFormatError(f"line {lineno}: non-numeric entry") from None
            if t < 0 or m <= 0:
                raise TraceFormatError(f"line {lineno}: non-positive entry")
            pairs.append((t, m))
        if not pairs:
            raise TraceFormatError("trace has no rows")
        if pairs[0][0] != 0.0:
            raise TraceFormatError("first row must start at 0.0")
        return cls.from_mbps(pairs)

    @classmethod
    def load(cls, path) -> "BandwidthTrace":
        return cls.from_csv_text(Path(path).read_text(encoding="utf-8"))


def bandwidth_at(trace: BandwidthTrace, t: int) -> float:
    return trace.rate_at(t)


# -- synthetic traces shaped after the three mobile traces --------------------

STEP_S = 5.0


def _scale_to_mean(levels: list[float], target: float, fixed: set[int] = frozenset()) -> list[float]:
    """Scale the non-fixed levels so the overall mean equals ``target``."""
    free = [i for i in range(len(levels)) if i not in fixed]
    fixed_sum = sum(levels[i] for i in fixed)
    free_sum = sum(levels[i] for i in free)
    k = (target * len(levels) - fixed_sum) / free_sum
    return [lv if i in fixed else lv * k for i, lv in enumerate(levels)]


def longisland_trace(duration_s: float = 120.0) -> BandwidthTrace:
    """2 Mb/s floor with a single burst between 20 s and 50 s (mean 2.9 Mb/s)."""
    n = int(duration_s // STEP_S)
    levels = [2.0] * n
    burst = [6.0, 10.0, 8.0, 4.0, 3.0, 2.6]
    for k, lv in enumerate(burst):
        if 4 + k < n:
            levels[4 + k] = lv
    return BandwidthTrace.from_mbps((i * STEP_S, lv) for i, lv in enumerate(levels))


def seven_train_trace(seed: int = 7, duration_s: float = 120.0) -> BandwidthTrace:
    """Low (1-2 Mb/s) for 40 s, flat-ish to 60 s, then an upward ramp; mean 8.2 Mb/s."""
    rng = random.Random(seed)
    n = int(duration_s // STEP_S)
    levels = []
    for i in range(n):
        t = i * STEP_S
        if t < 40:
            lv = rng.uniform(1.0, 2.0)
        elif t < 60:
            lv = rng.uniform(2.0, 3.0)
        else:
            frac = (t - 60) / max(duration_s - 60 - STEP_S, STEP_S)
            lv = 5.0 + 18.0 * frac + rng.uniform(-1.0, 1.0)
        levels.append(lv)
    head = {i for i in range(n) if i * STEP_S < 60}
    levels = _scale_to_mean(levels, 8.2, fixed=head)
    return BandwidthTrace.from_mbps((i * STEP_S, lv) for i, lv in enumerate(levels))


def qtrain_trace(seed: int = 11, duration_s: float = 120.0) -> BandwidthTrace:
    """Abrupt 5 s steps around 20 Mb/s early, a dip at 45-65 s, a spike at 65-85 s."""
    rng = random.Random(seed)
    n = int(duration_s // STEP_S)
    levels = []
    for i in range(n):
        t = i * STEP_S
        if t < 45:
            lv = 20.0 + rng.uniform(-3.0, 3.0)
        elif t < 65:
            lv = 8.0 + rng.uniform(-3.0, 3.0)
        elif t < 85:
            lv = 28.0 + rng.uniform(-4.0, 4.0)
        else:
            lv = 14.0 + 10.0 * (t - 85) / 35.0 + rng.uniform(-3.0, 3.0)
        levels.append(lv)
    early = {i for i in range(n) if i * STEP_S < 45}
    levels = _scale_to_mean(levels, 18.0, fixed=early)
    return BandwidthTrace.from_mbps((i * STEP_S, lv) for i, lv in enumerate(levels))


SYNTHETIC_TRACES = {
    "longisland": lambda seed=None: longisland_trace(),
    "7train": lambda seed=None: seven_train_trace(7 if seed is None else seed),
    "qtrain": lambda seed=None: qtrain_trace(11 if seed is None else seed),
}


# -- packets and links ---------------------------------------------------------


class Packet:
    __slots__ = ("flow_id", "seq", "payload", "size", "is_ack", "send_ts", "retransmit", "ack", "echo_ts", "echo_retx")

    def __init__(self, flow_id: int, seq: int, payload: int, send_ts: int, retransmit: bool = False,
                 is_ack: bool = False):
        self.flow_id = flow_id
        self.seq = seq
        self.payload = payload
        self.size = payload + HEADER_BYTES
        self.is_ack = is_ack
        self.send_ts = send_ts
        self.retransmit = retransmit
        self.ack = 0
        self.echo_ts = 0
        self.echo_retx = False


def serialization_us(size_bytes: int, rate_bps: float) -> float:
    return size_bytes * 8 * SEC / rate_bps


@dataclass
class LinkSpec:
    rate: float | BandwidthTrace
    one_way_delay: int
    queue_capacity: int

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")
        if self.one_way_delay < 0:
            raise ConfigError("one_way_delay must be >= 0")
        if not isinstance(self.rate, BandwidthTrace):
            if not self.rate > 0:
                raise ConfigError("link rate must be positive")
            self.rate = BandwidthTrace.constant(self.rate)


class Link:
    """FIFO drop-tail link.

    Occupancy counts the packet currently being serialized. The serialization
    rate is sampled when a packet reaches the head of the queue and holds for
    that packet even if the trace changes mid-packet.
    """

    def __init__(self, sim: Simulator, spec: LinkSpec, deliver: Callable[[Packet], None], name: str = "link"):
        self.sim = sim
        self.spec = spec
        self.trace: BandwidthTrace = spec.rate
        self.deliver = deliver
        self.name = name
        self.queue: deque[Packet] = deque()
        self.capacity = spec.queue_capacity
        self.delay = spec.one_way_delay
        self.drops = 0
        self.drops_by_flow: dict[int, int] = {}
        self.enqueued = 0
        self.bytes_out = 0
        self.max_occupancy = 0
        self._carry = 0  # sub-microsecond serialization remainder, in units of 1/rate us
        self._carry_rate = None

    @property
    def occupancy(self) -> int:
        return len(self.queue)

    def enqueue(self, pkt: Packet) -> bool:
        if len(self.queue) >= self.capacity:
            self.drops += 1
            self.drops_by_flow[pkt.flow_id] = self.drops_by_flow.get(pkt.flow_id, 0) + 1
            return False
        self.queue.append(pkt)
        self.enqueued += 1
        if len(self.queue) > self.max_occupancy:
            self.max_occupancy = len(self.queue)
        if len(self.queue) == 1:
            self._start(pkt)
        return True

    def _start(self, pkt: Packet) -> None:
        rate = int(self.trace.rate_at(self.sim.now))
        if rate != self._carry_rate:
            self._carry = 0
            self._carry_rate = rate
        ticks, self._carry = divmod(pkt.size * 8 * SEC + self._carry, rate)
        if self._carry and ticks == 0:
            ticks = 1
        self.sim.schedule_in(ticks, self._finish)

    def _finish(self) -> None:
        pkt = self.queue.popleft()
        self.bytes_out += pkt.size
        self.sim.schedule_in(self.delay, self.deliver, pkt)
        if self.queue:
            self._start(self.queue[0])


class QueueMonitor:
    """Samples a link's occupancy at a fixed cadence."""

    def __init__(self, sim: Simulator, link: Link, interval: int, until: int):
        self.sim = sim
        self.link = link
        self.interval = interval
        self.until = until
        self.samples: list[tuple[int, int]] = []
        sim.schedule(0, self._tick)

    def _tick(self) -> None:
        self.samples.append((self.sim.now, self.link.occupancy))
        nxt = self.sim.now + self.interval
        if nxt < self.until:
            self.sim.schedule(nxt, self._tick)


# -- topology --------------------------------------------------------------------


def default_access() -> LinkSpec:
    return LinkSpec(rate=100e6, one_way_delay=1 * MSEC, queue_capacity=1000)


@dataclass
class TopologyConfig:
    """Senders -> router A -> bottleneck -> router B -> receivers.

    With the defaults (1 ms access hops, 18 ms bottleneck) the base RTT is
    40 ms.
    """

    n_senders: int = 1
    modes: Sequence[str] = ("NewReno",)
    bottleneck: LinkSpec = field(default_factory=lambda: LinkSpec(10e6, 18 * MSEC, 100))
    access: LinkSpec | Sequence[LinkSpec] = field(default_factory=default_access)
    egress: LinkSpec = field(default_factory=default_access)

    def validate(self) -> None:
        if self.n_senders < 1:
            raise ConfigError("n_senders must be >= 1")
        if len(self.modes) != self.n_senders:
            raise ConfigError(f"{len(self.modes)} modes given for {self.n_senders} senders")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown CCA mode {m!r}")
        if not isinstance(self.access, LinkSpec) and len(self.access) != self.n_senders:
            raise ConfigError("access link list length must equal n_senders")

    def access_for(self, i: int) -> LinkSpec:
        return self.access if isinstance(self.access, LinkSpec) else self.access[i]

    def base_rtt(self, i: int = 0) -> int:
        return 2 * (self.access_for(i).one_way_delay + self.bottleneck.one_way_delay + self.egress.one_way_delay)


class Network:
    """Wired topology. Endpoints are attached via :func:`build_topology`.

    Data packets traverse access -> bottleneck -> egress; ACKs return over an
    ideal reverse path whose latency equals the forward propagation delay.
    """

    def __init__(self, sim: Simulator, cfg: TopologyConfig):
        self.sim = sim
        self.cfg = cfg
        self.senders: list = []
        self.receivers: list = []
        self.bottleneck = Link(sim, cfg.bottleneck, self._to_egress, name="bottleneck")
        self.egress = Link(sim, cfg.egress, self._to_receiver, name="egress")
        self.access = [
            Link(sim, cfg.access_for(i), self.bottleneck.enqueue, name=f"access{i}")
            for i in range(cfg.n_senders)
        ]
        self.reverse_delay = [
            cfg.access_for(i).one_way_delay + cfg.bottleneck.one_way_delay + cfg.egress.one_way_delay
            for i in range(cfg.n_senders)
        ]
        self.monitor: QueueMonitor | None = None

    def _to_egress(self, pkt: Packet) -> None:
        self.egress.enqueue(pkt)

    def _to_receiver(self, pkt: Packet) -> None:
        self.receivers[pkt.flow_id].on_data(pkt)

    def send_data(self, pkt: Packet) -> bool:
        return self.access[pkt.flow_id].enqueue(pkt)

    def send_ack(self, ack: Packet) -> None:
        self.sim.schedule_in(self.reverse_delay[ack.flow_id], self.senders[ack.flow_id].on_ack, ack)

    def instrument(self, interval: int, until: int) -> QueueMonitor:
        self.monitor = QueueMonitor(self.sim, self.bottleneck, interval, until)
        return self.monitor

    def links(self) -> list[Link]:
        return [*self.access, self.bottleneck, self.egress]


def build_topology(cfg: TopologyConfig, sim: Simulator, endpoint_factory: Callable | None = None) -> Network:
    """Wire links for ``cfg`` and attach one sender/receiver pair per flow.

    ``endpoint_factory(flow_id, mode, network)`` must return
    ``(sender, receiver)``; senders expose ``on_ack`` and receivers
    ``on_data``.
    """
    cfg.validate()
    net = Network(sim, cfg)
    if endpoint_factory is not None:
        for i, mode in enumerate(cfg.modes):
            snd, rcv = endpoint_factory(i, mode, net)
            net.senders.append(snd)
            net.receivers.append(rcv)
    return net
