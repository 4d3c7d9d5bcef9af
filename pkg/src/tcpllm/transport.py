"""TCP-like bulk sender/receiver with a NewReno window state machine.

Window arithmetic lives in the module-level functions (``on_ack_newreno``,
``on_dupack``, ``on_rto``) which mutate a :class:`FlowState` in place and
return it, so they can be exercised without a network. :class:`TcpSender`
wires them to packets, timers and an optional control policy.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .netsim import MSS, Packet
from .simcore import MSEC, SEC, Simulator


class Phase(enum.Enum):
    INITIALIZATION = "Initialization"
    CONGESTION_AVOIDANCE = "CongestionAvoidance"
    LOSS_RECOVERY = "LossRecovery"
    RTO_BACKOFF = "RtoBackoff"


class NoMeasurement(RuntimeError):
    """No RTT sample has been taken yet."""


@dataclass
class TransportConfig:
    mss: int = MSS
    initial_cwnd: int = 10 * MSS
    initial_ssthresh: int = 65535
    initial_rto: int = 1 * SEC
    min_rto: int = 200 * MSEC
    rto_cap: int = 60 * SEC
    throughput_window: int = 1 * SEC
    ring_size: int = 64
    history_mode: str = "per_ack"  # or "per_trigger"
    history_stride: int = 1


@dataclass
class FlowState:
    cwnd: int = 10 * MSS
    ssthresh: int = 65535
    phase: Phase = Phase.INITIALIZATION
    mss: int = MSS
    initial_cwnd: int = 10 * MSS
    srtt: int | None = None
    rttvar: int | None = None
    rto: int = 1 * SEC
    min_rto: int = 200 * MSEC
    rto_cap: int = 60 * SEC
    dup_ack_count: int = 0
    highest_acked: int = 0
    recover: int = 0
    in_recovery: bool = False
    policy_recovery: bool = False
    retransmit_count_window: int = 0
    ca_byte_accumulator: int = 0

    @classmethod
    def from_config(cls, cfg: TransportConfig) -> "FlowState":
        return cls(cwnd=cfg.initial_cwnd, ssthresh=cfg.initial_ssthresh, mss=cfg.mss,
                   initial_cwnd=cfg.initial_cwnd, rto=cfg.initial_rto, min_rto=cfg.min_rto,
                   rto_cap=cfg.rto_cap)


@dataclass
class PathSample:
    at: int
    cwnd: int
    rtt: int
    throughput: float  # bits/s
    retransmits_since_last_sample: int
    ssthresh: int = 0


@dataclass
class PolicyConsultRequest:
    reason: str
    at: int = 0


def on_ack_newreno(s: FlowState, acked_bytes: int, now: int = 0) -> FlowState:
    """Apply a cumulative ACK advancing ``highest_acked`` by ``acked_bytes``."""
    if acked_bytes <= 0:
        raise ValueError("ACK must advance highest_acked")
    s.highest_acked += acked_bytes
    s.dup_ack_count = 0
    mss = s.mss

    if s.in_recovery:
        if s.highest_acked >= s.recover:
            s.in_recovery = False
            if s.phase is Phase.LOSS_RECOVERY:
                if not s.policy_recovery:
                    s.cwnd = max(s.ssthresh, mss)
                s.phase = Phase.CONGESTION_AVOIDANCE
            s.policy_recovery = False
            return s
        if s.phase is Phase.LOSS_RECOVERY:
            if not s.policy_recovery:
                # partial ACK: deflate by the newly acked amount, re-add one segment
                s.cwnd = max(s.cwnd - acked_bytes + mss, mss)
            return s

    if s.phase is Phase.RTO_BACKOFF:
        s.phase = Phase.INITIALIZATION

    if s.phase is Phase.INITIALIZATION:
        s.cwnd += min(acked_bytes, mss)
        if s.cwnd >= s.ssthresh:
            s.phase = Phase.CONGESTION_AVOIDANCE
        return s

    if s.phase is Phase.CONGESTION_AVOIDANCE:
        s.ca_byte_accumulator += mss * acked_bytes
        inc, s.ca_byte_accumulator = divmod(s.ca_byte_accumulator, s.cwnd)
        s.cwnd += inc
    return s


def ca_hold(s: FlowState, acked_bytes: int) -> FlowState:
    """ACK bookkeeping for modes whose window only moves on policy actions."""
    s.highest_acked += acked_bytes
    s.dup_ack_count = 0
    if s.in_recovery and s.highest_acked >= s.recover:
        s.in_recovery = False
        s.policy_recovery = False
        if s.phase is Phase.LOSS_RECOVERY:
            s.phase = Phase.CONGESTION_AVOIDANCE
    return s


def on_dupack(s: FlowState, mode: str, highest_sent: int | None = None) -> PolicyConsultRequest | None:
    """Count a duplicate ACK; react on the third one.

    NewReno and TcpLlmL halve the window and enter fast recovery here. TcpLlmG
    variants and HeuristicCC enter recovery without touching the window and
    get back a :class:`PolicyConsultRequest`; the caller retransmits and
    consults its policy. Returns ``None`` when no consult is needed.
    """
    s.dup_ack_count += 1
    mss = s.mss
    if s.in_recovery or s.phase is Phase.RTO_BACKOFF:
        if s.phase is Phase.LOSS_RECOVERY and not s.policy_recovery and s.dup_ack_count > 3:
            s.cwnd += mss  # window inflation during fast recovery
        return None
    if s.dup_ack_count != 3:
        return None
    # ACKs below ``recover`` after an RTO must not restart fast retransmit
    if s.highest_acked < s.recover:
        return None

    s.in_recovery = True
    s.recover = highest_sent if highest_sent is not None else s.highest_acked
    s.phase = Phase.LOSS_RECOVERY
    if mode in ("NewReno", "TcpLlmL"):
        s.policy_recovery = False
        s.ssthresh = max(s.cwnd // 2, 2 * mss)
        s.cwnd = s.ssthresh + 3 * mss
        return None
    s.policy_recovery = True
    return PolicyConsultRequest(reason="3dupack")


def on_rto(s: FlowState, flight_size: int, highest_sent: int | None = None) -> FlowState:
    """Timeout: collapse to one segment and back off the timer. Mode-independent."""
    mss = s.mss
    s.ssthresh = max(flight_size // 2, 2 * mss)
    s.cwnd = mss
    s.rto = min(s.rto * 2, s.rto_cap)
    s.phase = Phase.RTO_BACKOFF
    s.dup_ack_count = 0
    s.in_recovery = False
    s.policy_recovery = False
    s.ca_byte_accumulator = 0
    if highest_sent is not None:
        s.recover = highest_sent
    return s


def update_rtt(s: FlowState, rtt: int, clock_granularity: int = 1 * MSEC) -> FlowState:
    """Standard smoothed RTT / variance estimator (gains 1/8 and 1/4)."""
    if s.srtt is None:
        s.srtt = rtt
        s.rttvar = rtt // 2
    else:
        s.rttvar = (3 * s.rttvar + abs(s.srtt - rtt)) // 4
        s.srtt = (7 * s.srtt + rtt) // 8
    s.rto = min(max(s.srtt + max(clock_granularity, 4 * s.rttvar), s.min_rto), s.rto_cap)
    return s


class ThroughputMeter:
    """Bytes acknowledged over a trailing window, reported in bits/s."""

    def __init__(self, window: int = 1 * SEC):
        self.window = window
        self._events: deque[tuple[int, int]] = deque()
        self._sum = 0

    def add(self, now: int, nbytes: int) -> None:
        self._events.append((now, nbytes))
        self._sum += nbytes
        self._expire(now)

    def _expire(self, now: int) -> None:
        cutoff = now - self.window
        ev = self._events
        while ev and ev[0][0] <= cutoff:
            self._sum -= ev.popleft()[1]

    def rate(self, now: int) -> float:
        self._expire(now)
        return self._sum * 8 * SEC / self.window


class TcpReceiver:
    """Cumulative-ACK receiver with out-of-order buffering and no flow control."""

    def __init__(self, sim: Simulator, flow_id: int, net, bin_width: int = 1 * SEC):
        self.sim = sim
        self.flow_id = flow_id
        self.net = net
        self.rcv_nxt = 0
        self._ooo: dict[int, int] = {}
        self.bin_width = bin_width
        self.delivered_bins: list[int] = []
        self.segments_received = 0

    @property
    def delivered_bytes(self) -> int:
        return self.rcv_nxt

    def _credit(self, nbytes: int) -> None:
        b = self.sim.now // self.bin_width
        bins = self.delivered_bins
        while len(bins) <= b:
            bins.append(0)
        bins[b] += nbytes

    def on_data(self, pkt: Packet) -> None:
        self.segments_received += 1
        if pkt.seq == self.rcv_nxt:
            before = self.rcv_nxt
            self.rcv_nxt += pkt.payload
            ooo = self._ooo
            while self.rcv_nxt in ooo:
                self.rcv_nxt += ooo.pop(self.rcv_nxt)
            self._credit(self.rcv_nxt - before)
        elif pkt.seq > self.rcv_nxt:
            self._ooo.setdefault(pkt.seq, pkt.payload)
        ack = Packet(self.flow_id, 0, 0, self.sim.now, is_ack=True)
        ack.size = 40
        ack.ack = self.rcv_nxt
        ack.echo_ts = pkt.send_ts
        ack.echo_retx = pkt.retransmit
        self.net.send_ack(ack)


class NewRenoControl:
    """Plain NewReno: the window machine alone, no policy."""

    mode = "NewReno"

    def attach(self, sender: "TcpSender") -> None:
        self.sender = sender

    def on_new_ack(self, acked: int) -> None:
        on_ack_newreno(self.sender.state, acked, self.sender.sim.now)

    def after_ack(self) -> None:
        pass

    def on_loss_consult(self, req: PolicyConsultRequest) -> None:
        pass


class TcpSender:
    """Bulk-data sender with an always-full send buffer.

    ``control`` supplies the mode-specific behaviour; see
    :class:`NewRenoControl` for the hook surface.
    """

    def __init__(self, sim: Simulator, flow_id: int, net, cfg: TransportConfig | None = None,
                 control=None, start_at: int = 0, record_rtt: bool = True):
        self.sim = sim
        self.flow_id = flow_id
        self.net = net
        self.cfg = cfg or TransportConfig()
        self.state = FlowState.from_config(self.cfg)
        self.control = control or NewRenoControl()
        self.mode = self.control.mode
        self.snd_una = 0
        self.snd_nxt = 0
        self.snd_max = 0
        self.meter = ThroughputMeter(self.cfg.throughput_window)
        self.latest_rtt: int | None = None
        self.samples: deque[PathSample] = deque(maxlen=self.cfg.ring_size)
        self._acks_since_sample = 0
        self._ring_retx = 0  # per-ACK ring keeps its own counter; consults reset the state one

        self.bytes_sent = 0
        self.segments_sent = 0
        self.retransmits_total = 0
        self.acks_received = 0
        self.timeouts = 0
        self.first_loss_at: int | None = None
        self.first_loss_rtt: int | None = None
        self.ack_times: list[int] | None = None
        self.record_rtt = record_rtt
        self.rtt_log_t: list[int] = []
        self.rtt_log_v: list[int] = []
        self.cwnd_log: list[tuple[int, int]] = []
        self.send_violations = 0

        self._rto_deadline: int | None = None
        self._rto_event = None
        self.started = False
        self.control.attach(self)
        sim.schedule(start_at, self.start, label=f"start{flow_id}")

    # -- sending ---------------------------------------------------------------

    @property
    def flight(self) -> int:
        return self.snd_nxt - self.snd_una

    def start(self) -> None:
        self.started = True
        self.try_send()

    def _emit(self, seq: int, retransmit: bool) -> None:
        pkt = Packet(self.flow_id, seq, self.cfg.mss, self.sim.now, retransmit=retransmit)
        self.bytes_sent += pkt.payload
        self.segments_sent += 1
        if retransmit:
            self.retransmits_total += 1
            self.state.retransmit_count_window += 1
            self._ring_retx += 1
        self.net.send_data(pkt)
        if self._rto_deadline is None:
            self._arm_rto()

    def try_send(self) -> None:
        if not self.started:
            return
        mss = self.cfg.mss
        cwnd = self.state.cwnd
        while self.snd_nxt - self.snd_una + mss <= cwnd:
            seq = self.snd_nxt
            self._emit(seq, retransmit=seq < self.snd_max)
            self.snd_nxt += mss
            if self.snd_nxt > self.snd_max:
                self.snd_max = self.snd_nxt
            if self.snd_nxt - self.snd_una > cwnd:
                self.send_violations += 1

    def retransmit_head(self) -> None:
        self._emit(self.snd_una, retransmit=True)

    # -- timers ------------------------------------------------------------------

    def _arm_rto(self) -> None:
        self._rto_deadline = self.sim.now + self.state.rto
        if self._rto_event is None:
            self._rto_event = self.sim.schedule(self._rto_deadline, self._rto_fire, label=f"rto{self.flow_id}")

    def _rto_fire(self) -> None:
        self._rto_event = None
        if self._rto_deadline is None:
            return
        if self.sim.now < self._rto_deadline:
            self._rto_event = self.sim.schedule(self._rto_deadline, self._rto_fire, label=f"rto{self.flow_id}")
            return
        self._rto_deadline = None
        if self.flight <= 0:
            return
        self.timeouts += 1
        self._note_loss()
        on_rto(self.state, self.flight, highest_sent=self.snd_max)
        self.snd_nxt = self.snd_una  # go-back-N; receiver discards what it already holds
        self.try_send()

    # -- receiving ---------------------------------------------------------------

    def _note_loss(self) -> None:
        if self.first_loss_at is None:
            self.first_loss_at = self.sim.now
            self.first_loss_rtt = self.latest_rtt

    def on_ack(self, ack: Packet) -> None:
        now = self.sim.now
        st = self.state
        self.acks_received += 1
        if self.ack_times is not None:
            self.ack_times.append(now)
        if not ack.echo_retx:
            rtt = now - ack.echo_ts
            self.latest_rtt = rtt
            update_rtt(st, rtt)
            if self.record_rtt:
                self.rtt_log_t.append(now)
                self.rtt_log_v.append(rtt)

        req = None
        if ack.ack > self.snd_una:
            acked = ack.ack - self.snd_una
            self.snd_una = ack.ack
            if self.snd_nxt < self.snd_una:
                self.snd_nxt = self.snd_una
            self.meter.add(now, acked)
            was_recovering = st.in_recovery
            self.control.on_new_ack(acked)
            if was_recovering and st.in_recovery:
                self.retransmit_head()  # partial ACK: next hole
            if self.flight > 0:
                self._arm_rto()
            else:
                self._rto_deadline = None
        elif ack.ack == self.snd_una and self.flight > 0:
            was_recovering = st.in_recovery
            req = on_dupack(st, self.mode, highest_sent=self.snd_max)
            if st.in_recovery and not was_recovering:
                self._note_loss()
                self.retransmit_head()

        # ring before hooks, so a loss consult sees its own retransmission
        if self.cfg.history_mode == "per_ack" and self.latest_rtt is not None:
            self._acks_since_sample += 1
            if self._acks_since_sample >= self.cfg.history_stride:
                self._acks_since_sample = 0
                self.samples.append(PathSample(at=now, cwnd=st.cwnd, rtt=self.latest_rtt,
                                               throughput=self.meter.rate(now),
                                               retransmits_since_last_sample=self._ring_retx, ssthresh=st.ssthresh))
                self._ring_retx = 0
        if req is not None:
            self.control.on_loss_consult(req)

        self.control.after_ack()
        self.try_send()

    # -- sampling ------------------------------------------------------------------

    def sample_path(self, now: int | None = None, store: bool = True) -> PathSample:
        """Snapshot cwnd/RTT/throughput/retransmits and reset the retransmit counter."""
        if self.latest_rtt is None:
            raise NoMeasurement(f"flow {self.flow_id} has no RTT sample yet")
        now = self.sim.now if now is None else now
        st = self.state
        sample = PathSample(at=now, cwnd=st.cwnd, rtt=self.latest_rtt, throughput=self.meter.rate(now),
                            retransmits_since_last_sample=st.retransmit_count_window, ssthresh=st.ssthresh)
        st.retransmit_count_window = 0
        if store:
            self.samples.append(sample)
        return sample

    def log_cwnd(self) -> None:
        self.cwnd_log.append((self.sim.now, self.state.cwnd))


def sample_path(sender: TcpSender, now: int | None = None) -> PathSample:
    return sender.sample_path(now)
