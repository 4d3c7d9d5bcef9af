"""Rule-based window controller distilled from logged LLM decisions.

Four branches, checked in priority order on every consult:

1. loss      -- retransmissions seen: cut to ``beta_mild`` (or ``beta_heavy`` when
                losses are heavy/persistent);
2. congestion -- RTT rose by at least ``eps_rtt_plus`` with no loss: cut to ``gamma_cong``;
3. probe     -- quiet for ``t_probe``, RTT flat within ``eps_rtt``, throughput not
                falling: add ``delta`` bytes;
4. hold.

Every action sets ssthresh to the new window and arms a ``wait`` timer that
suppresses branches 2 and 3; the loss branch is never suppressed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .netsim import MSS
from .simcore import MSEC, SEC, millis, seconds
from .transport import NoMeasurement, PathSample, Phase, FlowState, on_ack_newreno, ca_hold


class ActionKind(enum.Enum):
    LOSS_CUT_HEAVY = "LossCutHeavy"
    LOSS_CUT_MILD = "LossCutMild"
    CONG_CUT = "CongCut"
    PROBE = "Probe"
    HOLD = "Hold"


@dataclass
class HeuristicParams:
    beta_heavy: float = 0.5
    beta_mild: float = 0.75
    gamma_cong: float = 0.9
    delta: int = MSS
    t_probe: int = 2 * SEC
    eps_rtt: int = 2 * MSEC
    eps_rtt_plus: int | None = None  # defaults to 2 * eps_rtt
    r_heavy: int = 3
    wait: int = 2 * SEC
    loss_ewma_alpha: float = 0.3
    loss_ewma_threshold: float = 1.0
    mss: int = MSS
    consult_interval: int = 2 * SEC

    def __post_init__(self):
        if self.eps_rtt_plus is None:
            self.eps_rtt_plus = 2 * self.eps_rtt
        if not 0 < self.beta_heavy < self.beta_mild < 1:
            raise ValueError("need 0 < beta_heavy < beta_mild < 1")
        if not 0 < self.gamma_cong < 1:
            raise ValueError("gamma_cong must be in (0, 1)")
        if self.delta < 1:
            raise ValueError("delta must be at least one byte")
        if self.wait <= 0:
            raise ValueError("wait must be positive")
        if self.consult_interval <= 0:
            raise ValueError("consult_interval must be positive")


@dataclass
class HeuristicState:
    wait_until: int = 0
    last_action_at: int | None = None
    loss_ewma: float = 0.0
    prev_rtt: int | None = None
    prev_throughput: float | None = None


@dataclass
class HeuristicAction:
    kind: ActionKind
    cwnd: int
    ssthresh: int


def preset(scenario: str) -> HeuristicParams:
    """Suggested parameter sets for four kinds of path."""
    table = {
        "static": dict(t_probe=seconds(2), delta=1 * MSS, eps_rtt=millis(2)),
        "moderate": dict(t_probe=seconds(1.5), delta=2 * MSS, eps_rtt=millis(3)),
        "fluctuating": dict(t_probe=seconds(1.25), delta=2 * MSS, eps_rtt=millis(4.5), r_heavy=3),
        "long_rtt": dict(t_probe=seconds(3.5), delta=1 * MSS, eps_rtt=millis(10)),
    }
    try:
        return HeuristicParams(**table[scenario])
    except KeyError:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {sorted(table)}") from None


def step(hs: HeuristicState, fs: FlowState, sample: PathSample, p: HeuristicParams, now: int) -> HeuristicAction:
    """Pick an action for one consult and update ``hs``. ``fs`` is read, not written."""
    retx = sample.retransmits_since_last_sample
    d_rtt = 0 if hs.prev_rtt is None else sample.rtt - hs.prev_rtt
    d_tp = 0.0 if hs.prev_throughput is None else sample.throughput - hs.prev_throughput
    hs.prev_rtt = sample.rtt
    hs.prev_throughput = sample.throughput
    hs.loss_ewma = (1 - p.loss_ewma_alpha) * hs.loss_ewma + p.loss_ewma_alpha * retx

    cwnd = fs.cwnd
    waiting = now < hs.wait_until
    since_action = None if hs.last_action_at is None else now - hs.last_action_at

    if retx > 0:
        if retx >= p.r_heavy or hs.loss_ewma >= p.loss_ewma_threshold:
            kind, new = ActionKind.LOSS_CUT_HEAVY, max(int(p.beta_heavy * cwnd), p.mss)
        else:
            kind, new = ActionKind.LOSS_CUT_MILD, max(int(p.beta_mild * cwnd), p.mss)
    elif not waiting and d_rtt >= p.eps_rtt_plus:
        kind, new = ActionKind.CONG_CUT, max(int(p.gamma_cong * cwnd), p.mss)
    elif (not waiting and (since_action is None or since_action >= p.t_probe)
          and abs(d_rtt) <= p.eps_rtt and d_tp >= 0):
        kind, new = ActionKind.PROBE, cwnd + p.delta
    else:
        return HeuristicAction(ActionKind.HOLD, cwnd, fs.ssthresh)

    hs.last_action_at = now
    hs.wait_until = now + p.wait
    return HeuristicAction(kind, new, new)


def apply_action(fs: FlowState, action: HeuristicAction) -> FlowState:
    if action.kind is not ActionKind.HOLD:
        fs.cwnd = action.cwnd
        fs.ssthresh = action.ssthresh
        if fs.phase is not Phase.LOSS_RECOVERY:
            fs.phase = Phase.CONGESTION_AVOIDANCE
    return fs


class HeuristicControl:
    """Sender hook running :func:`step` on a fixed consult cadence and on loss.

    Slow start and RTO handling stay standard. Once out of slow start the
    window moves only through heuristic actions.
    """

    mode = "HeuristicCC"

    def __init__(self, params: HeuristicParams | None = None, log: list | None = None):
        self.params = params or HeuristicParams()
        self.state = HeuristicState()
        self.log = log if log is not None else []
        self.consults = 0

    def attach(self, sender) -> None:
        self.sender = sender
        sender.sim.schedule(self.params.consult_interval, self._tick, label=f"heur{sender.flow_id}")

    def on_new_ack(self, acked: int) -> None:
        s = self.sender.state
        if s.phase in (Phase.INITIALIZATION, Phase.RTO_BACKOFF):
            on_ack_newreno(s, acked, self.sender.sim.now)
        else:
            ca_hold(s, acked)

    def after_ack(self) -> None:
        pass

    def on_loss_consult(self, req) -> None:
        self._consult(req.reason)

    def _tick(self) -> None:
        sim = self.sender.sim
        sim.schedule_in(self.params.consult_interval, self._tick, label=f"heur{self.sender.flow_id}")
        if self.sender.state.phase in (Phase.INITIALIZATION, Phase.RTO_BACKOFF):
            return
        self._consult("periodic")

    def _consult(self, reason: str) -> None:
        sndr = self.sender
        try:
            sample = sndr.sample_path(store=False)
        except NoMeasurement:
            return
        self.consults += 1
        action = step(self.state, sndr.state, sample, self.params, sndr.sim.now)
        apply_action(sndr.state, action)
        self.log.append((sndr.sim.now, sndr.flow_id, reason, action.kind.value, action.cwnd))
        if action.kind is not ActionKind.HOLD:
            sndr.log_cwnd()
            sndr.try_send()
