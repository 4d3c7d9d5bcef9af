"""Independent reference implementations used by unit and acceptance tests."""

import itertools
import math

from tcpllm.netsim import LinkSpec, TopologyConfig, build_topology
from tcpllm.simcore import MSEC, Simulator
from tcpllm.transport import TcpReceiver, TcpSender, TransportConfig

# discretized consult grid: retx, dRTT (ms), dTP (Mb/s), time since last action (s), wait armed
GRID = list(itertools.product([0, 1, 3, 5], [-5, 0, 1, 5, 10], [-1, 0, 1], [0.5, 2.5], [True, False]))


def heuristic_oracle(cwnd, retx, d_rtt, d_tp, since, waiting, ewma_before, p):
    """Rule table transcribed line by line; returns (kind, cwnd)."""
    ewma = (1 - p.loss_ewma_alpha) * ewma_before + p.loss_ewma_alpha * retx
    if retx > 0 and (retx >= p.r_heavy or ewma >= p.loss_ewma_threshold):
        return "LossCutHeavy", max(math.floor(p.beta_heavy * cwnd), p.mss)
    if retx > 0:
        return "LossCutMild", max(math.floor(p.beta_mild * cwnd), p.mss)
    if not waiting and retx == 0 and d_rtt >= p.eps_rtt_plus:
        return "CongCut", max(math.floor(p.gamma_cong * cwnd), p.mss)
    if not waiting and since >= p.t_probe and retx == 0 and abs(d_rtt) <= p.eps_rtt and d_tp >= 0:
        return "Probe", cwnd + p.delta
    return "Hold", cwnd


def lossless_sender(cwnd0, ssthresh):
    sim = Simulator()
    cfg = TopologyConfig(bottleneck=LinkSpec(10e6, 18 * MSEC, 10**6))
    tcfg = TransportConfig(initial_cwnd=cwnd0, initial_ssthresh=ssthresh)
    net = build_topology(cfg, sim, lambda i, m, n: (TcpSender(sim, i, n, tcfg), TcpReceiver(sim, i, n)))
    return sim, net.senders[0]


def round_boundaries(sim, snd, t_end):
    """(cwnd, phase) each time the last byte of the previous round is acked."""
    marks = []
    sim.run_until(0)
    round_end = [snd.snd_max]
    orig = snd.on_ack

    def on_ack(ack):
        orig(ack)
        if snd.snd_una >= round_end[0]:
            marks.append((snd.state.cwnd, snd.state.phase))
            round_end[0] = snd.snd_max

    snd.on_ack = on_ack
    sim.run_until(t_end)
    return marks


def ca_round_oracle(w0, mss, rounds):
    """Per-round byte-counting growth when each round acks the whole segments in flight."""
    w = float(w0)
    out = [w]
    for _ in range(rounds):
        w += mss * (w // mss) * mss / w
        out.append(w)
    return out
