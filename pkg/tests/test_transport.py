import pytest
from hypothesis import given, settings, strategies as st

from oracles import ca_round_oracle, lossless_sender, round_boundaries
from tcpllm.netsim import MSS, Packet
from tcpllm.simcore import MSEC, SEC, Simulator
from tcpllm.transport import (FlowState, NoMeasurement, Phase, PolicyConsultRequest, TcpSender, ThroughputMeter,
                              TransportConfig, on_ack_newreno, on_dupack, on_rto, update_rtt)


def ca_state(cwnd, **kw):
    return FlowState(cwnd=cwnd, ssthresh=kw.pop("ssthresh", cwnd), phase=Phase.CONGESTION_AVOIDANCE, **kw)


def test_slow_start_adds_one_mss():
    s = FlowState(cwnd=14480, ssthresh=65535)
    on_ack_newreno(s, MSS)
    assert s.cwnd == 15928 and s.phase is Phase.INITIALIZATION


def test_slow_start_crosses_threshold():
    s = FlowState(cwnd=64640, ssthresh=65535)
    on_ack_newreno(s, MSS)
    assert s.cwnd == 66088 and s.phase is Phase.CONGESTION_AVOIDANCE


def test_congestion_avoidance_increment_and_remainder():
    s = ca_state(14480)
    on_ack_newreno(s, MSS)
    assert s.cwnd == 14624
    assert s.ca_byte_accumulator == MSS * MSS - 144 * 14480


def test_congestion_avoidance_one_mss_per_window():
    # a full window of ACKs grows cwnd by close to one MSS
    s = ca_state(20 * MSS)
    start = s.cwnd
    for _ in range(20):
        on_ack_newreno(s, MSS)
    assert start + MSS - 100 <= s.cwnd <= start + MSS


def test_second_dupack_counts_only():
    s = ca_state(20000)
    for _ in range(2):
        assert on_dupack(s, "NewReno") is None
    assert s.cwnd == 20000 and s.dup_ack_count == 2 and s.phase is Phase.CONGESTION_AVOIDANCE


def test_third_dupack_newreno():
    s = ca_state(20000)
    for _ in range(3):
        on_dupack(s, "NewReno", highest_sent=50000)
    assert s.ssthresh == 10000 and s.cwnd == 14344
    assert s.phase is Phase.LOSS_RECOVERY and s.recover == 50000
    on_dupack(s, "NewReno")
    assert s.cwnd == 14344 + MSS  # inflation


def test_third_dupack_policy_modes_request_consult():
    for mode in ("TcpLlmG", "TcpLlmGAggressive", "HeuristicCC"):
        s = ca_state(20000)
        reqs = [on_dupack(s, mode) for _ in range(3)]
        assert reqs[:2] == [None, None]
        assert isinstance(reqs[2], PolicyConsultRequest)
        assert s.cwnd == 20000 and s.phase is Phase.LOSS_RECOVERY


def test_partial_and_full_ack():
    s = ca_state(20000)
    for _ in range(3):
        on_dupack(s, "NewReno", highest_sent=30000)
    on_ack_newreno(s, 2000)
    assert s.in_recovery and s.cwnd == 14344 - 2000 + MSS
    on_ack_newreno(s, 30000)
    assert not s.in_recovery and s.cwnd == 10000 and s.phase is Phase.CONGESTION_AVOIDANCE


def test_rto_example():
    s = ca_state(40000, rto=1 * SEC)
    on_rto(s, 40000)
    assert (s.ssthresh, s.cwnd, s.rto, s.phase) == (20000, MSS, 2 * SEC, Phase.RTO_BACKOFF)


def test_rto_cap_and_mode_independence():
    s = ca_state(40000, rto=60 * SEC)
    on_rto(s, 40000)
    assert s.rto == 60 * SEC
    a, b = ca_state(30000), ca_state(30000)
    for _ in range(3):
        on_dupack(b, "TcpLlmG")
    on_rto(a, 30000)
    on_rto(b, 30000)
    assert a == b


def test_rtt_estimator():
    s = FlowState()
    update_rtt(s, 100 * MSEC)
    assert s.srtt == 100 * MSEC and s.rttvar == 50 * MSEC and s.rto == 300 * MSEC
    update_rtt(s, 20 * MSEC)
    assert s.rttvar == (3 * 50 * MSEC + 80 * MSEC) // 4
    assert s.srtt == (7 * 100 * MSEC + 20 * MSEC) // 8
    for _ in range(200):
        update_rtt(s, 10 * MSEC)
    assert s.rto == 200 * MSEC  # min_rto floor


def test_throughput_window():
    m = ThroughputMeter(SEC)
    for i in range(1000):
        m.add(i * MSEC, 1250)
    assert m.rate(999 * MSEC) == pytest.approx(10e6)
    assert m.rate(3 * SEC) == 0


class FakeNet:
    def __init__(self):
        self.sent = []

    def send_data(self, pkt):
        self.sent.append(pkt)
        return True


def _ack(seq, echo: Packet):
    a = Packet(0, 0, 0, 0, is_ack=True)
    a.ack = seq
    a.echo_ts = echo.send_ts
    a.echo_retx = echo.retransmit
    return a


def test_sample_requires_rtt_and_resets_retransmits():
    sim = Simulator()
    net = FakeNet()
    snd = TcpSender(sim, 0, net, TransportConfig(initial_cwnd=4 * MSS))
    sim.run_until(0)
    with pytest.raises(NoMeasurement):
        snd.sample_path()
    sim.run_until(50 * MSEC)
    first = net.sent[0]
    snd.on_ack(_ack(MSS, first))
    for _ in range(3):
        snd.on_ack(_ack(MSS, net.sent[2]))  # dupacks -> fast retransmit
    s1 = snd.sample_path()
    assert s1.retransmits_since_last_sample == 1
    assert snd.sample_path().retransmits_since_last_sample == 0


def test_per_ack_ring_records_each_ack_and_keeps_consult_counter():
    sim = Simulator()
    net = FakeNet()
    snd = TcpSender(sim, 0, net, TransportConfig(initial_cwnd=4 * MSS))
    sim.run_until(50 * MSEC)
    snd.on_ack(_ack(MSS, net.sent[0]))
    for _ in range(3):
        snd.on_ack(_ack(MSS, net.sent[2]))
    ring = list(snd.samples)
    assert len(ring) == 4
    assert [s.retransmits_since_last_sample for s in ring] == [0, 0, 0, 1]
    # a consult-time sample still sees the retransmission
    assert snd.sample_path(store=False).retransmits_since_last_sample == 1
    assert len(snd.samples) == 4


def test_karn_excludes_retransmitted_echo():
    sim = Simulator()
    net = FakeNet()
    snd = TcpSender(sim, 0, net, TransportConfig(initial_cwnd=4 * MSS))
    sim.run_until(0)
    sim.run_until(40 * MSEC)
    snd.on_ack(_ack(MSS, net.sent[0]))
    assert snd.latest_rtt == 40 * MSEC
    for _ in range(3):
        snd.on_ack(_ack(MSS, net.sent[2]))
    retx = net.sent[-1]
    assert retx.retransmit and retx.seq == MSS
    rtt_before, srtt_before = snd.latest_rtt, snd.state.srtt
    sim.run_until(500 * MSEC)
    snd.on_ack(_ack(3 * MSS, retx))
    assert snd.latest_rtt == rtt_before and snd.state.srtt == srtt_before


def test_slow_start_doubles_per_round_on_lossless_link():
    sim, snd = lossless_sender(10 * MSS, 10**9)
    marks = round_boundaries(sim, snd, 2 * SEC)
    for k, (cwnd, _) in enumerate(marks[:5]):
        assert abs(cwnd - 10 * MSS * 2 ** (k + 1)) <= MSS


def test_congestion_avoidance_one_mss_per_round():
    sim, snd = lossless_sender(10 * MSS, 10 * MSS)
    marks = round_boundaries(sim, snd, 10 * SEC)
    assert len(marks) >= 51
    cw = [c for c, _ in marks[:51]]
    assert all(p is Phase.CONGESTION_AVOIDANCE for _, p in marks[:51])
    for a, b in zip(cw, cw[1:]):
        assert abs((b - a) - MSS) <= MSS
    assert abs(cw[50] - ca_round_oracle(cw[0], MSS, 50)[-1]) <= MSS
    assert abs(cw[50] - cw[0] - 50 * MSS) <= 2 * MSS


@settings(max_examples=200, deadline=None)
@given(cwnd=st.integers(MSS, 10**7), acks=st.lists(st.integers(1, 4 * MSS), min_size=1, max_size=50))
def test_ca_growth_bounded_by_acked_share(cwnd, acks):
    s = ca_state(cwnd)
    total = 0
    for a in acks:
        before = s.cwnd
        on_ack_newreno(s, a)
        total += a
        assert s.cwnd >= before
        assert 0 <= s.ca_byte_accumulator < s.cwnd
    assert s.cwnd - cwnd <= MSS * total // cwnd + 1


@settings(max_examples=200, deadline=None)
@given(cwnd=st.integers(2 * MSS, 10**7), flight=st.integers(0, 10**7), rto=st.integers(200 * MSEC, 60 * SEC))
def test_rto_invariants(cwnd, flight, rto):
    s = ca_state(cwnd, rto=rto)
    on_rto(s, flight)
    assert s.cwnd == MSS and s.ssthresh >= 2 * MSS and s.rto <= 60 * SEC
