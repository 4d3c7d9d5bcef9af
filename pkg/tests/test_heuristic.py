import pytest
from hypothesis import given, settings, strategies as st

from oracles import GRID, heuristic_oracle
from tcpllm.heuristic import (ActionKind, HeuristicParams, HeuristicState, apply_action, preset, step)
from tcpllm.netsim import MSS
from tcpllm.simcore import MSEC, SEC
from tcpllm.transport import FlowState, PathSample, Phase

NOW = 100 * SEC


def fs(cwnd):
    return FlowState(cwnd=cwnd, ssthresh=cwnd, phase=Phase.CONGESTION_AVOIDANCE)


def setup(cwnd, retx, d_rtt_ms, d_tp_mbps, since_s, waiting, ewma=0.0, base_rtt=100 * MSEC, base_tp=5e6):
    hs = HeuristicState(prev_rtt=base_rtt, prev_throughput=base_tp, loss_ewma=ewma,
                        last_action_at=NOW - int(since_s * SEC))
    hs.wait_until = NOW + SEC if waiting else hs.last_action_at
    sample = PathSample(at=NOW, cwnd=cwnd, rtt=base_rtt + int(d_rtt_ms * MSEC),
                        throughput=base_tp + d_tp_mbps * 1e6, retransmits_since_last_sample=retx)
    return hs, fs(cwnd), sample


def test_mild_loss_cut():
    hs, f, s = setup(322000, 1, 0, 0, 10, False)
    a = step(hs, f, s, preset("static"), NOW)
    assert (a.kind, a.cwnd, a.ssthresh) == (ActionKind.LOSS_CUT_MILD, 241500, 241500)


def test_heavy_loss_cut():
    hs, f, s = setup(242000, 3, 0, 0, 10, False)
    a = step(hs, f, s, preset("static"), NOW)
    assert (a.kind, a.cwnd) == (ActionKind.LOSS_CUT_HEAVY, 121000)


def test_congestion_cut():
    hs, f, s = setup(100000, 0, 10, 0, 10, False)
    a = step(hs, f, s, preset("static"), NOW)
    assert (a.kind, a.cwnd) == (ActionKind.CONG_CUT, 90000)


def test_probe_with_byte_delta():
    p = HeuristicParams(delta=1000, eps_rtt=2 * MSEC)
    hs, f, s = setup(121632, 0, 1, 0.2, 2.5, False)
    a = step(hs, f, s, p, NOW)
    assert (a.kind, a.cwnd) == (ActionKind.PROBE, 122632)


def test_ambiguous_holds():
    hs, f, s = setup(100000, 0, 1, -0.1, 10, False)
    a = step(hs, f, s, preset("static"), NOW)
    assert a.kind is ActionKind.HOLD and a.cwnd == 100000
    apply_action(f, a)
    assert f.cwnd == 100000


def test_presets():
    st_ = preset("static")
    assert (st_.t_probe, st_.delta, st_.eps_rtt) == (2 * SEC, 1448, 2 * MSEC)
    lr = preset("long_rtt")
    assert (lr.t_probe, lr.eps_rtt) == (3500 * MSEC, 10 * MSEC)
    assert preset("fluctuating").r_heavy == 3
    m = preset("moderate")
    assert (m.t_probe, m.delta, m.eps_rtt) == (1500 * MSEC, 2 * MSS, 3 * MSEC)
    for name in ("static", "moderate", "fluctuating", "long_rtt"):
        p = preset(name)
        assert (p.beta_heavy, p.beta_mild, p.gamma_cong, p.wait) == (0.5, 0.75, 0.9, 2 * SEC)
        assert p.eps_rtt_plus == 2 * p.eps_rtt
    with pytest.raises(ValueError):
        preset("satellite")


def test_param_validation():
    with pytest.raises(ValueError):
        HeuristicParams(beta_heavy=0.8, beta_mild=0.75)
    with pytest.raises(ValueError):
        HeuristicParams(gamma_cong=1.0)
    with pytest.raises(ValueError):
        HeuristicParams(delta=0)


def test_grid_has_240_cells():
    assert len(GRID) == 240


@pytest.mark.parametrize("scenario", ["static", "moderate", "fluctuating", "long_rtt"])
@pytest.mark.parametrize("ewma", [0.0, 2.0])
def test_step_matches_oracle_on_grid(scenario, ewma):
    p = preset(scenario)
    for retx, d_rtt, d_tp, since, waiting in GRID:
        hs, f, s = setup(200000, retx, d_rtt, d_tp, since, waiting, ewma=ewma)
        a = step(hs, f, s, p, NOW)
        kind, cwnd = heuristic_oracle(200000, retx, d_rtt * MSEC, d_tp * 1e6, int(since * SEC), waiting, ewma, p)
        assert (a.kind.value, a.cwnd) == (kind, cwnd), (retx, d_rtt, d_tp, since, waiting)
        if kind != "Hold":
            assert a.ssthresh == a.cwnd
            assert hs.wait_until == NOW + p.wait and hs.last_action_at == NOW


def test_first_step_uses_zero_deltas():
    hs = HeuristicState()
    s = PathSample(at=NOW, cwnd=50000, rtt=80 * MSEC, throughput=1e6, retransmits_since_last_sample=0)
    a = step(hs, fs(50000), s, preset("static"), NOW)
    assert a.kind is ActionKind.PROBE
    assert hs.prev_rtt == 80 * MSEC


@settings(max_examples=300, deadline=None)
@given(cwnd=st.integers(MSS, 10**7), retx=st.integers(1, 50))
def test_loss_cut_bounds(cwnd, retx):
    hs, f, s = setup(cwnd, retx, 0, 0, 10, False)
    a = step(hs, f, s, preset("static"), NOW)
    assert a.cwnd >= MSS and a.ssthresh == a.cwnd
    if a.kind is ActionKind.LOSS_CUT_HEAVY and cwnd >= 2 * MSS:
        assert a.cwnd == cwnd // 2


consult = st.tuples(st.integers(0, 4), st.integers(-20, 20), st.floats(-2, 2), st.integers(100, 3000))


@settings(max_examples=200, deadline=None)
@given(seq=st.lists(consult, min_size=1, max_size=60))
def test_non_loss_actions_spaced_by_wait(seq):
    p = preset("fluctuating")
    hs = HeuristicState()
    f = fs(100000)
    now = 0
    rtt, tp = 100 * MSEC, 5e6
    non_loss = []
    for retx, d_rtt, d_tp, gap_ms in seq:
        now += gap_ms * MSEC
        rtt = max(rtt + d_rtt * MSEC, MSEC)
        tp = max(tp + d_tp * 1e6, 0.0)
        s = PathSample(at=now, cwnd=f.cwnd, rtt=rtt, throughput=tp, retransmits_since_last_sample=retx)
        a = step(hs, f, s, p, now)
        apply_action(f, a)
        assert f.cwnd >= MSS
        assert hs.last_action_at is None or hs.wait_until >= hs.last_action_at
        if a.kind in (ActionKind.CONG_CUT, ActionKind.PROBE):
            non_loss.append(now)
        if a.kind is not ActionKind.HOLD:
            assert f.ssthresh == f.cwnd
    assert all(b - a >= p.wait for a, b in zip(non_loss, non_loss[1:]))
