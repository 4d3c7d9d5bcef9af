import pytest
from hypothesis import given, settings, strategies as st

from tcpllm.simcore import SEC, PastEvent, RunConfig, Simulator, millis, seconds


def test_event_fires_at_time():
    sim = Simulator()
    seen = []
    sim.schedule(5 * SEC, lambda: seen.append(sim.now))
    sim.run_until(10 * SEC)
    assert seen == [5 * SEC]


def test_ties_break_by_insertion_order():
    sim = Simulator()
    seen = []
    for tag in "abc":
        sim.schedule(SEC, seen.append, tag)
    sim.run_until(SEC)
    assert seen == ["a", "b", "c"]


def test_past_event_rejected():
    sim = Simulator()
    sim.run_until(10 * SEC)
    with pytest.raises(PastEvent):
        sim.schedule(9 * SEC, lambda: None)


def test_empty_run_advances_clock():
    sim = Simulator()
    stats = sim.run_until(120 * SEC)
    assert stats.events_processed == 0
    assert stats.final_time == sim.now == 120 * SEC


def test_boundary_inclusive():
    sim = Simulator()
    for t in (1, 1, 3):
        sim.schedule(t * SEC, lambda: None)
    assert sim.run_until(2 * SEC).events_processed == 2
    assert sim.pending() == 1
    assert sim.run_until(3 * SEC).events_processed == 1


def test_cancel():
    sim = Simulator()
    seen = []
    h = sim.schedule(SEC, seen.append, 1)
    h.cancel()
    sim.run_until(2 * SEC)
    assert seen == []
    assert sim.peek_time() is None


def test_handlers_can_schedule_now():
    sim = Simulator()
    seen = []

    def first():
        sim.schedule(sim.now, seen.append, "second")
        seen.append("first")

    sim.schedule(SEC, first)
    sim.run_until(SEC)
    assert seen == ["first", "second"]


def test_conversions():
    assert seconds(1.5) == 1_500_000
    assert millis(18) == 18_000
    with pytest.raises(ValueError):
        RunConfig(duration=0)


def _chaotic_run(seed):
    sim = Simulator(seed=seed, record_log=True)

    def spawn(depth):
        if depth < 6:
            for _ in range(2):
                sim.schedule_in(sim.rng.randrange(0, 1000), spawn, depth + 1, label=f"d{depth}")

    sim.schedule(0, spawn, 0)
    stats = sim.run_until(10_000)
    return stats, sim.log


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_same_seed_same_event_log(seed):
    assert _chaotic_run(seed) == _chaotic_run(seed)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60))
def test_processing_order_is_time_then_insertion(times):
    sim = Simulator()
    seen = []
    for i, t in enumerate(times):
        sim.schedule(t, seen.append, (t, i))
    sim.run_until(10_000)
    assert seen == sorted(seen)
    assert [x[0] for x in seen] == sorted(times)
