import dataclasses
import statistics
from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from biscay.cca import Protocol
from biscay.modem_emulator import RadioConfig
from biscay.netsim import (
    EventLog,
    FlowSpec,
    Packet,
    Scenario,
    ScenarioError,
    Simulator,
    cellular_buffer_step,
    measure,
    run,
    set_wired_capacity,
)
from biscay.traces import LinkTrace, random_walk, step_trace


def _tput_after(log, flow, start_ms, end_ms):
    s = measure(log, 100, start_ms, end_ms)[flow]
    return statistics.fmean(s.throughput_bps)


def test_reno_goodput_matches_constant_capacity():
    sc = Scenario(LinkTrace.constant(10e6, 8000), flows=[FlowSpec("reno")])
    log = run(sc)
    assert _tput_after(log, 0, 2000, 8000) == pytest.approx(10e6, rel=0.05)


def test_zero_capacity_delivers_nothing():
    sc = Scenario(LinkTrace.constant(0, 1000), flows=[FlowSpec("cubic")])
    log = run(sc)
    assert not log.of_kind("deliver")
    s = measure(log)[0]
    assert s.delivered_bytes == 0 and s.conserved()


def test_same_scenario_same_log_bytes():
    def make():
        return Scenario(random_walk(5, 30, 5, 2, seed=9), flows=[FlowSpec("biscay"), FlowSpec("cubic", 300)],
                        seed=4)
    assert run(make()).dumps() == run(make()).dumps()


def test_different_seed_changes_noisy_run():
    radio = RadioConfig(grant_noise=0.1)
    a = run(Scenario(LinkTrace.constant(10e6, 1000), radio=radio, seed=1)).dumps()
    b = run(Scenario(LinkTrace.constant(10e6, 1000), radio=dataclasses.replace(radio), seed=2)).dumps()
    assert a != b


def test_buffer_step_exact_division():
    q = deque([1500, 1500, 1500])
    served, credit = cellular_buffer_step(3000 * 8, q)
    assert len(served) == 2 and len(q) == 1 and credit == 0


def test_buffer_step_carries_credit():
    q = deque([1500, 1500, 1500])
    served, credit = cellular_buffer_step(2000 * 8, q)
    assert len(served) == 1 and credit == 500 * 8
    # byte conservation: the carried credit completes the next packet
    served2, credit2 = cellular_buffer_step(1000 * 8, q, credit)
    assert len(served2) == 1 and credit2 == 0


def test_buffer_step_credit_dropped_when_queue_empties():
    q = deque([1000])
    served, credit = cellular_buffer_step(5000 * 8, q)
    assert served == [1000] and credit == 0


@given(st.lists(st.integers(40, 1500), max_size=40), st.lists(st.integers(0, 30_000), min_size=1, max_size=40))
def test_buffer_step_work_conserving(sizes, grants):
    q = deque(sizes)
    credit = 0
    served_bytes = 0
    granted = 0
    for g in grants:
        before = sum(q)
        served, credit = cellular_buffer_step(g, q, credit)
        served_bytes += sum(served)
        granted += g
        assert sum(served) + sum(q) == before
        # a backlogged queue never leaves a full packet's worth unused
        if q:
            assert credit < q[0] * 8
    assert served_bytes * 8 <= granted


def test_full_buffer_tail_drops():
    # 15 Mbit/s offered into 1 Mbit/s with a 30 kB buffer
    sc = Scenario(LinkTrace.constant(1e6, 1000), cell_buffer_bytes=30_000,
                  flows=[FlowSpec(protocol=Protocol.UDP, rate_bps=15e6)])
    log = run(sc)
    drops = [r for r in log.of_kind("drop") if r[5] == "cell"]
    assert drops
    s = measure(log)[0]
    assert s.conserved()


def test_wired_step_down_settles_near_5():
    sc = Scenario(LinkTrace.constant(20e6, 8000), prop_delay_ms=20, flows=[FlowSpec("cubic")])
    set_wired_capacity(sc, [(0, 50e6), (3000, 5e6)])
    log = run(sc)
    assert _tput_after(log, 0, 5000, 8000) == pytest.approx(5e6, rel=0.1)


def test_wired_step_up_settles_near_15():
    sc = Scenario(LinkTrace.constant(20e6, 8000), prop_delay_ms=20, flows=[FlowSpec("bbr-lite")])
    set_wired_capacity(sc, [(0, 5e6), (3000, 15e6)])
    log = run(sc)
    assert _tput_after(log, 0, 5000, 8000) == pytest.approx(15e6, rel=0.1)


def test_single_entry_schedule_is_constant():
    sc = Scenario(LinkTrace.constant(20e6, 3000), flows=[FlowSpec("cubic")])
    set_wired_capacity(sc, [(0, 8e6)])
    log = run(sc)
    assert len(log.of_kind("wired")) <= 1
    assert _tput_after(log, 0, 1000, 3000) == pytest.approx(8e6, rel=0.1)


def test_set_wired_capacity_rejects_unordered():
    sc = Scenario(LinkTrace.constant(20e6, 1000))
    with pytest.raises(ScenarioError):
        set_wired_capacity(sc, [(0, 5e6), (0, 6e6)])


def test_measure_one_way_delay():
    log = EventLog()
    log.add(0, "start", 0, "cubic")
    log.add(0, "send", 0, 0, 1500)
    log.add(42_000, "deliver", 0, 0, 1500, 42_000)
    log.add(100_000, "end", 0, 1, 1, 0, 0, 0)
    s = measure(log)[0]
    assert s.owd_us == [42_000]
    assert s.throughput_bps == [1500 * 8 * 10]
    p = Packet(0, 0, 1500, 0, 0, 0, 0)
    p.deliver_us = 42_000
    assert p.one_way_delay_us == 42_000


def test_measure_empty_log():
    assert measure(EventLog()) == {}


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["biscay", "bbr-lite", "cubic", "reno"]))
def test_conservation_and_order_on_random_runs(seed, cca):
    sc = Scenario(random_walk(1, 30, 10, 1, seed=seed), cell_buffer_bytes=40_000, seed=seed,
                  flows=[FlowSpec(cca), FlowSpec(protocol=Protocol.UDP, rate_bps=10e6, start_ms=200)])
    log = run(sc)
    for s in measure(log).values():
        assert s.conserved()
    for flow in (0, 1):
        sent = [r[3] for r in log.of_kind("send") if r[2] == flow]
        lost = {r[3] for r in log.of_kind("drop") if r[2] == flow}
        got = [r[3] for r in log.of_kind("deliver") if r[2] == flow]
        # delivery order equals send order minus drops
        assert got == [x for x in sent if x not in lost][:len(got)]


def test_rate_bounded_by_min_capacity():
    sc = Scenario(LinkTrace.constant(12e6, 3000), flows=[FlowSpec("cubic"), FlowSpec("bbr-lite")])
    set_wired_capacity(sc, [(0, 9e6)])
    log = run(sc)
    total = sum(s.delivered_bytes for s in measure(log).values()) * 8
    # one 100 ms window of slack
    assert total <= 9e6 * 3 + 9e6 * 0.1


def test_log_is_time_ordered_and_serialises():
    log = run(Scenario(LinkTrace.constant(5e6, 300)))
    times = [r[0] for r in log.records]
    assert times == sorted(times)
    first = log.dumps().splitlines()[0]
    assert first.split()[1] == "start" and "flow=0" in first


def test_transitions_reported_for_biscay():
    sim = Simulator(Scenario(LinkTrace.constant(10e6, 1000)))
    sim.run()
    tr = sim.transitions()[0]
    assert tr and tr[0][1].value == "STARTUP"


@pytest.mark.parametrize("bad", [
    dict(trace=LinkTrace.constant(1e6, 0)),
    dict(flows=[]),
    dict(flows=[FlowSpec("vegas")]),
    dict(flows=[FlowSpec(protocol=Protocol.UDP)]),
    dict(wired_schedule=((10, 1e6),)),
    dict(wired_schedule=((0, 0),)),
    dict(cell_buffer_bytes=100),
    dict(downlink_sender_cca="biscay"),
])
def test_validation_errors_before_running(bad):
    kw = dict(trace=LinkTrace.constant(1e6, 100))
    kw.update(bad)
    with pytest.raises(ScenarioError):
        Simulator(Scenario(**kw))


def test_step_trace_capacity_changes_delivery():
    sc = Scenario(step_trace([(0, 20), (2, 5)], 4), flows=[FlowSpec("biscay")])
    log = run(sc)
    hi = _tput_after(log, 0, 1000, 2000)
    lo = _tput_after(log, 0, 3000, 4000)
    assert hi == pytest.approx(20e6, rel=0.1)
    assert lo == pytest.approx(5e6, rel=0.1)


@pytest.mark.parametrize("cca", ["reno", "cubic"])
def test_loss_based_cwnd_grows_until_first_loss(cca):
    sc = Scenario(LinkTrace.constant(10e6, 6000), cell_buffer_bytes=150_000, prop_delay_ms=20,
                  flows=[FlowSpec(cca)])
    log = run(sc)
    first_loss = min((r[0] for r in log.records if r[1] in ("loss", "timeout")), default=None)
    assert first_loss is not None
    cwnds = [r[5] for r in log.of_kind("ack") if r[0] < first_loss]
    assert cwnds == sorted(cwnds) and cwnds[-1] > cwnds[0]


def test_bbr_cwnd_within_bounds_of_true_bdp():
    cap = 10e6
    sc = Scenario(LinkTrace.constant(cap, 8000), prop_delay_ms=20, flows=[FlowSpec("bbr-lite")])
    log = run(sc)
    acks = log.of_kind("ack")
    base_rtt = min(r[4] for r in acks)
    bdp = cap * base_rtt / 1e6 / (8 * sc.mss)
    late = [r[5] for r in acks if r[0] >= 6_000_000]
    med = statistics.median(late)
    assert bdp <= med <= 2.5 * bdp
