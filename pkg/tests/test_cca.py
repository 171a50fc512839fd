import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from biscay.bandwidth import BandwidthSample, Method
from biscay.cca import (
    CCA_NAMES,
    BbrLite,
    BbrMode,
    Biscay,
    CcState,
    CongestionEvent,
    Cubic,
    EventKind,
    FlowId,
    FlowRegistry,
    FlowState,
    KpiFeed,
    MaxFilter,
    MinRttFilter,
    Protocol,
    Reno,
    bdp_cwnd,
    bw_split_policy,
    cubic_k,
    cubic_window,
    make_cca,
    min_rtt_update,
    slow_start_step,
)

MSS = 1500
FID = FlowId("10.0.0.1", "10.0.0.2", 40000, 443)


def ack(t_us, rtt_us=50_000, acked=MSS, rate_bps=None, interval_us=50_000, inflight=0):
    delivered = 0 if rate_bps is None else int(round(rate_bps * interval_us / 8e6))
    return CongestionEvent(EventKind.ACK, FID, t_us, t_us - rtt_us, acked, delivered,
                           interval_us if rate_bps is not None else 0, rtt_us, inflight)


def kpi(t_us, bps, no_grants=False):
    return BandwidthSample(t_us / 1000, bps, Method.GPP3, no_grants)


# -- helpers ------------------------------------------------------------------------


def test_slow_start_examples():
    cwnd = 10
    for _ in range(10):
        cwnd = slow_start_step(cwnd)
    assert cwnd == 20
    assert slow_start_step(1) == 2
    cwnd = 4
    for _ in range(3):
        cwnd = slow_start_step(cwnd, cwnd)
    assert cwnd == 32


def test_bw_split_examples():
    assert bw_split_policy(12_000_000, 3) == 4_000_000
    assert bw_split_policy(10_000_000, 3) == 3_333_333
    assert bw_split_policy(7_777_777, 1) == 7_777_777
    reg = FlowRegistry()
    reg.register(FID)
    reg.register(FID)  # idempotent
    reg.register(FID._replace(src_port=1), Protocol.UDP)
    assert bw_split_policy(10, reg) == 5
    with pytest.raises(AssertionError):
        bw_split_policy(10, 0)


@given(st.integers(0, 10**10), st.integers(1, 64))
def test_bw_split_near_conservation(bw, n):
    total = n * bw_split_policy(bw, n)
    assert bw - n + 1 <= total <= bw


def test_bdp_examples():
    assert bdp_cwnd(10e6, 60_000, MSS) == 50
    assert bdp_cwnd(4e6, 50_000, MSS) == 17
    assert bdp_cwnd(0, 50_000, MSS) == 1
    with pytest.raises(ValueError):
        bdp_cwnd(1e6, 0, MSS)


@given(st.integers(0, 10**9), st.integers(1, 2 * 10**6), st.integers(500, 9000))
def test_bdp_matches_exact_rational(bw, rtt, mss):
    exact = Fraction(bw) * Fraction(rtt, 10**6) / (8 * mss)
    assert bdp_cwnd(bw, rtt, mss) == max(1, math.ceil(exact))
    # doubling bandwidth doubles the pre-ceil quantity exactly
    assert Fraction(2 * bw) * Fraction(rtt, 10**6) / (8 * mss) == 2 * exact


def test_min_rtt_examples():
    w = MinRttFilter(10_000_000)
    assert min_rtt_update(w, 0, 80_000) == 80_000
    w = MinRttFilter(10_000_000)
    for t, s in [(0, 50_000), (1, 40_000), (2, 60_000)]:
        w.update(t, s)
    assert w.value == 40_000
    w = MinRttFilter(10_000_000)
    w.update(0, 30_000)
    w.update(5_000_000, 45_000)
    assert w.update(10_500_000, 50_000) == 45_000


@given(st.lists(st.tuples(st.integers(0, 1000), st.integers(1, 10**6)), min_size=1, max_size=60),
       st.integers(1, 500))
def test_min_rtt_matches_brute_force(steps, window):
    w = MinRttFilter(window)
    t = 0
    hist = []
    for dt, s in steps:
        t += dt
        hist.append((t, s))
        got = w.update(t, s)
        expect = min(v for ts, v in hist if ts >= t - window)
        assert got == expect


def test_max_filter_example():
    f = MaxFilter(1_000_000)
    for t, v in [(0, 5e6), (1, 7e6), (2, 6e6)]:
        f.update(t, v)
    assert f.value == 7e6


# -- CUBIC ------------------------------------------------------------------------


def _k_by_bisection(w_max, beta, c):
    lo, hi = 0.0, 1000.0
    target = w_max * (1 - beta)
    for _ in range(200):
        mid = (lo + hi) / 2
        if c * mid ** 3 < target:
            lo = mid
        else:
            hi = mid
    return lo


def test_cubic_k_example():
    assert cubic_k(100, 0.7, 0.4) == pytest.approx(75 ** (1 / 3), rel=1e-12)
    assert cubic_k(100) == pytest.approx(4.217163, abs=1e-6)
    assert cubic_window(cubic_k(100), 100) == pytest.approx(100)


@given(st.floats(1, 1e5), st.floats(0.1, 0.95), st.floats(0.05, 5))
def test_cubic_k_matches_bisection(w_max, beta, c):
    assert cubic_k(w_max, beta, c) == pytest.approx(_k_by_bisection(w_max, beta, c), rel=1e-9)


def test_cubic_loss_multiplies_by_beta():
    cc = Cubic()
    flow = FlowState(FID, cwnd=100.0)
    cc.on_event(CongestionEvent(EventKind.DUP_ACK, FID, 1000), flow)
    assert flow.cwnd == pytest.approx(70)
    assert cc.w_max == 100 and cc.k == pytest.approx(75 ** (1 / 3))


def test_cubic_regrows_to_w_max_near_k():
    cc = Cubic()
    flow = FlowState(FID, cwnd=100.0)
    cc.on_event(CongestionEvent(EventKind.DUP_ACK, FID, 0), flow)
    t = 0
    # at a 100 ms rtt the cubic curve sits above the Reno-friendly floor
    while t < int(cc.k * 1e6):
        t += 100_000
        cc.on_event(ack(t, rtt_us=100_000, acked=int(flow.cwnd) * MSS), flow)
    assert 90 <= flow.cwnd <= 110


def test_cubic_reno_friendly_floor_on_short_rtt():
    cc = Cubic()
    flow = FlowState(FID, cwnd=100.0)
    cc.on_event(CongestionEvent(EventKind.DUP_ACK, FID, 0), flow)
    t = 0
    while t < 2_000_000:
        t += 10_000
        cc.on_event(ack(t, rtt_us=10_000, acked=int(flow.cwnd) * MSS), flow)
    b = 0.7
    w_est = 100 * b + 3 * (1 - b) / (1 + b) * 2.0 / 0.01
    assert flow.cwnd >= w_est - 1


def test_cubic_timeout():
    cc = Cubic()
    flow = FlowState(FID, cwnd=50.0)
    cc.on_event(CongestionEvent(EventKind.TIMEOUT, FID, 0), flow)
    assert flow.cwnd == 1.0 and cc.ssthresh == pytest.approx(35)


# -- Reno ---------------------------------------------------------------------------


def test_reno_examples():
    cc = Reno(ssthresh=5)
    flow = FlowState(FID, cwnd=10.0)
    for i in range(10):
        cc.on_event(ack(i), flow)
    assert flow.cwnd == 11
    flow.cwnd = 40.0
    cc.on_event(CongestionEvent(EventKind.DUP_ACK, FID, 100), flow)
    assert flow.cwnd == 20
    flow.cwnd = 40.0
    cc.on_event(CongestionEvent(EventKind.TIMEOUT, FID, 200), flow)
    assert flow.cwnd == 1 and cc.ssthresh == 20


def test_reno_slow_start_below_ssthresh():
    cc = Reno()
    flow = FlowState(FID, cwnd=1.0)
    cc.on_event(ack(0), flow)
    assert flow.cwnd == 2


# -- BBR-lite -------------------------------------------------------------------------


def test_bbr_estimate_and_cwnd_example():
    cc = BbrLite()
    flow = FlowState(FID)
    for i, r in enumerate([5e6, 7e6, 6e6]):
        cc.on_event(ack(1000 * (i + 1), rtt_us=50_000, rate_bps=r), flow)
    assert cc.bw.value == pytest.approx(7e6, rel=1e-4)
    assert flow.cwnd == 2 * math.ceil(cc.bw.value * 0.05 / (8 * MSS)) == 60


def test_bbr_exits_startup_on_plateau():
    cc = BbrLite()
    flow = FlowState(FID)
    t = 0
    # three+ round trips at a flat rate
    for _ in range(5 * 50):
        t += 1000
        cc.on_event(ack(t, rtt_us=50_000, rate_bps=10e6), flow)
    assert cc.mode is not BbrMode.STARTUP


def test_bbr_stays_in_startup_while_growing():
    cc = BbrLite()
    flow = FlowState(FID)
    t = 0
    rate = 1e6
    for _ in range(6):
        for _ in range(50):
            t += 1000
            cc.on_event(ack(t, rtt_us=50_000, rate_bps=rate), flow)
        rate *= 2
    assert cc.mode is BbrMode.STARTUP
    assert cc.pacing_gain == pytest.approx(2.885)


def test_bbr_gain_cycle():
    cc = BbrLite()
    flow = FlowState(FID)
    t = 0
    gains = []
    for _ in range(30 * 50):
        t += 1000
        cc.on_event(ack(t, rtt_us=50_000, rate_bps=10e6, inflight=0), flow)
        if cc.mode is BbrMode.PROBE_BW:
            gains.append(cc.pacing_gain)
    assert set(gains) == {1.25, 0.75, 1.0}
    firsts = [g for i, g in enumerate(gains) if i == 0 or g != gains[i - 1]]
    assert firsts[:3] == [1.25, 0.75, 1.0]


# -- BISCAY -----------------------------------------------------------------------------


def _registry(n):
    reg = FlowRegistry()
    for i in range(n):
        reg.register(FID._replace(src_port=40000 + i))
    return reg


def _to_biscay(b, flow, feed, bps, t0=0, rate=None):
    t = t0
    for _ in range(b.startup_samples):
        t += 10_000
        feed.publish(kpi(t, bps))
        b.on_event(ack(t, rate_bps=rate), flow)
    return t


def test_biscay_bdp_example():
    feed, reg = KpiFeed(), _registry(3)
    b = Biscay(feed, reg, 10_000)
    flow = FlowState(FID)
    _to_biscay(b, flow, feed, 12e6, rate=4e6)
    assert flow.state is CcState.BISCAY
    assert flow.cwnd == 17


def test_biscay_startup_slow_starts_until_k_samples():
    feed, reg = KpiFeed(), _registry(1)
    b = Biscay(feed, reg, 10_000)
    flow = FlowState(FID, cwnd=10.0)
    feed.publish(kpi(10_000, 12e6))
    b.on_event(ack(10_000), flow)
    feed.publish(kpi(20_000, 12e6))
    b.on_event(ack(20_000), flow)
    assert flow.state is CcState.STARTUP and flow.cwnd == 12
    feed.publish(kpi(30_000, 12e6))
    b.on_event(ack(30_000), flow)
    assert flow.state is CcState.BISCAY
    assert flow.cwnd == bdp_cwnd(12e6, 50_000, MSS)


def test_biscay_no_grants_sample_resets_streak():
    feed, reg = KpiFeed(), _registry(1)
    b = Biscay(feed, reg, 10_000)
    flow = FlowState(FID)
    for t, ng in [(10_000, False), (20_000, False), (30_000, True), (40_000, False)]:
        feed.publish(kpi(t, 0 if ng else 5e6, ng))
        b.on_event(ack(t), flow)
    assert flow.state is CcState.STARTUP


def test_biscay_falls_back_when_e2e_lower_and_uses_bbr_cwnd():
    feed, reg = KpiFeed(), _registry(1)
    b = Biscay(feed, reg, 10_000)
    oracle = BbrLite()
    oracle_flow = FlowState(FID)
    flow = FlowState(FID)
    t = 0
    for i in range(10):
        t += 10_000
        feed.publish(kpi(t, 20e6))
        ev = ack(t, rate_bps=10e6)
        b.on_event(ev, flow)
        oracle.on_event(ev, oracle_flow)
    assert flow.state is CcState.FALLBACK
    assert flow.cwnd == oracle_flow.cwnd
    kinds = [(a, c) for _, a, c in flow.transitions]
    assert kinds == [(CcState.STARTUP, CcState.BISCAY), (CcState.BISCAY, CcState.FALLBACK)]


def test_biscay_returns_from_fallback():
    feed, reg = KpiFeed(), _registry(1)
    b = Biscay(feed, reg, 10_000)
    flow = FlowState(FID)
    t = 0
    for _ in range(10):
        t += 10_000
        feed.publish(kpi(t, 20e6))
        b.on_event(ack(t, rate_bps=10e6), flow)
    assert flow.state is CcState.FALLBACK
    for _ in range(3):
        t += 10_000
        feed.publish(kpi(t, 20e6))
        b.on_event(ack(t, rate_bps=20e6), flow)
    assert flow.state is CcState.BISCAY
    assert flow.cwnd == bdp_cwnd(20e6, 50_000, MSS)


def test_biscay_staleness_forces_fallback():
    feed, reg = KpiFeed(), _registry(1)
    b = Biscay(feed, reg, 10_000)
    flow = FlowState(FID)
    t = _to_biscay(b, flow, feed, 10e6, rate=10e6)
    last_valid = t
    while flow.state is CcState.BISCAY:
        t += 1000
        b.on_event(ack(t, rate_bps=10e6), flow)
        assert t - last_valid <= 10 * 10_000
    assert flow.state is CcState.FALLBACK


@st.composite
def biscay_script(draw):
    n = draw(st.integers(1, 4))
    steps = draw(st.lists(st.tuples(
        st.sampled_from(["ack", "kpi", "nogrant", "loss", "timeout"]),
        st.integers(1, 20_000),          # time step
        st.integers(5_000, 200_000),     # rtt
        st.floats(1e5, 5e7),             # rate / bandwidth
    ), min_size=1, max_size=120))
    return n, steps


@settings(max_examples=80, deadline=None)
@given(biscay_script())
def test_biscay_cwnd_is_exact_bdp_and_transitions_sound(script):
    n, steps = script
    feed, reg = KpiFeed(), _registry(n)
    b = Biscay(feed, reg, 10_000)
    flow = FlowState(FID)
    t = 0
    allowed = {(CcState.STARTUP, CcState.BISCAY), (CcState.BISCAY, CcState.FALLBACK),
               (CcState.FALLBACK, CcState.BISCAY)}
    for kind, dt, rtt, x in steps:
        t += dt
        if kind == "kpi":
            feed.publish(kpi(t, x))
            continue
        if kind == "nogrant":
            feed.publish(kpi(t, 0.0, True))
            continue
        if kind == "ack":
            ev = ack(t, rtt_us=rtt, rate_bps=x)
        elif kind == "loss":
            ev = CongestionEvent(EventKind.DUP_ACK, FID, t, t - rtt)
        else:
            ev = CongestionEvent(EventKind.TIMEOUT, FID, t, t)
        b.on_event(ev, flow)
        assert flow.cwnd >= 1
        if flow.state is CcState.BISCAY:
            expect = bdp_cwnd(bw_split_policy(b.cellular_bw, n), b.min_rtt.value, MSS)
            assert flow.cwnd == expect
    for _, a, c in flow.transitions:
        assert (a, c) in allowed


def test_startup_never_reentered():
    flow = FlowState(FID)
    flow.set_state(CcState.BISCAY, 1)
    with pytest.raises(RuntimeError):
        flow.set_state(CcState.STARTUP, 2)


def test_make_cca_names():
    assert CCA_NAMES == ("biscay", "bbr-lite", "cubic", "reno")
    assert isinstance(make_cca("cubic"), Cubic)
    assert isinstance(make_cca("reno"), Reno)
    assert isinstance(make_cca("bbr-lite"), BbrLite)
    with pytest.raises(ValueError):
        make_cca("vegas")
