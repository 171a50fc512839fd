"""BISCAY: cwnd from the radio's own view of available bandwidth.

STARTUP slow-starts until K consecutive valid KPI samples arrive. In
BISCAY the window is exactly the BDP of this flow's share of the cellular
bandwidth. When the share sits persistently above what the flow actually
delivers end to end, the bottleneck is upstream of the radio and control
passes to BBR-lite (FALLBACK) until the share drops back within the
measured rate.
"""

from __future__ import annotations

from ..bandwidth import BandwidthSample, BottleneckDetector, BottleneckLocation
from ..diag_codec import NO_DATA
from .base import (
    MIN_RTT_WINDOW_US,
    CcState,
    CongestionControl,
    CongestionEvent,
    EventKind,
    FlowRegistry,
    FlowState,
    MaxFilter,
    MinRttFilter,
    bdp_cwnd,
    bw_split_policy,
    slow_start_step,
)
from .bbr import BbrLite


class KpiFeed:
    """Latest-value slot for bandwidth samples; readers see ``(sample, seq)``."""

    def __init__(self):
        self._latest = NO_DATA
        self.seq = 0

    def publish(self, sample: BandwidthSample) -> int:
        self.seq += 1
        self._latest = (sample, self.seq)  # one reference store, readers never see a torn pair
        return self.seq

    def read_latest(self):
        return self._latest


class E2eEstimator:
    """Device-wide end-to-end rate view shared by every BISCAY flow.

    Each flow keeps a short windowed max of its delivery-rate samples. Flows
    on one device share the radio queue, so one flow's burst shows up as
    another's dip; averaging the per-flow figures cancels that crosstalk
    and leaves a per-flow-comparable estimate of what the path delivers.
    """

    def __init__(self):
        self._flows: dict = {}

    def update(self, flow_id, now_us: int, window_us: int, rate_bps: float | None) -> None:
        filt = self._flows.get(flow_id)
        if filt is None:
            filt = self._flows[flow_id] = MaxFilter(window_us)
        filt.window_us = window_us
        if rate_bps is not None:
            filt.update(now_us, rate_bps)
        else:
            filt.expire(now_us)

    def flow_rate(self, flow_id) -> float | None:
        filt = self._flows.get(flow_id)
        return None if filt is None else filt.value

    def remove(self, flow_id) -> None:
        self._flows.pop(flow_id, None)

    def per_flow(self, now_us: int) -> float | None:
        """Mean of the fresh per-flow estimates; a flow silent for a whole window is left out."""
        vals = []
        for filt in self._flows.values():
            q = filt._q
            if q and q[-1][0] >= now_us - filt.window_us:
                vals.append(q[0][1])
        if not vals:
            return None
        return sum(vals) / len(vals)


class Biscay(CongestionControl):
    name = "biscay"

    def __init__(
        self,
        kpi: KpiFeed,
        registry: FlowRegistry,
        sampling_interval_us: int = 10_000,
        startup_samples: int = 3,
        hysteresis: float = 0.1,
        streak: int = 3,
        staleness_limit: int = 10,
        e2e_window_rtts: float = 2.0,
        min_rtt_window_us: int = MIN_RTT_WINDOW_US,
        e2e: E2eEstimator | None = None,
    ):
        if sampling_interval_us <= 0 or startup_samples < 1 or staleness_limit < 1:
            raise ValueError("invalid BISCAY parameters")
        self.kpi = kpi
        self.registry = registry
        self.sampling_interval_us = sampling_interval_us
        self.startup_samples = startup_samples
        self.staleness_limit = staleness_limit
        self.e2e_window_rtts = e2e_window_rtts
        self.detector = BottleneckDetector(hysteresis, streak)
        self.e2e = E2eEstimator() if e2e is None else e2e
        self._flow_id = None
        self.fallback = BbrLite(min_rtt_window_us=min_rtt_window_us)
        # one windowed-min RTT serves both BISCAY and its fallback
        self.min_rtt: MinRttFilter = self.fallback.min_rtt
        self._shadow: FlowState | None = None
        self.cellular_bw: float | None = None
        self.valid_streak = 0
        self.staleness = 0
        self._seen_seq = 0
        self._last_valid_us: int | None = None
        self._target_key = None
        self._target: int | None = None

    def share(self) -> int | None:
        if self.cellular_bw is None:
            return None
        return bw_split_policy(self.cellular_bw, self.registry)

    def target_cwnd(self, mss: int) -> int | None:
        bw, rtt = self.cellular_bw, self.min_rtt.value
        if bw is None or rtt is None:
            return None
        key = (bw, self.registry.count(), rtt, mss)
        if key != self._target_key:
            self._target_key = key
            self._target = bdp_cwnd(bw_split_policy(bw, key[1]), rtt, mss)
        return self._target

    def _poll_kpi(self, now: int, flow: FlowState) -> None:
        got = self.kpi.read_latest()
        if got is NO_DATA:
            return
        sample, seq = got
        if seq == self._seen_seq:
            return
        self._seen_seq = seq
        if sample.no_grants:
            self.valid_streak = 0
            return
        self.valid_streak += 1
        self.cellular_bw = sample.value
        self._last_valid_us = now
        self.staleness = 0
        if flow.state is CcState.STARTUP:
            return
        loc = self.detector.update(self.share(), self.e2e.per_flow(now))
        if loc is BottleneckLocation.WIRED:
            flow.set_state(CcState.FALLBACK, now)
        else:
            flow.set_state(CcState.BISCAY, now)

    def on_event(self, ev: CongestionEvent, flow: FlowState) -> float:
        now = ev.ack_time_us
        if self._shadow is None:
            self._shadow = FlowState(flow.flow_id, flow.protocol, cwnd=flow.cwnd, mss=flow.mss)
        self.fallback.on_event(ev, self._shadow)  # also feeds the shared min-RTT filter
        if ev.kind is EventKind.ACK:
            rtt = self.min_rtt.value
            if rtt:
                flow.min_rtt_us = rtt
                self.e2e.update(flow.flow_id, now, int(self.e2e_window_rtts * rtt), ev.delivery_rate_bps)
        self._poll_kpi(now, flow)

        state = flow.state
        if state is CcState.STARTUP:
            if ev.kind is EventKind.ACK:
                flow.cwnd = slow_start_step(flow.cwnd, ev.acked_bytes / flow.mss)
            elif ev.kind is EventKind.TIMEOUT:
                flow.cwnd = 1.0
            elif ev.kind is EventKind.DUP_ACK:
                flow.cwnd = max(flow.cwnd / 2, 1.0)
            if self.valid_streak >= self.startup_samples and self.min_rtt.value is not None:
                flow.set_state(CcState.BISCAY, now)
                flow.cwnd = self.target_cwnd(flow.mss)
            return flow.cwnd

        if state is CcState.BISCAY and self._last_valid_us is not None:
            self.staleness = (now - self._last_valid_us) // self.sampling_interval_us
            if self.staleness >= self.staleness_limit:
                self.detector.location = BottleneckLocation.WIRED
                self.detector.run = 0
                flow.set_state(CcState.FALLBACK, now)

        if flow.state is CcState.BISCAY:
            cwnd = self.target_cwnd(flow.mss)
            if cwnd is not None:
                flow.cwnd = cwnd
        else:
            flow.cwnd = self._shadow.cwnd
        return flow.cwnd
