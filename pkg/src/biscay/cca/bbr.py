"""BBR-lite: windowed-max delivery rate, windowed-min RTT, gain cycling.

No ProbeRTT phase. A DRAIN phase follows STARTUP so the queue built while
probing at 2.885x is emptied before cruising.
"""

from __future__ import annotations

import enum

from .base import (
    MIN_RTT_WINDOW_US,
    CongestionControl,
    CongestionEvent,
    EventKind,
    FlowState,
    MaxFilter,
    MinRttFilter,
    bdp_cwnd,
)

STARTUP_GAIN = 2.885
CYCLE_GAINS = (1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
CWND_GAIN = 2
PLATEAU_GROWTH = 1.25
PLATEAU_ROUNDS = 3
MIN_CWND = 4


class BbrMode(str, enum.Enum):
    STARTUP = "startup"
    DRAIN = "drain"
    PROBE_BW = "probe_bw"


class BbrLite(CongestionControl):
    name = "bbr-lite"

    def __init__(self, bw_window_rounds: int = 10, min_rtt_window_us: int = MIN_RTT_WINDOW_US):
        self.bw_window_rounds = bw_window_rounds
        self.min_rtt = MinRttFilter(min_rtt_window_us)
        self.bw = MaxFilter(0)
        self.mode = BbrMode.STARTUP
        self.full_bw = 0.0
        self.full_bw_rounds = 0
        self.cycle_index = 0
        self.rounds = 0
        self._round_end_us: int | None = None
        self._timed_out = False

    @property
    def pacing_gain(self) -> float:
        if self.mode is BbrMode.STARTUP:
            return STARTUP_GAIN
        if self.mode is BbrMode.DRAIN:
            return 1.0 / STARTUP_GAIN
        return CYCLE_GAINS[self.cycle_index]

    def bdp_packets(self, mss: int) -> int | None:
        bw, rtt = self.bw.value, self.min_rtt.value
        if not bw or not rtt:
            return None
        return bdp_cwnd(bw, rtt, mss)

    def _on_round(self) -> None:
        self.rounds += 1
        if self.mode is BbrMode.STARTUP:
            bw = self.bw.value or 0.0
            if bw >= self.full_bw * PLATEAU_GROWTH:
                self.full_bw = bw
                self.full_bw_rounds = 0
            else:
                self.full_bw_rounds += 1
                if self.full_bw_rounds >= PLATEAU_ROUNDS:
                    self.mode = BbrMode.DRAIN
        elif self.mode is BbrMode.PROBE_BW:
            self.cycle_index = (self.cycle_index + 1) % len(CYCLE_GAINS)

    def on_event(self, ev: CongestionEvent, flow: FlowState) -> tuple[float, float | None]:
        now = ev.ack_time_us
        if ev.kind is EventKind.TIMEOUT:
            self._timed_out = True
            flow.cwnd = MIN_CWND
            return flow.cwnd, flow.pacing_rate
        if ev.kind is not EventKind.ACK:
            return flow.cwnd, flow.pacing_rate
        self._timed_out = False
        if ev.rtt_us:
            flow.min_rtt_us = self.min_rtt.update(now, ev.rtt_us)
        rtt = self.min_rtt.value
        if rtt:
            self.bw.window_us = self.bw_window_rounds * rtt
            rate = ev.delivery_rate_bps
            if rate is not None:
                self.bw.update(now, rate)
            else:
                self.bw.expire(now)
            if self._round_end_us is None:
                self._round_end_us = now + rtt
            elif now >= self._round_end_us:
                self._round_end_us = now + rtt
                self._on_round()
        bdp = self.bdp_packets(flow.mss)
        if self.mode is BbrMode.DRAIN and bdp is not None and ev.inflight_bytes <= bdp * flow.mss:
            self.mode = BbrMode.PROBE_BW
            self.cycle_index = 0
        if bdp is not None:
            flow.cwnd = max(MIN_CWND, CWND_GAIN * bdp)
            flow.pacing_rate = self.pacing_gain * self.bw.value
        return flow.cwnd, flow.pacing_rate
