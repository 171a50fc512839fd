"""CUBIC window growth (C = 0.4, beta = 0.7) with the TCP-friendly floor."""

from __future__ import annotations

import math

from .base import CongestionControl, CongestionEvent, EventKind, FlowState

CUBIC_C = 0.4
CUBIC_BETA = 0.7


def cubic_k(w_max: float, beta: float = CUBIC_BETA, c: float = CUBIC_C) -> float:
    """Seconds until the cubic curve climbs back to ``w_max`` after a reduction."""
    return (w_max * (1.0 - beta) / c) ** (1.0 / 3.0)


def cubic_window(t_s: float, w_max: float, beta: float = CUBIC_BETA, c: float = CUBIC_C) -> float:
    return c * (t_s - cubic_k(w_max, beta, c)) ** 3 + w_max


class Cubic(CongestionControl):
    name = "cubic"

    def __init__(self, c: float = CUBIC_C, beta: float = CUBIC_BETA, ssthresh: float = math.inf):
        self.c = c
        self.beta = beta
        self.ssthresh = ssthresh
        self.w_max = 0.0
        self.k = 0.0
        self._epoch_us: int | None = None
        self._srtt_us: float | None = None

    def _reduce(self, flow: FlowState, now_us: int) -> None:
        self.w_max = flow.cwnd
        self.k = cubic_k(self.w_max, self.beta, self.c)
        self._epoch_us = None
        self.ssthresh = max(flow.cwnd * self.beta, 2.0)

    def on_event(self, ev: CongestionEvent, flow: FlowState) -> float:
        now = ev.ack_time_us
        kind = ev.kind
        if kind is EventKind.ACK:
            if ev.rtt_us:
                self._srtt_us = ev.rtt_us if self._srtt_us is None else 0.875 * self._srtt_us + 0.125 * ev.rtt_us
            pkts = ev.acked_bytes / flow.mss
            if flow.cwnd < self.ssthresh:
                flow.cwnd += pkts
                return flow.cwnd
            if self._epoch_us is None:
                self._epoch_us = now
                if flow.cwnd >= self.w_max:
                    # no reduction to recover from: start on the convex side
                    self.w_max = flow.cwnd
                    self.k = 0.0
            t = (now - self._epoch_us) / 1e6
            target = self.c * (t - self.k) ** 3 + self.w_max
            if target > flow.cwnd:
                flow.cwnd += pkts * (target - flow.cwnd) / flow.cwnd
            else:
                flow.cwnd += pkts * 0.01 / flow.cwnd
            if self._srtt_us:
                b = self.beta
                w_est = self.w_max * b + 3 * (1 - b) / (1 + b) * t / (self._srtt_us / 1e6)
                if w_est > flow.cwnd:
                    flow.cwnd = w_est
        elif kind is EventKind.DUP_ACK or kind is EventKind.ECN:
            self._reduce(flow, now)
            flow.cwnd = max(flow.cwnd * self.beta, 1.0)
        elif kind is EventKind.TIMEOUT:
            self._reduce(flow, now)
            flow.cwnd = 1.0
        return flow.cwnd
