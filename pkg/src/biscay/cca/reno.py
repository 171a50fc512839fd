"""Classic AIMD baseline."""

from __future__ import annotations

import math

from .base import CongestionControl, CongestionEvent, EventKind, FlowState


class Reno(CongestionControl):
    name = "reno"

    def __init__(self, ssthresh: float = math.inf):
        self.ssthresh = ssthresh
        self._acc = 0.0  # packets acked since the last additive step

    def on_event(self, ev: CongestionEvent, flow: FlowState) -> float:
        kind = ev.kind
        if kind is EventKind.ACK:
            pkts = ev.acked_bytes / flow.mss
            if flow.cwnd < self.ssthresh:
                flow.cwnd += pkts
            else:
                self._acc += pkts
                while self._acc >= flow.cwnd:
                    self._acc -= flow.cwnd
                    flow.cwnd += 1
        elif kind is EventKind.DUP_ACK or kind is EventKind.ECN:
            self.ssthresh = max(flow.cwnd / 2, 2.0)
            flow.cwnd = self.ssthresh
            self._acc = 0.0
        elif kind is EventKind.TIMEOUT:
            self.ssthresh = max(flow.cwnd / 2, 2.0)
            flow.cwnd = 1.0
            self._acc = 0.0
        return flow.cwnd
