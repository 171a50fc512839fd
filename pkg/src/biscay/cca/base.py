"""Shared congestion-control vocabulary: events, per-flow state, the flow
registry and the small arithmetic helpers every algorithm leans on."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

DEFAULT_MSS = 1500
MIN_RTT_WINDOW_US = 10_000_000


class EventKind(str, enum.Enum):
    ACK = "ack"
    TIMEOUT = "timeout"
    DUP_ACK = "dupack"
    ECN = "ecn"


class Protocol(str, enum.Enum):
    TCP = "tcp"
    UDP = "udp"


class CcState(str, enum.Enum):
    STARTUP = "STARTUP"
    BISCAY = "BISCAY"
    FALLBACK = "FALLBACK"


class FlowId(NamedTuple):
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int


class CongestionEvent(NamedTuple):
    kind: EventKind
    flow_id: FlowId | None = None
    ack_time_us: int = 0
    send_time_us: int = 0
    acked_bytes: int = 0
    # bytes delivered between this packet's send and its ack, and the interval
    # they were delivered over; together they give one delivery-rate sample
    delivered_bytes_since: int = 0
    delivery_interval_us: int = 0
    rtt_us: int | None = None
    inflight_bytes: int = 0

    @property
    def delivery_rate_bps(self) -> float | None:
        if self.delivery_interval_us <= 0 or self.delivered_bytes_since <= 0:
            return None
        return self.delivered_bytes_since * 8e6 / self.delivery_interval_us


@dataclass
class FlowState:
    flow_id: FlowId
    protocol: Protocol = Protocol.TCP
    state: CcState = CcState.STARTUP
    cwnd: float = 10.0
    min_rtt_us: int | None = None
    mss: int = DEFAULT_MSS
    pacing_rate: float | None = None
    transitions: list[tuple[int, CcState, CcState]] = field(default_factory=list)

    def set_state(self, new: CcState, now_us: int) -> None:
        if new is not self.state:
            if new is CcState.STARTUP:
                raise RuntimeError("STARTUP is never re-entered")
            self.transitions.append((now_us, self.state, new))
            self.state = new


class FlowRegistry:
    """Active flows on the device, TCP and UDP alike."""

    def __init__(self):
        self._flows: dict[FlowId, Protocol] = {}

    def register(self, flow_id: FlowId, protocol: Protocol = Protocol.TCP) -> None:
        self._flows[flow_id] = Protocol(protocol)

    def unregister(self, flow_id: FlowId) -> None:
        self._flows.pop(flow_id, None)

    def count(self) -> int:
        return len(self._flows)

    def __contains__(self, flow_id) -> bool:
        return flow_id in self._flows

    def __len__(self) -> int:
        return len(self._flows)


def slow_start_step(cwnd: float, acked_packets: float = 1.0) -> float:
    """One packet of growth per packet acknowledged (doubling per round trip)."""
    return cwnd + acked_packets


def bw_split_policy(bw: float, registry: FlowRegistry | int) -> int:
    """Equal share of ``bw`` (bit/s) per active flow, floored to whole bit/s."""
    n = registry if isinstance(registry, int) else registry.count()
    assert n >= 1, "bandwidth split with no active flows"
    return int(bw) // n


def bdp_cwnd(bw_bps: float, rtt_us: float, mss: int = DEFAULT_MSS) -> int:
    """Bandwidth-delay product in whole packets, rounded up, never below one."""
    if rtt_us <= 0 or mss <= 0 or bw_bps < 0:
        raise ValueError("need bw >= 0, rtt > 0, mss > 0")
    return max(1, math.ceil(bw_bps * rtt_us / 1e6 / (8 * mss)))


class MinRttFilter:
    """Sliding-window minimum over timestamped RTT samples (monotone deque)."""

    def __init__(self, window_us: int = MIN_RTT_WINDOW_US):
        self.window_us = window_us
        self._q: deque[tuple[int, int]] = deque()

    def update(self, now_us: int, rtt_us: int) -> int:
        if rtt_us <= 0:
            raise ValueError("rtt sample must be positive")
        q = self._q
        while q and q[-1][1] >= rtt_us:
            q.pop()
        q.append((now_us, rtt_us))
        self._expire(now_us)
        return q[0][1]

    def _expire(self, now_us: int) -> None:
        q = self._q
        while len(q) > 1 and q[0][0] < now_us - self.window_us:
            q.popleft()

    @property
    def value(self) -> int | None:
        return self._q[0][1] if self._q else None


def min_rtt_update(window: MinRttFilter, now_us: int, new_sample_us: int) -> int:
    return window.update(now_us, new_sample_us)


class MaxFilter:
    """Sliding-window maximum; the window length may change between updates."""

    def __init__(self, window_us: int):
        self.window_us = window_us
        self._q: deque[tuple[int, float]] = deque()

    def update(self, now_us: int, value: float) -> float:
        q = self._q
        while q and q[-1][1] <= value:
            q.pop()
        q.append((now_us, value))
        self.expire(now_us)
        return q[0][1]

    def expire(self, now_us: int) -> None:
        q = self._q
        while len(q) > 1 and q[0][0] < now_us - self.window_us:
            q.popleft()

    @property
    def value(self) -> float | None:
        return self._q[0][1] if self._q else None


class CongestionControl:
    """Base class; subclasses update ``flow.cwnd`` (and maybe ``pacing_rate``)."""

    name = "base"

    def on_event(self, ev: CongestionEvent, flow: FlowState):
        raise NotImplementedError
