"""Deterministic discrete-event path simulator.

Path: sender -> wired FIFO server (+ propagation delay) -> per-UE cellular
buffer drained once per TTI by the modem's grants -> receiver. ACKs return
with propagation delay only, one cumulative ACK per flow per delivery TTI.

Time is integer microseconds. Every random draw comes from the scenario
seed, and events at equal times are ordered by insertion counter, so a
scenario always yields the same log.
"""

from __future__ import annotations

import bisect
import dataclasses
import heapq
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .bandwidth import KpiSampler, Method
from .cca import (
    CCA_NAMES,
    DEFAULT_MSS,
    Biscay,
    CcState,
    CongestionEvent,
    E2eEstimator,
    EventKind,
    FlowId,
    FlowRegistry,
    FlowState,
    KpiFeed,
    Protocol,
    make_cca,
)
from .diag_codec import DiagChannel, Direction, MsgType
from .modem_emulator import BufferPolicy, ModemEmulator, RadioConfig, grants_from_capacity
from .traces import LinkTrace

DEFAULT_CELL_BUFFER = 3_000_000
DUPACK_THRESHOLD = 3
MIN_RTO_US = 200_000


class ScenarioError(ValueError):
    pass


@dataclass
class FlowSpec:
    cca: str = "biscay"
    start_ms: float = 0.0
    duration_ms: float | None = None  # None: until the end of the run
    protocol: Protocol = Protocol.TCP
    rate_bps: float = 0.0  # UDP sending rate

    def __post_init__(self):
        self.protocol = Protocol(self.protocol)


@dataclass
class Scenario:
    trace: LinkTrace
    radio: RadioConfig = field(default_factory=RadioConfig)
    wired_schedule: Sequence[tuple[float, float]] = ((0.0, 1e9),)  # (time_ms, bit/s)
    prop_delay_ms: float = 5.0  # each way
    flows: Sequence[FlowSpec] = (FlowSpec(),)
    cell_buffer_bytes: int = DEFAULT_CELL_BUFFER
    wired_buffer_bytes: int = DEFAULT_CELL_BUFFER
    kpi_interval_ms: float = 10.0
    kpi_method: Method = Method.GPP3
    buffer_policy: BufferPolicy = field(default_factory=BufferPolicy.drain)
    duration_ms: float | None = None
    mss: int = DEFAULT_MSS
    seed: int = 0
    hysteresis: float = 0.1
    streak: int = 3
    startup_samples: int = 3
    downlink_sender_cca: str = "cubic"
    log_deliveries: bool = True

    def validate(self) -> None:
        dur = self.run_duration_ms
        if self.trace.duration_ms <= 0:
            raise ScenarioError("trace has zero duration")
        if dur <= 0:
            raise ScenarioError("run duration must be positive")
        if not self.flows:
            raise ScenarioError("scenario has no flows")
        prev = -1.0
        for t, rate in self.wired_schedule:
            if t <= prev:
                raise ScenarioError("wired schedule must be strictly time-ordered")
            if rate <= 0:
                raise ScenarioError("wired capacity must be positive")
            prev = t
        if not self.wired_schedule or self.wired_schedule[0][0] != 0:
            raise ScenarioError("wired schedule must start at t=0")
        for f in self.flows:
            if f.protocol is Protocol.TCP and f.cca not in CCA_NAMES:
                raise ScenarioError(f"unknown CCA {f.cca!r}")
            if f.protocol is Protocol.UDP and f.rate_bps <= 0:
                raise ScenarioError("UDP flow needs a positive rate_bps")
            if f.start_ms < 0 or (f.duration_ms is not None and f.duration_ms <= 0):
                raise ScenarioError("flow start must be >= 0 and duration > 0")
        if self.downlink_sender_cca not in CCA_NAMES or self.downlink_sender_cca == "biscay":
            raise ScenarioError("downlink sender CCA must be a baseline")
        if self.prop_delay_ms < 0 or self.kpi_interval_ms <= 0 or self.mss <= 0:
            raise ScenarioError("delays, KPI interval and mss must be positive")
        if self.cell_buffer_bytes < self.mss or self.wired_buffer_bytes < self.mss:
            raise ScenarioError("buffers must hold at least one packet")

    @property
    def run_duration_ms(self) -> float:
        return self.trace.duration_ms if self.duration_ms is None else self.duration_ms


# event log ---------------------------------------------------------------

# field names per kind; records are (time_us, kind, *values)
LOG_FIELDS = {
    "start": ("flow", "cca"),
    "stop": ("flow",),
    "send": ("flow", "seq", "size"),
    "drop": ("flow", "seq", "size", "hop"),
    "deliver": ("flow", "seq", "size", "owd_us"),
    "grant": ("bits", "served"),
    "ack": ("flow", "bytes", "rtt_us", "cwnd"),
    "loss": ("flow", "packets"),
    "timeout": ("flow", "packets"),
    "state": ("flow", "from", "to"),
    "kpi": ("bps", "valid"),
    "wired": ("bps",),
    "end": ("flow", "sent", "delivered", "dropped", "lost", "in_flight"),
}


class EventLog:
    def __init__(self):
        self.records: list[tuple] = []
        self.flows: list[str] = []

    def add(self, *rec) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def of_kind(self, kind: str):
        return [r for r in self.records if r[1] == kind]

    def dumps(self) -> str:
        out = io.StringIO()
        for rec in self.records:
            names = LOG_FIELDS[rec[1]]
            out.write(f"{rec[0]} {rec[1]}")
            for name, value in zip(names, rec[2:]):
                if isinstance(value, float):
                    value = repr(round(value, 6))
                out.write(f" {name}={value}")
            out.write("\n")
        return out.getvalue()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())


# path elements ------------------------------------------------------------


class Packet:
    __slots__ = ("flow", "seq", "size", "send_us", "wired_out_us", "cell_in_us", "deliver_us",
                 "delivered", "delivered_us", "first_sent_us")

    def __init__(self, flow, seq, size, send_us, delivered, delivered_us, first_sent_us):
        self.flow = flow
        self.seq = seq
        self.size = size
        self.send_us = send_us
        self.wired_out_us = 0
        self.cell_in_us = 0
        self.deliver_us = 0
        # delivery-rate bookkeeping snapshot at send time
        self.delivered = delivered
        self.delivered_us = delivered_us
        self.first_sent_us = first_sent_us

    @property
    def one_way_delay_us(self) -> int:
        return self.deliver_us - self.send_us


def cellular_buffer_step(grant_bits: int, queue: deque, credit_bits: int = 0) -> tuple[list, int]:
    """Serve whole packets FIFO from ``queue`` with ``grant_bits + credit_bits``.

    Items are packets (anything with ``.size``) or plain byte counts.
    Returns ``(served, new_credit_bits)``; leftover grant carries over only
    while packets are still waiting.
    """
    avail = grant_bits + credit_bits
    served = []
    if queue and isinstance(queue[0], int):
        while queue and queue[0] * 8 <= avail:
            avail -= queue[0] * 8
            served.append(queue.popleft())
    else:
        while queue:
            bits = queue[0].size * 8
            if bits > avail:
                break
            avail -= bits
            served.append(queue.popleft())
    return served, (avail if queue else 0)


class _Flow:
    __slots__ = ("idx", "spec", "fid", "state", "cca", "rwnd_cca", "rwnd_state", "active", "start_us",
                 "stop_us", "next_seq", "out", "delivered", "delivered_us", "first_sent_us", "sent",
                 "sent_bytes", "dropped", "lost", "delivered_bytes", "delivered_pkts", "acked_seq",
                 "hole_acks", "last_reduce_us", "last_progress_us", "srtt", "next_send_us",
                 "acks_in_flight", "rto_us", "paced", "tcp")

    def __init__(self, idx, spec, mss):
        self.idx = idx
        self.spec = spec
        self.fid = FlowId("10.0.0.2", "10.0.1.1", 40000 + idx, 5201)
        self.state = FlowState(self.fid, spec.protocol, mss=mss)
        self.cca = None
        self.rwnd_cca = None
        self.rwnd_state = None
        self.active = False
        self.start_us = int(spec.start_ms * 1000)
        self.stop_us = None if spec.duration_ms is None else self.start_us + int(spec.duration_ms * 1000)
        self.next_seq = 0
        self.out: dict[int, Packet] = {}  # outstanding, in send order
        self.delivered = 0
        self.delivered_us = 0
        self.first_sent_us = 0
        self.sent = 0
        self.sent_bytes = 0
        self.dropped = 0
        self.lost = 0
        self.delivered_bytes = 0
        self.delivered_pkts = 0
        self.acked_seq = -1
        self.hole_acks = 0
        self.last_reduce_us = -1
        self.last_progress_us = 0
        self.srtt = None
        self.next_send_us = 0.0
        self.acks_in_flight = 0
        self.rto_us = 1_000_000  # before the first RTT sample
        self.tcp = spec.protocol is Protocol.TCP
        self.paced = spec.protocol is Protocol.UDP or spec.cca == "bbr-lite"


# simulator ------------------------------------------------------------------

_TICK, _ACK, _KPI, _START, _STOP, _WIRED = range(6)


class Simulator:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.sc = sc = scenario
        self.log = EventLog()
        self.duration_us = int(sc.run_duration_ms * 1000)
        self.tick_us = sc.radio.tick_us
        self.prop_us = int(round(sc.prop_delay_ms * 1000))
        self.mss = sc.mss
        self.registry = FlowRegistry()
        self.kpi_feed = KpiFeed()
        self.e2e = E2eEstimator()
        self.kpi_interval_us = max(1, int(round(sc.kpi_interval_ms * 1000)))

        # the scenario seed reaches every random draw through the radio's RNGs
        self.radio = radio = dataclasses.replace(sc.radio, seed=sc.radio.seed + sc.seed * 1_000_003)
        self.schedule = grants_from_capacity(sc.trace, radio, sc.run_duration_ms)
        table = radio.tput_table
        self._grant_bits = {t: sum(table.grant_bits(g) for g in gs) for t, gs in self.schedule.entries}

        self._wired_times = [int(t * 1000) for t, _ in sc.wired_schedule]
        self._wired_rates = [float(r) for _, r in sc.wired_schedule]
        self._wired_free_us = 0.0
        self._wired_now = self._wired_rates[0]
        self._wired_next_change = -1
        self._wired_buffer_bits = sc.wired_buffer_bytes * 8
        self._wired_transit: deque[Packet] = deque()  # sorted by cell arrival time
        self._cell_queue: deque[Packet] = deque()
        self._cell_bytes = 0
        self._credit = 0

        self.flows = [_Flow(i, spec, self.mss) for i, spec in enumerate(sc.flows)]
        self.log.flows = [f"{i}:{f.spec.cca if f.spec.protocol is Protocol.TCP else 'udp'}"
                          for i, f in enumerate(self.flows)]
        needs_kpi = any(f.spec.protocol is Protocol.TCP and f.spec.cca == "biscay" for f in self.flows)
        self.emulator = None
        self.sampler = None
        if needs_kpi:
            self.sampler = KpiSampler(table, sc.kpi_method, sc.radio.num_carriers)
            channel = DiagChannel()
            types = (MsgType.GRANTED_BYTES,) if sc.kpi_method is Method.GRANTED_BYTES else (MsgType.DCI_GRANT,)
            channel.subscribe(types, self.sampler.on_frame)
            self.emulator = ModemEmulator(self.schedule, radio, sc.buffer_policy, channel, sc.trace)

        self._heap: list = []
        self._counter = 0

    # -- plumbing --------------------------------------------------------------
    def _push(self, t, kind, data=None):
        self._counter += 1
        heapq.heappush(self._heap, (t, self._counter, kind, data))

    def _wired_rate(self, t_us: float) -> float:
        return self._wired_rates[bisect.bisect_right(self._wired_times, t_us) - 1]

    def _make_cca(self, f: _Flow):
        sc = self.sc
        if f.spec.cca == "biscay":
            return Biscay(self.kpi_feed, self.registry, self.kpi_interval_us,
                          startup_samples=sc.startup_samples, hysteresis=sc.hysteresis, streak=sc.streak,
                          e2e=self.e2e)
        return make_cca(f.spec.cca)

    # -- sending -----------------------------------------------------------
    def _window(self, f: _Flow) -> float:
        w = f.state.cwnd
        if f.rwnd_state is not None:
            # downlink: BISCAY runs on the UE and only caps the sender through rwnd
            w = min(f.rwnd_state.cwnd, f.state.cwnd)
        return w

    def _try_send(self, f: _Flow, now: int) -> None:
        if not f.active:
            return
        udp = f.spec.protocol is Protocol.UDP
        rate = f.spec.rate_bps if udp else f.state.pacing_rate
        paced = f.paced and rate is not None and rate > 0
        window = math.inf if udp else self._window(f)
        out = f.out
        if len(out) >= window:
            return
        if paced:
            if f.next_send_us < now - self.tick_us:
                f.next_send_us = now - self.tick_us
            gap = self.mss * 8e6 / rate
        while len(out) < window:
            if paced:
                if f.next_send_us > now:
                    break
                f.next_send_us += gap
            self._send(f, now, udp)

    def _send(self, f: _Flow, now: int, udp: bool) -> None:
        mss = self.mss
        out = f.out
        if not out and not f.acks_in_flight:
            # nothing outstanding: restart the RTO clock and the delivery-rate interval
            f.last_progress_us = now
            f.delivered_us = now
            f.first_sent_us = now
        seq = f.next_seq
        p = Packet(f.idx, seq, mss, now, f.delivered, f.delivered_us, f.first_sent_us)
        f.next_seq = seq + 1
        f.sent += 1
        f.sent_bytes += mss
        records = self.log.records
        records.append((now, "send", f.idx, seq, mss))
        if not udp:
            out[seq] = p  # a drop below stays outstanding: the sender can't know yet
        # wired FIFO server, rate taken at service start
        if now >= self._wired_next_change:
            self._advance_wired(now)
        free = self._wired_free_us
        if free > now:
            if (free - now) * self._wired_now / 1e6 > self._wired_buffer_bits:
                f.dropped += 1
                records.append((now, "drop", f.idx, seq, mss, "wired"))
                return
            start = free
            rate = self._wired_now if free < self._wired_next_change else self._wired_rate(free)
        else:
            start = now
            rate = self._wired_now
        done = start + mss * 8e6 / rate
        self._wired_free_us = done
        p.wired_out_us = out_us = int(math.ceil(done))
        p.cell_in_us = out_us + self.prop_us
        self._wired_transit.append(p)

    def _advance_wired(self, now: int) -> None:
        i = bisect.bisect_right(self._wired_times, now) - 1
        self._wired_now = self._wired_rates[i]
        self._wired_next_change = self._wired_times[i + 1] if i + 1 < len(self._wired_times) else math.inf

    # -- cellular link -------------------------------------------------------
    def _tick(self, now: int) -> None:
        transit = self._wired_transit
        cq = self._cell_queue
        records = self.log.records
        flows = self.flows
        if transit and transit[0].cell_in_us <= now:
            cap = self.sc.cell_buffer_bytes
            while transit and transit[0].cell_in_us <= now:
                p = transit.popleft()
                if self._cell_bytes + p.size > cap:
                    flows[p.flow].dropped += 1
                    records.append((now, "drop", p.flow, p.seq, p.size, "cell"))
                    continue
                cq.append(p)
                self._cell_bytes += p.size
        bits = self._grant_bits.get(now, 0)
        if bits or cq:
            served, self._credit = cellular_buffer_step(bits, cq, self._credit)
            records.append((now, "grant", bits, len(served)))
            if served:
                deliver = now + self.tick_us
                log_it = self.sc.log_deliveries
                batches: dict[int, list[Packet]] = {}
                for p in served:
                    size = p.size
                    self._cell_bytes -= size
                    f = flows[p.flow]
                    p.deliver_us = deliver
                    f.delivered_bytes += size
                    f.delivered_pkts += 1
                    if log_it:
                        records.append((deliver, "deliver", p.flow, p.seq, size, deliver - p.send_us))
                    if f.tcp:
                        b = batches.get(p.flow)
                        if b is None:
                            batches[p.flow] = [p]
                        else:
                            b.append(p)
                for idx, pkts in batches.items():
                    # one cumulative ACK per flow per delivery TTI
                    f = flows[idx]
                    f.acks_in_flight += 1
                    self._push(deliver + self.prop_us, _ACK, (f, pkts))
        for f in flows:
            if f.out and now - f.last_progress_us > f.rto_us:
                self._timeout(f, now)
            # window-limited senders only move on ACKs; paced ones need the clock
            if f.paced and f.active:
                self._try_send(f, now)

    # -- acknowledgements and loss -----------------------------------------------
    def _cca_event(self, f: _Flow, ev: CongestionEvent, now: int) -> None:
        # in downlink the scenario's CCA runs on the UE and acts through rwnd
        tracked = f.state if f.rwnd_state is None else f.rwnd_state
        seen = len(tracked.transitions)
        f.cca.on_event(ev, f.state)
        if f.rwnd_cca is not None:
            f.rwnd_cca.on_event(ev, f.rwnd_state)
        if f.state.cwnd < 1:
            f.state.cwnd = 1.0
        for t, a, b in tracked.transitions[seen:]:
            self.log.add(now, "state", f.idx, a.value, b.value)

    def _on_acks(self, f: _Flow, pkts: list[Packet], now: int) -> None:
        f.acks_in_flight -= 1
        acked = 0
        last = None
        out = f.out
        for p in pkts:
            if out.pop(p.seq, None) is not None:  # else already declared lost
                acked += p.size
                last = p
        if last is None:
            return
        f.delivered += acked
        if last.seq > f.acked_seq:
            f.acked_seq = last.seq
        f.delivered_us = now
        f.first_sent_us = send = last.send_us
        f.last_progress_us = now
        rtt = now - send
        srtt = f.srtt = rtt if f.srtt is None else 0.875 * f.srtt + 0.125 * rtt
        f.rto_us = 2 * srtt if 2 * srtt > MIN_RTO_US else MIN_RTO_US
        a, b = now - last.delivered_us, send - last.first_sent_us
        ev = CongestionEvent(EventKind.ACK, f.fid, now, send, acked,
                             f.delivered - last.delivered, a if a > b else b, rtt, len(out) * self.mss)
        self._cca_event(f, ev, now)
        self.log.records.append((now, "ack", f.idx, acked, rtt, round(self._window(f), 3)))
        if out and next(iter(out)) < f.acked_seq:
            self._detect_loss(f, now, len(pkts))
        else:
            f.hole_acks = 0
        self._try_send(f, now)

    def _detect_loss(self, f: _Flow, now: int, nacks: int) -> None:
        if not f.out:
            f.hole_acks = 0
            return
        first = next(iter(f.out))
        if first >= f.acked_seq:
            f.hole_acks = 0
            return
        # the path never reorders, so a hole below the highest ack is a drop;
        # still wait for the classic three later acks before reacting
        f.hole_acks += nacks
        if f.hole_acks < DUPACK_THRESHOLD:
            return
        f.hole_acks = 0
        lost = []
        for s in f.out:  # outstanding is kept in send order
            if s >= f.acked_seq:
                break
            lost.append(s)
        newest_send = 0
        for s in lost:
            p = f.out.pop(s)
            newest_send = max(newest_send, p.send_us)
        f.lost += len(lost)
        self.log.add(now, "loss", f.idx, len(lost))
        if newest_send > f.last_reduce_us:
            f.last_reduce_us = now
            ev = CongestionEvent(EventKind.DUP_ACK, f.fid, now, newest_send, 0, 0, 0, None,
                                 len(f.out) * self.mss)
            self._cca_event(f, ev, now)

    def _timeout(self, f: _Flow, now: int) -> None:
        n = len(f.out)
        f.lost += n
        f.out.clear()
        f.hole_acks = 0
        f.last_progress_us = now
        f.last_reduce_us = now
        self.log.add(now, "timeout", f.idx, n)
        ev = CongestionEvent(EventKind.TIMEOUT, f.fid, now, now, 0, 0, 0, None, 0)
        self._cca_event(f, ev, now)
        self._try_send(f, now)

    # -- KPI ---------------------------------------------------------------------
    def _kpi(self, now: int) -> None:
        self.emulator.advance(now)
        s = self.sampler.sample(now)
        self.kpi_feed.publish(s)
        self.log.add(now, "kpi", round(s.value, 3), int(not s.no_grants))

    # -- flows ---------------------------------------------------------------------
    def _start(self, f: _Flow, now: int) -> None:
        f.active = True
        self.registry.register(f.fid, f.spec.protocol)
        if f.spec.protocol is Protocol.TCP:
            if self.sc.radio.direction is Direction.DOWNLINK and f.spec.cca == "biscay":
                f.rwnd_state = FlowState(f.fid, Protocol.TCP, mss=self.mss)
                f.rwnd_cca = self._make_cca(f)
                f.cca = make_cca(self.sc.downlink_sender_cca)
            else:
                f.cca = self._make_cca(f)
        f.next_send_us = float(now)
        self.log.add(now, "start", f.idx, f.spec.cca if f.spec.protocol is Protocol.TCP else "udp")
        self._try_send(f, now)

    def _stop(self, f: _Flow, now: int) -> None:
        f.active = False
        self.registry.unregister(f.fid)
        self.e2e.remove(f.fid)
        self.log.add(now, "stop", f.idx)

    # -- main loop -------------------------------------------------------------------
    def run(self) -> EventLog:
        end = self.duration_us
        for f in self.flows:
            if f.start_us < end:
                self._push(f.start_us, _START, f)
                if f.stop_us is not None and f.stop_us < end:
                    self._push(f.stop_us, _STOP, f)
        for t, r in zip(self._wired_times[1:], self._wired_rates[1:]):
            if t < end:
                self._push(t, _WIRED, r)
        self._push(0, _TICK)
        if self.sampler is not None:
            self._push(self.kpi_interval_us, _KPI)
        heap = self._heap
        pop = heapq.heappop
        tick = self.tick_us
        while heap:
            t, _, kind, data = pop(heap)
            if t >= end:
                break
            if kind == _TICK:
                self._tick(t)
                self._push(t + tick, _TICK)
            elif kind == _ACK:
                self._on_acks(data[0], data[1], t)
            elif kind == _KPI:
                self._kpi(t)
                self._push(t + self.kpi_interval_us, _KPI)
            elif kind == _START:
                self._start(data, t)
            elif kind == _STOP:
                self._stop(data, t)
            elif kind == _WIRED:
                self.log.add(t, "wired", data)
        for f in self.flows:
            in_flight = f.sent - f.delivered_pkts - f.dropped
            self.log.add(end, "end", f.idx, f.sent, f.delivered_pkts, f.dropped, f.lost,
                         self._count_in_path(f.idx))
            assert in_flight == self._count_in_path(f.idx), "packet accounting drifted"
        return self.log

    def _count_in_path(self, idx: int) -> int:
        n = sum(1 for p in self._wired_transit if p.flow == idx)
        return n + sum(1 for p in self._cell_queue if p.flow == idx)

    def transitions(self) -> dict[int, list[tuple[int, CcState, CcState]]]:
        out = {}
        for f in self.flows:
            st = f.rwnd_state if f.rwnd_state is not None else f.state
            out[f.idx] = list(st.transitions)
        return out


def run(scenario: Scenario) -> EventLog:
    return Simulator(scenario).run()


def set_wired_capacity(scenario: Scenario, schedule: Sequence[tuple[float, float]]) -> Scenario:
    """Install a scripted wired-capacity schedule of ``(time_ms, bit/s)`` steps."""
    scenario.wired_schedule = tuple((float(t), float(r)) for t, r in schedule)
    scenario.validate()
    return scenario


# measurement ------------------------------------------------------------------------


@dataclass
class FlowSeries:
    flow: int
    window_ms: float
    throughput_bps: list[float]
    owd_us: list[int]
    rtt_us: list[int]
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    in_flight: int = 0
    delivered_bytes: int = 0

    def conserved(self) -> bool:
        return self.delivered == self.sent - self.dropped - self.in_flight


def measure(log: EventLog, window_ms: float = 100.0, start_ms: float = 0.0,
            end_ms: float | None = None) -> dict[int, FlowSeries]:
    """Per-flow throughput in tiling windows, one-way delays and RTT samples."""
    recs = log.records
    if not recs:
        return {}
    if end_ms is None:
        ends = [r[0] for r in recs if r[1] == "end"]
        end_ms = (max(ends) if ends else recs[-1][0]) / 1000.0
    win_us = window_ms * 1000.0
    start_us = start_ms * 1000.0
    nwin = max(0, int(math.ceil((end_ms - start_ms) * 1000.0 / win_us - 1e-9)))
    series: dict[int, FlowSeries] = {}

    def get(i):
        s = series.get(i)
        if s is None:
            s = series[i] = FlowSeries(i, window_ms, [0.0] * nwin, [], [])
        return s

    for r in recs:
        kind = r[1]
        if kind == "deliver":
            s = get(r[2])
            s.delivered_bytes += r[4]
            t = r[0]
            if t >= start_us:
                w = int((t - start_us) // win_us)
                if w < nwin:
                    s.throughput_bps[w] += r[4] * 8
                    s.owd_us.append(r[5])
        elif kind == "ack":
            if r[0] >= start_us:
                get(r[2]).rtt_us.append(r[4])
        elif kind == "end":
            s = get(r[2])
            s.sent, s.delivered, s.dropped, s.in_flight = r[3], r[4], r[5], r[7]
        elif kind == "start":
            get(r[2])
    scale = 1e3 / window_ms
    for s in series.values():
        s.throughput_bps = [b * scale for b in s.throughput_bps]
    return series
