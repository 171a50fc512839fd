"""Synthetic modem: capacity trace in, diag-frame stream out.

Grants are produced by inverting the per-TTI grant formula with a fixed
TBS index, so the only quantisation is one PRB per TTI per carrier. The
emulator then timestamps DCI grants (every TTI), cell measurements (every
10 ms) and granted-bytes summaries (every 100 ms) into an internal buffer
that is released either by periodic draining or in coarse batches.
"""

from __future__ import annotations

import enum
import logging
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .bandwidth import TputTable
from .diag_codec import (
    MAX_PRB,
    MAX_TBS_INDEX,
    CellMeas,
    DciGrant,
    DiagChannel,
    DiagFrame,
    Direction,
    GrantedBytesReport,
    MsgType,
    StreamDecoder,
    encode_frame,
)
from .traces import LinkTrace

log = logging.getLogger(__name__)

MEAS_PERIOD_US = 10_000
REPORT_WINDOW_US = 100_000


class TbsProfile(str, enum.Enum):
    FIXED = "fixed"
    RANDOM = "random"


@dataclass
class RadioConfig:
    num_carriers: int = 1
    mimo_layers: int | Sequence[int] = 1
    tti_us: int | Sequence[int] = 1000
    direction: Direction = Direction.UPLINK
    fixed_tbs_index: int = 10
    tput_table: TputTable = field(default_factory=TputTable.default)
    tbs_profile: TbsProfile = TbsProfile.FIXED
    tbs_period_ms: int = 100
    tbs_range: tuple[int, int] = (2, 26)
    grant_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_carriers < 1:
            raise ValueError("num_carriers must be >= 1")
        self.mimo = self._per_carrier(self.mimo_layers, "mimo_layers")
        self.ttis = self._per_carrier(self.tti_us, "tti_us")
        for m in self.mimo:
            if m not in (1, 2, 4):
                raise ValueError("mimo_layers must be 1, 2 or 4")
        for t in self.ttis:
            if t not in (500, 1000):
                raise ValueError("tti_us must be 500 or 1000")
        if not 0 <= self.fixed_tbs_index <= MAX_TBS_INDEX:
            raise ValueError("fixed_tbs_index out of range")
        self.direction = Direction(self.direction)
        self.tbs_profile = TbsProfile(self.tbs_profile)
        lo, hi = self.tbs_range
        if not 0 <= lo <= hi <= MAX_TBS_INDEX:
            raise ValueError("tbs_range out of range")
        if self.grant_noise < 0:
            raise ValueError("grant_noise must be >= 0")

    def _per_carrier(self, value, name):
        if isinstance(value, int):
            return [value] * self.num_carriers
        value = list(value)
        if len(value) != self.num_carriers:
            raise ValueError(f"{name} needs one entry per carrier")
        return value

    @property
    def tick_us(self) -> int:
        return math.gcd(*self.ttis) if len(self.ttis) > 1 else self.ttis[0]

    def max_bps(self) -> float:
        """Largest capacity representable at the configured TBS index."""
        table = self.tput_table
        return sum(table.bits(MAX_PRB, self.fixed_tbs_index) * m * 1e6 / t
                   for m, t in zip(self.mimo, self.ttis))


class BufferMode(str, enum.Enum):
    DRAIN = "drain"
    BATCH = "batch"


@dataclass(frozen=True)
class BufferPolicy:
    mode: BufferMode = BufferMode.DRAIN
    period_us: int = 1000

    @classmethod
    def drain(cls, period_ms: float = 1.0) -> "BufferPolicy":
        return cls(BufferMode.DRAIN, int(round(period_ms * 1000)))

    @classmethod
    def batch(cls, period_ms: float = 1000.0) -> "BufferPolicy":
        return cls(BufferMode.BATCH, int(round(period_ms * 1000)))


@dataclass
class GrantSchedule:
    """Grants keyed by TTI start time: ``entries[i] = (time_us, (grant, ...))``."""

    entries: list[tuple[int, tuple[DciGrant, ...]]]
    duration_us: int
    clamped_ttis: int = 0

    def bits_per_slot(self, table: TputTable) -> list[tuple[int, int]]:
        return [(t, sum(table.grant_bits(g) for g in gs)) for t, gs in self.entries]


class _GrantCache(dict):
    def __missing__(self, key):
        g = self[key] = DciGrant(*key)
        return g


def grants_from_capacity(trace: LinkTrace, cfg: RadioConfig, duration_ms: int | None = None) -> GrantSchedule:
    """Invert the grant formula so each TTI carries the trace's capacity.

    Target bits per TTI are split equally across carriers; each carrier gets
    ``prb = round(target / (table[1, tbs] * mimo))`` clamped to [0, 273].
    Optional multiplicative noise perturbs the PRB count; a ``random`` TBS
    profile redraws the TBS index every ``tbs_period_ms``.
    """
    duration_ms = trace.duration_ms if duration_ms is None else duration_ms
    duration_us = int(duration_ms * 1000)
    table = cfg.tput_table
    rng = random.Random(cfg.seed)
    cache = _GrantCache()
    tick = cfg.tick_us
    ncar = cfg.num_carriers
    period_us = cfg.tbs_period_ms * 1000
    tbs_now = cfg.fixed_tbs_index
    tbs_epoch = -1
    entries = []
    clamped = 0
    times = [st for st, _ in trace.samples]
    caps = [c for _, c in trace.samples]
    seg = 0
    memo: dict[tuple[int, int, int], tuple[int, bool]] = {}
    for t in range(0, duration_us, tick):
        if cfg.tbs_profile is TbsProfile.RANDOM:
            epoch = t // period_us
            if epoch != tbs_epoch:
                tbs_epoch = epoch
                tbs_now = rng.randint(*cfg.tbs_range)
        t_ms = t / 1000.0
        while seg + 1 < len(times) and times[seg + 1] <= t_ms:
            seg += 1
        cap = caps[seg]
        grants = []
        for c in range(ncar):
            tti = cfg.ttis[c]
            if t % tti:
                continue
            mimo = cfg.mimo[c]
            key = (cap, tbs_now, c)
            hit = memo.get(key)
            if hit is None:
                target = cap * tti / 1e6 / ncar
                quantum = table.bits(1, tbs_now) * mimo
                hit = memo[key] = (math.floor(target / quantum + 0.5) if quantum else 0, False)
            prb = hit[0]
            if cfg.grant_noise:
                prb = math.floor(prb * max(0.0, 1.0 + rng.gauss(0.0, cfg.grant_noise)) + 0.5)
            if prb > MAX_PRB:
                prb = MAX_PRB
                clamped += 1
            grants.append(cache[(c, cfg.direction, prb, tbs_now, mimo, tti)])
        if grants:
            entries.append((t, tuple(grants)))
    if clamped:
        log.warning("capacity exceeds radio maximum in %d carrier-TTIs; grants clamped", clamped)
    return GrantSchedule(entries, duration_us, clamped)


def granted_bytes_rollup(
    schedule: GrantSchedule,
    table: TputTable,
    window_us: int = REPORT_WINDOW_US,
    used_bits: dict[int, int] | None = None,
) -> list[tuple[int, GrantedBytesReport]]:
    """One report per window tiling ``[0, duration)``; bytes are floored once per window."""
    nwin = max(1, -(-schedule.duration_us // window_us))
    granted = [0] * nwin
    used = [0] * nwin
    for t, gs in schedule.entries:
        w = t // window_us
        if w >= nwin:
            continue
        bits = sum(table.grant_bits(g) for g in gs)
        granted[w] += bits
        used[w] += bits if used_bits is None else min(bits, used_bits.get(t, 0))
    return [
        (w * window_us, GrantedBytesReport(window_us, granted[w] // 8, min(used[w] // 8, granted[w] // 8)))
        for w in range(nwin)
    ]


class ModemEmulator:
    """Generates timestamped diag frames and releases them per the buffer policy.

    Call :meth:`emit` with a non-decreasing emulated clock. Frames due at or
    before ``now`` are encoded into the internal buffer; on each release
    instant the buffer is parsed and every frame is published to ``channel``
    stamped with the release time.
    """

    def __init__(
        self,
        schedule: GrantSchedule,
        cfg: RadioConfig,
        policy: BufferPolicy,
        channel: DiagChannel,
        trace: LinkTrace | None = None,
        meas_period_us: int = MEAS_PERIOD_US,
        report_window_us: int = REPORT_WINDOW_US,
    ):
        self.schedule = schedule
        self.cfg = cfg
        self.policy = policy
        self.channel = channel
        self.trace = trace
        self.meas_period_us = meas_period_us
        self.report_window_us = report_window_us
        self._table = cfg.tput_table
        self._rng = random.Random(cfg.seed + 1)
        self._buffer = bytearray()
        self._decoder = StreamDecoder()
        self._dci_idx = 0
        self._next_meas = 0
        self._next_report = report_window_us
        self._window_bits = 0
        self._next_release = policy.period_us
        self._wanted = channel.wanted()
        self._held: deque[tuple[DiagFrame, bytes]] = deque()
        self.generated = 0
        self.released = 0

    @property
    def diagnostics(self):
        return self._decoder.diagnostics

    def _cell_meas(self, t_us: int) -> CellMeas:
        cap = self.trace.capacity_at(t_us / 1000.0) if self.trace else 0
        frac = min(cap / self.cfg.max_bps(), 1.0) if self.cfg.max_bps() else 0.0
        rsrp = int(-12000 + 5000 * frac + self._rng.gauss(0.0, 150.0))
        return CellMeas(rsrp, 1)

    def _generate_until(self, now_us: int) -> None:
        entries = self.schedule.entries
        n_entries = len(entries)
        end = self.schedule.duration_us
        buf = self._buffer
        inf = float("inf")
        while True:
            # at equal times: the report closing [t - W, t) first, then DCI, then measurement
            t_rep = self._next_report if self._next_report <= end else inf
            t_dci = entries[self._dci_idx][0] if self._dci_idx < n_entries else inf
            t_meas = self._next_meas if self._next_meas < end else inf
            if t_rep <= now_us and t_rep <= t_dci and t_rep <= t_meas:
                t = t_rep
                bytes_ = self._window_bits // 8
                rep = GrantedBytesReport(self.report_window_us, bytes_, bytes_)
                buf += encode_frame(DiagFrame(MsgType.GRANTED_BYTES, t, rep))
                self._window_bits = 0
                self._next_report += self.report_window_us
                self.generated += 1
            elif t_dci <= now_us and t_dci <= t_meas:
                t = t_dci
                grants = entries[self._dci_idx][1]
                self._dci_idx += 1
                for g in grants:
                    buf += encode_frame(DiagFrame(MsgType.DCI_GRANT, t, g))
                    self._window_bits += self._table.grant_bits(g)
                self.generated += len(grants)
            elif t_meas <= now_us:
                t = t_meas
                buf += encode_frame(DiagFrame(MsgType.CELL_MEAS, t, self._cell_meas(t)))
                self._next_meas += self.meas_period_us
                self.generated += 1
            else:
                return

    def emit(self, now_us: int) -> list[DiagFrame]:
        """Advance to ``now_us``; return the frames released at this instant (if any)."""
        self._generate_until(now_us)
        if now_us < self._next_release:
            return []
        p = self.policy.period_us
        self._next_release = (now_us // p + 1) * p
        return self.flush(now_us)

    def flush(self, now_us: int) -> list[DiagFrame]:
        if not self._buffer:
            return []
        data = bytes(self._buffer)
        self._buffer.clear()
        raws: list[bytes] = []
        frames = self._decoder.feed(data, wanted=self._wanted, raw_out=raws)
        publish = self.channel.publish
        for f, raw in zip(frames, raws):
            publish(f, now_us, raw)
        self.released += len(frames)
        return frames


    def advance(self, now_us: int) -> int:
        """Batched equivalent of calling :meth:`emit` at every release instant up to ``now_us``.

        Release instants are the multiples of the policy period; a frame
        stamped ``ts`` goes out at the first instant at or after ``ts``
        (never before the first period). Returns the number published.
        """
        self._generate_until(now_us)
        if self._buffer:
            data = bytes(self._buffer)
            self._buffer.clear()
            raws: list[bytes] = []
            frames = self._decoder.feed(data, wanted=self._wanted, raw_out=raws)
            self._held.extend(zip(frames, raws))
        p = self.policy.period_us
        held = self._held
        publish = self.channel.publish
        n = 0
        while held:
            frame, raw = held[0]
            release = max(p, -(-frame.timestamp_us // p) * p)
            if release > now_us:
                break
            held.popleft()
            publish(frame, release, raw)
            n += 1
        self.released += n
        return n


def inter_arrivals(times_us: Sequence[int]) -> list[int]:
    return [b - a for a, b in zip(times_us, times_us[1:])]


def run_emulator(
    trace: LinkTrace,
    cfg: RadioConfig,
    policy: BufferPolicy,
    duration_ms: int | None = None,
    on_frame: Callable[[DiagFrame, int], None] | None = None,
    msg_types: Sequence[MsgType] = tuple(MsgType),
    tick_us: int | None = None,
) -> ModemEmulator:
    """Drive an emulator through a whole trace with a fixed clock tick."""
    schedule = grants_from_capacity(trace, cfg, duration_ms)
    channel = DiagChannel()
    channel.subscribe(msg_types, on_frame)
    emu = ModemEmulator(schedule, cfg, policy, channel, trace)
    step = tick_us or cfg.tick_us
    for now in range(0, schedule.duration_us + step, step):
        emu.emit(now)
    emu.flush(schedule.duration_us + step)
    return emu
