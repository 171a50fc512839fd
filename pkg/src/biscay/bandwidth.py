"""KPI-based bandwidth determination.

Two ways to turn modem KPIs into a cellular bandwidth figure:

* per-TTI grant arithmetic: for every TTI, sum over carriers of
  ``table[prb, tbs_index] * mimo_layers`` bits, averaged over a window;
* the MAC granted-bytes summary, reported every 100 ms.

Also home to bottleneck localisation and the Pearson coefficient used to
validate the methods against ground truth.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .diag_codec import (
    MAX_PRB,
    MAX_TBS_INDEX,
    DciGrant,
    DiagFrame,
    Direction,
    GrantedBytesReport,
    MsgType,
)


class TableError(ValueError):
    pass


class Method(str, enum.Enum):
    GPP3 = "gpp3"
    GRANTED_BYTES = "granted_bytes"
    END_TO_END = "end_to_end"
    GROUND_TRUTH = "ground_truth"


class BottleneckLocation(str, enum.Enum):
    CELLULAR = "cellular"
    WIRED = "wired"


def default_bits(prb: int, tbs_index: int) -> int:
    return prb * 24 * (tbs_index + 1)


class TputTable:
    """Bits carried in one TTI by ``prb`` resource blocks at ``tbs_index``."""

    def __init__(self, bits: Sequence[Sequence[int]], direction: Direction = Direction.UPLINK):
        # bits[prb][tbs]; row 0 is all zeros by convention
        self._bits = [list(row) for row in bits]
        self.direction = direction

    @classmethod
    def default(cls, direction: Direction = Direction.UPLINK) -> "TputTable":
        return cls(
            [[default_bits(p, t) for t in range(MAX_TBS_INDEX + 1)] for p in range(MAX_PRB + 1)],
            direction,
        )

    def bits(self, prb: int, tbs_index: int) -> int:
        return self._bits[prb][tbs_index]

    __call__ = bits

    def grant_bits(self, grant: DciGrant) -> int:
        return self._bits[grant.prb][grant.tbs_index] * grant.mimo_layers


def load_tput_table(source: str | Path | None = None, direction: Direction = Direction.UPLINK) -> TputTable:
    """Read a ``prb,tbs_index,bits`` CSV, or build the synthetic default table."""
    if source is None:
        return TputTable.default(direction)
    grid: dict[tuple[int, int], int] = {}
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"prb", "tbs_index", "bits"} - set(reader.fieldnames or ())
        if missing:
            raise TableError(f"table header lacks columns: {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (int(row["prb"]), int(row["tbs_index"]))
                value = int(row["bits"])
            except (TypeError, ValueError) as exc:
                raise TableError(f"line {lineno}: {exc}") from exc
            if value < 0:
                raise TableError(f"line {lineno}: negative bits at ({key[0]},{key[1]})")
            grid[key] = value
    bits = [[0] * (MAX_TBS_INDEX + 1) for _ in range(MAX_PRB + 1)]
    for prb in range(1, MAX_PRB + 1):
        for tbs in range(MAX_TBS_INDEX + 1):
            if (prb, tbs) not in grid:
                raise TableError(f"table has no entry for ({prb},{tbs})")
            bits[prb][tbs] = grid[(prb, tbs)]
    for prb in range(1, MAX_PRB + 1):
        for tbs in range(MAX_TBS_INDEX + 1):
            if prb > 1 and bits[prb][tbs] < bits[prb - 1][tbs]:
                raise TableError(f"table not monotone in prb at ({prb},{tbs})")
            if tbs > 0 and bits[prb][tbs] < bits[prb][tbs - 1]:
                raise TableError(f"table not monotone in tbs_index at ({prb},{tbs})")
    return TputTable(bits, direction)


@dataclass(frozen=True)
class BandwidthSample:
    time_ms: float
    value: float  # bit/s
    method: Method
    no_grants: bool = False


def tti_bits(grants: Iterable[DciGrant], table: TputTable) -> int:
    """Bits granted in one TTI, summed over component carriers."""
    return sum(table.grant_bits(g) for g in grants)


def bw_3gpp(grants: Iterable[DciGrant], table: TputTable, window_us: int, time_ms: float = 0.0) -> BandwidthSample:
    """Mean grant bandwidth over a sampling window.

    ``grants`` are all DCI grants (every carrier, every TTI) falling inside
    the window; ``window_us`` is its length.
    """
    if window_us <= 0:
        raise ValueError("window must be positive")
    total = 0
    seen = False
    direction = None
    for g in grants:
        if direction is None:
            direction = g.direction
        elif g.direction != direction:
            raise ValueError("grants in one window must share a direction")
        total += table.grant_bits(g)
        seen = True
    return BandwidthSample(time_ms, total * 1e6 / window_us, Method.GPP3, no_grants=not seen)


def bw_granted_bytes(report: GrantedBytesReport, time_ms: float = 0.0) -> BandwidthSample:
    return BandwidthSample(time_ms, report.bytes_granted * 8 * 1e6 / report.window_us, Method.GRANTED_BYTES)


class BottleneckDetector:
    """Hysteresis + streak bottleneck localisation.

    Cellular -> Wired once ``cellular > (1 + h) * e2e`` holds for ``k``
    consecutive samples; Wired -> Cellular once ``cellular <= e2e`` holds
    for ``k`` consecutive samples.
    """

    def __init__(self, hysteresis: float = 0.1, streak: int = 3,
                 prior: BottleneckLocation = BottleneckLocation.CELLULAR):
        if hysteresis < 0 or streak < 1:
            raise ValueError("hysteresis must be >= 0 and streak >= 1")
        self.h = hysteresis
        self.k = streak
        self.location = prior
        self.run = 0

    def update(self, cellular_bw: float | None, end_to_end_bw: float | None) -> BottleneckLocation:
        if cellular_bw is None or end_to_end_bw is None:
            return self.location
        if self.location is BottleneckLocation.CELLULAR:
            hit = cellular_bw > (1.0 + self.h) * end_to_end_bw
        else:
            hit = cellular_bw <= end_to_end_bw
        if not hit:
            self.run = 0
            return self.location
        self.run += 1
        if self.run >= self.k:
            self.location = (BottleneckLocation.WIRED if self.location is BottleneckLocation.CELLULAR
                             else BottleneckLocation.CELLULAR)
            self.run = 0
        return self.location


def locate_bottleneck(
    samples: Iterable[tuple[float | None, float | None]],
    hysteresis: float = 0.1,
    streak: int = 3,
    prior: BottleneckLocation = BottleneckLocation.CELLULAR,
) -> BottleneckLocation:
    """Run the detector over ``(cellular_bw, end_to_end_bw)`` pairs; return the final location."""
    det = BottleneckDetector(hysteresis, streak, prior)
    for cell, e2e in samples:
        det.update(cell, e2e)
    return det.location


def pearson(a: Sequence[float], b: Sequence[float]) -> float | None:
    """Sample Pearson coefficient; ``None`` when either series is constant."""
    n = len(a)
    if n != len(b):
        raise ValueError("series lengths differ")
    if n < 2:
        raise ValueError("need at least two points")
    ma = math.fsum(a) / n
    mb = math.fsum(b) / n
    da = [x - ma for x in a]
    db = [y - mb for y in b]
    saa = math.fsum(x * x for x in da)
    sbb = math.fsum(y * y for y in db)
    if saa == 0.0 or sbb == 0.0:
        return None
    r = math.fsum(x * y for x, y in zip(da, db)) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


class KpiSampler:
    """Turns the stream of delivered KPI frames into periodic bandwidth samples.

    Frames arrive through a subscription callback in delivery order. Every
    sampling instant the grants received since the previous sample are
    averaged over the TTIs they cover; a window with no new grants yields a
    sample flagged ``no_grants``. In granted-bytes mode the most recent
    unseen report is used instead.
    """

    def __init__(self, table: TputTable, method: Method = Method.GPP3, num_carriers: int = 1):
        self.table = table
        self.method = Method(method)
        self.num_carriers = max(1, num_carriers)
        self._bits = 0
        self._tti_us = 0
        self._slots: set[int] = set()
        self._report: GrantedBytesReport | None = None
        self.samples: list[BandwidthSample] = []

    def on_frame(self, frame: DiagFrame, now_us: int) -> None:
        if frame.msg_type is MsgType.DCI_GRANT:
            g = frame.payload
            self._bits += self.table.grant_bits(g)
            if frame.timestamp_us not in self._slots:
                self._slots.add(frame.timestamp_us)
                self._tti_us += g.tti_us
        elif frame.msg_type is MsgType.GRANTED_BYTES:
            self._report = frame.payload

    def sample(self, now_us: int) -> BandwidthSample:
        t_ms = now_us / 1000.0
        if self.method is Method.GRANTED_BYTES:
            rep, self._report = self._report, None
            if rep is None:
                s = BandwidthSample(t_ms, 0.0, Method.GRANTED_BYTES, no_grants=True)
            else:
                s = BandwidthSample(t_ms, rep.bytes_granted * 8e6 / rep.window_us, Method.GRANTED_BYTES)
        elif self._tti_us == 0:
            s = BandwidthSample(t_ms, 0.0, Method.GPP3, no_grants=True)
        else:
            s = BandwidthSample(t_ms, self._bits * 1e6 / self._tti_us, Method.GPP3)
        self._bits = 0
        self._tti_us = 0
        self._slots.clear()
        self.samples.append(s)
        return s
