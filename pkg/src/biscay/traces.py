"""Link capacity traces: validation, CSV I/O and a seeded random-walk generator."""

from __future__ import annotations

import bisect
import io
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

HEADER = "time_ms,capacity_bps"


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class LinkTrace:
    """Piecewise-constant capacity: ``samples[i]`` holds until the next sample time."""

    samples: tuple[tuple[int, int], ...]
    duration_ms: int

    def __post_init__(self):
        if not self.samples:
            raise TraceError("trace has no samples")
        prev = None
        for i, (t, c) in enumerate(self.samples):
            if t < 0 or c < 0:
                raise TraceError(f"sample {i}: negative time or capacity")
            if prev is not None and t <= prev:
                raise TraceError(f"sample {i}: time {t} not after {prev}")
            prev = t
        object.__setattr__(self, "_times", [t for t, _ in self.samples])

    @classmethod
    def from_samples(cls, samples: Sequence[tuple[int, int]], duration_ms: int | None = None) -> "LinkTrace":
        samples = tuple((int(t), int(c)) for t, c in samples)
        if duration_ms is None:
            if len(samples) >= 2:
                duration_ms = samples[-1][0] + (samples[-1][0] - samples[-2][0])
            elif samples:
                duration_ms = samples[0][0]
            else:
                duration_ms = 0
        return cls(samples, int(duration_ms))

    @classmethod
    def constant(cls, capacity_bps: float, duration_ms: int) -> "LinkTrace":
        return cls(((0, int(capacity_bps)),), int(duration_ms))

    def capacity_at(self, t_ms: float) -> int:
        i = bisect.bisect_right(self._times, t_ms) - 1
        return self.samples[max(i, 0)][1]

    def mean_capacity(self, start_ms: float, end_ms: float) -> float:
        """Time-average capacity over ``[start_ms, end_ms)`` (exact integral)."""
        if end_ms <= start_ms:
            raise ValueError("empty interval")
        total = 0.0
        i = max(bisect.bisect_right(self._times, start_ms) - 1, 0)
        t = start_ms
        while t < end_ms:
            nxt = self._times[i + 1] if i + 1 < len(self._times) else float("inf")
            seg_end = min(nxt, end_ms)
            total += self.samples[i][1] * (seg_end - t)
            t = seg_end
            i += 1
        return total / (end_ms - start_ms)


def write_trace(trace: LinkTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_trace(trace))


def dumps_trace(trace: LinkTrace) -> str:
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    for t, c in trace.samples:
        buf.write(f"{t},{c}\n")
    return buf.getvalue()


def ingest_trace(path: str | Path, duration_ms: int | None = None) -> LinkTrace:
    """Parse a ``time_ms,capacity_bps`` CSV; errors cite the offending line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].strip() != HEADER:
        raise TraceError(f"line 1: expected header '{HEADER}'")
    samples: list[tuple[int, int]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TraceError(f"line {lineno}: expected 2 fields, got {len(parts)}")
        try:
            t, c = int(parts[0]), int(float(parts[1]))
        except ValueError as exc:
            raise TraceError(f"line {lineno}: {exc}") from exc
        if c < 0:
            raise TraceError(f"line {lineno}: negative capacity")
        if samples and t <= samples[-1][0]:
            raise TraceError(f"line {lineno}: timestamp {t} not increasing")
        samples.append((t, c))
    if not samples:
        raise TraceError("trace file has no samples")
    return LinkTrace.from_samples(samples, duration_ms)


def random_walk(
    min_mbps: float,
    max_mbps: float,
    step_mbps: float,
    duration_s: float,
    interval_ms: int = 100,
    seed: int = 0,
    start_mbps: float | None = None,
) -> LinkTrace:
    """Bounded random walk; each interval moves by U(-step, +step), reflected at the bounds."""
    if not 0 <= min_mbps <= max_mbps:
        raise TraceError("need 0 <= min_mbps <= max_mbps")
    if interval_ms <= 0 or duration_s <= 0:
        raise TraceError("interval and duration must be positive")
    rng = random.Random(seed)
    level = (min_mbps + max_mbps) / 2 if start_mbps is None else start_mbps
    samples = []
    duration_ms = int(round(duration_s * 1000))
    for t in range(0, duration_ms, interval_ms):
        samples.append((t, int(round(level * 1e6))))
        level += rng.uniform(-step_mbps, step_mbps)
        if level > max_mbps:
            level = 2 * max_mbps - level
        if level < min_mbps:
            level = 2 * min_mbps - level
        level = min(max(level, min_mbps), max_mbps)
    return LinkTrace(tuple(samples), duration_ms)


def step_trace(steps: Sequence[tuple[float, float]], duration_s: float) -> LinkTrace:
    """``steps`` are ``(time_s, mbps)`` pairs."""
    return LinkTrace(tuple((int(round(t * 1000)), int(round(m * 1e6))) for t, m in steps),
                     int(round(duration_s * 1000)))
