"""Wire format, streaming parser and latest-value channel for emulated diag frames.

Frame layout (all integers little-endian)::

    magic    u16  0x7E44
    version  u8   0x01
    msg_type u16
    ts_us    u64  emulated clock, microseconds
    length   u16  payload length
    payload  ...
    crc16    u16  CRC-16/CCITT-FALSE over magic..payload

The parser is incremental: feed it arbitrary chunks and it emits every
well-framed, CRC-valid frame in order, resynchronising on the next magic
after corruption.
"""

from __future__ import annotations

import binascii
import enum
import functools
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Union

MAGIC = 0x7E44
VERSION = 0x01
MAX_PAYLOAD = 0xFFFF

_HEADER = struct.Struct("<HBHQH")
_CRC = struct.Struct("<H")
HEADER_LEN = _HEADER.size  # 15
FRAME_OVERHEAD = HEADER_LEN + _CRC.size  # 17
_MAGIC_BYTES = struct.pack("<H", MAGIC)

_DCI = struct.Struct("<BBHBBH")
_GRANTED = struct.Struct("<III")
_CELLMEAS = struct.Struct("<iH")

MAX_PRB = 273
MAX_TBS_INDEX = 26
VALID_MIMO = (1, 2, 4)
VALID_TTI_US = (500, 1000)


class CodecError(ValueError):
    pass


class MsgType(enum.IntEnum):
    DCI_GRANT = 0x0001
    GRANTED_BYTES = 0x0002
    CELL_MEAS = 0x0003


class Direction(enum.IntEnum):
    UPLINK = 0
    DOWNLINK = 1


def crc16(data: bytes, init: int = 0xFFFF) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no xorout)."""
    return binascii.crc_hqx(data, init)


@dataclass(frozen=True)
class DciGrant:
    """One per-TTI scheduling grant on one component carrier."""

    carrier_id: int
    direction: Direction
    prb: int
    tbs_index: int
    mimo_layers: int = 1
    tti_us: int = 1000

    def __post_init__(self):
        if not 0 <= self.carrier_id <= 0xFF:
            raise CodecError(f"carrier_id {self.carrier_id} out of range")
        if not 0 <= self.prb <= MAX_PRB:
            raise CodecError(f"prb {self.prb} outside 0..{MAX_PRB}")
        if not 0 <= self.tbs_index <= MAX_TBS_INDEX:
            raise CodecError(f"tbs_index {self.tbs_index} outside 0..{MAX_TBS_INDEX}")
        if self.mimo_layers not in VALID_MIMO:
            raise CodecError(f"mimo_layers must be one of {VALID_MIMO}")
        if self.tti_us not in VALID_TTI_US:
            raise CodecError(f"tti_us must be one of {VALID_TTI_US}")


@dataclass(frozen=True)
class GrantedBytesReport:
    window_us: int = 100_000
    bytes_granted: int = 0
    bytes_used: int = 0

    def __post_init__(self):
        if self.window_us <= 0:
            raise CodecError("report window must be positive")
        if not 0 <= self.bytes_used <= self.bytes_granted:
            raise CodecError("bytes_used must lie in [0, bytes_granted]")


@dataclass(frozen=True)
class CellMeas:
    rsrp_centi_dbm: int
    cell_id: int


Payload = Union[DciGrant, GrantedBytesReport, CellMeas]

_PAYLOAD_TYPES = {
    DciGrant: MsgType.DCI_GRANT,
    GrantedBytesReport: MsgType.GRANTED_BYTES,
    CellMeas: MsgType.CELL_MEAS,
}


@dataclass(frozen=True)
class DiagFrame:
    msg_type: MsgType
    timestamp_us: int
    payload: Payload


def frame_of(timestamp_us: int, payload: Payload) -> DiagFrame:
    return DiagFrame(_PAYLOAD_TYPES[type(payload)], timestamp_us, payload)


def _pack_payload(frame: DiagFrame) -> bytes:
    p = frame.payload
    if frame.msg_type is MsgType.DCI_GRANT and isinstance(p, DciGrant):
        return _DCI.pack(p.carrier_id, int(p.direction), p.prb, p.tbs_index, p.mimo_layers, p.tti_us)
    if frame.msg_type is MsgType.GRANTED_BYTES and isinstance(p, GrantedBytesReport):
        return _GRANTED.pack(p.window_us, p.bytes_granted, p.bytes_used)
    if frame.msg_type is MsgType.CELL_MEAS and isinstance(p, CellMeas):
        return _CELLMEAS.pack(p.rsrp_centi_dbm, p.cell_id)
    raise CodecError(f"payload {type(p).__name__} does not match msg_type {frame.msg_type!r}")


@functools.lru_cache(maxsize=4096)
def _unpack_payload(msg_type: MsgType, raw: bytes) -> Payload:
    if msg_type is MsgType.DCI_GRANT:
        c, d, prb, tbs, mimo, tti = _DCI.unpack(raw)
        return DciGrant(c, Direction(d), prb, tbs, mimo, tti)
    if msg_type is MsgType.GRANTED_BYTES:
        return GrantedBytesReport(*_GRANTED.unpack(raw))
    return CellMeas(*_CELLMEAS.unpack(raw))


_PAYLOAD_SIZES = {
    MsgType.DCI_GRANT: _DCI.size,
    MsgType.GRANTED_BYTES: _GRANTED.size,
    MsgType.CELL_MEAS: _CELLMEAS.size,
}


def encode_raw(msg_type: int, timestamp_us: int, payload: bytes) -> bytes:
    """Frame an arbitrary payload; used for fuzz corpora and forward-compat tests."""
    if len(payload) > MAX_PAYLOAD:
        raise CodecError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    if not 0 <= timestamp_us < 1 << 64:
        raise CodecError("timestamp must fit in u64")
    body = _HEADER.pack(MAGIC, VERSION, msg_type, timestamp_us, len(payload)) + payload
    return body + _CRC.pack(crc16(body))


@functools.lru_cache(maxsize=4096)
def _payload_bytes(frame_type: MsgType, payload: Payload) -> bytes:
    try:
        return _pack_payload(DiagFrame(frame_type, 0, payload))
    except struct.error as exc:
        raise CodecError(str(exc)) from exc


def encode_frame(frame: DiagFrame) -> bytes:
    raw = _payload_bytes(frame.msg_type, frame.payload)
    return encode_raw(int(frame.msg_type), frame.timestamp_us, raw)


@dataclass
class Diagnostics:
    crc_errors: int = 0
    unknown_type: int = 0
    bad_payload: int = 0
    skipped_bytes: int = 0
    filtered: int = 0

    def total(self) -> int:
        return self.crc_errors + self.unknown_type + self.bad_payload

    def merge(self, other: "Diagnostics") -> None:
        self.crc_errors += other.crc_errors
        self.unknown_type += other.unknown_type
        self.bad_payload += other.bad_payload
        self.skipped_bytes += other.skipped_bytes
        self.filtered += other.filtered


@dataclass
class DecoderState:
    pending: bytes = b""


def decode_stream(
    data: bytes,
    state: DecoderState | None = None,
    final: bool = False,
    wanted: frozenset | None = None,
    raw_out: list | None = None,
) -> tuple[list[DiagFrame], Diagnostics, DecoderState]:
    """Decode as many frames as ``data`` (plus any retained tail) allows.

    With ``final=False`` an incomplete trailing frame is kept in the returned
    state; with ``final=True`` no more bytes are coming, so an unfinishable
    candidate is treated as garbage and scanning continues past it.
    ``wanted`` restricts payload decoding to those message types; other
    well-formed frames are stepped over and counted in ``filtered``. When
    ``raw_out`` is given, the wire bytes of each returned frame are appended
    to it so callers can forward them without re-encoding.
    """
    buf = (state.pending + bytes(data)) if state and state.pending else bytes(data)
    frames: list[DiagFrame] = []
    diag = Diagnostics()
    pending = _decode_into(buf, final, wanted, frames, raw_out, diag)
    return frames, diag, DecoderState(pending)


_MSG_TYPES = {int(t): t for t in MsgType}


def _decode_into(buf: bytes, final: bool, wanted, frames: list, raw_out, diag: Diagnostics) -> bytes:
    n = len(buf)
    i = 0
    find = buf.find
    unpack_header = _HEADER.unpack_from
    crc_size = _CRC.size
    while True:
        j = find(_MAGIC_BYTES, i)
        if j < 0:
            # a lone first magic byte at the very end may still become a frame
            keep = 1 if (not final and n > i and buf[-1] == _MAGIC_BYTES[0]) else 0
            diag.skipped_bytes += n - i - keep
            return buf[n - keep:] if keep else b""
        diag.skipped_bytes += j - i
        if n - j < HEADER_LEN:
            if not final:
                return buf[j:]
            diag.skipped_bytes += 1
            i = j + 1
            continue
        _, version, msg_type, ts, plen = unpack_header(buf, j)
        if version != VERSION:
            diag.skipped_bytes += 1
            i = j + 1
            continue
        end = j + HEADER_LEN + plen
        if n - end < crc_size:
            if not final:
                return buf[j:]
            diag.skipped_bytes += 1
            i = j + 1
            continue
        if crc16(buf[j:end]) != buf[end] | (buf[end + 1] << 8):
            diag.crc_errors += 1
            diag.skipped_bytes += 1
            i = j + 1
            continue
        i = end + crc_size
        mt = _MSG_TYPES.get(msg_type)
        if mt is None:
            diag.unknown_type += 1
            continue
        if plen != _PAYLOAD_SIZES[mt]:
            diag.bad_payload += 1
            continue
        if wanted is not None and mt not in wanted:
            diag.filtered += 1
            continue
        try:
            payload = _unpack_payload(mt, buf[j + HEADER_LEN:end])
        except (CodecError, ValueError):
            diag.bad_payload += 1
            continue
        frames.append(DiagFrame(mt, ts, payload))
        if raw_out is not None:
            raw_out.append(buf[j:i])


class StreamDecoder:
    """Stateful wrapper around :func:`decode_stream` that keeps running totals."""

    def __init__(self):
        self._pending = b""
        self.diagnostics = Diagnostics()

    @property
    def state(self) -> DecoderState:
        return DecoderState(self._pending)

    def feed(self, data: bytes, final: bool = False, wanted: frozenset | None = None,
             raw_out: list | None = None) -> list[DiagFrame]:
        buf = self._pending + bytes(data) if self._pending else bytes(data)
        frames: list[DiagFrame] = []
        self._pending = _decode_into(buf, final, wanted, frames, raw_out, self.diagnostics)
        return frames


# ---------------------------------------------------------------------------
# latest-value channel
# ---------------------------------------------------------------------------

class _NoData:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return "NO_DATA"


NO_DATA = _NoData()


class TripleBuffer:
    """Single-writer latest-value slot over three preallocated byte regions.

    The writer fills the back region and swaps it with the middle one; the
    reader swaps the middle region into the front when something new has
    landed and only ever decodes from the front. Neither side touches the
    region the other is copying. CPython has no compare-and-swap, so the
    three-index exchange is guarded by a lock held for a handful of
    bytecodes; no copy or decode ever happens under it.
    """

    def __init__(self, capacity: int = FRAME_OVERHEAD + MAX_PAYLOAD):
        self._regions = [bytearray(capacity) for _ in range(3)]
        self._lengths = [0, 0, 0]
        self._seqs = [0, 0, 0]
        self._back, self._middle, self._front = 0, 1, 2
        self._fresh = False
        self._swap = threading.Lock()
        self._seq = 0
        self.capacity = capacity

    def write(self, data: bytes) -> int:
        n = len(data)
        if n > self.capacity:
            raise CodecError("frame larger than slot")
        b = self._back
        self._regions[b][:n] = data
        self._lengths[b] = n
        self._seq += 1
        self._seqs[b] = self._seq
        with self._swap:
            self._back, self._middle = self._middle, self._back
            self._fresh = True
        return self._seq

    def read(self) -> tuple[bytes, int] | None:
        if self._fresh:
            with self._swap:
                self._front, self._middle = self._middle, self._front
                self._fresh = False
        f = self._front
        if self._seqs[f] == 0:
            return None
        return bytes(self._regions[f][: self._lengths[f]]), self._seqs[f]


class Subscription:
    def __init__(self, msg_types: Iterable[MsgType], callback: Callable[[DiagFrame, int], None] | None = None):
        self.filter = frozenset(MsgType(t) for t in msg_types)
        self.callback = callback
        self._slots = {t: TripleBuffer() for t in self.filter}
        self._cache: dict[MsgType, tuple[int, DiagFrame]] = {}

    def _deliver(self, frame: DiagFrame, raw: bytes, now_us: int) -> None:
        self._slots[frame.msg_type].write(raw)
        if self.callback is not None:
            self.callback(frame, now_us)

    def read_latest(self, msg_type: MsgType):
        """Return ``(frame, seq)`` for the newest frame of ``msg_type`` or ``NO_DATA``."""
        msg_type = MsgType(msg_type)
        if msg_type not in self.filter:
            raise KeyError(f"subscription does not cover {msg_type!r}")
        got = self._slots[msg_type].read()
        if got is None:
            return NO_DATA
        raw, seq = got
        cached = self._cache.get(msg_type)
        if cached is not None and cached[0] == seq:
            return cached[1], seq
        frames, _, _ = decode_stream(raw, final=True)
        frame = frames[0]
        self._cache[msg_type] = (seq, frame)
        return frame, seq


@dataclass
class DiagChannel:
    """Publish side of the subscription API; fans frames out to subscribers."""

    subscriptions: list[Subscription] = field(default_factory=list)
    published: int = 0

    def subscribe(self, msg_types: Iterable[MsgType], callback=None) -> Subscription:
        sub = Subscription(msg_types, callback)
        self.subscriptions.append(sub)
        return sub

    def wanted(self) -> frozenset:
        """Union of every subscription's filter; the rest needn't be parsed."""
        out = frozenset()
        for sub in self.subscriptions:
            out |= sub.filter
        return out

    def publish(self, frame: DiagFrame, now_us: int | None = None, raw: bytes | None = None) -> None:
        when = frame.timestamp_us if now_us is None else now_us
        self.published += 1
        for sub in self.subscriptions:
            if frame.msg_type in sub.filter:
                if raw is None:
                    raw = encode_frame(frame)
                sub._deliver(frame, raw, when)


def publish(channel: DiagChannel, frame: DiagFrame, now_us: int | None = None) -> None:
    channel.publish(frame, now_us)


def read_latest(subscription: Subscription, msg_type: MsgType):
    return subscription.read_latest(msg_type)
