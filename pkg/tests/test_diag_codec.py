import random
import struct
import threading
import zlib

import pytest
from hypothesis import given, settings, strategies as st

from biscay.diag_codec import (
    FRAME_OVERHEAD,
    MAGIC,
    NO_DATA,
    CellMeas,
    CodecError,
    DciGrant,
    DiagChannel,
    DiagFrame,
    Direction,
    GrantedBytesReport,
    MsgType,
    StreamDecoder,
    TripleBuffer,
    crc16,
    decode_stream,
    encode_frame,
    encode_raw,
    frame_of,
    publish,
    read_latest,
)


def crc16_bitwise(data: bytes) -> int:
    # reference CRC-16/CCITT-FALSE, one bit at a time
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else crc << 1
            crc &= 0xFFFF
    return crc


dci_st = st.builds(
    DciGrant,
    carrier_id=st.integers(0, 255),
    direction=st.sampled_from(list(Direction)),
    prb=st.integers(0, 273),
    tbs_index=st.integers(0, 26),
    mimo_layers=st.sampled_from([1, 2, 4]),
    tti_us=st.sampled_from([500, 1000]),
)
gb_st = st.integers(0, 2**32 - 1).flatmap(
    lambda g: st.builds(GrantedBytesReport, window_us=st.integers(1, 2**32 - 1),
                        bytes_granted=st.just(g), bytes_used=st.integers(0, g)))
meas_st = st.builds(CellMeas, rsrp_centi_dbm=st.integers(-2**31, 2**31 - 1), cell_id=st.integers(0, 65535))
frame_st = st.builds(frame_of, st.integers(0, 2**64 - 1), st.one_of(dci_st, gb_st, meas_st))


def test_crc_check_value():
    assert crc16(b"123456789") == 0x29B1
    assert crc16_bitwise(b"123456789") == 0x29B1


@given(st.binary(max_size=300))
def test_crc_matches_bitwise_reference(data):
    assert crc16(data) == crc16_bitwise(data)


def test_cellmeas_frame_is_23_bytes():
    f = frame_of(0, CellMeas(-9500, 7))
    raw = encode_frame(f)
    assert len(raw) == 23
    frames, diag, _ = decode_stream(raw, final=True)
    assert frames == [f] and diag.total() == 0


def test_layout_is_little_endian():
    f = frame_of(0x0102030405060708, DciGrant(0, Direction.UPLINK, 10, 4, 2, 1000))
    raw = encode_frame(f)
    magic, ver, mtype, ts, length = struct.unpack_from("<HBHQH", raw)
    assert (magic, ver, mtype, ts, length) == (MAGIC, 1, 1, 0x0102030405060708, 8)
    assert raw[:2] == b"\x44\x7e"
    assert raw[13:15] == b"\x08\x00"
    assert len(raw) == FRAME_OVERHEAD + 8
    assert struct.unpack("<H", raw[-2:])[0] == crc16_bitwise(raw[:-2])


def test_dci_payload_is_eight_bytes():
    raw = encode_frame(frame_of(5, DciGrant(0, Direction.UPLINK, 10, 4, 2, 1000)))
    payload = raw[15:-2]
    assert payload == struct.pack("<BBHBBH", 0, 0, 10, 4, 2, 1000)


@settings(max_examples=300)
@given(frame_st)
def test_round_trip(frame):
    frames, diag, state = decode_stream(encode_frame(frame), final=True)
    assert frames == [frame]
    assert diag.total() == 0
    assert not state.pending


@settings(max_examples=60)
@given(st.lists(frame_st, min_size=1, max_size=6), st.data())
def test_any_chunking_gives_same_frames(frames, data):
    stream = b"".join(encode_frame(f) for f in frames)
    cuts = sorted(data.draw(st.lists(st.integers(0, len(stream)), max_size=8)))
    dec = StreamDecoder()
    out = []
    prev = 0
    for c in cuts + [len(stream)]:
        out += dec.feed(stream[prev:c])
        prev = c
    out += dec.feed(b"", final=True)
    assert out == frames


@settings(max_examples=100)
@given(st.lists(frame_st, min_size=3, max_size=3), st.data())
def test_single_corrupt_byte_loses_at_most_one_frame(frames, data):
    stream = bytearray(b"".join(encode_frame(f) for f in frames))
    pos = data.draw(st.integers(0, len(stream) - 1))
    stream[pos] ^= data.draw(st.integers(1, 255))
    got, _, _ = decode_stream(bytes(stream), final=True)
    # the output is the input with at most one frame removed, order intact
    options = [frames] + [frames[:i] + frames[i + 1:] for i in range(len(frames))]
    assert got in options


def test_flipped_payload_byte_reports_crc_and_resyncs():
    f1 = frame_of(1, CellMeas(-9000, 1))
    f2 = frame_of(2, CellMeas(-9100, 2))
    a = bytearray(encode_frame(f1))
    a[16] ^= 0x40
    frames, diag, _ = decode_stream(bytes(a) + encode_frame(f2), final=True)
    assert frames == [f2]
    assert diag.crc_errors == 1


def test_unknown_type_skipped_with_diagnostic():
    good = frame_of(3, CellMeas(-1, 1))
    stream = encode_raw(0x0099, 1, b"abc") + encode_frame(good)
    frames, diag, _ = decode_stream(stream, final=True)
    assert frames == [good]
    assert diag.unknown_type == 1


def test_truncated_tail_is_retained():
    raw = encode_frame(frame_of(7, CellMeas(-5, 5)))
    frames, _, state = decode_stream(raw[:10])
    assert frames == [] and state.pending == raw[:10]
    frames, _, _ = decode_stream(raw[10:], state, final=True)
    assert len(frames) == 1


def test_invalid_fields_rejected():
    with pytest.raises(CodecError):
        DciGrant(0, Direction.UPLINK, 274, 0)
    with pytest.raises(CodecError):
        DciGrant(0, Direction.UPLINK, 1, 27)
    with pytest.raises(CodecError):
        DciGrant(0, Direction.UPLINK, 1, 1, mimo_layers=3)
    with pytest.raises(CodecError):
        GrantedBytesReport(100_000, 5, 6)
    with pytest.raises(CodecError):
        encode_raw(1, 0, bytes(70000))


def test_latest_value_semantics():
    ch = DiagChannel()
    sub = ch.subscribe([MsgType.CELL_MEAS])
    assert read_latest(sub, MsgType.CELL_MEAS) is NO_DATA
    f1, f2 = frame_of(1, CellMeas(-1, 1)), frame_of(2, CellMeas(-2, 2))
    publish(ch, f1)
    publish(ch, f2)
    assert read_latest(sub, MsgType.CELL_MEAS) == (f2, 2)
    assert read_latest(sub, MsgType.CELL_MEAS) == (f2, 2)
    with pytest.raises(KeyError):
        sub.read_latest(MsgType.DCI_GRANT)


def test_filter_only_delivers_subscribed_types():
    ch = DiagChannel()
    got = []
    ch.subscribe([MsgType.DCI_GRANT], lambda f, now: got.append(f))
    publish(ch, frame_of(1, CellMeas(-1, 1)))
    publish(ch, frame_of(2, DciGrant(0, Direction.UPLINK, 1, 1)))
    assert [f.msg_type for f in got] == [MsgType.DCI_GRANT]


def test_triple_buffer_concurrent_reads_never_torn():
    buf = TripleBuffer(capacity=4096)
    n = 10_000
    stop = threading.Event()
    bad = []
    seen = []

    def reader():
        last = 0
        while not stop.is_set() or last < n:
            got = buf.read()
            if got is None:
                continue
            data, seq = got
            body, check = data[:-4], int.from_bytes(data[-4:], "little")
            if zlib.crc32(body) != check or int.from_bytes(body[:4], "little") != seq:
                bad.append(seq)
            if seq < last:
                bad.append(("order", seq))
            last = seq
            seen.append(seq)
            if seq == n:
                break

    t = threading.Thread(target=reader)
    t.start()
    rng = random.Random(1)
    for i in range(1, n + 1):
        body = i.to_bytes(4, "little") + rng.randbytes(rng.randint(0, 2000))
        buf.write(body + zlib.crc32(body).to_bytes(4, "little"))
    stop.set()
    t.join(timeout=30)
    assert not t.is_alive()
    assert not bad
    assert seen and seen[-1] == n


def test_frames_compare_by_value():
    a = DiagFrame(MsgType.CELL_MEAS, 1, CellMeas(-1, 1))
    assert a == frame_of(1, CellMeas(-1, 1))
