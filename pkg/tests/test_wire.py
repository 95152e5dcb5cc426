import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imuface import wire


def random_packet(rng):
    return wire.ImuPacket(seq=int(rng.integers(0, 65536)),
                          t_us=int(rng.integers(0, 2**32)),
                          counts=rng.integers(-32768, 32768, 18).astype(np.int16))


def test_crc_check_value():
    # Standard CCITT-FALSE check value.
    assert wire.crc16_ccitt(b"123456789") == 0x29B1


@given(st.binary(min_size=0, max_size=64))
@settings(max_examples=200, deadline=None)
def test_crc_table_matches_bitwise(data):
    assert wire.crc16_ccitt(data) == wire.crc16_ccitt_bitwise(data)


def test_packet_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pkt = random_packet(rng)
        back = wire.decode_packet(wire.encode_packet(pkt))
        assert back.seq == pkt.seq and back.t_us == pkt.t_us
        assert (back.counts == pkt.counts).all()


def test_flipped_payload_bit_fails_crc():
    pkt = random_packet(np.random.default_rng(1))
    raw = bytearray(wire.encode_packet(pkt))
    raw[20] ^= 0x04
    with pytest.raises(wire.WireError, match="crc"):
        wire.decode_packet(bytes(raw))


def test_bad_sync_rejected():
    raw = bytearray(wire.encode_packet(random_packet(np.random.default_rng(2))))
    raw[0] = 0x00
    with pytest.raises(wire.WireError, match="sync"):
        wire.decode_packet(bytes(raw))


def test_bulk_encode_matches_per_packet():
    rng = np.random.default_rng(3)
    n = 50
    t = rng.integers(0, 2**31, n)
    counts = rng.integers(-32768, 32768, (n, 18)).astype(np.int16)
    data = wire.encode_stream(t, counts, seq0=7)
    for i in range(n):
        ref = wire.encode_packet(wire.ImuPacket(seq=(7 + i) & 0xFFFF,
                                                t_us=int(t[i]), counts=counts[i]))
        assert data[i * 45:(i + 1) * 45] == ref


def test_stream_round_trip_60s():
    rng = np.random.default_rng(4)
    n = 24000  # 60 s at 400 Hz
    t = (np.arange(n) * 2500).astype(np.int64)
    counts = rng.integers(-32768, 32768, (n, 18)).astype(np.int16)
    data = wire.encode_stream(t, counts)
    assert len(data) == n * wire.IMU_PACKET_SIZE
    t2, c2, stats = wire.decode_stream(data)
    assert stats.packets == n and stats.crc_failures == 0 and stats.lost_packets == 0
    assert (c2 == counts).all()
    assert (t2.astype(np.int64) == t).all()


def test_decoder_resync_and_crc_drop():
    rng = np.random.default_rng(5)
    pkts = [wire.encode_packet(random_packet(rng)) for _ in range(5)]
    # Garbage prefix, then a corrupted packet in the middle.
    bad = bytearray(pkts[2])
    bad[10] ^= 0xFF
    stream = b"\x00\x01\x02" + pkts[0] + pkts[1] + bytes(bad) + pkts[3] + pkts[4]
    dec = wire.PacketDecoder()
    out = dec.feed(stream)
    assert len(out) == 4
    assert dec.stats.crc_failures >= 1
    assert dec.stats.resyncs >= 1


def test_decoder_incremental_chunks():
    rng = np.random.default_rng(6)
    pkts = [random_packet(rng) for _ in range(20)]
    data = b"".join(wire.encode_packet(p) for p in pkts)
    dec = wire.PacketDecoder()
    got = []
    for lo in range(0, len(data), 7):  # deliberately unaligned chunks
        got.extend(dec.feed(data[lo:lo + 7]))
    assert len(got) == 20
    assert all((g.counts == p.counts).all() for g, p in zip(got, pkts))


def test_seq_gap_counts_losses():
    rng = np.random.default_rng(7)
    p7 = wire.ImuPacket(seq=7, t_us=100, counts=rng.integers(-5, 5, 18).astype(np.int16))
    p9 = wire.ImuPacket(seq=9, t_us=200, counts=rng.integers(-5, 5, 18).astype(np.int16))
    dec = wire.PacketDecoder()
    dec.feed(wire.encode_packet(p7) + wire.encode_packet(p9))
    assert dec.stats.lost_packets == 1


def test_counts_physical_round_trip():
    rng = np.random.default_rng(8)
    counts = rng.integers(-32768, 32768, (100, 18)).astype(np.int16)
    back = wire.physical_to_counts(wire.counts_to_physical(counts))
    assert (back == counts).all()


def test_au_packet_round_trip():
    rng = np.random.default_rng(9)
    for final in (False, True):
        pkt = wire.AuPacket(seq=12, frame=3456,
                            intensities=rng.random(14).astype(np.float32), final=final)
        back = wire.decode_au_packet(wire.encode_au_packet(pkt))
        assert back.seq == 12 and back.frame == 3456 and back.final == final
        assert np.array_equal(back.intensities, pkt.intensities)
