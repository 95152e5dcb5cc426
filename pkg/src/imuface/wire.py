"""Binary wire formats: raw IMU packets and framed AU prediction packets.

An IMU packet is 45 bytes, little-endian:

    sync (0xA5, 1B) | seq (u16) | t_us (u32) | payload (3 IMUs x 6 axes,
    i16 raw counts, left/right/reference order) | crc16-CCITT (u16)

The CRC covers every byte before it. Raw counts convert to physical units
through the per-modality scale factors recorded in the dataset manifest.

AU packets reuse the framing with sync 0xA6 for streaming predictions:

    sync (0xA6) | seq (u16) | frame (u32) | flags (u8, bit0 = final) |
    14 x f32 intensities | crc16 (u16)   -> 66 bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .aus import NUM_AU

IMU_SYNC = 0xA5
AU_SYNC = 0xA6
IMU_PACKET_SIZE = 45
AU_PACKET_SIZE = 1 + 2 + 4 + 1 + 4 * NUM_AU + 2

# Raw-count scale factors (physical units per count).
ACC_SCALE_G = 1.0 / 4096.0
GYRO_SCALE_DPS = 1.0 / 16.4

_IMU_HEAD = struct.Struct("<BHI")
_IMU_PAYLOAD = struct.Struct("<18h")
_CRC = struct.Struct("<H")
_AU_HEAD = struct.Struct("<BHIB")
_AU_BODY = struct.Struct(f"<{NUM_AU}f")


def _crc_table(poly: int = 0x1021) -> np.ndarray:
    table = np.zeros(256, dtype=np.uint32)
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ poly) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
        table[byte] = crc
    return table


_CRC_TABLE = _crc_table()


def crc16_ccitt(data: bytes, init: int = 0xFFFF) -> int:
    """CRC16-CCITT (0xFFFF init, poly 0x1021) over `data`."""
    crc = init
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ int(_CRC_TABLE[((crc >> 8) ^ b) & 0xFF])
    return crc


def crc16_ccitt_bitwise(data: bytes, poly: int = 0x1021, init: int = 0xFFFF) -> int:
    """Bit-by-bit reference implementation (oracle for the table route)."""
    crc = init
    for b in data:
        crc ^= b << 8
        for _ in range(8):
            crc = ((crc << 1) ^ poly) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
    return crc


def _crc16_rows(rows: np.ndarray) -> np.ndarray:
    """Vectorized CRC16-CCITT over each row of a (n, m) uint8 matrix."""
    crc = np.full(rows.shape[0], 0xFFFF, dtype=np.uint32)
    for col in range(rows.shape[1]):
        idx = ((crc >> 8) ^ rows[:, col]) & 0xFF
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[idx]
    return crc


class WireError(ValueError):
    """Malformed packet bytes."""


@dataclass
class ImuPacket:
    """One 400 Hz sample from the three six-axis IMUs, in raw counts.

    `counts` is an int16 array of shape (18,), ordered left(ax..gz),
    right(ax..gz), reference(ax..gz).
    """

    seq: int
    t_us: int
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int16)
        if self.counts.shape != (18,):
            raise WireError(f"payload must have 18 axes, got {self.counts.shape}")


def encode_packet(pkt: ImuPacket) -> bytes:
    head = _IMU_HEAD.pack(IMU_SYNC, pkt.seq & 0xFFFF, pkt.t_us & 0xFFFFFFFF)
    body = _IMU_PAYLOAD.pack(*pkt.counts.tolist())
    crc = crc16_ccitt(head + body)
    return head + body + _CRC.pack(crc)


def decode_packet(buf: bytes) -> ImuPacket:
    """Decode exactly one packet; raises WireError on bad sync/crc/length."""
    if len(buf) != IMU_PACKET_SIZE:
        raise WireError(f"expected {IMU_PACKET_SIZE} bytes, got {len(buf)}")
    sync, seq, t_us = _IMU_HEAD.unpack_from(buf, 0)
    if sync != IMU_SYNC:
        raise WireError(f"bad sync byte 0x{sync:02X}")
    crc_recv = _CRC.unpack_from(buf, IMU_PACKET_SIZE - 2)[0]
    if crc16_ccitt(buf[:-2]) != crc_recv:
        raise WireError("crc mismatch")
    counts = np.array(_IMU_PAYLOAD.unpack_from(buf, _IMU_HEAD.size), dtype=np.int16)
    return ImuPacket(seq=seq, t_us=t_us, counts=counts)


@dataclass
class DecoderStats:
    packets: int = 0
    crc_failures: int = 0
    resyncs: int = 0
    lost_packets: int = 0
    timestamp_regressions: int = 0


class PacketDecoder:
    """Incremental stream decoder with resynchronization.

    Feed arbitrary byte chunks; yields packets in order. A bad sync byte
    triggers a forward scan to the next 0xA5; a bad CRC drops the packet
    and counts it. Sequence gaps are counted as lost packets (mod 2^16).
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self._last_seq: int | None = None
        self.stats = DecoderStats()

    def feed(self, data: bytes) -> list[ImuPacket]:
        self._buf.extend(data)
        out: list[ImuPacket] = []
        pos = 0
        n = len(self._buf)
        view = bytes(self._buf)
        while True:
            # Scan to the next sync byte.
            idx = view.find(bytes([IMU_SYNC]), pos)
            if idx < 0:
                pos = n
                break
            if idx > pos:
                self.stats.resyncs += 1
                pos = idx
            if n - pos < IMU_PACKET_SIZE:
                break
            try:
                pkt = decode_packet(view[pos:pos + IMU_PACKET_SIZE])
            except WireError:
                # Corrupt frame: skip this sync byte and rescan.
                self.stats.crc_failures += 1
                pos += 1
                continue
            pos += IMU_PACKET_SIZE
            if self._last_seq is not None:
                gap = (pkt.seq - self._last_seq - 1) & 0xFFFF
                self.stats.lost_packets += gap
            self._last_seq = pkt.seq
            self.stats.packets += 1
            out.append(pkt)
        del self._buf[:pos]
        return out


def counts_to_physical(counts: np.ndarray) -> np.ndarray:
    """Raw int16 counts (..., 18) -> physical units (g / deg/s), float64."""
    counts = np.asarray(counts)
    phys = counts.astype(np.float64)
    scale = np.tile(np.array([ACC_SCALE_G] * 3 + [GYRO_SCALE_DPS] * 3), 3)
    return phys * scale


def physical_to_counts(phys: np.ndarray) -> np.ndarray:
    """Physical units (..., 18) -> raw int16 counts, round-clipped."""
    phys = np.asarray(phys, dtype=np.float64)
    scale = np.tile(np.array([ACC_SCALE_G] * 3 + [GYRO_SCALE_DPS] * 3), 3)
    counts = np.rint(phys / scale)
    return np.clip(counts, -32768, 32767).astype(np.int16)


@dataclass
class AuPacket:
    """Framed AU prediction for the TCP publisher."""

    seq: int
    frame: int
    intensities: np.ndarray
    final: bool = False

    def __post_init__(self) -> None:
        self.intensities = np.asarray(self.intensities, dtype=np.float32)
        if self.intensities.shape != (NUM_AU,):
            raise WireError(f"expected {NUM_AU} intensities, got {self.intensities.shape}")


def encode_au_packet(pkt: AuPacket) -> bytes:
    head = _AU_HEAD.pack(AU_SYNC, pkt.seq & 0xFFFF, pkt.frame & 0xFFFFFFFF,
                         0x01 if pkt.final else 0x00)
    body = _AU_BODY.pack(*pkt.intensities.tolist())
    crc = crc16_ccitt(head + body)
    return head + body + _CRC.pack(crc)


def decode_au_packet(buf: bytes) -> AuPacket:
    if len(buf) != AU_PACKET_SIZE:
        raise WireError(f"expected {AU_PACKET_SIZE} bytes, got {len(buf)}")
    sync, seq, frame, flags = _AU_HEAD.unpack_from(buf, 0)
    if sync != AU_SYNC:
        raise WireError(f"bad sync byte 0x{sync:02X}")
    crc_recv = _CRC.unpack_from(buf, AU_PACKET_SIZE - 2)[0]
    if crc16_ccitt(buf[:-2]) != crc_recv:
        raise WireError("crc mismatch")
    vals = np.array(_AU_BODY.unpack_from(buf, _AU_HEAD.size), dtype=np.float32)
    return AuPacket(seq=seq, frame=frame, intensities=vals, final=bool(flags & 0x01))


def encode_stream(t_us: np.ndarray, counts: np.ndarray, seq0: int = 0) -> bytes:
    """Encode an (n, 18) count array into back-to-back IMU packets.

    Vectorized but byte-identical to per-packet `encode_packet`.
    """
    t_us = np.asarray(t_us)
    counts = np.asarray(counts, dtype=np.int16)
    if counts.ndim != 2 or counts.shape[1] != 18 or len(t_us) != len(counts):
        raise WireError("expected aligned (n,) timestamps and (n, 18) counts")
    n = len(counts)
    rows = np.zeros((n, IMU_PACKET_SIZE), dtype=np.uint8)
    rows[:, 0] = IMU_SYNC
    seq = ((seq0 + np.arange(n)) & 0xFFFF).astype("<u2")
    rows[:, 1:3] = seq.view(np.uint8).reshape(n, 2)
    rows[:, 3:7] = (t_us.astype(np.int64) & 0xFFFFFFFF).astype("<u4") \
        .view(np.uint8).reshape(n, 4)
    rows[:, 7:43] = counts.astype("<i2").view(np.uint8).reshape(n, 36)
    crc = _crc16_rows(rows[:, :43]).astype("<u2")
    rows[:, 43:45] = crc.view(np.uint8).reshape(n, 2)
    return rows.tobytes()


def decode_stream(data: bytes) -> tuple[np.ndarray, np.ndarray, DecoderStats]:
    """Decode back-to-back packets -> (t_us (n,), counts (n, 18), stats).

    Takes a vectorized fast path when the stream is clean (aligned sync
    bytes, valid CRCs); otherwise falls back to the resynchronizing
    incremental decoder.
    """
    stats = DecoderStats()
    if len(data) and len(data) % IMU_PACKET_SIZE == 0:
        rows = np.frombuffer(data, dtype=np.uint8).reshape(-1, IMU_PACKET_SIZE)
        if (rows[:, 0] == IMU_SYNC).all():
            crc = _crc16_rows(rows[:, :43])
            stored = rows[:, 43:45].copy().view("<u2")[:, 0]
            if (crc == stored).all():
                seq = rows[:, 1:3].copy().view("<u2")[:, 0].astype(np.int64)
                stats.packets = len(rows)
                stats.lost_packets = int(((np.diff(seq) - 1) & 0xFFFF).sum())
                t_us = rows[:, 3:7].copy().view("<u4")[:, 0]
                counts = rows[:, 7:43].copy().view("<i2").reshape(-1, 18)
                return t_us, counts, stats
    dec = PacketDecoder()
    pkts = dec.feed(data)
    if not pkts:
        return np.zeros(0, dtype=np.uint32), np.zeros((0, 18), dtype=np.int16), dec.stats
    t_us = np.array([p.t_us for p in pkts], dtype=np.uint32)
    counts = np.stack([p.counts for p in pkts])
    return t_us, counts, dec.stats
