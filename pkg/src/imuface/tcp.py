"""Live TCP surfaces: an IMU packet ingest server feeding the streaming
engine, and a publisher that frames AU predictions for subscribers.

The wire stream is back-to-back 45-byte IMU packets; published output is
back-to-back AU packets. One connection per role keeps the state machine
single-threaded per the decoder contract.
"""

from __future__ import annotations

import socket
import threading
import time

import numpy as np

from . import wire


class AuPublisher:
    """Accepts subscribers in the background and fans out AU packets."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._srv.bind((host, port))
        self._srv.listen(4)
        self.port = self._srv.getsockname()[1]
        self._conns: list[socket.socket] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._seq = 0
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def _accept_loop(self) -> None:
        self._srv.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._srv.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with self._lock:
                self._conns.append(conn)

    def publish(self, frame: int, intensities: np.ndarray, final: bool) -> None:
        pkt = wire.encode_au_packet(wire.AuPacket(
            seq=self._seq, frame=frame, intensities=np.asarray(intensities, np.float32),
            final=final))
        self._seq = (self._seq + 1) & 0xFFFF
        with self._lock:
            alive = []
            for conn in self._conns:
                try:
                    conn.sendall(pkt)
                    alive.append(conn)
                except OSError:
                    conn.close()
            self._conns = alive

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)
        with self._lock:
            for conn in self._conns:
                conn.close()
            self._conns.clear()
        self._srv.close()


def run_live_ingest(engine, host: str = "127.0.0.1", port: int = 0,
                    publisher: AuPublisher | None = None,
                    idle_timeout_s: float = 5.0,
                    ready_callback=None) -> dict:
    """Accept one IMU packet stream and drive the engine until the sender
    closes the connection or goes idle.

    Returns ingest statistics including the decoder's loss counters.
    """
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    bound_port = srv.getsockname()[1]
    if ready_callback:
        ready_callback(bound_port)
    srv.settimeout(idle_timeout_s)
    decoder = wire.PacketDecoder()
    published = 0
    emitted_idx = 0
    try:
        conn, _ = srv.accept()
        conn.settimeout(idle_timeout_s)
        while True:
            try:
                chunk = conn.recv(65536)
            except socket.timeout:
                break
            if not chunk:
                break
            pkts = decoder.feed(chunk)
            if pkts:
                t_us = np.array([p.t_us for p in pkts], dtype=np.int64)
                phys = wire.counts_to_physical(np.stack([p.counts for p in pkts]))
                engine.push_block(t_us, phys[:, 0:6], phys[:, 6:12], phys[:, 12:18])
            if publisher is not None:
                while emitted_idx < len(engine.emissions):
                    rec = engine.emissions[emitted_idx]
                    publisher.publish(rec.frame, rec.au, rec.final)
                    emitted_idx += 1
                    published += 1
        conn.close()
    except socket.timeout:
        pass
    finally:
        srv.close()
    return {
        "port": bound_port,
        "packets": decoder.stats.packets,
        "crc_failures": decoder.stats.crc_failures,
        "lost_packets": decoder.stats.lost_packets,
        "published": published,
    }


def send_packet_stream(host: str, port: int, data: bytes,
                       chunk: int = 4096, pacing_s: float = 0.0) -> None:
    """Test/client helper: stream encoded packets to an ingest server."""
    client = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    client.connect((host, port))
    try:
        for lo in range(0, len(data), chunk):
            client.sendall(data[lo:lo + chunk])
            if pacing_s:
                time.sleep(pacing_s)
    finally:
        client.close()
