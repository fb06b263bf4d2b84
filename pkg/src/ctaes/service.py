"""Datagram timing server and client, after Bernstein's measurement setup.

Per request the server runs, in order::

    out[0:40] = 0
    out[32:36] = timestamp()
    if len < 16: return                  (no reply)
    out[0:16] = in[0:16]
    workarea[16:len] = in[16:len]
    workarea[0:16] = AES(in[0:16])
    out[16:32] = scrambled_zero
    out[36:40] = timestamp()

Timestamps are the low 32 bits of a cycle counter, little-endian.  The
counter is either the host's nanosecond clock or a simulated one that only
advances by the cycle model's count for each encryption.
"""

import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .aes import as_block, encrypt_ttable, expand_key
from .attack import MAX_PACKET, MIN_PACKET, TimingSample
from .micro_ir import decompose_encryption, interpret
from .scheduler import schedule_program, sequential, verify_gaps
from .timing_sim import CacheConfig, LatencyModel, TimingModel

log = logging.getLogger(__name__)

RESPONSE_LEN = 40
MASK32 = 0xFFFFFFFF


class ServiceError(Exception):
    pass


class ServiceUnavailable(ServiceError):
    pass


class Response(NamedTuple):
    nonce: bytes
    scrambled: bytes
    start: int
    end: int

    @property
    def cycles(self) -> int:
        return cycle_delta(self.start, self.end)


def cycle_delta(start: int, end: int) -> int:
    return (end - start) & MASK32


def build_response(nonce, scrambled, start: int, end: int) -> bytes:
    nonce, scrambled = bytes(nonce), bytes(scrambled)
    if len(nonce) != 16 or len(scrambled) != 16:
        raise ValueError("nonce and scrambled-zero fields are 16 bytes each")
    return nonce + scrambled + struct.pack("<II", start & MASK32, end & MASK32)


def parse_response(data: bytes) -> Response:
    if len(data) != RESPONSE_LEN:
        raise ServiceError(f"response must be {RESPONSE_LEN} bytes, got {len(data)}")
    start, end = struct.unpack("<II", data[32:40])
    return Response(bytes(data[:16]), bytes(data[16:32]), start, end)


def parse_endpoint(text: str):
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


# --- clocks


class RealClock:
    def timestamp(self) -> int:
        return time.perf_counter_ns() & MASK32

    def charge(self, block: bytes, packet_len: int) -> None:
        pass


class SimClock:
    """A counter that advances only by the simulated cycles of each encryption."""

    def __init__(self, model: TimingModel, ks, start: int = 0):
        self.model = model
        self.ks = ks
        self.counter = start

    def timestamp(self) -> int:
        return self.counter & MASK32

    def charge(self, block: bytes, packet_len: int) -> None:
        model = self.model
        if model.packet_len != packet_len:
            model = replace(model, packet_len=packet_len)
        self.counter += model.cycles(block, self.ks)


# --- server


@dataclass
class ServerConfig:
    key: bytes
    mode: str = "unprotected"  # or "protected"
    depth: int = None
    host: str = "127.0.0.1"
    port: int = 0
    timing: str = "sim"  # or "real"
    lm: LatencyModel = field(default_factory=LatencyModel)
    cache: CacheConfig = field(default_factory=CacheConfig)
    offset: int = 0
    clock_start: int = 0

    def __post_init__(self):
        self.key = as_block(self.key)
        if self.mode not in ("unprotected", "protected"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "protected" and (self.depth is None or self.depth < 1):
            raise ValueError("protected mode needs a positive depth")
        if self.timing not in ("sim", "real"):
            raise ValueError(f"unknown timing source {self.timing!r}")


def server_schedule(cfg: ServerConfig):
    program = decompose_encryption()
    if cfg.mode == "unprotected":
        return sequential(program)
    sched = schedule_program(program, cfg.depth)
    report = verify_gaps(sched, cfg.depth)
    if not report.passed:
        raise ServiceError(f"schedule fails gap verification at depth {cfg.depth}")
    return sched


class TimingServer:
    """Single-threaded request loop; one request is fully handled before the
    next is read, so nothing runs inside another request's window."""

    def __init__(self, cfg: ServerConfig):
        self.cfg = cfg
        self.ks = expand_key(cfg.key)
        self.schedule = server_schedule(cfg)
        self.scrambled_zero = encrypt_ttable(bytes(16), self.ks)
        self.workarea = bytearray(MAX_PACKET)
        if cfg.timing == "sim":
            model = TimingModel(self.schedule, cfg.lm, cfg.cache, None, cfg.offset)
            self.clock = SimClock(model, self.ks, cfg.clock_start)
        else:
            self.clock = RealClock()
        self._sock = None
        self._stop = threading.Event()
        self._thread = None
        self.handled = 0

    def encrypt(self, block: bytes) -> bytes:
        if self.cfg.mode == "protected":
            return interpret(self.schedule, block, self.ks)
        return encrypt_ttable(block, self.ks)

    def handle(self, data: bytes):
        """Process one request; returns the reply, or None for a dropped packet."""
        out = bytearray(RESPONSE_LEN)
        start = self.clock.timestamp()
        n = len(data)
        if n < MIN_PACKET or n > MAX_PACKET:
            return None
        out[0:16] = data[0:16]
        self.workarea[16:n] = data[16:n]
        self.workarea[0:16] = self.encrypt(bytes(data[0:16]))
        self.clock.charge(bytes(data[0:16]), n)
        out[16:32] = self.scrambled_zero
        end = self.clock.timestamp()
        out[32:40] = struct.pack("<II", start, end)
        return bytes(out)

    # socket plumbing

    def bind(self):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((self.cfg.host, self.cfg.port))
        self._sock.settimeout(0.2)
        return self._sock.getsockname()

    @property
    def address(self):
        return self._sock.getsockname()

    def serve_forever(self) -> None:
        if self._sock is None:
            self.bind()
        log.info("serving on %s:%d (%s, %s timing)", *self.address, self.cfg.mode, self.cfg.timing)
        while not self._stop.is_set():
            try:
                data, peer = self._sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    break
                raise
            reply = self.handle(data)
            if reply is not None:
                self._sock.sendto(reply, peer)
                self.handled += 1

    def start(self):
        """Serve from a background thread; returns the bound address."""
        addr = self.bind()
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return addr

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        if self._sock is not None:
            self._sock.close()

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(cfg: ServerConfig) -> None:
    server = TimingServer(cfg)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()


# --- client


class Collector:
    """Sends one packet at a time and matches the reply by its nonce echo."""

    def __init__(self, endpoint, timeout: float = 0.5, max_consecutive_failures: int = 10):
        self.endpoint = parse_endpoint(endpoint) if isinstance(endpoint, str) else tuple(endpoint)
        self.timeout = timeout
        self.max_failures = max_consecutive_failures
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.connect(self.endpoint)
        self.sent = 0
        self.lost = 0
        self._failures = 0

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _fail(self, why: str):
        self.lost += 1
        self._failures += 1
        if self._failures >= self.max_failures:
            raise ServiceUnavailable(f"{self.endpoint[0]}:{self.endpoint[1]}: "
                                     f"{self._failures} consecutive failures ({why})")
        return None

    def query(self, packet: bytes):
        """Cycles for one packet, or None if it was lost."""
        self.sent += 1
        try:
            self.sock.send(packet)
        except ConnectionRefusedError:
            return self._fail("connection refused")
        deadline = time.monotonic() + self.timeout
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                return self._fail("timeout")
            self.sock.settimeout(left)
            try:
                data = self.sock.recv(2048)
            except socket.timeout:
                return self._fail("timeout")
            except ConnectionRefusedError:
                return self._fail("connection refused")
            try:
                resp = parse_response(data)
            except ServiceError:
                continue
            if resp.nonce == packet[:16]:
                self._failures = 0
                return resp.cycles

    def measure(self, packets) -> np.ndarray:
        """Cycles per packet row; -1 marks a lost packet."""
        packets = np.asarray(packets, dtype=np.uint8)
        out = np.empty(len(packets), dtype=np.int64)
        for i, row in enumerate(packets):
            c = self.query(row.tobytes())
            out[i] = -1 if c is None else c
        return out


class NetworkOracle:
    """Attack oracle backed by a remote :class:`TimingServer`."""

    def __init__(self, endpoint, timeout: float = 0.5):
        self.collector = Collector(endpoint, timeout)

    def measure(self, packets) -> np.ndarray:
        return self.collector.measure(packets)

    @property
    def lost(self) -> int:
        return self.collector.lost

    def close(self):
        self.collector.close()


@dataclass
class CollectResult:
    samples: list
    sent: int
    lost: int

    @property
    def loss_rate(self) -> float:
        return self.lost / self.sent if self.sent else 0.0


def collect(endpoint, n_packets: int, packet_len: int = MAX_PACKET, seed: int = 0,
            timeout: float = 0.5) -> CollectResult:
    """Time ``n_packets`` uniformly random packets against ``endpoint``."""
    if not MIN_PACKET <= packet_len <= MAX_PACKET:
        raise ValueError(f"packet_len must be in {MIN_PACKET}..{MAX_PACKET}")
    rng = np.random.default_rng(seed)
    samples = []
    with Collector(endpoint, timeout) as c:
        for _ in range(n_packets):
            pkt = rng.integers(0, 256, packet_len, dtype=np.uint8).tobytes()
            cycles = c.query(pkt)
            if cycles is not None:
                samples.append(TimingSample(pkt[:16], cycles))
        return CollectResult(samples, c.sent, c.lost)
