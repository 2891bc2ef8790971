"""Streaming inference: event sources in, pose records out.

The engine is a three-stage pipeline (ingest windows, encode LNES, infer)
joined by bounded queues; every stage is single-threaded internally, and
`EE3D_THREADS` caps how many stages get their own thread (1 collapses the
whole pipeline into the caller's thread; output is identical either way).

File sources use event-anchored windows. Live sources use fixed wall-clock
windows anchored at the session start, so a quiet stretch still emits one
pose per window; when inference cannot keep up, whole windows are dropped
at the ingest boundary and counted.

Pose records carry `t0_us t_last_us` plus 48 floats; text lines on stdout,
length-prefixed little-endian frames on sockets.
"""

from __future__ import annotations

import os
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import eventio
from .events import EventStream, TimeWindow, iter_windows
from .lnes import LnesFrame, encode_lnes
from .network import FrameBufferState, PoseNet, compose_input
from .smoothing import OneEuroFilter, OneEuroParams

QUEUE_DEPTH = 8
_RECORD_PAYLOAD = struct.Struct("<QQ48f")
_LEN_PREFIX = struct.Struct("<I")


def thread_cap() -> int:
    """Pipeline thread budget from EE3D_THREADS (default 3, minimum 1)."""
    raw = os.environ.get("EE3D_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 3


class PoseRecord(NamedTuple):
    t0_us: int
    t_last_us: int
    pose: np.ndarray        # (16, 3) float32


def format_record_text(rec: PoseRecord) -> str:
    flat = np.asarray(rec.pose, dtype=np.float32).reshape(-1)
    vals = " ".join(f"{float(v):.9g}" for v in flat)
    return f"{rec.t0_us} {rec.t_last_us} {vals}"


def parse_record_text(line: str) -> PoseRecord:
    parts = line.split()
    if len(parts) != 50:
        raise ValueError(f"pose record needs 50 fields, got {len(parts)}")
    pose = np.asarray([float(v) for v in parts[2:]],
                      dtype=np.float32).reshape(16, 3)
    return PoseRecord(int(parts[0]), int(parts[1]), pose)


def pack_record(rec: PoseRecord) -> bytes:
    flat = np.asarray(rec.pose, dtype=np.float32).reshape(-1)
    payload = _RECORD_PAYLOAD.pack(rec.t0_us, rec.t_last_us, *flat)
    return _LEN_PREFIX.pack(len(payload)) + payload


def unpack_records(buf: bytes):
    """Split a byte buffer into (records, unconsumed tail)."""
    records = []
    pos = 0
    while pos + _LEN_PREFIX.size <= len(buf):
        (length,) = _LEN_PREFIX.unpack_from(buf, pos)
        if pos + _LEN_PREFIX.size + length > len(buf):
            break
        payload = buf[pos + _LEN_PREFIX.size:pos + _LEN_PREFIX.size + length]
        if length != _RECORD_PAYLOAD.size:
            raise ValueError(f"unexpected pose record length {length}")
        vals = _RECORD_PAYLOAD.unpack(payload)
        pose = np.asarray(vals[2:], dtype=np.float32).reshape(16, 3)
        records.append(PoseRecord(vals[0], vals[1], pose))
        pos += _LEN_PREFIX.size + length
    return records, buf[pos:]


@dataclass
class SessionCounters:
    windows: int = 0
    events: int = 0
    dropped: int = 0
    wall_time_s: float = 0.0


class StreamSession:
    """Sequential inference state: buffer, optional smoothing, counters."""

    def __init__(self, net: PoseNet, window_us: int,
                 smooth: OneEuroParams | None = None):
        if window_us <= 0:
            raise ValueError("window duration must be positive")
        self.net = net
        self.window_us = int(window_us)
        self.buf = FrameBufferState.zeros(net.cfg, dtype=net.dtype)
        self.filter = OneEuroFilter(smooth) if smooth is not None else None
        self.counters = SessionCounters()

    def process(self, lnes: LnesFrame, t_last: int) -> PoseRecord:
        """One window in, one record out. t_last is the timestamp of the
        window's final event (window end when empty); it also drives the
        smoothing clock."""
        window = lnes.window
        vals = np.ascontiguousarray(lnes.values, dtype=self.net.dtype)
        with ad.no_grad():
            net_in, raw = compose_input(vals, self.buf)
            out = self.net.forward(net_in[None], training=False)
        pose = out.pose.data[0].astype(np.float32)
        self.buf.prev_input = raw
        self.buf.prev_confidence = out.confidence.data[0].astype(
            self.net.dtype, copy=False)
        if self.filter is not None:
            pose = self.filter.filter(t_last / 1e6,
                                      pose.reshape(-1)).astype(np.float32)
            pose = pose.reshape(16, 3)
        self.counters.windows += 1
        return PoseRecord(window.t0, int(t_last), pose)


def _encode(window: TimeWindow, evs: EventStream, height: int, width: int):
    lnes = encode_lnes(evs, window, height, width)
    t_last = int(evs.t[-1]) if len(evs) else window.t_end
    return lnes, t_last, len(evs)


class _Frame(NamedTuple):
    lnes: LnesFrame
    t_last: int
    num_events: int


def _infer_frames(session: StreamSession, frames, on_record):
    for fr in frames:
        rec = session.process(fr.lnes, fr.t_last)
        session.counters.events += fr.num_events
        if on_record is not None:
            on_record(rec)


def run_file(events: EventStream, net: PoseNet, window_us: int,
             smooth: OneEuroParams | None = None, on_record=None,
             height: int | None = None, width: int | None = None
             ) -> SessionCounters:
    """Event-anchored streaming over an in-memory stream; one pose per
    window, in order, no drops. Deterministic for fixed inputs."""
    session = StreamSession(net, window_us, smooth)
    h = height if height is not None else net.cfg.input_height
    w = width if width is not None else net.cfg.input_width
    start = time.perf_counter()
    cap = thread_cap()

    def frames_inline():
        for window, evs in iter_windows(events, window_us):
            yield _Frame(*_encode(window, evs, h, w))

    if cap == 1:
        _infer_frames(session, frames_inline(), on_record)
    elif cap == 2:
        q: queue.Queue = queue.Queue(maxsize=QUEUE_DEPTH)

        def producer():
            for fr in frames_inline():
                q.put(fr)
            q.put(None)

        t = threading.Thread(target=producer, daemon=True)
        t.start()
        _infer_frames(session, iter(q.get, None), on_record)
        t.join()
    else:
        qw: queue.Queue = queue.Queue(maxsize=QUEUE_DEPTH)
        qf: queue.Queue = queue.Queue(maxsize=QUEUE_DEPTH)

        def ingest():
            for item in iter_windows(events, window_us):
                qw.put(item)
            qw.put(None)

        def encode():
            for window, evs in iter(qw.get, None):
                qf.put(_Frame(*_encode(window, evs, h, w)))
            qf.put(None)

        ts = [threading.Thread(target=ingest, daemon=True),
              threading.Thread(target=encode, daemon=True)]
        for t in ts:
            t.start()
        _infer_frames(session, iter(qf.get, None), on_record)
        for t in ts:
            t.join()

    session.counters.wall_time_s = time.perf_counter() - start
    return session.counters


# -- live windowing ----------------------------------------------------------

class LiveWindower:
    """Fixed-grid windows over a live stream, anchored at the first event.

    Events are appended as they arrive; `cut(elapsed_us)` returns every
    complete window whose end lies within the elapsed session time. Windows
    with no events are still returned, so silence produces poses.
    """

    def __init__(self, window_us: int, height: int, width: int):
        if window_us <= 0:
            raise ValueError("window duration must be positive")
        self.window_us = int(window_us)
        self.height = height
        self.width = width
        self._anchor: int | None = None
        self._next_t0: int | None = None
        self._pending: list = []

    def push(self, evs: EventStream):
        if len(evs) == 0:
            return
        if self._anchor is None:
            self._anchor = int(evs.t[0])
            self._next_t0 = self._anchor
        self._pending.append(evs)

    def cut(self, elapsed_us: int):
        """Yield (window, events) for all windows ending by anchor+elapsed."""
        if self._anchor is None:
            return
        limit = self._anchor + int(elapsed_us)
        while self._next_t0 + self.window_us <= limit:
            t0 = self._next_t0
            t_end = t0 + self.window_us
            take, keep = [], []
            for evs in self._pending:
                if len(evs) and int(evs.t[0]) < t_end:
                    i1 = int(np.searchsorted(evs.t, t_end, side="left"))
                    take.append(evs.slice(0, i1))
                    rest = evs.slice(i1, len(evs))
                    if len(rest):
                        keep.append(rest)
                else:
                    keep.append(evs)
            self._pending = keep
            merged = _merge_streams(take, self.height, self.width)
            # events older than the window start were missed (late arrivals
            # from a dropped stretch); clamp them out rather than crash
            if len(merged):
                i0 = int(np.searchsorted(merged.t, t0, side="left"))
                merged = merged.slice(i0, len(merged))
            yield TimeWindow(t0, self.window_us), merged
            self._next_t0 = t_end

    def flush(self):
        """Yield every remaining window once the source has closed.

        With no more events possible, all pending windows are final,
        including the partial one holding the last event.
        """
        if self._anchor is None or not self._pending:
            return
        last_t = max(int(evs.t[-1]) for evs in self._pending if len(evs))
        yield from self.cut(last_t - self._anchor + self.window_us)


def _merge_streams(streams: list, height: int, width: int) -> EventStream:
    streams = [s for s in streams if len(s)]
    if not streams:
        empty = np.empty(0, dtype=np.int64)
        return EventStream(empty, empty, empty,
                           np.empty(0, dtype=np.int8), width, height)
    if len(streams) == 1:
        return streams[0]
    t = np.concatenate([s.t for s in streams])
    order = np.argsort(t, kind="stable")
    return EventStream(np.concatenate([s.x for s in streams])[order],
                       np.concatenate([s.y for s in streams])[order],
                       t[order],
                       np.concatenate([s.p for s in streams])[order],
                       width, height)


def run_live(reader, net: PoseNet, window_us: int,
             smooth: OneEuroParams | None = None, on_record=None,
             clock=time.monotonic, idle_sleep_s: float = 0.001,
             max_windows: int | None = None) -> SessionCounters:
    """Wall-clock streaming session.

    `reader` yields EventStream chunks (or None when no data is ready yet)
    and raises StopIteration / returns exhaustion via a sentinel when the
    source closes. Windows that cannot be queued because inference lags are
    dropped whole and counted.
    """
    session = StreamSession(net, window_us, smooth)
    windower = LiveWindower(window_us, net.cfg.input_height,
                            net.cfg.input_width)
    q: queue.Queue = queue.Queue(maxsize=QUEUE_DEPTH)
    start = clock()
    stop = threading.Event()
    counters = session.counters
    errors: list = []

    def ingest():
        try:
            for chunk in reader:
                if stop.is_set():
                    break
                if chunk is not None and len(chunk):
                    counters.events += len(chunk)
                    windower.push(chunk)
                elapsed_us = int((clock() - start) * 1e6)
                for window, evs in windower.cut(elapsed_us):
                    fr = _Frame(*_encode(window, evs,
                                         net.cfg.input_height,
                                         net.cfg.input_width))
                    try:
                        q.put_nowait(fr)
                    except queue.Full:
                        counters.dropped += 1
                if chunk is None or not len(chunk):
                    time.sleep(idle_sleep_s)
            # source closed: the remaining windows are final data, not a
            # latency backlog, so deliver them with blocking puts
            for window, evs in windower.flush():
                if stop.is_set():
                    counters.dropped += 1
                    continue
                fr = _Frame(*_encode(window, evs, net.cfg.input_height,
                                     net.cfg.input_width))
                q.put(fr)
        except Exception as e:
            errors.append(e)
        finally:
            q.put(None)

    t = threading.Thread(target=ingest, daemon=True)
    t.start()
    done = 0
    saw_sentinel = False
    while True:
        fr = q.get()
        if fr is None:
            saw_sentinel = True
            break
        rec = session.process(fr.lnes, fr.t_last)
        if on_record is not None:
            on_record(rec)
        done += 1
        if max_windows is not None and done >= max_windows:
            break
    stop.set()
    if not saw_sentinel:
        # unblock the producer so it can deliver its sentinel and exit
        while q.get() is not None:
            counters.dropped += 1
    t.join(timeout=5.0)
    counters.wall_time_s = clock() - start
    if errors:
        raise errors[0]
    return counters


# -- sockets -----------------------------------------------------------------

class SocketEventReader:
    """Iterates EventStream chunks from an EVT1-framed socket.

    The sender transmits the 16-byte EVT1 header once (the count field is
    advisory for streams) followed by 14-byte event records; the reader
    yields whatever whole records have arrived, or None when the connection
    is quiet.
    """

    def __init__(self, sock: socket.socket, chunk_records: int = 4096):
        self.sock = sock
        self.chunk = chunk_records * eventio.RECORD_DTYPE.itemsize
        self._buf = b""
        self.width = None
        self.height = None
        self._closed = False

    def _read_header(self):
        while len(self._buf) < eventio.HEADER.size:
            data = self.sock.recv(65536)
            if not data:
                raise ValueError("connection closed before EVT1 header")
            self._buf += data
        magic, width, height, _count = eventio.HEADER.unpack(
            self._buf[:eventio.HEADER.size])
        if magic != eventio.MAGIC:
            raise ValueError(f"bad event stream magic {magic!r}")
        self.width, self.height = width, height
        self._buf = self._buf[eventio.HEADER.size:]

    def __iter__(self):
        self.sock.settimeout(0.05)
        try:
            self._read_header()
        except socket.timeout:
            raise ValueError("timed out waiting for EVT1 header")
        item = eventio.RECORD_DTYPE.itemsize
        while not self._closed:
            try:
                data = self.sock.recv(self.chunk)
                if not data:
                    break
                self._buf += data
            except socket.timeout:
                yield None
                continue
            n = len(self._buf) // item
            if n == 0:
                yield None
                continue
            raw = np.frombuffer(self._buf[:n * item], dtype=eventio.RECORD_DTYPE)
            self._buf = self._buf[n * item:]
            yield EventStream(raw["x"].astype(np.int64),
                              raw["y"].astype(np.int64),
                              raw["t"].astype(np.int64),
                              raw["p"].astype(np.int8),
                              self.width, self.height)
        # trailing partial record bytes are discarded with the connection


class PoseBroadcaster:
    """Accepts viewer connections and fans pose records out to them.

    A send failure drops that client and is counted; the session goes on.
    """

    def __init__(self, host: str, port: int):
        self._server = socket.create_server((host, port))
        self._server.settimeout(0.05)
        self._clients: list = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self.disconnects = 0
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    @property
    def address(self):
        return self._server.getsockname()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._server.accept()
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                with self._lock:
                    self._clients.append(conn)
            except socket.timeout:
                continue
            except OSError:
                break

    def send(self, rec: PoseRecord):
        data = pack_record(rec)
        with self._lock:
            alive = []
            for conn in self._clients:
                try:
                    conn.sendall(data)
                    alive.append(conn)
                except OSError:
                    self.disconnects += 1
                    conn.close()
            self._clients = alive

    def client_count(self) -> int:
        with self._lock:
            return len(self._clients)

    def close(self):
        self._stop.set()
        self._thread.join(timeout=2.0)
        with self._lock:
            for conn in self._clients:
                conn.close()
            self._clients = []
        self._server.close()


def stream_events_to_socket(sock: socket.socket, events: EventStream,
                            chunk_records: int = 2048):
    """Send a stream over a socket in EVT1 framing (count advisory)."""
    sock.sendall(eventio.HEADER.pack(eventio.MAGIC, events.width,
                                     events.height, len(events)))
    records = np.zeros(len(events), dtype=eventio.RECORD_DTYPE)
    records["x"] = events.x
    records["y"] = events.y
    records["t"] = events.t
    records["p"] = events.p
    raw = records.tobytes()
    step = chunk_records * eventio.RECORD_DTYPE.itemsize
    for pos in range(0, len(raw), step):
        sock.sendall(raw[pos:pos + step])
