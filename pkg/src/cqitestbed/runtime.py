"""Streaming SINR -> CQI -> next-subframe prediction with per-frame deadlines.

Wire format (all little-endian)::

    SinrFrame  b"SFR1" | u64 timestamp_ms | u16 n_rb | n_rb x f32 SINR (dB)
    CqiFrame   b"CQF1" | u64 timestamp_ms | u16 n_rb | n_rb x u8 CQI

One frame per datagram for live ingest; replay files are plain
concatenations of frames (or a grid file, replayed row by row).
"""

from __future__ import annotations

import gc
import logging
import math
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .cqimap import DEFAULT_TABLE, CqiTable
from .crnn import ModelParams, StreamingPredictor
from .errors import (
    ConfigMismatchError,
    FramingError,
    InvalidPayloadError,
    ProtocolError,
)
from .gridio import GRID_MAGIC, CqiGrid, decode_grid_bytes

log = logging.getLogger(__name__)

SINR_MAGIC = b"SFR1"
CQI_MAGIC = b"CQF1"
_HDR = struct.Struct("<4sQH")
HEADER_SIZE = _HDR.size  # 14
_MAGICS = (SINR_MAGIC, CQI_MAGIC)


@dataclass(frozen=True, eq=False)
class SinrFrame:
    timestamp_ms: int
    sinr: np.ndarray

    def __post_init__(self):
        # Always copy: frames must not alias a decoder's receive buffer.
        s = np.array(self.sinr, dtype=np.float32).ravel()
        if not 1 <= s.size <= 0xFFFF:
            raise ValueError(f"n_rb must fit in 16 bits, got {s.size}")
        if not np.all(np.isfinite(s)):
            raise ValueError("SINR frame contains non-finite values")
        if not 0 <= int(self.timestamp_ms) < 2**64:
            raise ValueError("timestamp must be a 64-bit unsigned integer")
        s.setflags(write=False)
        object.__setattr__(self, "sinr", s)
        object.__setattr__(self, "timestamp_ms", int(self.timestamp_ms))

    @property
    def n_rb(self) -> int:
        return self.sinr.size

    def __eq__(self, other):
        return (
            isinstance(other, SinrFrame)
            and self.timestamp_ms == other.timestamp_ms
            and self.sinr.tobytes() == other.sinr.tobytes()
        )


@dataclass(frozen=True, eq=False)
class CqiFrame:
    timestamp_ms: int
    cqi: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cqi)
        if c.size and (c.min() < 0 or c.max() > 15):
            raise ValueError("CQI values must lie in [0, 15]")
        c = np.array(c, dtype=np.uint8).ravel()
        if not 1 <= c.size <= 0xFFFF:
            raise ValueError(f"n_rb must fit in 16 bits, got {c.size}")
        if not 0 <= int(self.timestamp_ms) < 2**64:
            raise ValueError("timestamp must be a 64-bit unsigned integer")
        c.setflags(write=False)
        object.__setattr__(self, "cqi", c)
        object.__setattr__(self, "timestamp_ms", int(self.timestamp_ms))

    @property
    def n_rb(self) -> int:
        return self.cqi.size

    def __eq__(self, other):
        return (
            isinstance(other, CqiFrame)
            and self.timestamp_ms == other.timestamp_ms
            and self.cqi.tobytes() == other.cqi.tobytes()
        )


def frame_size(magic: bytes, n_rb: int) -> int:
    return HEADER_SIZE + (4 if magic == SINR_MAGIC else 1) * n_rb


def encode_frame(frame) -> bytes:
    """Serialize a :class:`SinrFrame` (14 + 4*n_rb bytes) or :class:`CqiFrame` (14 + n_rb)."""
    if isinstance(frame, SinrFrame):
        return _HDR.pack(SINR_MAGIC, frame.timestamp_ms, frame.n_rb) + frame.sinr.astype("<f4").tobytes()
    if isinstance(frame, CqiFrame):
        return _HDR.pack(CQI_MAGIC, frame.timestamp_ms, frame.n_rb) + frame.cqi.tobytes()
    raise TypeError(f"cannot encode {type(frame).__name__}")


def read_frame(buf, offset: int = 0):
    """Decode the frame starting at ``offset``; returns ``(frame, end_offset)``.

    Never reads past the length the header declares.
    """
    mv = memoryview(buf)
    if len(mv) - offset < 4:
        raise FramingError(f"need 4 bytes for magic, have {len(mv) - offset}")
    magic = bytes(mv[offset : offset + 4])
    if magic not in _MAGICS:
        raise ProtocolError(f"bad magic {magic!r} at offset {offset}")
    if len(mv) - offset < HEADER_SIZE:
        raise FramingError(f"truncated header at offset {offset}")
    _, ts, n_rb = _HDR.unpack_from(mv, offset)
    end = offset + frame_size(magic, n_rb)
    if end > len(mv):
        raise FramingError(f"frame at offset {offset} declares {end - offset} bytes, have {len(mv) - offset}")
    if n_rb == 0:
        raise InvalidPayloadError("frame declares zero resource blocks")
    body = mv[offset + HEADER_SIZE : end]
    if magic == SINR_MAGIC:
        vals = np.frombuffer(body, dtype="<f4")
        if not np.all(np.isfinite(vals)):
            raise InvalidPayloadError(f"non-finite SINR in frame ts={ts}")
        return SinrFrame(ts, vals), end
    vals = np.frombuffer(body, dtype=np.uint8)
    if vals.max() > 15:
        raise InvalidPayloadError(f"CQI above 15 in frame ts={ts}")
    return CqiFrame(ts, vals), end


def decode_frame(data) -> SinrFrame:
    """Decode one :class:`SinrFrame` from the start of ``data``."""
    frame, _ = read_frame(data, 0)
    if not isinstance(frame, SinrFrame):
        raise ProtocolError("expected a SINR frame, got a CQI frame")
    return frame


def decode_cqi_frame(data) -> CqiFrame:
    frame, _ = read_frame(data, 0)
    if not isinstance(frame, CqiFrame):
        raise ProtocolError("expected a CQI frame, got a SINR frame")
    return frame


def decode_stream(data) -> list:
    """Decode a concatenation of frames; raises on any defect (strict)."""
    out, pos = [], 0
    while pos < len(data):
        frame, pos = read_frame(data, pos)
        out.append(frame)
    return out


def _find_magic(buf, start: int, end: Optional[int] = None) -> int:
    end = len(buf) if end is None else end
    hits = [i for i in (buf.find(m, start, end) for m in _MAGICS) if i >= 0]
    return min(hits) if hits else -1


class FrameDecoder:
    """Incremental decoder for a byte stream of frames.

    Bad magic, implausible lengths and non-finite payloads are counted and
    skipped; the decoder resynchronizes on the next magic.
    """

    def __init__(self, expected_magic: bytes = SINR_MAGIC, max_n_rb: int = 0xFFFF):
        self.expected_magic = expected_magic
        self.max_n_rb = max_n_rb
        self._buf = bytearray()
        self.decoded = 0
        self.rejected = 0
        self.protocol_errors = 0
        self.framing_errors = 0
        self.skipped_bytes = 0

    def _resync(self, pos: int) -> int:
        nxt = _find_magic(self._buf, pos + 1)
        # With no magic in sight keep a tail that might begin one.
        new = nxt if nxt >= 0 else max(len(self._buf) - 3, pos + 1)
        self.skipped_bytes += new - pos
        return new

    def feed(self, data, final: bool = False) -> list:
        """Append ``data`` and return every frame completed by it.

        With ``final`` the stream has ended: an incomplete frame that
        contains a later magic is treated as truncated so the frames after
        it are still recovered.
        """
        self._buf += data
        buf = self._buf
        want = SinrFrame if self.expected_magic == SINR_MAGIC else CqiFrame
        out = []
        pos = 0
        n = len(buf)
        while n - pos >= 4:
            magic = bytes(buf[pos : pos + 4])
            if magic not in _MAGICS:
                self.protocol_errors += 1
                pos = self._resync(pos)
                continue
            if n - pos < HEADER_SIZE:
                break
            _, ts, n_rb = _HDR.unpack_from(buf, pos)
            if n_rb == 0 or n_rb > self.max_n_rb:
                self.framing_errors += 1
                pos = self._resync(pos)
                continue
            size = frame_size(magic, n_rb)
            # A magic inside the claimed body, not followed by one at the
            # claimed end, means this frame was cut short. Only judged once
            # the bytes past the end are available (or the stream is over),
            # since payload floats may spell a magic by chance.
            if n - pos >= size + 4 or (final and n - pos < size):
                inner = _find_magic(buf, pos + 4, min(pos + size, n))
                if inner >= 0 and bytes(buf[pos + size : pos + size + 4]) not in _MAGICS:
                    self.framing_errors += 1
                    self.skipped_bytes += inner - pos
                    pos = inner
                    continue
            if n - pos < size:
                break
            try:
                frame, end = read_frame(buf, pos)
            except InvalidPayloadError:
                self.rejected += 1
                self.skipped_bytes += size
                pos += size
                continue
            pos = end
            if frame.__class__ is not want:
                self.protocol_errors += 1
                continue
            self.decoded += 1
            out.append(frame)
        del buf[:pos]
        return out

    def close(self) -> list:
        """End of stream: recover what follows a truncated frame, then count
        any leftover bytes as one truncated frame."""
        out = self.feed(b"", final=True)
        left = len(self._buf)
        if left:
            self.framing_errors += 1
            self.skipped_bytes += left
            del self._buf[:]
        return out


def grid_frames(grid) -> Iterator[SinrFrame]:
    for t, row in enumerate(grid.data):
        yield SinrFrame(int(round(t * grid.dt_ms)), row)


class ReplaySource:
    """Frames from a grid file or a recorded frame stream.

    With ``realtime`` the frames are released at ``dt_ms`` intervals;
    otherwise as fast as the consumer takes them.
    """

    def __init__(self, path, realtime: bool = False, dt_ms: Optional[float] = None):
        self.path = path
        self.realtime = realtime
        self.decoder = FrameDecoder()
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] == GRID_MAGIC:
            grid = decode_grid_bytes(blob)
            if isinstance(grid, CqiGrid):
                raise ConfigMismatchError("stream replay needs a SINR grid, got a CQI grid")
            self._frames = list(grid_frames(grid))
            self.dt_ms = grid.dt_ms if dt_ms is None else dt_ms
            self.decoder.decoded = len(self._frames)
        elif blob[:4] in _MAGICS:
            self._frames = self.decoder.feed(blob)
            self._frames += self.decoder.close()
            self.dt_ms = 1.0 if dt_ms is None else dt_ms
        else:
            raise ProtocolError(f"{path}: unrecognized replay file (magic {blob[:4]!r})")

    def __iter__(self) -> Iterator[SinrFrame]:
        start = time.perf_counter()
        period = self.dt_ms * 1e-3
        for i, frame in enumerate(self._frames):
            if self.realtime:
                delay = start + i * period - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            yield frame


class DatagramSource:
    """One SINR frame per UDP datagram; stops after ``idle_timeout_s`` of silence."""

    def __init__(self, port: int, host: str = "0.0.0.0", idle_timeout_s: float = 2.0,
                 max_frames: Optional[int] = None, sock: Optional[socket.socket] = None):
        self.decoder = FrameDecoder()
        self.idle_timeout_s = idle_timeout_s
        self.max_frames = max_frames
        if sock is None:
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.bind((host, port))
        self.sock = sock
        self.dt_ms = 1.0

    @property
    def address(self):
        return self.sock.getsockname()

    def __iter__(self) -> Iterator[SinrFrame]:
        self.sock.settimeout(self.idle_timeout_s)
        n = 0
        try:
            while self.max_frames is None or n < self.max_frames:
                try:
                    data, _ = self.sock.recvfrom(65535)
                except socket.timeout:
                    return
                try:
                    frame = decode_frame(data)
                except InvalidPayloadError:
                    self.decoder.rejected += 1
                    continue
                except ProtocolError:
                    self.decoder.protocol_errors += 1
                    continue
                except FramingError:
                    self.decoder.framing_errors += 1
                    continue
                self.decoder.decoded += 1
                n += 1
                yield frame
        finally:
            self.sock.close()


class FileSink:
    def __init__(self, path):
        self._fh = open(path, "wb")

    def emit(self, frame: CqiFrame) -> bool:
        self._fh.write(encode_frame(frame))
        return True

    def close(self):
        self._fh.close()


class DatagramSink:
    """Non-blocking UDP sender; a full socket buffer reports backpressure."""

    def __init__(self, host: str, port: int):
        self.addr = (host, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setblocking(False)

    def emit(self, frame: CqiFrame) -> bool:
        try:
            self.sock.sendto(encode_frame(frame), self.addr)
        except (BlockingIOError, InterruptedError):
            return False
        return True

    def close(self):
        self.sock.close()


class ListSink:
    """In-memory sink, mainly for tests."""

    def __init__(self):
        self.frames = []

    def emit(self, frame: CqiFrame) -> bool:
        self.frames.append(frame)
        return True

    def close(self):
        pass


class LatencyHistogram:
    """Fixed-memory latency record at 1 us resolution up to ``max_us``."""

    def __init__(self, max_us: int = 100_000):
        self.counts = np.zeros(max_us + 2, dtype=np.int64)
        self.max_us = max_us
        self.n = 0
        self.peak = 0.0

    def add(self, us: float):
        self.counts[min(int(us), self.max_us + 1)] += 1
        self.n += 1
        if us > self.peak:
            self.peak = us

    def percentile(self, q: float) -> float:
        if self.n == 0:
            return 0.0
        rank = max(math.ceil(q / 100.0 * self.n), 1)
        idx = int(np.searchsorted(np.cumsum(self.counts), rank))
        # Bin lower edges; the overflow bin reports the observed max.
        return float(idx) if idx <= self.max_us else self.peak


@dataclass
class StreamStats:
    frames_processed: int = 0
    frames_rejected: int = 0
    protocol_errors: int = 0
    framing_errors: int = 0
    emitted: int = 0
    dropped: int = 0
    deadline_misses: int = 0
    latency_p50_us: float = 0.0
    latency_p99_us: float = 0.0
    latency_max_us: float = 0.0

    @property
    def predictions_due(self) -> int:
        return self.emitted + self.dropped

    @property
    def on_time(self) -> int:
        return self.predictions_due - self.deadline_misses

    def to_kv(self) -> str:
        keys = (
            "frames_processed", "frames_rejected", "protocol_errors", "framing_errors",
            "emitted", "dropped", "deadline_misses",
        )
        lines = [f"{k}={getattr(self, k)}" for k in keys]
        lines.append(f"on_time={self.on_time}")
        lines += [
            f"latency_p50_us={self.latency_p50_us:.1f}",
            f"latency_p99_us={self.latency_p99_us:.1f}",
            f"latency_max_us={self.latency_max_us:.1f}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text: str) -> "StreamStats":
        vals = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        st = cls()
        for k in st.__dataclass_fields__:
            if k in vals:
                cur = getattr(st, k)
                setattr(st, k, type(cur)(float(vals[k])) if isinstance(cur, int) else float(vals[k]))
        return st


class _StatsCollector:
    def __init__(self):
        self._lock = threading.Lock()
        self.hist = LatencyHistogram()
        self.stats = StreamStats()

    def count(self, name: str, n: int = 1):
        with self._lock:
            setattr(self.stats, name, getattr(self.stats, name) + n)

    def latency(self, us: float, missed: bool):
        with self._lock:
            self.hist.add(us)
            if missed:
                self.stats.deadline_misses += 1

    def finish(self, decoder=None) -> StreamStats:
        with self._lock:
            st = self.stats
            if decoder is not None:
                st.frames_rejected += decoder.rejected
                st.protocol_errors += decoder.protocol_errors
                st.framing_errors += decoder.framing_errors
            st.latency_p50_us = self.hist.percentile(50)
            st.latency_p99_us = self.hist.percentile(99)
            st.latency_max_us = self.hist.peak
            return st


class LatestSlot:
    """Single-producer/single-consumer channel of capacity 1, drop-oldest."""

    _CLOSED = object()

    def __init__(self):
        self._cond = threading.Condition()
        self._item = None
        self._has = False
        self._closed = False

    def put(self, item) -> bool:
        """Store ``item``; returns True when an unconsumed item was overwritten."""
        with self._cond:
            dropped = self._has
            self._item, self._has = item, True
            self._cond.notify()
            return dropped

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify()

    def get(self):
        with self._cond:
            while not self._has and not self._closed:
                self._cond.wait()
            if self._has:
                item, self._item, self._has = self._item, None, False
                return item
            return self._CLOSED


class Pipeline:
    """Map -> window -> predict -> emit for one session (compute stage)."""

    def __init__(self, model: ModelParams, table: CqiTable, sink, deadline_us: float,
                 dt_ms: float, collector: _StatsCollector):
        self.cfg = model.config
        self.predictor = StreamingPredictor(model)
        self.thresholds = np.asarray(table.thresholds, dtype=np.float64)
        self.sink = sink
        self.deadline_s = deadline_us * 1e-6
        self.offset_ms = int(round(self.cfg.horizon * dt_ms))
        self.collector = collector
        self.last_ts = None

    def process(self, frame: SinrFrame, t_ingest: float):
        if frame.n_rb != self.cfg.n_rb:
            raise ConfigMismatchError(f"frame has {frame.n_rb} RBs, model expects {self.cfg.n_rb}")
        if self.last_ts is not None and frame.timestamp_ms <= self.last_ts:
            self.collector.count("frames_rejected")
            return
        self.last_ts = frame.timestamp_ms
        cqi = np.searchsorted(self.thresholds, frame.sinr, side="right")
        self.predictor.push(cqi)
        if not self.predictor.ready:
            return
        pred = self.predictor.predict()
        out = CqiFrame(frame.timestamp_ms + self.offset_ms, pred)
        if time.perf_counter() - t_ingest > self.deadline_s:
            self.collector.count("dropped")
            self.collector.latency((time.perf_counter() - t_ingest) * 1e6, missed=True)
            return
        if not self.sink.emit(out):
            self.collector.count("dropped")
            self.collector.latency((time.perf_counter() - t_ingest) * 1e6, missed=True)
            return
        elapsed = time.perf_counter() - t_ingest
        self.collector.count("emitted")
        self.collector.latency(elapsed * 1e6, missed=elapsed > self.deadline_s)


def run_stream(source, model: ModelParams, table: CqiTable = DEFAULT_TABLE, sink=None,
               deadline_us: float = 1000.0, threaded: bool = False,
               disable_gc: bool = True) -> StreamStats:
    """Run one streaming session to the end of ``source``.

    ``threaded`` splits ingest and compute into two threads joined by a
    drop-oldest slot; otherwise each frame is processed as it is decoded,
    which is deterministic. Frames overwritten in the slot count as dropped
    deadline misses.
    """
    sink = ListSink() if sink is None else sink
    collector = _StatsCollector()
    dt_ms = getattr(source, "dt_ms", 1.0)
    pipe = Pipeline(model, table, sink, deadline_us, dt_ms, collector)
    gc_was_enabled = gc.isenabled()
    if disable_gc:
        gc.collect()
        gc.disable()
    try:
        if not threaded:
            for frame in source:
                t_ingest = time.perf_counter()
                collector.count("frames_processed")
                pipe.process(frame, t_ingest)
        else:
            _run_threaded(source, pipe, collector)
    finally:
        if disable_gc and gc_was_enabled:
            gc.enable()
        sink.close()
    stats = collector.finish(getattr(source, "decoder", None))
    log.info("stream finished: %s", stats.to_kv().replace("\n", " "))
    return stats


def _run_threaded(source, pipe: Pipeline, collector: _StatsCollector):
    slot = LatestSlot()
    failure = []

    def ingest():
        try:
            for frame in source:
                collector.count("frames_processed")
                if slot.put((frame, time.perf_counter())):
                    collector.count("dropped")
                    collector.count("deadline_misses")
        except BaseException as exc:  # re-raised on the compute side
            failure.append(exc)
        finally:
            slot.close()

    th = threading.Thread(target=ingest, name="cqi-ingest", daemon=True)
    th.start()
    try:
        while True:
            item = slot.get()
            if item is LatestSlot._CLOSED:
                break
            pipe.process(*item)
    finally:
        slot.close()
        th.join()
    if failure:
        raise failure[0]
