"""Time-frequency grid data model, dataset files, splitting and windowing.

A grid row is one subframe (``dt_ms`` apart, 1 ms by default) and a column is
one resource block. SINR values are stored in dB as 32-bit floats, which is
also the on-disk precision, so binary round trips are bit-exact.

Binary layout::

    b"SGR1" | u32 LE header length | UTF-8 JSON header | T*R float32 LE, row-major
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from .errors import FramingError, InsufficientDataError, ParseError, SchemaError

GRID_MAGIC = b"SGR1"
_HEADER_LEN = struct.Struct("<I")

# Standard LTE channel widths; anything else falls back to 180 kHz per RB
# with a 10% guard band.
_LTE_BANDWIDTHS = {6: 1.4e6, 15: 3e6, 25: 5e6, 50: 10e6, 75: 15e6, 100: 20e6}


def bandwidth_for(n_rb: int) -> float:
    """Channel width in Hz occupied by ``n_rb`` resource blocks."""
    return _LTE_BANDWIDTHS.get(n_rb, n_rb * 180e3 / 0.9)


@dataclass(frozen=True)
class ScenarioMeta:
    name: str
    n_rb: int
    speed_kmh: float = 0.0
    carrier_hz: float = 2.6e9
    bandwidth_hz: Optional[float] = None
    source: str = "synthetic"

    def __post_init__(self):
        if self.n_rb < 1:
            raise ValueError("n_rb must be positive")
        if self.speed_kmh < 0:
            raise ValueError("speed_kmh must be nonnegative")
        if not self.carrier_hz > 0:
            raise ValueError("carrier_hz must be positive")
        if self.source not in ("synthetic", "imported"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.bandwidth_hz is None:
            object.__setattr__(self, "bandwidth_hz", bandwidth_for(self.n_rb))
        elif not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be positive")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "speed_kmh": self.speed_kmh,
            "carrier_hz": self.carrier_hz,
            "n_rb": self.n_rb,
            "bandwidth_hz": self.bandwidth_hz,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioMeta":
        return cls(
            name=str(d["name"]),
            n_rb=int(d["n_rb"]),
            speed_kmh=float(d.get("speed_kmh", 0.0)),
            carrier_hz=float(d.get("carrier_hz", 2.6e9)),
            bandwidth_hz=d.get("bandwidth_hz"),
            source=str(d.get("source", "synthetic")),
        )


def _frozen_matrix(data, dtype) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"grid data must be 2-D, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SinrGrid:
    """Per-RB SINR in dB, shape ``(T, R)``."""

    data: np.ndarray
    meta: ScenarioMeta
    dt_ms: float = 1.0
    kind = "sinr"

    def __post_init__(self):
        data = _frozen_matrix(self.data, np.float32)
        object.__setattr__(self, "data", data)
        T, R = data.shape
        if T < 1 or R < 1:
            raise ValueError(f"grid must be at least 1x1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("grid contains non-finite entries")
        if not self.dt_ms > 0:
            raise ValueError("dt_ms must be positive")
        if self.meta.n_rb != R:
            raise ValueError(f"meta.n_rb={self.meta.n_rb} but grid has {R} columns")

    @property
    def n_subframes(self) -> int:
        return self.data.shape[0]

    @property
    def n_rb(self) -> int:
        return self.data.shape[1]

    def with_data(self, data):
        """Same metadata, new matrix (row count may differ)."""
        return replace(self, data=data)


@dataclass(frozen=True)
class CqiGrid(SinrGrid):
    """Per-RB CQI, integers in ``[0, 15]`` held as float32 for a shared format."""

    kind = "cqi"

    def __post_init__(self):
        super().__post_init__()
        d = self.data
        if np.any(d != np.round(d)) or d.min() < 0 or d.max() > 15:
            raise ValueError("CQI grid entries must be integers in [0, 15]")

    def as_int(self) -> np.ndarray:
        return self.data.astype(np.int64)


_KINDS = {"sinr": SinrGrid, "cqi": CqiGrid}


def _check_finite_for_write(grid):
    data = np.asarray(grid.data)
    if not np.all(np.isfinite(data)):
        raise ValueError("refusing to write a grid with non-finite entries")


def save_grid(grid: SinrGrid, path, format: str = "binary") -> None:
    """Write ``grid`` to ``path`` in ``"binary"`` or ``"csv"`` format."""
    _check_finite_for_write(grid)
    path = os.fspath(path)
    try:
        if format == "binary":
            header = json.dumps(
                {
                    "kind": grid.kind,
                    "T": grid.n_subframes,
                    "R": grid.n_rb,
                    "dt_ms": grid.dt_ms,
                    "meta": grid.meta.to_dict(),
                },
                sort_keys=True,
            ).encode("utf-8")
            payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
            with open(path, "wb") as fh:
                fh.write(GRID_MAGIC)
                fh.write(_HEADER_LEN.pack(len(header)))
                fh.write(header)
                fh.write(payload)
        elif format == "csv":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"rb{r}" for r in range(grid.n_rb)])
                for row in grid.data.tolist():
                    w.writerow([repr(v) for v in row])
        else:
            raise ValueError(f"unknown grid format {format!r}")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write grid file: {exc.strerror}", path) from exc


def binary_size(T: int, R: int, meta: ScenarioMeta, dt_ms: float = 1.0, kind: str = "sinr") -> int:
    """Byte length ``save_grid`` produces for the given shape and header."""
    header = json.dumps(
        {"kind": kind, "T": T, "R": R, "dt_ms": dt_ms, "meta": meta.to_dict()},
        sort_keys=True,
    ).encode("utf-8")
    return len(GRID_MAGIC) + _HEADER_LEN.size + len(header) + 4 * T * R


def decode_grid_bytes(blob: bytes):
    """Parse a binary grid file already read into memory."""
    if len(blob) < 8 or blob[:4] != GRID_MAGIC:
        raise SchemaError("not a grid file (bad magic)")
    (hlen,) = _HEADER_LEN.unpack_from(blob, 4)
    if 8 + hlen > len(blob):
        raise FramingError(f"header claims {hlen} bytes, only {len(blob) - 8} available")
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
        T, R = int(header["T"]), int(header["R"])
        kind = header.get("kind", "sinr")
        dt_ms = float(header.get("dt_ms", 1.0))
        meta = ScenarioMeta.from_dict(header["meta"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"malformed grid header: {exc}") from exc
    if kind not in _KINDS:
        raise SchemaError(f"unknown grid kind {kind!r}")
    if T < 1 or R < 1:
        raise SchemaError(f"invalid grid shape {T}x{R}")
    if meta.n_rb != R:
        raise SchemaError(f"header meta.n_rb={meta.n_rb} disagrees with R={R}")
    payload = blob[8 + hlen :]
    if len(payload) != 4 * T * R:
        raise FramingError(f"payload is {len(payload)} bytes, header implies {4 * T * R}")
    data = np.frombuffer(payload, dtype="<f4").reshape(T, R)
    try:
        return _KINDS[kind](data=data, meta=meta, dt_ms=dt_ms)
    except ValueError as exc:
        raise SchemaError(f"grid payload violates invariants: {exc}") from exc


def load_grid(path, format: str = "binary", meta: Optional[ScenarioMeta] = None, dt_ms: float = 1.0):
    """Read a grid written by :func:`save_grid` or an external CSV.

    Binary files carry their own metadata and may hold either a
    :class:`SinrGrid` or a :class:`CqiGrid`. CSV files are always imported as
    SINR; ``meta`` overrides the default metadata derived from the file name.
    """
    path = os.fspath(path)
    if format == "binary":
        with open(path, "rb") as fh:
            blob = fh.read()
        return decode_grid_bytes(blob)
    if format != "csv":
        raise ValueError(f"unknown grid format {format!r}")

    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty csv") from None
        R = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != R:
                raise ParseError(f"{path}: row {lineno} has {len(row)} columns, expected {R}")
            vals = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {col}"
                    ) from None
                if not np.isfinite(v):
                    raise ParseError(f"{path}: non-finite value at row {lineno}, column {col}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise InsufficientDataError(f"{path}: csv has no data rows")
    if meta is None:
        name = os.path.splitext(os.path.basename(path))[0]
        meta = ScenarioMeta(name=name, n_rb=R, source="imported")
    return SinrGrid(data=np.array(rows), meta=meta, dt_ms=dt_ms)


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous empirical CDF over a sorted sample."""

    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=np.float64).ravel())
        if s.size == 0:
            raise InsufficientDataError("empirical CDF needs at least one sample")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    def query(self, x):
        """P(sample <= x); accepts scalars or arrays."""
        p = np.searchsorted(self.samples, x, side="right") / self.samples.size
        return float(p) if np.ndim(p) == 0 else p

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.samples, q))

    def median(self) -> float:
        return float(np.median(self.samples))

    def curve(self, n_points: Optional[int] = None):
        """(x, p) step points, optionally decimated to ``n_points`` for plotting."""
        n = self.samples.size
        p = np.arange(1, n + 1) / n
        if n_points is not None and n > n_points:
            idx = np.unique(np.linspace(0, n - 1, n_points).astype(int))
            return self.samples[idx], p[idx]
        return self.samples, p


def delta_cdf(grid: SinrGrid, signed: bool = False) -> EmpiricalCdf:
    """Distribution of per-subframe SINR change over all resource blocks.

    Uses ``|x[t+1] - x[t]|`` unless ``signed`` is set.
    """
    if grid.n_subframes < 2:
        raise InsufficientDataError("delta_cdf needs at least 2 subframes")
    diff = np.diff(grid.data.astype(np.float64), axis=0)
    return EmpiricalCdf(diff if signed else np.abs(diff))


def split(grid: SinrGrid, train_fraction: float):
    """Temporal prefix/suffix split; the prefix gets ``floor(T * fraction)`` rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    T = grid.n_subframes
    n_train = int(np.floor(T * train_fraction))
    if n_train < 1 or T - n_train < 1:
        raise InsufficientDataError(f"cannot split {T} rows at fraction {train_fraction}")
    return grid.with_data(grid.data[:n_train]), grid.with_data(grid.data[n_train:])


def n_windows(T: int, w: int, horizon: int = 1) -> int:
    return max(T - w - horizon + 1, 0)


def window_arrays(data: np.ndarray, w: int, horizon: int = 1):
    """All windows at once as zero-copy views: ``(N, w, R)`` inputs, ``(N, R)`` targets."""
    if w < 1 or horizon < 1:
        raise ValueError("w and horizon must be positive")
    data = np.asarray(data)
    T = data.shape[0]
    n = n_windows(T, w, horizon)
    if n < 1:
        raise InsufficientDataError(f"need at least {w + horizon} rows, have {T}")
    X = np.lib.stride_tricks.sliding_window_view(data[: n + w - 1], w, axis=0)
    return np.moveaxis(X, -1, 1), data[w + horizon - 1 :]


def windows(grid: SinrGrid, w: int, horizon: int = 1) -> Iterator[tuple]:
    """Yield ``(rows i..i+w-1, row i+w+horizon-1)`` for every valid ``i``."""
    X, Y = window_arrays(grid.data, w, horizon)
    for i in range(X.shape[0]):
        yield X[i], Y[i]
