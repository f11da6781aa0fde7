"""Threshold-table mapping from per-RB SINR to 4-bit CQI and spectral efficiency."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass

import numpy as np

from .gridio import CqiGrid, SinrGrid

# Minimum SINR (dB) for CQI 1..15 at the conventional 10% BLER operating point.
DEFAULT_THRESHOLDS = (
    -6.7, -4.7, -2.3, 0.2, 2.4, 4.3, 5.9, 8.1, 10.3, 11.7, 14.1, 16.3, 18.7, 21.0, 22.7,
)
# LTE 4-bit CQI table efficiencies (bits/s/Hz), CQI 0 = out of range.
DEFAULT_EFFICIENCIES = (
    0.0, 0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766,
    1.9141, 2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547,
)


@dataclass(frozen=True)
class CqiTable:
    thresholds: tuple = DEFAULT_THRESHOLDS
    efficiencies: tuple = DEFAULT_EFFICIENCIES

    def __post_init__(self):
        th = tuple(float(v) for v in self.thresholds)
        eff = tuple(float(v) for v in self.efficiencies)
        if len(th) != 15 or len(eff) != 16:
            raise ValueError("CQI table needs 15 thresholds and 16 efficiencies")
        if not all(math.isfinite(v) for v in th + eff):
            raise ValueError("CQI table entries must be finite")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be strictly ascending")
        if eff[0] != 0.0 or any(b < a for a, b in zip(eff, eff[1:])):
            raise ValueError("efficiencies must start at 0 and be nondecreasing")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "efficiencies", eff)

    def to_ini(self) -> str:
        return (
            "[cqi_table]\n"
            f"thresholds_db = {', '.join(repr(v) for v in self.thresholds)}\n"
            f"efficiencies = {', '.join(repr(v) for v in self.efficiencies)}\n"
        )


DEFAULT_TABLE = CqiTable()


def parse_table(text: str) -> CqiTable:
    """INI with a ``[cqi_table]`` section holding comma-separated
    ``thresholds_db`` (15 values) and ``efficiencies`` (16 values)."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    sec = cp["cqi_table"]

    def floats(key):
        return tuple(float(v) for v in sec[key].replace(",", " ").split())

    return CqiTable(thresholds=floats("thresholds_db"), efficiencies=floats("efficiencies"))


def load_table(path) -> CqiTable:
    with open(path) as fh:
        return parse_table(fh.read())


def sinr_to_cqi(sinr_db: float, table: CqiTable = DEFAULT_TABLE) -> int:
    """Largest ``i`` with ``sinr_db >= T_i``; 0 below the first threshold."""
    if not math.isfinite(sinr_db):
        raise ValueError(f"SINR must be finite, got {sinr_db}")
    return int(np.searchsorted(table.thresholds, sinr_db, side="right"))


def sinr_to_cqi_array(sinr_db, table: CqiTable = DEFAULT_TABLE) -> np.ndarray:
    """Vectorized :func:`sinr_to_cqi`; returns uint8."""
    x = np.asarray(sinr_db, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("SINR values must be finite")
    return np.searchsorted(np.asarray(table.thresholds), x, side="right").astype(np.uint8)


def cqi_to_efficiency(cqi: int, table: CqiTable = DEFAULT_TABLE) -> float:
    if not 0 <= cqi <= 15 or int(cqi) != cqi:
        raise ValueError(f"CQI must be an integer in [0, 15], got {cqi}")
    return table.efficiencies[int(cqi)]


def map_grid(sinr: SinrGrid, table: CqiTable = DEFAULT_TABLE) -> CqiGrid:
    cqi = sinr_to_cqi_array(sinr.data, table)
    return CqiGrid(data=cqi, meta=sinr.meta, dt_ms=sinr.dt_ms)
