"""CRS pilot layout, simulated downlink subframes and pilot-based SINR estimation.

Single-port CRS pattern with normal cyclic prefix: pilots on OFDM symbols
0, 4, 7 and 11, every 6th subcarrier, with the symbol-0/7 comb starting at
``v_shift = cell_id mod 6`` and the symbol-4/11 comb offset by 3. Pilot values
are seeded unit-modulus QPSK rather than the Gold sequence; the estimator only
needs pilots it can regenerate.

Per RB the estimator forms LS estimates ``h = y / x`` at its 8 pilots, takes
the noise power from adjacent same-symbol pilot pairs,
``N = mean |h_i - h_{i+1}|^2 / 2``, and the signal power as
``S = mean |h|^2 - N``. The difference estimator assumes the channel is flat
over 6 subcarriers and reads high under large delay spread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError

N_SYMBOLS = 14
PILOT_SYMBOLS = (0, 4, 7, 11)
SC_PER_RB = 12
PILOTS_PER_RB = 8
EPS = 1e-12
SINR_CAP_DB = (-20.0, 40.0)

_QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / math.sqrt(2.0)


@dataclass(frozen=True)
class ResourceGrid:
    symbols: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.symbols, dtype=np.complex128)
        if s.ndim != 2 or s.shape[0] != N_SYMBOLS or s.shape[1] % SC_PER_RB:
            raise ValueError(f"resource grid must be 14 x 12k, got {s.shape}")
        object.__setattr__(self, "symbols", s)

    @property
    def n_rb(self) -> int:
        return self.symbols.shape[1] // SC_PER_RB


@dataclass(frozen=True)
class CrsLayout:
    cell_id: int
    n_rb: int
    symbol_idx: np.ndarray
    subcarrier_idx: np.ndarray

    @property
    def v_shift(self) -> int:
        return self.cell_id % 6

    @property
    def n_pilots(self) -> int:
        return self.symbol_idx.size

    def positions(self) -> set:
        return set(zip(self.symbol_idx.tolist(), self.subcarrier_idx.tolist()))

    def rb_index(self) -> np.ndarray:
        return self.subcarrier_idx // SC_PER_RB


def crs_positions(cell_id: int, n_rb: int) -> CrsLayout:
    """Pilot positions ordered by symbol, then subcarrier."""
    if not 0 <= cell_id <= 503:
        raise ValueError(f"cell_id must lie in [0, 503], got {cell_id}")
    if n_rb < 1:
        raise ValueError("n_rb must be positive")
    v = cell_id % 6
    sym, sc = [], []
    for s in PILOT_SYMBOLS:
        offset = v if s in (0, 7) else (v + 3) % 6
        k = offset + 6 * np.arange(2 * n_rb)
        sym.append(np.full(k.size, s))
        sc.append(k)
    return CrsLayout(cell_id, n_rb, np.concatenate(sym), np.concatenate(sc))


def crs_sequence(cell_id: int, subframe_index: int, n_pilots: int) -> np.ndarray:
    """Unit-modulus QPSK pilots, reproducible from ``(cell_id, subframe_index)``."""
    if n_pilots < 1:
        raise ValueError("n_pilots must be positive")
    rng = np.random.default_rng([0x435253, int(cell_id), int(subframe_index)])
    return _QPSK[rng.integers(0, 4, n_pilots)]


def build_subframe(layout: CrsLayout, pilots, H, noise_var: float, seed=None) -> ResourceGrid:
    """Received subframe ``y = H * x + n``; data REs carry no signal.

    ``H`` is either one response per subcarrier (held over the subframe) or
    a full 14 x K matrix. Noise is circular Gaussian with variance
    ``noise_var`` on every RE.
    """
    K = SC_PER_RB * layout.n_rb
    pilots = np.asarray(pilots, dtype=np.complex128)
    if pilots.shape != (layout.n_pilots,):
        raise ValueError(f"expected {layout.n_pilots} pilots, got shape {pilots.shape}")
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim == 0:
        H = np.full((N_SYMBOLS, K), H)
    elif H.shape == (K,):
        H = np.broadcast_to(H, (N_SYMBOLS, K))
    elif H.shape != (N_SYMBOLS, K):
        raise ValueError(f"channel must have shape ({K},) or (14, {K}), got {H.shape}")
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")

    x = np.zeros((N_SYMBOLS, K), dtype=np.complex128)
    x[layout.symbol_idx, layout.subcarrier_idx] = pilots
    y = H * x
    if noise_var > 0:
        rng = np.random.default_rng(seed)
        y = y + math.sqrt(noise_var / 2.0) * (
            rng.standard_normal((N_SYMBOLS, K)) + 1j * rng.standard_normal((N_SYMBOLS, K))
        )
    return ResourceGrid(y)


def pilot_powers(received: ResourceGrid, layout: CrsLayout, expected_pilots):
    """Per-RB linear ``(signal, noise)`` power estimates, each clipped at ``EPS``."""
    if received.n_rb != layout.n_rb:
        raise ValueError(f"grid has {received.n_rb} RBs, layout has {layout.n_rb}")
    x = np.asarray(expected_pilots, dtype=np.complex128)
    if x.shape != (layout.n_pilots,):
        raise ValueError(f"expected {layout.n_pilots} pilots, got shape {x.shape}")
    if np.any(x == 0):
        raise EstimationError("expected pilots must be nonzero")
    sym, sc = layout.symbol_idx, layout.subcarrier_idx
    order = np.lexsort((sc, sym))
    h = (received.symbols[sym, sc] / x)[order]
    sym, rb = sym[order], sc[order] // SC_PER_RB

    syms = np.unique(sym)
    counts = np.zeros((syms.size, layout.n_rb), dtype=int)
    np.add.at(counts, (np.searchsorted(syms, sym), rb), 1)
    if counts.min() < 2:
        s_bad, r_bad = np.argwhere(counts < 2)[0]
        raise EstimationError(
            f"RB {r_bad} has {counts[s_bad, r_bad]} pilot(s) in symbol {syms[s_bad]}; need 2"
        )

    if np.all(counts == counts[0, 0]):
        hb = h.reshape(syms.size, layout.n_rb, counts[0, 0])
        noise = 0.5 * np.mean(np.abs(np.diff(hb, axis=2)) ** 2, axis=(0, 2))
        total = np.mean(np.abs(hb) ** 2, axis=(0, 2))
    else:
        noise = np.empty(layout.n_rb)
        total = np.empty(layout.n_rb)
        for r in range(layout.n_rb):
            diffs = []
            for s in syms:
                diffs.append(np.diff(h[(rb == r) & (sym == s)]))
            noise[r] = 0.5 * np.mean(np.abs(np.concatenate(diffs)) ** 2)
            total[r] = np.mean(np.abs(h[rb == r]) ** 2)
    signal = total - noise
    return np.maximum(signal, EPS), np.maximum(noise, EPS)


def to_db(signal, noise, cap=SINR_CAP_DB) -> np.ndarray:
    sinr = 10.0 * np.log10(np.maximum(signal, EPS) / np.maximum(noise, EPS))
    return np.clip(sinr, *cap) if cap is not None else sinr


def estimate_sinr(received: ResourceGrid, layout: CrsLayout, expected_pilots, cap=SINR_CAP_DB):
    """Per-RB SINR (dB) of one subframe, clipped to ``cap``."""
    return to_db(*pilot_powers(received, layout, expected_pilots), cap=cap)


def average_sinr_db(signal_history, noise_history, cap=SINR_CAP_DB) -> np.ndarray:
    """Per-RB SINR from powers accumulated over many subframes.

    Averages signal and noise powers separately before taking the ratio; a
    mean of per-subframe dB values is biased by the few pilot pairs behind
    each noise estimate.
    """
    s = np.mean(np.asarray(signal_history), axis=0)
    n = np.mean(np.asarray(noise_history), axis=0)
    return to_db(s, n, cap=cap)


def estimate_grid(H_series, noise_var: float, cell_id: int = 0, seed: int = 0,
                  cap=SINR_CAP_DB, return_powers: bool = False):
    """Run build/estimate over a (T, K) channel series, one subframe per row.

    Returns the (T, n_rb) SINR matrix in dB, plus the raw power estimates
    when ``return_powers`` is set.
    """
    H_series = np.asarray(H_series)
    T, K = H_series.shape
    if K % SC_PER_RB:
        raise ValueError("subcarrier count must be a multiple of 12")
    layout = crs_positions(cell_id, K // SC_PER_RB)
    ss = np.random.SeedSequence(seed)
    noise_seeds = ss.spawn(T)
    sig = np.empty((T, layout.n_rb))
    noi = np.empty((T, layout.n_rb))
    for t in range(T):
        x = crs_sequence(cell_id, t % 10, layout.n_pilots)
        rx = build_subframe(layout, x, H_series[t], noise_var, seed=noise_seeds[t])
        sig[t], noi[t] = pilot_powers(rx, layout, x)
    sinr = to_db(sig, noi, cap=cap)
    return (sinr, sig, noi) if return_powers else sinr
