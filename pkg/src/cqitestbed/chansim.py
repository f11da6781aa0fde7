"""Sum-of-sinusoids Rayleigh fading over a tapped delay line.

Each tap is an independent Clarke process

    a(t) = sqrt(P/M) * sum_m exp(j(2*pi*fd*cos(alpha_m)*t + phi_m))

with arrival angles stratified over the half circle,
``alpha_m = pi*(m + u)/M`` for one uniform offset ``u``, and independent
uniform phases ``phi_m``. Stratification keeps the sample autocorrelation
within ~1e-3 of J0(2*pi*fd*tau) at M=64; fully random angles scatter by
~1/sqrt(M). A static channel (fd = 0) is a single phasor of power P.

Per-tap random streams come from the scenario seed via
``SeedSequence(seed, spawn_key=(tap_index,))`` so any tap can be generated
independently (and in any order) with identical results.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

import numpy as np

from .gridio import ScenarioMeta, SinrGrid

SPEED_OF_LIGHT = 299_792_458.0
SUBCARRIERS_PER_RB = 12
PRESETS = ("pedestrian", "vehicle", "train")

_CHUNK = 8192


def kmh_to_mps(speed_kmh: float) -> float:
    return speed_kmh / 3.6


def doppler_hz(speed_mps: float, carrier_hz: float) -> float:
    """Maximum Doppler shift ``v * fc / c``."""
    if not (math.isfinite(speed_mps) and math.isfinite(carrier_hz)):
        raise ValueError("speed and carrier must be finite")
    if speed_mps < 0:
        raise ValueError(f"speed must be nonnegative, got {speed_mps}")
    if carrier_hz <= 0:
        raise ValueError(f"carrier must be positive, got {carrier_hz}")
    return speed_mps * carrier_hz / SPEED_OF_LIGHT


def jakes_autocorr(fd_hz: float, tau_s: float) -> float:
    """Clarke autocorrelation J0(2*pi*fd*tau), evaluated independently of scipy.

    Power series for small arguments, Hankel asymptotic expansion beyond 20;
    both are accurate to well under 1e-9 in their ranges.
    """
    if fd_hz < 0:
        raise ValueError("fd_hz must be nonnegative")
    x = abs(2.0 * math.pi * fd_hz * tau_s)
    if x == 0.0:
        return 1.0
    if x <= 20.0:
        # sum_k (-1)^k (x/2)^(2k) / (k!)^2
        q = -(x * x) / 4.0
        term, total, k = 1.0, 1.0, 0
        while abs(term) > 1e-17 * max(1.0, abs(total)) or k < 5:
            k += 1
            term *= q / (k * k)
            total += term
            if k > 200:
                break
        return total
    # Hankel: J0(x) ~ sqrt(2/(pi x)) (P cos(chi) - Q sin(chi)), chi = x - pi/4,
    # t_k = prod_{i<=k} (2i-1)^2 / (k! (8x)^k); truncated at the smallest term.
    p, q, t = 1.0, 0.0, 1.0
    for k in range(1, 60):
        nxt = t * (2 * k - 1) ** 2 / (k * 8.0 * x)
        if nxt > t:
            break
        t = nxt
        sign = -1.0 if (k // 2) % 2 == 1 else 1.0
        if k % 2 == 1:
            q -= sign * t
        else:
            p += sign * t
        if t < 1e-17:
            break
    chi = x - math.pi / 4.0
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def tap_seed(master_seed: int, tap_index: int) -> int:
    """64-bit seed for tap ``tap_index`` derived from the scenario seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(tap_index),))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


@dataclass(frozen=True)
class TapProcess:
    gains: np.ndarray
    delay_s: float
    dt_ms: float
    power: float

    def __len__(self):
        return self.gains.size


def gen_tap(
    fd_hz: float,
    power_db: float,
    n_sinusoids: int,
    duration_ms: float,
    dt_ms: float,
    seed: int,
    delay_s: float = 0.0,
) -> TapProcess:
    """Complex gain of one tap sampled every ``dt_ms`` for ``duration_ms``."""
    if fd_hz < 0:
        raise ValueError("fd_hz must be nonnegative")
    if n_sinusoids < 8:
        raise ValueError("n_sinusoids must be at least 8")
    if not duration_ms > 0 or not dt_ms > 0:
        raise ValueError("duration_ms and dt_ms must be positive")
    n = max(int(round(duration_ms / dt_ms)), 1)
    power = 10.0 ** (power_db / 10.0)
    rng = np.random.default_rng(seed)
    M = int(n_sinusoids)
    alpha = np.pi * (np.arange(M) + rng.uniform()) / M
    phi = rng.uniform(0.0, 2.0 * np.pi, M)

    if fd_hz == 0.0:
        gains = np.full(n, math.sqrt(power) * np.exp(1j * phi[0]), dtype=np.complex128)
    else:
        omega = 2.0 * np.pi * fd_hz * np.cos(alpha)
        dt_s = dt_ms * 1e-3
        gains = np.empty(n, dtype=np.complex128)
        scale = math.sqrt(power / M)
        for start in range(0, n, _CHUNK):
            t = np.arange(start, min(start + _CHUNK, n)) * dt_s
            gains[start : start + t.size] = scale * np.exp(
                1j * (np.outer(t, omega) + phi)
            ).sum(axis=1)
    gains.setflags(write=False)
    return TapProcess(gains=gains, delay_s=float(delay_s), dt_ms=float(dt_ms), power=power)


def subcarrier_freqs(n_rb: int, subcarrier_hz: float = 15e3) -> np.ndarray:
    """Baseband subcarrier offsets (Hz), centred on the carrier."""
    K = SUBCARRIERS_PER_RB * n_rb
    return (np.arange(K) - K / 2.0) * subcarrier_hz


def freq_response(taps: Sequence[TapProcess], t_index: int, freqs) -> np.ndarray:
    """H(f, t) = sum_l a_l(t) exp(-j 2 pi f tau_l) at one time index."""
    if not taps:
        raise ValueError("need at least one tap")
    f = np.asarray(freqs, dtype=np.float64)
    H = np.zeros(f.shape, dtype=np.complex128)
    for tap in taps:
        H += tap.gains[t_index] * np.exp(-2j * np.pi * f * tap.delay_s)
    return H


def freq_response_series(taps: Sequence[TapProcess], freqs) -> np.ndarray:
    """Vectorized :func:`freq_response` over all time indices, shape (T, K)."""
    if not taps:
        raise ValueError("need at least one tap")
    f = np.asarray(freqs, dtype=np.float64)
    A = np.stack([tap.gains for tap in taps], axis=1)
    steer = np.exp(-2j * np.pi * np.outer([tap.delay_s for tap in taps], f))
    return A @ steer


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    speed_kmh: float
    mean_snr_db: float
    delay_profile: tuple = ((0.0, 0.0),)
    carrier_hz: float = 2.6e9
    n_rb: int = 50
    subcarrier_hz: float = 15e3
    n_sinusoids: int = 64
    seed: int = 0
    dt_ms: float = 1.0
    raw_profile: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        prof = [(float(d), float(p)) for d, p in self.delay_profile]
        if not prof:
            raise ValueError("delay_profile must be nonempty")
        if self.speed_kmh < 0:
            raise ValueError("speed_kmh must be nonnegative")
        if self.n_rb < 1 or self.n_sinusoids < 8:
            raise ValueError("n_rb must be >= 1 and n_sinusoids >= 8")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        lin = np.array([10.0 ** (p / 10.0) for _, p in prof])
        norm = 10.0 * np.log10(lin / lin.sum())
        object.__setattr__(self, "raw_profile", tuple(prof))
        object.__setattr__(
            self, "delay_profile", tuple((d, float(p)) for (d, _), p in zip(prof, norm))
        )

    @property
    def doppler_hz(self) -> float:
        return doppler_hz(kmh_to_mps(self.speed_kmh), self.carrier_hz)

    def tap_powers(self) -> np.ndarray:
        return np.array([10.0 ** (p / 10.0) for _, p in self.delay_profile])

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, delay_profile=self.raw_profile, seed=seed)

    def meta(self) -> ScenarioMeta:
        return ScenarioMeta(
            name=self.name,
            n_rb=self.n_rb,
            speed_kmh=self.speed_kmh,
            carrier_hz=self.carrier_hz,
            source="synthetic",
        )


def _floats(text: str):
    return [float(v) for v in text.replace(",", " ").split()]


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse an INI scenario description (see ``presets/*.ini`` for the schema)."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    s = cp["scenario"]
    dp = cp["delay_profile"]
    delays = [d * 1e-9 for d in _floats(dp["delay_ns"])]
    powers = _floats(dp["power_db"])
    if len(delays) != len(powers):
        raise ValueError("delay_ns and power_db must have the same length")
    return ScenarioConfig(
        name=s.get("name", "custom"),
        speed_kmh=s.getfloat("speed_kmh"),
        mean_snr_db=s.getfloat("mean_snr_db"),
        delay_profile=tuple(zip(delays, powers)),
        carrier_hz=s.getfloat("carrier_hz", 2.6e9),
        n_rb=s.getint("n_rb", 50),
        subcarrier_hz=s.getfloat("subcarrier_hz", 15e3),
        n_sinusoids=s.getint("n_sinusoids", 64),
        seed=s.getint("seed", 0),
        dt_ms=s.getfloat("dt_ms", 1.0),
    )


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_scenario(fh.read())


def preset(name: str, seed: int | None = None) -> ScenarioConfig:
    """Bundled scenario: ``pedestrian`` (3 km/h), ``vehicle`` (60), ``train`` (80)."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("cqitestbed.presets").joinpath(f"{name}.ini").read_text()
    cfg = parse_scenario(text)
    return cfg if seed is None else cfg.with_seed(seed)


def scenario_taps(config: ScenarioConfig, duration_ms: int):
    fd = config.doppler_hz
    return [
        gen_tap(
            fd,
            power_db,
            config.n_sinusoids,
            duration_ms * config.dt_ms,
            config.dt_ms,
            tap_seed(config.seed, index),
            delay_s=delay_s,
        )
        for index, (delay_s, power_db) in enumerate(config.delay_profile)
    ]


def channel_series(config: ScenarioConfig, duration_ms: int) -> np.ndarray:
    """Per-subframe frequency response over all subcarriers, shape (T, 12*n_rb)."""
    if duration_ms < 1:
        raise ValueError("duration_ms must be at least 1")
    taps = scenario_taps(config, duration_ms)
    return freq_response_series(taps, subcarrier_freqs(config.n_rb, config.subcarrier_hz))


def rb_gain_db(H: np.ndarray) -> np.ndarray:
    """10*log10 of per-RB mean |H|^2 for a (T, 12*n_rb) response."""
    T, K = H.shape
    p = (np.abs(H) ** 2).reshape(T, K // SUBCARRIERS_PER_RB, SUBCARRIERS_PER_RB).mean(axis=2)
    return 10.0 * np.log10(np.maximum(p, 1e-12))


def synth_sinr_grid(config: ScenarioConfig, duration_ms: int) -> SinrGrid:
    """Synthetic ``duration_ms x n_rb`` SINR grid for one scenario realization."""
    H = channel_series(config, duration_ms)
    sinr = config.mean_snr_db + rb_gain_db(H)
    return SinrGrid(data=sinr, meta=config.meta(), dt_ms=config.dt_ms)
