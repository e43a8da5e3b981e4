"""Synthetic disturbance events for a single IBR behind an RL line.

Events are generated directly in the differential domain: a damped
sinusoidal terminal-voltage disturbance, a saturating time-enveloped current
response, and a grid-side voltage that satisfies the discrete RL relation
with a one-sample backward difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .waveform import Dataset, DifferentialEvent, SamplingConfig, WaveformEvent


@dataclass(frozen=True)
class LineParams:
    R: float = 10.0  # ohm
    L: float = 0.2e-3  # henry

    def __post_init__(self) -> None:
        if not (math.isfinite(self.R) and math.isfinite(self.L)):
            raise ValueError("line parameters must be finite")
        if self.R < 0 or self.L < 0:
            raise ValueError(f"line parameters must be non-negative, got R={self.R}, L={self.L}")

    def to_dict(self) -> dict:
        return {"R_ohm": self.R, "L_henry": self.L}


@dataclass(frozen=True)
class DisturbanceConfig:
    amplitude_range: tuple[float, float] = (20.0, 120.0)  # volts
    frequency_range: tuple[float, float] = (180.0, 900.0)  # hertz
    damping_cycles_range: tuple[float, float] = (0.5, 3.0)  # grid cycles
    noise_std: float = 0.0
    event_count: int = 80
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("amplitude_range", "frequency_range", "damping_cycles_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (float(lo), float(hi)))
            if lo > hi:
                raise ValueError(f"{name} is empty: low={lo} > high={hi}")
        if self.damping_cycles_range[0] <= 0:
            raise ValueError("damping_cycles_range must be positive")
        if self.event_count < 1:
            raise ValueError("event_count must be at least 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass(frozen=True)
class GroundTruthIbr:
    gain: float = 2.0  # amperes
    saturation_scale: float = 50.0  # volts
    envelope_amplitude: float = 0.5
    envelope_tau: float = 2.0 / 60.0  # seconds, two grid cycles

    def __post_init__(self) -> None:
        if self.gain <= 0 or self.saturation_scale <= 0 or self.envelope_tau <= 0:
            raise ValueError("gain, saturation_scale and envelope_tau must be positive")
        if self.envelope_amplitude < 0:
            raise ValueError("envelope_amplitude must be non-negative")


def ground_truth_current(
    dv1: Sequence[float], sampling: SamplingConfig, ibr: GroundTruthIbr
) -> np.ndarray:
    """Differential IBR current ``G*tanh(dv1/Vs)*(1 + a*exp(-t/tau))``."""
    dv1 = np.asarray(dv1, dtype=float)
    if not np.all(np.isfinite(dv1)):
        raise ValueError("dv1 contains non-finite values")
    t = np.arange(len(dv1)) * sampling.dt
    envelope = 1.0 + ibr.envelope_amplitude * np.exp(-t / ibr.envelope_tau)
    return ibr.gain * np.tanh(dv1 / ibr.saturation_scale) * envelope


def consistent_v2(
    dv1: Sequence[float],
    di1: Sequence[float],
    line: LineParams,
    sampling: SamplingConfig,
    di1_prev: float = 0.0,
) -> np.ndarray:
    """Grid-side voltage satisfying ``dv2 = dv1 - R*di1 - L*(di1[l]-di1[l-1])/dt``.

    ``di1_prev`` is the current one sample before the window (zero for
    generated events, whose differential current starts from rest).
    """
    dv1 = np.asarray(dv1, dtype=float)
    di1 = np.asarray(di1, dtype=float)
    if dv1.shape != di1.shape:
        raise ValueError(f"length mismatch: dv1 {dv1.shape} vs di1 {di1.shape}")
    prev = np.concatenate([[di1_prev], di1[:-1]])
    return dv1 - line.R * di1 - line.L * (di1 - prev) / sampling.dt


def draw_disturbance(cfg: DisturbanceConfig, event_id: int) -> dict:
    """Analog parameters of one event; independent of the sampling rate."""
    rng = event_rng(cfg.seed, event_id)
    return {
        "amplitude": float(rng.uniform(*cfg.amplitude_range)),
        "frequency": float(rng.uniform(*cfg.frequency_range)),
        "damping_cycles": float(rng.uniform(*cfg.damping_cycles_range)),
        "phase": float(rng.uniform(0.0, 2.0 * math.pi)),
        "rng": rng,
    }


def event_rng(seed: int, event_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, event_id])


def generate_event(
    event_id: int,
    cfg: DisturbanceConfig,
    ibr: GroundTruthIbr,
    line: LineParams,
    sampling: SamplingConfig,
) -> DifferentialEvent:
    d = draw_disturbance(cfg, event_id)
    t = sampling.times()
    tau_d = d["damping_cycles"] / sampling.grid_frequency
    dv1 = d["amplitude"] * np.exp(-t / tau_d) * np.sin(2 * math.pi * d["frequency"] * t + d["phase"])
    di1 = ground_truth_current(dv1, sampling, ibr)
    dv2 = consistent_v2(dv1, di1, line, sampling)
    if cfg.noise_std > 0:
        noise = d["rng"].normal(0.0, cfg.noise_std, size=(3, len(t)))
        dv1, dv2, di1 = dv1 + noise[0], dv2 + noise[1], di1 + noise[2]
    return DifferentialEvent(event_id, dv1, dv2, di1, sampling)


def generate_dataset(
    cfg: DisturbanceConfig,
    ibr: GroundTruthIbr | None = None,
    line: LineParams | None = None,
    sampling: SamplingConfig | None = None,
) -> Dataset:
    ibr = ibr or GroundTruthIbr()
    line = line or LineParams()
    sampling = sampling or SamplingConfig()
    events = tuple(
        generate_event(k, cfg, ibr, line, sampling) for k in range(1, cfg.event_count + 1)
    )
    return Dataset(sampling, events, line.to_dict())


def synthesize_raw(
    event: DifferentialEvent,
    sampling: SamplingConfig,
    steady_amplitudes: tuple[float, float, float] = (170.0, 169.0, 5.0),
    steady_phase: float = 0.0,
) -> WaveformEvent:
    """Raw waveforms whose one-cycle difference is ``event``.

    A 60 Hz steady state fills the pre-history and is re-added cycle by
    cycle: ``x[l] = dx[l] + x[l-N]``.
    """
    N = sampling.samples_per_cycle
    k = np.arange(-N, 0)
    raw = {}
    pre = {}
    for name, amp in zip(("v1", "v2", "i1"), steady_amplitudes):
        base = amp * np.sin(2 * math.pi * k / N + steady_phase)
        dx = getattr(event, "d" + name)
        x = np.empty(len(dx) + N)
        x[:N] = base
        for ell in range(len(dx)):
            x[N + ell] = dx[ell] + x[ell]
        pre[name] = base
        raw[name] = x[N:]
    return WaveformEvent(event.event_id, raw["v1"], raw["v2"], raw["i1"], pre_history=pre)

