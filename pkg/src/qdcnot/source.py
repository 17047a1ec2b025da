"""Pulsed quantum-dot single-photon source.

Times are in picoseconds internally; configuration fields carry their unit
in the name.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from qdcnot.errors import ConfigError

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class OverlapModel:
    """Mean wavepacket overlap M as a constant or a table over time-bin width."""

    constant: float | None = None
    table: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        table = tuple(sorted((float(b), float(m)) for b, m in self.table))
        object.__setattr__(self, "table", table)
        if self.constant is not None and not 0.0 <= self.constant <= 1.0:
            raise ConfigError(f"overlap {self.constant} outside [0, 1]")

    def __call__(self, t_bin_ps: float) -> float:
        if self.constant is not None:
            return float(self.constant)
        if not self.table:
            raise ConfigError("overlap model has neither a constant nor a table")
        bins, values = zip(*self.table)
        return float(np.clip(np.interp(t_bin_ps, bins, values), 0.0, 1.0))


@dataclass(frozen=True)
class SourceParams:
    brightness_max: float = 0.75
    decay_time_ps: float = 750.0
    g2_zero: float = 0.0
    rep_period_ns: float = 12.2
    excitation_delay_ns: float = 2.3
    overlap: OverlapModel = field(default_factory=lambda: OverlapModel(constant=0.5))
    jitter_fwhm_ps: float = 350.0
    detection_efficiency: float = 1.0
    dark_rate_hz: float = 0.0
    photon_statistics: str = "single"  # "single" or "poisson"

    def __post_init__(self):
        if not 0.0 <= self.brightness_max <= 1.0 and self.photon_statistics == "single":
            raise ConfigError("brightness_max must lie in [0, 1]")
        if self.brightness_max < 0.0:
            raise ConfigError("brightness_max must be non-negative")
        if self.decay_time_ps <= 0.0:
            raise ConfigError("decay_time_ps must be positive")
        if not 0.0 <= self.g2_zero < 0.5:
            raise ConfigError("g2_zero must lie in [0, 0.5) for the background model")
        if self.rep_period_ns <= 0.0 or not 0.0 < self.excitation_delay_ns < self.rep_period_ns / 2:
            raise ConfigError("need 0 < excitation_delay_ns < rep_period_ns / 2")
        if self.jitter_fwhm_ps < 0.0 or self.dark_rate_hz < 0.0:
            raise ConfigError("jitter and dark rate must be non-negative")
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ConfigError("detection_efficiency must lie in [0, 1]")
        if self.photon_statistics not in ("single", "poisson"):
            raise ConfigError(f"unknown photon_statistics {self.photon_statistics!r}")

    @property
    def rep_period_ps(self) -> float:
        return self.rep_period_ns * 1e3

    @property
    def excitation_delay_ps(self) -> float:
        return self.excitation_delay_ns * 1e3

    @property
    def jitter_sigma_ps(self) -> float:
        return self.jitter_fwhm_ps * FWHM_TO_SIGMA

    @property
    def dark_rate_per_ps(self) -> float:
        return self.dark_rate_hz * 1e-12

    @property
    def background_probability(self) -> float:
        """Per-pulse probability of an extra photon, calibrated to ``g2_zero``."""
        return calibrate_background(self.brightness_max, self.g2_zero)


def brightness_in_bin(params: SourceParams, t_bin_ps: float) -> float:
    """Collected photons per pulse emitted within ``t_bin_ps`` of excitation."""
    if t_bin_ps < 0:
        raise ConfigError("time bin must be non-negative")
    if math.isinf(t_bin_ps):
        return params.brightness_max
    return params.brightness_max * -math.expm1(-t_bin_ps / params.decay_time_ps)


def effective_overlap(params: SourceParams, t_bin_ps: float) -> float:
    if t_bin_ps <= 0:
        raise ConfigError("time bin must be positive")
    return params.overlap(t_bin_ps)


def hbt_g2(brightness: float, background: float) -> float:
    """Zero-delay HBT ratio for a main photon plus an independent background photon.

    Same-pulse pairs split with probability 1/2; side peaks see the squared
    mean photon number: g2 = 2 b p / (b + p)^2.
    """
    total = brightness + background
    if total == 0.0:
        return 0.0
    return 2.0 * brightness * background / total**2


def calibrate_background(brightness: float, g2: float) -> float:
    """Invert :func:`hbt_g2` for the background probability (small root)."""
    if g2 == 0.0 or brightness == 0.0:
        return 0.0
    if not 0.0 < g2 < 0.5:
        raise ConfigError("g2 must lie in (0, 0.5) to be produced by one background photon")
    return brightness * ((1.0 - g2) - math.sqrt(1.0 - 2.0 * g2)) / g2


@dataclass(frozen=True)
class EmissionEvent:
    pulse_index: int
    emission_time: float  # ns, pulse epoch plus exponential delay
    is_background: bool
    polarization: str


@dataclass
class EmissionBatch:
    """Flat arrays of emitted photons over many periods."""

    period: np.ndarray
    pulse: np.ndarray
    offset_ps: np.ndarray
    background: np.ndarray
    polarization_h: np.ndarray

    def __len__(self) -> int:
        return len(self.period)


def sample_emissions(params: SourceParams, n_periods: int, rng: np.random.Generator,
                     n_pulses: int = 2) -> EmissionBatch:
    """Photons emitted over ``n_periods`` periods with ``n_pulses`` excitations each.

    Main photons are H polarized; background photons are randomly H or V.
    """
    b = params.brightness_max
    shape = (n_periods, n_pulses)
    if params.photon_statistics == "poisson":
        n_main = rng.poisson(b, size=shape)
        p_bg = 0.0
    else:
        n_main = (rng.random(shape) < b).astype(np.int64)
        p_bg = params.background_probability
    n_bg = (rng.random(shape) < p_bg).astype(np.int64) if p_bg > 0 else np.zeros(shape, np.int64)

    period_grid, pulse_grid = np.indices(shape)
    periods = np.concatenate([np.repeat(period_grid.ravel(), n_main.ravel()),
                              np.repeat(period_grid.ravel(), n_bg.ravel())])
    pulses = np.concatenate([np.repeat(pulse_grid.ravel(), n_main.ravel()),
                             np.repeat(pulse_grid.ravel(), n_bg.ravel())])
    n_m, n_b = int(n_main.sum()), int(n_bg.sum())
    is_bg = np.concatenate([np.zeros(n_m, bool), np.ones(n_b, bool)])
    pol_h = np.concatenate([np.ones(n_m, bool), rng.random(n_b) < 0.5])
    offsets = rng.exponential(params.decay_time_ps, size=n_m + n_b)
    order = np.lexsort((is_bg, pulses, periods))
    return EmissionBatch(periods[order], pulses[order], offsets[order], is_bg[order], pol_h[order])


def sample_pulse_pair(params: SourceParams, rng: np.random.Generator) -> list[EmissionEvent]:
    """Photons from one repetition period with two excitations ``excitation_delay`` apart."""
    batch = sample_emissions(params, 1, rng, n_pulses=2)
    delay = params.excitation_delay_ns
    return [EmissionEvent(int(p), float(p * delay + off * 1e-3), bool(bg), "H" if h else "V")
            for p, off, bg, h in zip(batch.pulse, batch.offset_ps, batch.background, batch.polarization_h)]


def mean_photons_per_pulse(params: SourceParams, samples: Sequence[Sequence[EmissionEvent]]) -> float:
    n = sum(1 for period in samples for ev in period if not ev.is_background)
    return n / (2 * len(samples))
