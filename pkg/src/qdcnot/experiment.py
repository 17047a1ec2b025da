"""Coincidence-histogram experiment: delay-line input, Monte Carlo and analytic peak areas.

Each repetition period the source is excited twice, ``excitation_delay``
apart. A 50/50 fiber splitter sends each photon to the control input
(short arm) or to the target input through an extra ``excitation_delay``
(long arm). Arrival slots are therefore 0, 1 or 2 delays after the first
excitation, and only the (first photon long, second photon short) path
brings two photons to the gate together.

Delays are measured as ``t_stop - t_start`` where the start detector sits on
the control output and the stop detector on the target output.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from qdcnot.errors import ContractError, NormalizationError, UnsupportedConfigurationError
from qdcnot.fock import ModeUnitary, PhotonicState, gram_from_overlap, output_distribution
from qdcnot.gate import (
    C_H,
    N_MODES,
    PREPARATION,
    T_H,
    AnalysisSetting,
    Basis,
    GateCircuit,
    WaveplateSetting,
    jones_of,
)
from qdcnot.source import SourceParams, effective_overlap, sample_emissions

K_VALUES = (-2, -1, 0, 1, 2)
SHORT, LONG = "short", "long"


# ---------------------------------------------------------------- paths

@dataclass(frozen=True)
class PathConfig:
    """Arm choice for the two photons of one period."""

    arms: tuple[str, str]

    @property
    def slots(self) -> tuple[int, int]:
        return tuple(pulse + (arm == LONG) for pulse, arm in enumerate(self.arms))

    @property
    def rails(self) -> tuple[str, str]:
        return tuple("control" if arm == SHORT else "target" for arm in self.arms)

    @property
    def overlapping(self) -> bool:
        return self.slots[0] == self.slots[1]


def path_configs() -> list[PathConfig]:
    return [PathConfig((a, b)) for a in (SHORT, LONG) for b in (SHORT, LONG)]


def enumerate_delays(excitation_delay: float) -> list[tuple[float, float]]:
    """Relative delays between the two photons of a pair and their probabilities.

    Arm choices are equiprobable; the sign of a nonzero delay depends on
    which photon hits which detector, so each is split evenly between +/-.
    """
    if excitation_delay <= 0:
        raise ContractError("excitation delay must be positive")
    probs: dict[int, float] = {}
    for cfg in path_configs():
        d = cfg.slots[1] - cfg.slots[0]
        for s in ({0} if d == 0 else {d, -d}):
            probs[s] = probs.get(s, 0.0) + 0.25 / (1 if d == 0 else 2)
    return [(k * excitation_delay, probs[k]) for k in sorted(probs)]


@dataclass(frozen=True)
class TimeBinSpec:
    width_ps: float
    excitation_delay_ps: float = 2300.0

    def __post_init__(self):
        if not 0.0 < self.width_ps <= self.excitation_delay_ps:
            raise ContractError("time bin width must lie in (0, excitation delay]")

    @property
    def centers(self) -> tuple[float, ...]:
        return tuple(k * self.excitation_delay_ps for k in K_VALUES)


# ---------------------------------------------------------------- histogram

@dataclass
class CorrelationHistogram:
    """Start-stop delay histogram accumulated over independent shards of periods."""

    bin_width_ps: float
    half_range_ps: float
    counts: np.ndarray
    rep_period_ps: float
    excitation_delay_ps: float
    shard_sizes: tuple[int, ...]
    k_values: tuple[int, ...] = K_VALUES
    n_start: int = 0
    n_stop: int = 0
    floor_per_ps: float = 0.0
    pair_mode_factor: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_periods(self) -> int:
        return int(sum(self.shard_sizes))

    @property
    def edges(self) -> np.ndarray:
        return -self.half_range_ps + self.bin_width_ps * np.arange(len(self.counts) + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    @property
    def max_period_offset(self) -> int:
        kmax = max(abs(k) for k in self.k_values)
        return int((self.half_range_ps - kmax * self.excitation_delay_ps) // self.rep_period_ps)

    def period_pairs(self, p: int) -> int:
        """Number of (period, period + p) pairs that fed the histogram."""
        return int(sum(max(n - abs(p), 0) for n in self.shard_sizes))

    def peak_position(self, p: int, k: int) -> float:
        return p * self.rep_period_ps + k * self.excitation_delay_ps

    def window_area(self, lo: float, hi: float) -> float:
        """Counts in [lo, hi], splitting partially covered bins linearly."""
        cum = np.concatenate([[0.0], np.cumsum(self.counts, dtype=float)])
        a, b = np.interp([lo, hi], self.edges, cum)
        return float(b - a)

    def peak_area(self, p: int, k: int, width_ps: float) -> float:
        c = self.peak_position(p, k)
        return self.window_area(c - width_ps / 2, c + width_ps / 2)

    def peak_keys(self) -> list[tuple[int, int]]:
        pmax = self.max_period_offset
        return [(p, k) for p in range(-pmax, pmax + 1) for k in self.k_values]

    def merge(self, other: "CorrelationHistogram") -> "CorrelationHistogram":
        if (self.bin_width_ps, self.half_range_ps, len(self.counts)) != (
                other.bin_width_ps, other.half_range_ps, len(other.counts)):
            raise ContractError("cannot merge histograms with different binning")
        return replace(self, counts=self.counts + other.counts,
                       shard_sizes=tuple(sorted(self.shard_sizes + other.shard_sizes)),
                       n_start=self.n_start + other.n_start, n_stop=self.n_stop + other.n_stop,
                       floor_per_ps=self.floor_per_ps + other.floor_per_ps)

    __add__ = merge

    def mirrored(self) -> "CorrelationHistogram":
        """The histogram with start and stop detectors exchanged."""
        return replace(self, counts=self.counts[::-1].copy(), n_start=self.n_stop, n_stop=self.n_start)

    def to_csv(self, path: str | Path) -> None:
        lines = ["bin_center_ps,counts"]
        lines += [f"{c:.3f},{int(n)}" for c, n in zip(self.centers, self.counts)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def cross_correlate(starts: np.ndarray, stops: np.ndarray, half_range_ps: float,
                    bin_width_ps: float, chunk_pairs: int = 4_000_000) -> np.ndarray:
    """Histogram of all ``stop - start`` differences within +/- half_range.

    Both inputs must be sorted.
    """
    n_bins = int(round(2 * half_range_ps / bin_width_ps))
    counts = np.zeros(n_bins, dtype=np.int64)
    if len(starts) == 0 or len(stops) == 0:
        return counts
    lo = np.searchsorted(stops, starts - half_range_ps, side="left")
    hi = np.searchsorted(stops, starts + half_range_ps, side="left")
    per = hi - lo
    cum = np.cumsum(per)
    i = 0
    while i < len(starts):
        base = cum[i - 1] if i else 0
        j = int(np.searchsorted(cum, base + chunk_pairs, side="right"))
        j = max(j, i + 1)
        n = per[i:j]
        total = int(n.sum())
        if total:
            rep_start = np.repeat(starts[i:j], n)
            first = np.repeat(lo[i:j] - (np.cumsum(n) - n), n)
            idx = first + np.arange(total)
            b = np.floor((stops[idx] - rep_start + half_range_ps) / bin_width_ps).astype(np.int64)
            b = b[(b >= 0) & (b < n_bins)]
            counts += np.bincount(b, minlength=n_bins)
        i = j
    return counts


# ---------------------------------------------------------------- gate geometry

def _prep_vector(prep: WaveplateSetting | str) -> np.ndarray:
    wp = PREPARATION[prep] if isinstance(prep, str) else prep
    return jones_of(wp) @ np.array([1.0, 0.0], dtype=complex)


def _input_vectors(prep: Sequence) -> tuple[np.ndarray, np.ndarray]:
    vc = np.zeros(N_MODES, dtype=complex)
    vt = np.zeros(N_MODES, dtype=complex)
    vc[C_H:C_H + 2] = _prep_vector(prep[0])
    vt[T_H:T_H + 2] = _prep_vector(prep[1])
    return vc, vt


def _analysis_unitary(circuit: GateCircuit, bases: tuple[Basis, Basis]) -> np.ndarray:
    return circuit.with_analysis(AnalysisSetting(bases[0], bases[1])).matrix


def single_photon_outputs(circuit: GateCircuit, prep: Sequence, bases: tuple[Basis, Basis]):
    """Output-mode probabilities for a lone photon entering the control or target rail."""
    u = _analysis_unitary(circuit, bases)
    vc, vt = _input_vectors(prep)
    return np.abs(u @ vc) ** 2, np.abs(u @ vt) ** 2


def pair_outcomes(circuit: GateCircuit, prep: Sequence, bases: tuple[Basis, Basis],
                  overlap: float) -> tuple[np.ndarray, np.ndarray]:
    """Joint output modes (n, 2) and probabilities for the overlapping photon pair."""
    u = ModeUnitary(_analysis_unitary(circuit, bases))
    vc, vt = _input_vectors(prep)
    state = PhotonicState.product([(vc, 0), (vt, 1)], N_MODES)
    dist = output_distribution(state, u, gram_from_overlap(overlap))
    modes, probs = [], []
    for occ, p in sorted(dist.items()):
        modes.append([m for m, n in enumerate(occ) for _ in range(n)])
        probs.append(p)
    probs = np.clip(np.array(probs), 0.0, None)
    return np.array(modes, dtype=np.int64), probs / probs.sum()


def _bases_of(analysis: AnalysisSetting) -> tuple[Basis, Basis]:
    return (analysis.control_basis, analysis.target_basis)


# ---------------------------------------------------------------- analytic areas

def _gate_photons(source: SourceParams) -> list[tuple[int, float, bool]]:
    """(pulse, presence probability, is_main) for photons reaching the gate."""
    if source.photon_statistics != "single":
        raise UnsupportedConfigurationError("the gate experiment needs a single-photon source")
    b = source.brightness_max
    # randomly polarized background passes the preparation polarizer half the time
    p = source.background_probability / 2.0
    return [(0, b, True), (1, b, True), (0, p, False), (1, p, False)]


def _click_probs(source: SourceParams, circuit, prep, analysis: AnalysisSetting):
    q_c, q_t = single_photon_outputs(circuit, prep, _bases_of(analysis))
    start, stop = analysis.detector_modes
    eta = source.detection_efficiency
    x = {"control": eta * q_c[start], "target": eta * q_t[start]}
    y = {"control": eta * q_c[stop], "target": eta * q_t[stop]}
    return x, y


def analytic_uncorrelated_areas(source: SourceParams, circuit: GateCircuit, prep: Sequence,
                                analysis: AnalysisSetting) -> np.ndarray:
    """Expected full peak areas per period pair for p != 0, indexed k = -2..2.

    Photons of different periods never interfere, so each peak is a product
    of mean start clicks in one slot and mean stop clicks in another.
    """
    x, y = _click_probs(source, circuit, prep, analysis)
    start = np.zeros(3)
    stop = np.zeros(3)
    for pulse, prob, _ in _gate_photons(source):
        for arm in (SHORT, LONG):
            rail = "control" if arm == SHORT else "target"
            slot = pulse + (arm == LONG)
            start[slot] += 0.5 * prob * x[rail]
            stop[slot] += 0.5 * prob * y[rail]
    areas = np.zeros(5)
    for s in range(3):
        for s2 in range(3):
            areas[s2 - s + 2] += start[s] * stop[s2]
    return areas


def analytic_correlated_areas(source: SourceParams, circuit: GateCircuit, prep: Sequence,
                              analysis: AnalysisSetting, overlap: float) -> np.ndarray:
    """Expected full peak areas per period for p = 0, indexed k = -2..2."""
    x, y = _click_probs(source, circuit, prep, analysis)
    photons = _gate_photons(source)
    start_mode, stop_mode = analysis.detector_modes
    modes, probs = pair_outcomes(circuit, prep, _bases_of(analysis), overlap)
    p_split = float(sum(p for (m1, m2), p in zip(modes, probs)
                        if {m1, m2} == {start_mode, stop_mode}))
    eta2 = source.detection_efficiency ** 2
    areas = np.zeros(5)
    for i in range(len(photons)):
        for j in range(i + 1, len(photons)):
            (pa, wa, main_a), (pb, wb, main_b) = photons[i], photons[j]
            w = wa * wb * 0.25
            for arm_a in (SHORT, LONG):
                for arm_b in (SHORT, LONG):
                    ra = "control" if arm_a == SHORT else "target"
                    rb = "control" if arm_b == SHORT else "target"
                    sa, sb = pa + (arm_a == LONG), pb + (arm_b == LONG)
                    if main_a and main_b and sa == sb and ra != rb:
                        areas[2] += w * eta2 * p_split
                        continue
                    areas[sb - sa + 2] += w * x[ra] * y[rb]
                    areas[sa - sb + 2] += w * x[rb] * y[ra]
    return areas


def pair_mode_rate(source: SourceParams) -> float:
    """Probability per period that one photon enters each gate input together."""
    return source.brightness_max ** 2 / 4.0


def pair_mode_factor(source: SourceParams, circuit: GateCircuit, prep: Sequence,
                     analysis: AnalysisSetting) -> float:
    """Input pair-mode rate over the expected central uncorrelated peak area."""
    central = analytic_uncorrelated_areas(source, circuit, prep, analysis)[2]
    rate = pair_mode_rate(source)
    # round-off leaves ~1e-33 where the setting is dark; treat that as no signal
    if central <= 1e-12 * rate:
        raise NormalizationError("no central uncorrelated signal for this setting")
    return rate / central


# ---------------------------------------------------------------- Monte Carlo

@dataclass(frozen=True)
class _GateSetup:
    source: SourceParams
    q_control: np.ndarray
    q_target: np.ndarray
    pair_modes: np.ndarray
    pair_probs: np.ndarray
    detector_pairs: tuple[tuple[int, int], ...]
    half_range_ps: float
    bin_width_ps: float


def _sample_modes(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs)
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(probs) - 1)


def _simulate_gate_shard(setup: _GateSetup, n_periods: int, seed: np.random.SeedSequence):
    src = setup.source
    rng = np.random.default_rng(seed)
    T, delay = src.rep_period_ps, src.excitation_delay_ps
    em = sample_emissions(src, n_periods, rng, n_pulses=2)
    long_arm = rng.random(len(em)) < 0.5
    keep = ~em.background | em.polarization_h

    # overlapping main pair: pulse-0 photon on the long arm, pulse-1 photon on the short arm
    main_idx = np.full((n_periods, 2), -1, dtype=np.int64)
    main = np.flatnonzero(~em.background)
    main_idx[em.period[main], em.pulse[main]] = main
    both = (main_idx[:, 0] >= 0) & (main_idx[:, 1] >= 0)
    i0, i1 = main_idx[both, 0], main_idx[both, 1]
    meet = long_arm[i0] & ~long_arm[i1]
    i0, i1 = i0[meet], i1[meet]

    modes = np.full(len(em), -1, dtype=np.int64)
    u = rng.random(len(em))
    alone = keep.copy()
    alone[i0] = False
    alone[i1] = False
    to_target = alone & long_arm
    to_control = alone & ~long_arm
    modes[to_control] = _sample_modes(setup.q_control, u[to_control])
    modes[to_target] = _sample_modes(setup.q_target, u[to_target])
    outcome = _sample_modes(setup.pair_probs, rng.random(len(i0)))
    swap = rng.random(len(i0)) < 0.5
    pm = setup.pair_modes[outcome]
    modes[i0] = np.where(swap, pm[:, 1], pm[:, 0])
    modes[i1] = np.where(swap, pm[:, 0], pm[:, 1])

    slot = em.pulse + long_arm
    times = em.period * T + slot * delay + em.offset_ps
    times = times + rng.normal(0.0, src.jitter_sigma_ps, len(em)) if src.jitter_sigma_ps > 0 else times
    detected = rng.random(len(em)) < src.detection_efficiency
    modes[~detected] = -1

    duration = n_periods * T
    dark_rate = src.dark_rate_per_ps
    darks = []
    for _ in range(2):  # control-rail detector, target-rail detector
        n_dark = rng.poisson(dark_rate * duration) if dark_rate > 0 else 0
        darks.append(rng.uniform(0.0, duration, n_dark))

    out = {}
    for start_mode, stop_mode in setup.detector_pairs:
        starts = np.sort(np.concatenate([times[modes == start_mode], darks[0]]))
        stops = np.sort(np.concatenate([times[modes == stop_mode], darks[1]]))
        counts = cross_correlate(starts, stops, setup.half_range_ps, setup.bin_width_ps)
        floor = dark_rate * (len(stops) + len(starts)) - dark_rate ** 2 * duration
        out[(start_mode, stop_mode)] = (counts, len(starts), len(stops), floor)
    return out


def _as_seed_sequence(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(2**63)))
    return np.random.SeedSequence(int(rng))


def _shards(n_periods: int, shard_periods: int) -> list[int]:
    if n_periods < 1:
        raise ContractError("n_periods must be at least 1")
    full, rest = divmod(n_periods, shard_periods)
    return [shard_periods] * full + ([rest] if rest else [])


def _run_shards(fn, setup, sizes, seeds, workers: int):
    if workers > 1 and len(sizes) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, [setup] * len(sizes), sizes, seeds))
    return [fn(setup, n, s) for n, s in zip(sizes, seeds)]


def _half_range(window_periods: int, rep_period_ps: float, bin_width_ps: float) -> float:
    n_bins = int(math.ceil((2 * window_periods + 1) * rep_period_ps / bin_width_ps))
    return n_bins * bin_width_ps / 2


def simulate_histograms(source: SourceParams, circuit: GateCircuit, prep: Sequence,
                        bases: tuple[Basis | str, Basis | str], n_periods: int, rng=0,
                        time_bin_ps: float = 1000.0, window_periods: int = 5,
                        bin_width_ps: float = 10.0, shard_periods: int = 250_000,
                        workers: int = 1) -> dict[tuple[int, int], CorrelationHistogram]:
    """Histograms for all four projector pairs of one basis pair, from one photon record.

    Keys are (control element, target element). The overlapping pair
    interferes with M = effective_overlap(source, time_bin_ps); all other
    photons route independently. Deterministic for a fixed seed and shard size.
    """
    bases = (Basis(bases[0]), Basis(bases[1]))
    overlap = effective_overlap(source, time_bin_ps)
    q_c, q_t = single_photon_outputs(circuit, prep, bases)
    pm, pp = pair_outcomes(circuit, prep, bases, overlap)
    if source.photon_statistics != "single":
        raise UnsupportedConfigurationError("the gate experiment needs a single-photon source")
    elements = [(ce, te) for ce in (0, 1) for te in (0, 1)]
    pairs = tuple((C_H + ce, T_H + te) for ce, te in elements)
    half = _half_range(window_periods, source.rep_period_ps, bin_width_ps)
    setup = _GateSetup(source, q_c, q_t, pm, pp, pairs, half, bin_width_ps)
    sizes = _shards(n_periods, shard_periods)
    seeds = _as_seed_sequence(rng).spawn(len(sizes))
    results = _run_shards(_simulate_gate_shard, setup, sizes, seeds, workers)

    hists = {}
    for (ce, te), det in zip(elements, pairs):
        analysis = AnalysisSetting(bases[0], bases[1], ce, te)
        try:
            factor = pair_mode_factor(source, circuit, prep, analysis)
        except NormalizationError:
            factor = None
        hists[(ce, te)] = CorrelationHistogram(
            bin_width_ps=bin_width_ps, half_range_ps=half,
            counts=sum(r[det][0] for r in results),
            rep_period_ps=source.rep_period_ps, excitation_delay_ps=source.excitation_delay_ps,
            shard_sizes=tuple(sorted(sizes)),
            n_start=int(sum(r[det][1] for r in results)), n_stop=int(sum(r[det][2] for r in results)),
            floor_per_ps=float(sum(r[det][3] for r in results)),
            pair_mode_factor=factor,
            meta={"overlap": overlap, "analysis": analysis.label, "time_bin_ps": time_bin_ps},
        )
    return hists


def simulate_histogram(source: SourceParams, circuit: GateCircuit, prep: Sequence,
                       analysis: AnalysisSetting, n_periods: int, rng=0, **kwargs) -> CorrelationHistogram:
    hists = simulate_histograms(source, circuit, prep, _bases_of(analysis), n_periods, rng, **kwargs)
    return hists[(analysis.control_element, analysis.target_element)]


@dataclass(frozen=True)
class _HbtSetup:
    source: SourceParams
    half_range_ps: float
    bin_width_ps: float


def _simulate_hbt_shard(setup: _HbtSetup, n_periods: int, seed: np.random.SeedSequence):
    src = setup.source
    rng = np.random.default_rng(seed)
    em = sample_emissions(src, n_periods, rng, n_pulses=1)
    times = em.period * src.rep_period_ps + em.offset_ps
    if src.jitter_sigma_ps > 0:
        times = times + rng.normal(0.0, src.jitter_sigma_ps, len(em))
    arm = rng.random(len(em)) < 0.5
    detected = rng.random(len(em)) < src.detection_efficiency
    duration = n_periods * src.rep_period_ps
    rate = src.dark_rate_per_ps
    dark = [rng.uniform(0.0, duration, rng.poisson(rate * duration) if rate > 0 else 0) for _ in range(2)]
    starts = np.sort(np.concatenate([times[detected & ~arm], dark[0]]))
    stops = np.sort(np.concatenate([times[detected & arm], dark[1]]))
    counts = cross_correlate(starts, stops, setup.half_range_ps, setup.bin_width_ps)
    floor = rate * (len(starts) + len(stops)) - rate ** 2 * duration
    return counts, len(starts), len(stops), floor


def simulate_hbt(source: SourceParams, n_periods: int, rng=0, window_periods: int = 12,
                 bin_width_ps: float = 20.0, shard_periods: int = 1_000_000,
                 workers: int = 1) -> CorrelationHistogram:
    """Autocorrelation of the bare source: one excitation per period, 50/50 split, two detectors."""
    half = _half_range(window_periods, source.rep_period_ps, bin_width_ps)
    setup = _HbtSetup(source, half, bin_width_ps)
    sizes = _shards(n_periods, shard_periods)
    seeds = _as_seed_sequence(rng).spawn(len(sizes))
    results = _run_shards(_simulate_hbt_shard, setup, sizes, seeds, workers)
    return CorrelationHistogram(
        bin_width_ps=bin_width_ps, half_range_ps=half, counts=sum(r[0] for r in results),
        rep_period_ps=source.rep_period_ps, excitation_delay_ps=source.excitation_delay_ps,
        shard_sizes=tuple(sorted(sizes)), k_values=(0,),
        n_start=int(sum(r[1] for r in results)), n_stop=int(sum(r[2] for r in results)),
        floor_per_ps=float(sum(r[3] for r in results)), meta={"kind": "hbt"},
    )


# ---------------------------------------------------------------- peak areas

@dataclass
class PeakAreas:
    """Areas and Poisson variances keyed by (period offset p, delay index k)."""

    width_ps: float
    areas: dict[tuple[int, int], float]
    variances: dict[tuple[int, int], float]
    histogram: CorrelationHistogram = field(repr=False)
    corrected: bool = False

    def uncorrelated_keys(self, k: int) -> list[tuple[int, int]]:
        return [key for key in self.areas if key[1] == k and key[0] != 0]

    def uncorrelated_mean(self, k: int) -> tuple[float, float]:
        """Mean p != 0 area per period pair and its standard error.

        All offsets reuse the same clicks, so singles-count fluctuations add a
        common relative variance 1/n_start + 1/n_stop on top of Poisson noise.
        """
        h = self.histogram
        keys = self.uncorrelated_keys(k)
        if not keys:
            raise NormalizationError("no uncorrelated peaks in range")
        vals = [self.areas[key] / h.period_pairs(key[0]) for key in keys]
        var = float(np.sum([self.variances[key] / h.period_pairs(key[0]) ** 2 for key in keys])) / len(keys) ** 2
        mean = float(np.mean(vals))
        singles = sum(1.0 / n for n in (h.n_start, h.n_stop) if n > 0)
        return mean, math.sqrt(var + mean ** 2 * singles)


def measure_peak_areas(h: CorrelationHistogram, bin: TimeBinSpec) -> PeakAreas:
    """Raw counts inside a window of ``bin.width_ps`` centered on every nominal peak."""
    areas = {key: h.peak_area(*key, bin.width_ps) for key in h.peak_keys()}
    return PeakAreas(bin.width_ps, areas, {k: max(v, 0.0) for k, v in areas.items()}, h)


def peak_shape_cdf(x, tau_ps: float, sigma_ps: float = 0.0):
    """CDF of a coincidence peak: difference of two exponential delays, blurred by jitter.

    ``sigma_ps`` is the width of the delay-difference jitter (sqrt(2) times
    the single-detector value).
    """
    x = np.asarray(x, dtype=float)
    if tau_ps <= 0 and sigma_ps <= 0:
        return (x >= 0).astype(float)
    if tau_ps <= 0:
        return stats.norm.cdf(x, scale=sigma_ps)
    if sigma_ps <= 0:
        return stats.laplace.cdf(x, scale=tau_ps)
    k = tau_ps / sigma_ps
    return 0.5 * stats.exponnorm.cdf(x, k, scale=sigma_ps) + 0.5 * stats.exponnorm.sf(-x, k, scale=sigma_ps)


def tail_fraction(excitation_delay_ps: float, tau_ps: float) -> float:
    """Share of an exponential wavepacket emitted later than one excitation delay."""
    if tau_ps <= 0:
        return 0.0
    return math.exp(-excitation_delay_ps / tau_ps)


def leakage_matrix(positions: Sequence[float], width_ps: float, tau_ps: float,
                   sigma_ps: float = 0.0) -> np.ndarray:
    """K[i, j]: fraction of peak j's area that falls in the window around peak i."""
    pos = np.asarray(positions, dtype=float)
    d = pos[:, None] - pos[None, :]
    return peak_shape_cdf(d + width_ps / 2, tau_ps, sigma_ps) - peak_shape_cdf(d - width_ps / 2, tau_ps, sigma_ps)


def overlap_correction(h: CorrelationHistogram, tau_ps: float, bin: TimeBinSpec,
                       jitter_sigma_ps: float = 0.0) -> PeakAreas:
    """Full peak areas with neighbouring-peak tails removed.

    Solves the linear system window_area = K @ true_area over all peaks in
    range. Peaks just outside the range are taken equal to the outermost
    uncorrelated set, which is exact in expectation. Areas are clamped at 0.
    ``jitter_sigma_ps`` is the single-detector timing jitter.
    """
    if tau_ps < 0:
        raise ContractError("decay time must be non-negative")
    raw = measure_peak_areas(h, bin)
    keys = h.peak_keys()
    pmax = h.max_period_offset
    floor = h.floor_per_ps * bin.width_ps
    measured = np.array([raw.areas[k] - floor for k in keys])
    sigma_pair = math.sqrt(2.0) * jitter_sigma_ps

    outer = [(p, k) for p in (-pmax - 1, pmax + 1) for k in h.k_values]
    all_pos = [h.peak_position(*k) for k in keys + outer]
    full = leakage_matrix(all_pos, bin.width_ps, tau_ps, sigma_pair)
    n = len(keys)
    index = {k: i for i, k in enumerate(keys)}
    kmat = full[:n, :n].copy()
    for j, (p, k) in enumerate(outer):
        twin = index[(int(np.sign(p)) * pmax, k)]
        kmat[:, twin] += full[:n, n + j]

    kinv = np.linalg.inv(kmat)
    true = kinv @ measured
    var = (kinv ** 2) @ np.array([raw.variances[k] for k in keys])
    return PeakAreas(bin.width_ps,
                     {k: max(float(a), 0.0) for k, a in zip(keys, true)},
                     {k: float(v) for k, v in zip(keys, var)}, h, corrected=True)


@dataclass
class NormalizedAreas:
    """Correlated (p = 0) areas in units of the input pair-mode rate."""

    correlated: dict[int, float]
    correlated_err: dict[int, float]
    uncorrelated: dict[int, float]
    uncorrelated_err: dict[int, float]
    reference: float
    n_reference: int


def normalize(areas: PeakAreas, pair_mode_factor: float | None = None,
              min_reference_peaks: int = 10) -> NormalizedAreas:
    """Divide by the mean central uncorrelated area rescaled to the input pair mode.

    ``pair_mode_factor`` defaults to the one stored on the histogram.
    """
    h = areas.histogram
    factor = h.pair_mode_factor if pair_mode_factor is None else pair_mode_factor
    if factor is None:
        raise NormalizationError("no pair-mode factor available for this setting")
    n_ref = len(areas.uncorrelated_keys(0))
    if n_ref < min_reference_peaks:
        raise NormalizationError(f"need {min_reference_peaks} uncorrelated central peaks, have {n_ref}")
    mean_ref, ref_err = areas.uncorrelated_mean(0)
    if mean_ref <= 0.0:
        raise NormalizationError("uncorrelated reference peaks are empty")
    ref = mean_ref * factor
    ref_rel_var = (ref_err / mean_ref) ** 2

    corr, corr_err, unc, unc_err = {}, {}, {}, {}
    for k in h.k_values:
        v = areas.areas[(0, k)] / h.n_periods / ref
        corr[k] = v
        corr_err[k] = math.sqrt(areas.variances[(0, k)] / h.n_periods ** 2 / ref ** 2 + v ** 2 * ref_rel_var)
        m, e = areas.uncorrelated_mean(k)
        unc[k], unc_err[k] = m / ref, e / ref
    return NormalizedAreas(corr, corr_err, unc, unc_err, ref, n_ref)


def normalized_zero_delay(h: CorrelationHistogram, source: SourceParams,
                          time_bin_ps: float) -> tuple[float, float]:
    """Overlap-corrected, normalized zero-delay area and its standard error."""
    bin = TimeBinSpec(time_bin_ps, source.excitation_delay_ps)
    areas = overlap_correction(h, source.decay_time_ps, bin, source.jitter_sigma_ps)
    norm = normalize(areas)
    return norm.correlated[0], norm.correlated_err[0]
