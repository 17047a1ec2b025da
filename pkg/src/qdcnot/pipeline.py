"""End-to-end runs: truth table, Bell correlations and parameter sweeps.

Every run has an analytic engine (expected normalized areas) and a Monte
Carlo engine (simulated histograms, overlap-corrected and normalized).
Monte Carlo seeds are derived from the run seed plus a fixed key per
setting, so a result does not depend on which other settings were run.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

from qdcnot.analysis import (
    CorrelationSet,
    GateReport,
    TruthTable,
    bell_fidelity,
    bell_fidelity_err,
    estimate_M_from_fidelity,
    estimate_M_from_overlap,
    fidelity_vs_M,
    truth_table_overlap,
    truth_table_overlap_err,
)
from qdcnot.errors import ConfigError, NormalizationError, OutOfModelError
from qdcnot.experiment import (
    analytic_correlated_areas,
    normalized_zero_delay,
    pair_mode_rate,
    simulate_histograms,
)
from qdcnot.gate import LOGICAL_ORDER, AnalysisSetting, Basis, GateCircuit
from qdcnot.source import OverlapModel, SourceParams, brightness_in_bin, effective_overlap

Mode = Literal["analytic", "mc"]

BELL_PREPARATION = ("D", "H")
DIAGONAL_BASES = ((Basis.HV, Basis.HV), (Basis.DA, Basis.DA), (Basis.RL, Basis.RL))
ALL_BASES = tuple((a, b) for a in Basis for b in Basis)
SWEEP_VARIABLES = ("M", "time_bin", "g2", "brightness")
# sweep.csv name of the swept quantity
SWEEP_COLUMNS = {"M": "M_set", "time_bin": "time_bin_ps", "g2": "g2_zero", "brightness": "brightness_max"}

# first element of the Monte Carlo seed key, one per kind of run
_TRUTH_KEY, _BELL_KEY = 1, 2


@dataclass(frozen=True)
class MonteCarloSettings:
    n_periods: int = 1_000_000
    seed: int = 0
    window_periods: int = 5
    bin_width_ps: float = 10.0
    shard_periods: int = 250_000
    workers: int = 1


def _seed(mc: MonteCarloSettings, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(mc.seed, spawn_key=tuple(key))


def _mc_histograms(source, circuit, prep, bases, time_bin_ps, mc: MonteCarloSettings, seed):
    return simulate_histograms(source, circuit, prep, bases, mc.n_periods, seed,
                               time_bin_ps=time_bin_ps, window_periods=mc.window_periods,
                               bin_width_ps=mc.bin_width_ps, shard_periods=mc.shard_periods,
                               workers=mc.workers)


def analytic_zero_delay(source: SourceParams, circuit: GateCircuit, prep: Sequence,
                        analysis: AnalysisSetting, overlap: float) -> float:
    """Expected zero-delay area in units of the input pair-mode rate.

    Background photons and detection efficiency enter exactly as in the
    Monte Carlo engine; with neither, this is the post-selected probability.
    """
    return float(analytic_correlated_areas(source, circuit, prep, analysis, overlap)[2]
                 / pair_mode_rate(source))


def _zero_delay_grid(source, circuit, prep, bases, time_bin_ps, mode, mc, seed):
    """2x2 normalized zero-delay areas and errors indexed [control, target element]."""
    values, errors = np.zeros((2, 2)), np.zeros((2, 2))
    if mode == "analytic":
        overlap = effective_overlap(source, time_bin_ps)
        for ce in (0, 1):
            for te in (0, 1):
                setting = AnalysisSetting(bases[0], bases[1], ce, te)
                values[ce, te] = analytic_zero_delay(source, circuit, prep, setting, overlap)
        return values, errors
    hists = _mc_histograms(source, circuit, prep, bases, time_bin_ps, mc, seed)
    for (ce, te), h in hists.items():
        if h.pair_mode_factor is None:
            # dark setting: nothing reaches this detector pair on its own
            if h.peak_area(0, 0, time_bin_ps) > 0:
                raise NormalizationError(f"no reference for non-empty setting {h.meta['analysis']}")
            continue
        values[ce, te], errors[ce, te] = normalized_zero_delay(h, source, time_bin_ps)
    return values, errors


def _check_mode(mode: str, mc: MonteCarloSettings | None) -> None:
    if mode not in ("analytic", "mc"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "mc" and mc is None:
        raise ConfigError("Monte Carlo mode needs MonteCarloSettings")


def truth_table(source: SourceParams, circuit: GateCircuit, time_bin_ps: float,
                mode: Mode = "analytic", mc: MonteCarloSettings | None = None,
                seed_key: int = 0) -> TruthTable:
    """Normalized coincidences for the four logical inputs, analysed in H/V."""
    _check_mode(mode, mc)
    values, errors = np.zeros((4, 4)), np.zeros((4, 4))
    for i, inp in enumerate(LOGICAL_ORDER):
        seed = _seed(mc, _TRUTH_KEY, seed_key, i) if mode == "mc" else None
        grid, err = _zero_delay_grid(source, circuit, (inp[0], inp[1]), (Basis.HV, Basis.HV),
                                     time_bin_ps, mode, mc, seed)
        for j, out in enumerate(LOGICAL_ORDER):
            ce, te = "HV".index(out[0]), "HV".index(out[1])
            values[i, j], errors[i, j] = grid[ce, te], err[ce, te]
    # overlap correction can leave tiny negative remainders; the table is non-negative
    return TruthTable(np.clip(values, 0.0, None), errors)


def bell_correlations(source: SourceParams, circuit: GateCircuit, time_bin_ps: float,
                      mode: Mode = "analytic", mc: MonteCarloSettings | None = None,
                      bases: Iterable[tuple[Basis, Basis]] = DIAGONAL_BASES,
                      prep: Sequence = BELL_PREPARATION,
                      seed_key: int = 0) -> dict[str, CorrelationSet]:
    """Zero-delay areas for each basis pair, keyed like ``"HV/DA"`` (control/target)."""
    _check_mode(mode, mc)
    out = {}
    for cb, tb in bases:
        cb, tb = Basis(cb), Basis(tb)
        index = ALL_BASES.index((cb, tb))
        seed = _seed(mc, _BELL_KEY, seed_key, index) if mode == "mc" else None
        values, errors = _zero_delay_grid(source, circuit, prep, (cb, tb), time_bin_ps, mode, mc, seed)
        out[f"{cb.value}/{tb.value}"] = CorrelationSet(np.clip(values, 0.0, None), errors)
    return out


def fidelity_from_correlations(corr: dict[str, CorrelationSet]) -> tuple[float, float]:
    """Bell fidelity and its error from the three same-basis correlation sets."""
    sets = [corr[f"{b}/{b}"] for b in ("HV", "DA", "RL")]
    es = [float(np.clip(s.E, -1.0, 1.0)) for s in sets]
    return bell_fidelity(*es), bell_fidelity_err(*(s.E_err for s in sets))


def gate_report(source: SourceParams, circuit: GateCircuit, time_bin_ps: float,
                mode: Mode = "analytic", mc: MonteCarloSettings | None = None,
                with_truth_table: bool = True, with_bell: bool = True) -> GateReport:
    """Figures of merit at one time bin.

    M is estimated from the fidelity when available, else from the overlap.
    """
    report = GateReport(brightness=brightness_in_bin(source, time_bin_ps))
    if with_truth_table:
        table = truth_table(source, circuit, time_bin_ps, mode, mc)
        report.truth_table = table
        report.overlap = truth_table_overlap(table)
        report.errors["truth_table"] = table.errors
        report.errors["overlap"] = truth_table_overlap_err(table)
    if with_bell:
        corr = bell_correlations(source, circuit, time_bin_ps, mode, mc)
        report.E_HV, report.E_DA, report.E_RL = (float(corr[f"{b}/{b}"].E) for b in ("HV", "DA", "RL"))
        report.fidelity, f_err = fidelity_from_correlations(corr)
        for b in ("HV", "DA", "RL"):
            report.errors[f"E_{b}"] = corr[f"{b}/{b}"].E_err
        report.errors["fidelity"] = f_err
    report.M_estimate = _estimate_M(report)
    return report


def _estimate_M(report: GateReport) -> float | None:
    try:
        if report.fidelity is not None:
            return estimate_M_from_fidelity(report.fidelity)
        if report.overlap is not None:
            return estimate_M_from_overlap(report.overlap)
    except OutOfModelError:
        return None
    return None


# ---------------------------------------------------------------- sweeps

def parse_range(text: str) -> np.ndarray:
    """``"start:stop:num"`` to an inclusive linear grid."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"range {text!r} is not start:stop:num")
    try:
        start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"range {text!r} is not numeric") from exc
    return sweep_grid(start, stop, num)


def sweep_grid(start: float, stop: float, num: int) -> np.ndarray:
    if num < 1 or not (math.isfinite(start) and math.isfinite(stop)):
        raise ConfigError("sweep range is empty")
    return np.linspace(start, stop, num)


def _swept_source(source: SourceParams, variable: str, value: float) -> SourceParams:
    if variable == "M":
        return dataclasses.replace(source, overlap=OverlapModel(constant=float(value)))
    if variable == "g2":
        return dataclasses.replace(source, g2_zero=float(value))
    if variable == "brightness":
        return dataclasses.replace(source, brightness_max=float(value))
    return source


def sweep(source: SourceParams, circuit: GateCircuit, variable: str, grid: Sequence[float],
          time_bin_ps: float, mode: Mode = "analytic",
          mc: MonteCarloSettings | None = None) -> tuple[list[str], list[list[float]]]:
    """Figures of merit along one swept parameter.

    ``time_bin`` sweeps the bin width; the others sweep a source parameter at
    ``time_bin_ps``. Monte Carlo columns are added in ``mc`` mode.
    """
    if variable not in SWEEP_VARIABLES:
        raise ConfigError(f"unknown sweep variable {variable!r}")
    _check_mode(mode, mc)
    if len(grid) == 0:
        raise ConfigError("sweep range is empty")
    header = [SWEEP_COLUMNS[variable], "M", "brightness", "overlap", "fidelity", "fidelity_ideal"]
    if mode == "mc":
        header += ["overlap_mc", "overlap_mc_err", "fidelity_mc", "fidelity_mc_err"]
    rows = []
    for idx, value in enumerate(grid):
        src = _swept_source(source, variable, value)
        t_bin = float(value) if variable == "time_bin" else time_bin_ps
        m = effective_overlap(src, t_bin)
        table = truth_table(src, circuit, t_bin)
        corr = bell_correlations(src, circuit, t_bin)
        row = [float(value), m, brightness_in_bin(src, t_bin), truth_table_overlap(table),
               fidelity_from_correlations(corr)[0], fidelity_vs_M(m)]
        if mode == "mc":
            table = truth_table(src, circuit, t_bin, "mc", mc, seed_key=idx)
            corr = bell_correlations(src, circuit, t_bin, "mc", mc, seed_key=idx)
            row += [truth_table_overlap(table), truth_table_overlap_err(table),
                    *fidelity_from_correlations(corr)]
        rows.append(row)
    return header, rows
