"""Figures of merit: truth-table overlap, polarization correlations, Bell fidelity, g2."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from qdcnot.errors import ContractError, NormalizationError, OutOfModelError, UndefinedQuantityError
from qdcnot.experiment import CorrelationHistogram

# correct CNOT output column for inputs HH, HV, VH, VV
CNOT_CORRECT = (0, 1, 3, 2)
IDEAL_CNOT_TABLE = np.eye(4)[list(CNOT_CORRECT)]


@dataclass
class TruthTable:
    """Coincidences normalized to the input pair mode; rows inputs, columns outputs."""

    values: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (4, 4):
            raise ContractError("truth table must be 4x4")
        if np.any(self.values < 0):
            raise ContractError("truth table entries must be non-negative")
        if self.errors is not None:
            self.errors = np.asarray(self.errors, dtype=float)


def truth_table_overlap(t: TruthTable | np.ndarray) -> float:
    """Probability of the correct output, averaged over the four inputs."""
    vals = t.values if isinstance(t, TruthTable) else np.asarray(t, dtype=float)
    sums = vals.sum(axis=1)
    if np.any(sums <= 0):
        raise UndefinedQuantityError("truth-table overlap undefined with an all-zero row")
    return float(np.mean(vals[np.arange(4), CNOT_CORRECT] / sums))


def truth_table_overlap_err(t: TruthTable) -> float:
    """First-order propagation of the entry errors through the row normalization."""
    if t.errors is None:
        return 0.0
    var = 0.0
    for row in range(4):
        s = t.values[row].sum()
        c = t.values[row, CNOT_CORRECT[row]]
        grad = -np.full(4, c / s**2)
        grad[CNOT_CORRECT[row]] = (s - c) / s**2
        var += float(np.sum(grad**2 * t.errors[row] ** 2))
    return math.sqrt(var) / 4.0


def overlap_vs_M(m: float) -> float:
    """Overlap of the ideal-optics table with partially distinguishable photons."""
    return 0.5 * (1.0 + 1.0 / (3.0 - 2.0 * m))


def estimate_M_from_overlap(overlap: float) -> float:
    if not 2.0 / 3.0 - 1e-12 <= overlap <= 1.0 + 1e-12:
        raise OutOfModelError(f"overlap {overlap} outside [2/3, 1]")
    return min(max(0.5 * (3.0 - 1.0 / (2.0 * overlap - 1.0)), 0.0), 1.0)


def correlation_E(A_aa: float, A_bb: float, A_ab: float, A_ba: float) -> float:
    total = A_aa + A_bb + A_ab + A_ba
    if total <= 0:
        raise UndefinedQuantityError("correlation undefined when all areas vanish")
    return (A_aa + A_bb - A_ab - A_ba) / total


@dataclass
class CorrelationSet:
    """Zero-delay areas for one basis pair, indexed [control element, target element]."""

    areas: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        self.areas = np.asarray(self.areas, dtype=float)
        if self.errors is None:
            # raw counts: Poisson
            self.errors = np.sqrt(np.clip(self.areas, 0.0, None))
        self.errors = np.asarray(self.errors, dtype=float)

    @property
    def E(self) -> float:
        a = self.areas
        return correlation_E(a[0, 0], a[1, 1], a[0, 1], a[1, 0])

    @property
    def E_err(self) -> float:
        a, s = self.areas, self.errors
        total = a.sum()
        e = self.E
        var = ((1 - e) ** 2 * (s[0, 0] ** 2 + s[1, 1] ** 2)
               + (1 + e) ** 2 * (s[0, 1] ** 2 + s[1, 0] ** 2)) / total**2
        return math.sqrt(var)


def bell_fidelity(E_hv: float, E_da: float, E_rl: float) -> float:
    """Fidelity with (|HH> + |VV>)/sqrt(2) from three correlation values."""
    for e in (E_hv, E_da, E_rl):
        if not -1.0 - 1e-9 <= e <= 1.0 + 1e-9:
            raise ContractError(f"correlation {e} outside [-1, 1]")
    return (1.0 + E_hv + E_da - E_rl) / 4.0


def bell_fidelity_err(err_hv: float, err_da: float, err_rl: float) -> float:
    return math.sqrt(err_hv**2 + err_da**2 + err_rl**2) / 4.0


def fidelity_vs_M(m: float) -> float:
    if not 0.0 <= m <= 1.0:
        raise ContractError(f"M = {m} outside [0, 1]")
    return (1.0 + m) / (2.0 * (2.0 - m))


def estimate_M_from_fidelity(f: float) -> float:
    """Inverse of :func:`fidelity_vs_M`; round-off at the ends is clamped."""
    if not 0.25 - 1e-12 <= f <= 1.0 + 1e-12:
        raise OutOfModelError(f"fidelity {f} outside [0.25, 1]")
    return min(max((4.0 * f - 1.0) / (2.0 * f + 1.0), 0.0), 1.0)


def bisect_crossing(fn: Callable[[float], float], level: float, lo: float = 0.0, hi: float = 1.0,
                    tol: float = 1e-12) -> float:
    """Point in [lo, hi] where an increasing ``fn`` crosses ``level``."""
    flo, fhi = fn(lo) - level, fn(hi) - level
    if flo * fhi > 0:
        raise ContractError("no crossing inside the bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if (fn(mid) - level) * flo > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def g2_with_error(h: CorrelationHistogram, width_ps: float | None = None,
                  min_side_peaks: int = 20) -> tuple[float, float]:
    """Zero-delay HBT peak over the mean side peak, with standard error.

    Side peaks are scaled by the number of period pairs that fed them.
    """
    width = width_ps if width_ps is not None else h.rep_period_ps / 2
    pmax = h.max_period_offset
    side = [p for p in range(-pmax, pmax + 1) if p != 0]
    if len(side) < min_side_peaks:
        raise NormalizationError(f"need {min_side_peaks} side peaks, histogram has {len(side)}")
    floor = h.floor_per_ps * width
    zero = h.peak_area(0, 0, width) - floor
    side_counts = np.array([h.peak_area(p, 0, width) - floor for p in side])
    mean_side = float(np.mean(side_counts / [h.period_pairs(p) for p in side]))
    if mean_side <= 0:
        raise NormalizationError("side peaks are empty")
    g2 = zero / h.n_periods / mean_side
    singles = sum(1.0 / n for n in (h.n_start, h.n_stop) if n > 0)
    rel_side = math.sqrt(1.0 / side_counts.sum() + singles)
    err_zero = math.sqrt(max(zero, 1.0)) / h.n_periods / mean_side
    return float(g2), float(math.hypot(err_zero, g2 * rel_side))


def g2_from_histogram(h: CorrelationHistogram, width_ps: float | None = None,
                      min_side_peaks: int = 20) -> float:
    return g2_with_error(h, width_ps, min_side_peaks)[0]


@dataclass
class GateReport:
    truth_table: TruthTable | None = None
    overlap: float | None = None
    E_HV: float | None = None
    E_DA: float | None = None
    E_RL: float | None = None
    fidelity: float | None = None
    brightness: float | None = None
    M_estimate: float | None = None
    errors: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        tt = None if self.truth_table is None else self.truth_table.values.tolist()
        errs = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in sorted(self.errors.items())}
        return {
            "truth_table": tt,
            "overlap": self.overlap,
            "E_HV": self.E_HV,
            "E_DA": self.E_DA,
            "E_RL": self.E_RL,
            "fidelity": self.fidelity,
            "brightness": self.brightness,
            "M_estimate": self.M_estimate,
            "errors": errs,
        }
