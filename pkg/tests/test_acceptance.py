"""Acceptance suite: one test per criterion, summarized as PASS/FAIL lines at the end of the run."""
import json
import math
import time

import numpy as np
import pytest

from oracles import fock_amplitudes
from qdcnot.analysis import (
    bisect_crossing,
    fidelity_vs_M,
    g2_with_error,
    overlap_vs_M,
    truth_table_overlap,
    truth_table_overlap_err,
)
from qdcnot.cli import main
from qdcnot.experiment import (
    K_VALUES,
    CorrelationHistogram,
    TimeBinSpec,
    analytic_uncorrelated_areas,
    measure_peak_areas,
    normalized_zero_delay,
    overlap_correction,
    peak_shape_cdf,
    simulate_histogram,
    simulate_hbt,
    tail_fraction,
)
from qdcnot.fock import post_selected_map
from qdcnot.gate import AnalysisSetting, build_cnot, coincidence_table
from qdcnot.pipeline import MonteCarloSettings, bell_correlations, fidelity_from_correlations, truth_table
from qdcnot.source import OverlapModel, SourceParams, brightness_in_bin

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
VH = AnalysisSetting.from_labels("V", "H")


def closed_form_table(m):
    t = np.zeros((4, 4))
    t[0, 0] = t[1, 1] = t[2, 3] = t[3, 2] = 1 / 9
    t[2, 2] = t[3, 3] = 2 / 9 * (1 - m)
    return t


def detail(record_property, text):
    record_property("detail", text)


@pytest.mark.criterion(1, "coincidence table closed form")
def test_criterion_01_coincidence_table(record_property):
    start = time.perf_counter()
    circuit = build_cnot()
    worst = 0.0
    for m in (0.0, 0.25, 0.5, 0.75, 1.0):
        worst = max(worst, float(np.max(np.abs(coincidence_table(circuit, m) - closed_form_table(m)))))
    elapsed = time.perf_counter() - start
    detail(record_property, f"max deviation {worst:.1e}, {elapsed:.2f} s")
    assert worst <= 1e-12
    assert elapsed < 1.0


@pytest.mark.criterion(2, "ideal gate equals CNOT/3")
def test_criterion_02_ideal_map(record_property):
    start = time.perf_counter()
    u = build_cnot().unitary
    m = post_selected_map(u)
    phase = m[0, 0] / abs(m[0, 0])
    dev = float(np.max(np.abs(m / phase - CNOT / 3)))
    success = [float(np.sum(np.abs(m[:, j]) ** 2)) for j in range(4)]
    # independent expansion over every two-photon path
    rails = ((0, 1), (2, 3))
    brute = np.zeros((4, 4))
    for col, (c, t) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        amps = fock_amplitudes(u.matrix, [rails[0][c], rails[1][t]])
        for row, (co, to) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            occ = [0] * 6
            occ[rails[0][co]] += 1
            occ[rails[1][to]] += 1
            brute[row, col] = abs(amps.get(tuple(occ), 0.0)) ** 2
    brute_dev = float(np.max(np.abs(brute - np.abs(m) ** 2)))
    elapsed = time.perf_counter() - start
    detail(record_property, f"|map - CNOT/3| {dev:.1e}, success {success[0]:.12f}, "
                            f"path oracle {brute_dev:.1e}, {elapsed:.2f} s")
    assert dev <= 1e-12
    assert all(abs(s - 1 / 9) <= 1e-12 for s in success)
    assert brute_dev <= 1e-12
    assert elapsed < 1.0


@pytest.mark.criterion(3, "Bell fidelity curve")
def test_criterion_03_fidelity_curve(record_property):
    start = time.perf_counter()
    circuit = build_cnot()
    grid = np.linspace(0.0, 1.0, 101)
    got = []
    for m in grid:
        src = SourceParams(overlap=OverlapModel(float(m)))
        got.append(fidelity_from_correlations(bell_correlations(src, circuit, 1000.0))[0])
    got = np.array(got)
    dev = float(np.max(np.abs(got - [(1 + m) / (2 * (2 - m)) for m in grid])))
    f076 = fidelity_from_correlations(
        bell_correlations(SourceParams(overlap=OverlapModel(0.76)), circuit, 400.0))[0]
    elapsed = time.perf_counter() - start
    detail(record_property, f"max deviation {dev:.1e}, F(0)={got[0]:.4f}, F(0.5)={got[50]:.4f}, "
                            f"F(0.76)={f076:.4f}, {elapsed:.2f} s")
    assert dev <= 1e-10
    assert got[0] == pytest.approx(0.25, abs=1e-10)
    assert got[50] == pytest.approx(0.5, abs=1e-10)
    assert f076 == pytest.approx(0.7097, abs=5e-5)
    # measured 0.710 +/- 0.036
    assert abs(f076 - 0.710) <= 0.036
    assert elapsed < 5.0


@pytest.mark.criterion(4, "entangling threshold at M = 1/3")
@pytest.mark.xfail(strict=True, reason="(1+M)/(2(2-M)) = 1/2 solves to M = 1/2, not 1/3")
def test_criterion_04_threshold(record_property):
    crossing = bisect_crossing(fidelity_vs_M, 0.5, 0.0, 1.0, tol=1e-13)
    detail(record_property, f"bisection crossing at M = {crossing:.12f}, F(1/3) = {fidelity_vs_M(1 / 3):.4f}")
    assert crossing == pytest.approx(1 / 3, abs=1e-9)


@pytest.mark.criterion(5, "truth-table overlap")
def test_criterion_05_overlap(record_property):
    circuit = build_cnot()
    for m in np.linspace(0, 1, 21):
        assert truth_table_overlap(coincidence_table(circuit, m)) == pytest.approx(overlap_vs_M(m), abs=1e-12)
    analytic = truth_table_overlap(coincidence_table(circuit, 0.5))
    src = SourceParams(overlap=OverlapModel(0.5))
    table = truth_table(src, circuit, 1000.0, "mc", MonteCarloSettings(n_periods=1_000_000, seed=2024))
    mc, err = truth_table_overlap(table), truth_table_overlap_err(table)
    # measured overlaps on a real setup; ideal optics at M >= 0.5 must lie above them
    measured = (0.684, 0.730)
    detail(record_property, f"analytic {analytic:.4f}, MC {mc:.4f} +/- {err:.4f} "
                            f"({(mc - analytic) / err:+.2f} sigma), ideal floor {overlap_vs_M(0.5):.3f} "
                            f"vs measured {measured}")
    assert analytic == pytest.approx(0.75, abs=1e-12)
    assert abs(mc - analytic) <= 3 * err
    assert all(overlap_vs_M(0.5) >= x for x in measured)


def fit_peak_set(h, p, tau, sigma_pair, extra=(), rebin_ps=100.0):
    """Weighted least-squares fit of peak-shape templates over one period-wide set.

    Templates sit at the five nominal delays plus ``extra`` candidate
    positions; tails of the neighbouring sets get one free column per side.
    Returns amplitudes, their errors and chi^2 per degree of freedom.
    """
    T, d = h.rep_period_ps, h.excitation_delay_ps
    half = round(T / rebin_ps) * rebin_ps / 2
    edges = np.arange(-half, half + rebin_ps / 2, rebin_ps)
    cum = np.concatenate([[0.0], np.cumsum(h.counts, dtype=float)])
    y = np.diff(np.interp(p * T + edges, h.edges, cum))

    def shape(x):
        return np.diff(peak_shape_cdf(edges - x, tau, sigma_pair))

    others = [q * T + k * d for q in (-1, 1) for k in K_VALUES]
    cols = [shape(k * d) for k in K_VALUES] + [shape(x) for x in extra]
    cols += [sum(shape(x) for x in others if x < 0), sum(shape(x) for x in others if x > 0)]
    a = np.array(cols).T / np.sqrt(np.maximum(y, 1.0))[:, None]
    b = y / np.sqrt(np.maximum(y, 1.0))
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    err = np.sqrt(np.diag(np.linalg.inv(a.T @ a)))
    return coef, err, float(np.sum((a @ coef - b) ** 2)) / (len(y) - len(coef))


@pytest.mark.criterion(6, "histogram structure")
def test_criterion_06_histogram(record_property):
    src = SourceParams(overlap=OverlapModel(0.5))
    circuit = build_cnot()
    start = time.perf_counter()
    h = simulate_histogram(src, circuit, ("V", "H"), VH, 1_000_000, rng=606,
                           window_periods=100, bin_width_ps=20.0)
    areas = overlap_correction(h, src.decay_time_ps, TimeBinSpec(2300.0), src.jitter_sigma_ps)
    elapsed = time.perf_counter() - start
    n_sets = len(areas.uncorrelated_keys(0))
    # five peaks at the nominal delays in every set, nothing at the midpoints between them
    tau, sigma_pair = src.decay_time_ps, math.sqrt(2) * src.jitter_sigma_ps
    mids = [(k + 0.5) * src.excitation_delay_ps for k in range(-3, 3)]
    fits = {p: fit_peak_set(h, p, tau, sigma_pair, mids)
            for p in range(-h.max_period_offset, h.max_period_offset + 1)}
    significance = {p: float(np.min(c[:5] / e[:5])) for p, (c, e, _) in fits.items()}
    mid_pulls = np.concatenate([c[5:11] / e[5:11] for c, e, _ in fits.values()])
    mean_red = float(np.mean([r for _, _, r in fits.values()]))
    mid_rms = float(np.sqrt(np.mean(mid_pulls ** 2)))
    expected = analytic_uncorrelated_areas(src, circuit, ("V", "H"), VH)
    pulls = []
    for i, k in enumerate(K_VALUES):
        mean, err = areas.uncorrelated_mean(k)
        pulls.append((mean - expected[i]) / err)
    ratio = areas.uncorrelated_mean(0)[0] / expected[2]
    detail(record_property, f"{n_sets} uncorrelated sets; five-peak fits: weakest peak "
                            f"{significance[0]:.0f} sigma (p=0), {min(significance.values()):.0f} sigma (all), "
                            f"mean chi2/dof {mean_red:.3f}, midpoint pull rms {mid_rms:.2f}; "
                            f"area pulls {np.round(pulls, 2).tolist()}, central ratio {ratio:.4f}, "
                            f"{elapsed:.1f} s")
    assert n_sets >= 200
    assert min(significance.values()) > 5
    assert abs(mean_red - 1) < 0.1
    assert mid_rms < 1.5
    assert all(abs(x) <= 3 for x in pulls)
    assert elapsed < 60


@pytest.mark.criterion(7, "two-photon interference peak")
def test_criterion_07_hom(record_property):
    circuit = build_cnot()
    full = SourceParams(overlap=OverlapModel(1.0))
    h1 = simulate_histogram(full, circuit, ("V", "H"), VH, 1_000_000, rng=701)
    z1, e1 = normalized_zero_delay(h1, full, 1000.0)
    none = SourceParams(overlap=OverlapModel(0.0))
    h0 = simulate_histogram(none, circuit, ("V", "H"), VH, 1_000_000, rng=702)
    fixed = overlap_correction(h0, none.decay_time_ps, TimeBinSpec(1000.0), none.jitter_sigma_ps)
    centre = fixed.areas[(0, 0)]
    sides = 0.5 * (fixed.areas[(0, -1)] + fixed.areas[(0, 1)])
    err = math.sqrt(fixed.variances[(0, 0)] + 0.25 * (fixed.variances[(0, -1)] + fixed.variances[(0, 1)]))
    detail(record_property, f"M=1 zero delay {z1:.5f} +/- {e1:.5f}; M=0 centre/sides "
                            f"{centre / sides:.4f} ({(centre - sides) / err:+.2f} sigma)")
    assert abs(z1) <= 3 * e1
    assert abs(centre - sides) <= 3 * err


@pytest.mark.criterion(8, "g2 calibration")
def test_criterion_08_g2(record_property):
    src = SourceParams(brightness_max=0.75, g2_zero=0.01)
    h = simulate_hbt(src, 10_000_000, rng=808)
    g2, err = g2_with_error(h)
    detail(record_property, f"g2(0) = {g2:.5f} +/- {err:.5f}")
    assert abs(g2 - 0.01) <= 0.005


@pytest.mark.criterion(9, "brightness law")
def test_criterion_09_brightness(record_property):
    src = SourceParams(brightness_max=0.75, decay_time_ps=750.0)
    value = brightness_in_bin(src, 750.0)
    closed = 0.75 * (1 - math.exp(-1))
    detail(record_property, f"I(750 ps) = {value:.12f}")
    assert value == pytest.approx(closed, abs=1e-12)
    assert round(value, 4) == 0.4741


@pytest.mark.criterion(10, "overlap-correction sanity")
def test_criterion_10_correction(record_property):
    tail = tail_fraction(2300.0, 750.0)
    T, delta, bw, tau = 12200.0, 2300.0, 10.0, 750.0
    n_bins = int(math.ceil(7 * T / bw))
    half = n_bins * bw / 2
    edges = -half + bw * np.arange(n_bins + 1)
    expected = np.zeros(n_bins)
    for k in (0, 1):
        expected += 1e6 * np.diff(peak_shape_cdf(edges - k * delta, tau))
    counts = np.random.default_rng(1010).poisson(expected)
    h = CorrelationHistogram(bw, half, counts, T, delta, (1000,))
    raw = measure_peak_areas(h, TimeBinSpec(delta))
    fixed = overlap_correction(h, tau, TimeBinSpec(delta))
    rel = [abs(fixed.areas[(0, k)] / 1e6 - 1) for k in (0, 1)]
    detail(record_property, f"tail fraction {tail:.4f}; raw {raw.areas[(0, 0)] / 1e6:.4f}, "
                            f"corrected errors {rel[0]:.2%} {rel[1]:.2%}")
    assert tail == pytest.approx(math.exp(-2.3 / 0.75), abs=1e-15)
    assert round(tail, 3) == 0.047
    # lower edge of a 5-10 % band at one significant figure
    assert 0.045 <= tail <= 0.10
    assert max(rel) < 0.01


@pytest.mark.criterion(11, "determinism")
def test_criterion_11_determinism(tmp_path, record_property):
    cfg = {"source": {"brightness_max": 0.75, "g2_zero": 0.01,
                      "overlap": {"table": [{"time_bin_ps": 400, "overlap": 0.76},
                                            {"time_bin_ps": 2000, "overlap": 0.5}]}},
           "experiment": {"n_periods": 50_000, "seed": 11, "time_bin_ps": 400,
                          "time_bin_grid_ps": [400, 1000, 2000]},
           "sweep": {"variable": "M", "start": 0, "stop": 1, "num": 3}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    n_files = 0
    for command in ("truth-table", "bell", "histogram", "sweep"):
        runs = []
        for attempt in ("a", "b"):
            out = tmp_path / f"{command}-{attempt}"
            assert main([command, "--config", str(path), "--out", str(out), "--mode", "mc"]) == 0
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        assert runs[0] == runs[1]
        n_files += len(runs[0])
    detail(record_property, f"{n_files} files byte-identical across two runs")
