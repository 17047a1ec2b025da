import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdcnot.analysis import (
    IDEAL_CNOT_TABLE,
    CorrelationSet,
    GateReport,
    TruthTable,
    bell_fidelity,
    bisect_crossing,
    correlation_E,
    estimate_M_from_fidelity,
    estimate_M_from_overlap,
    fidelity_vs_M,
    g2_from_histogram,
    g2_with_error,
    overlap_vs_M,
    truth_table_overlap,
    truth_table_overlap_err,
)
from qdcnot.errors import ContractError, NormalizationError, OutOfModelError, UndefinedQuantityError
from qdcnot.experiment import simulate_hbt
from qdcnot.gate import AnalysisSetting, build_cnot, coincidence_table, post_selected_state, project
from qdcnot.pipeline import bell_correlations, fidelity_from_correlations, gate_report
from qdcnot.source import OverlapModel, SourceParams

PHI_PLUS = np.array([1, 0, 0, 1]) / math.sqrt(2)


def test_overlap_examples():
    assert truth_table_overlap(TruthTable(IDEAL_CNOT_TABLE)) == 1.0
    c = build_cnot()
    assert truth_table_overlap(coincidence_table(c, 0.5)) == pytest.approx(0.75, abs=1e-12)
    assert truth_table_overlap(coincidence_table(c, 0.0)) == pytest.approx(2 / 3, abs=1e-12)


@given(st.floats(0, 1))
def test_overlap_closed_form(m):
    assert truth_table_overlap(coincidence_table(build_cnot(), m)) == pytest.approx(overlap_vs_M(m), abs=1e-12)
    assert estimate_M_from_overlap(overlap_vs_M(m)) == pytest.approx(m, abs=1e-9)


def test_overlap_errors():
    t = np.array(IDEAL_CNOT_TABLE)
    t[2] = 0
    with pytest.raises(UndefinedQuantityError):
        truth_table_overlap(t)
    with pytest.raises(ContractError):
        TruthTable(-IDEAL_CNOT_TABLE)
    with pytest.raises(OutOfModelError):
        estimate_M_from_overlap(0.5)


def test_overlap_error_propagation():
    vals = coincidence_table(build_cnot(), 0.5)
    errs = np.full((4, 4), 1e-3)
    got = truth_table_overlap_err(TruthTable(vals, errs))
    # finite-difference oracle
    grad = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            d = np.zeros((4, 4))
            d[i, j] = 1e-7
            grad[i, j] = (truth_table_overlap(vals + d) - truth_table_overlap(vals - d)) / 2e-7
    assert got == pytest.approx(math.sqrt(np.sum((grad * errs) ** 2)), rel=1e-5)
    assert truth_table_overlap_err(TruthTable(vals)) == 0.0


def test_correlation_examples():
    assert correlation_E(1, 1, 0, 0) == 1
    assert correlation_E(1, 1, 1, 1) == 0
    with pytest.raises(UndefinedQuantityError):
        correlation_E(0, 0, 0, 0)
    rl = {x + y: project(PHI_PLUS, AnalysisSetting.from_labels(x, y)) for x in "RL" for y in "RL"}
    assert correlation_E(rl["RR"], rl["LL"], rl["RL"], rl["LR"]) == pytest.approx(-1, abs=1e-12)


@given(st.lists(st.floats(0.01, 1e4), min_size=4, max_size=4), st.floats(1e-3, 1e3))
def test_correlation_scale_invariant(areas, scale):
    e = correlation_E(*areas)
    assert abs(e) <= 1
    assert correlation_E(*(a * scale for a in areas)) == pytest.approx(e, rel=1e-9, abs=1e-12)


def test_correlation_set_error_matches_finite_difference():
    areas = np.array([[900.0, 60.0], [40.0, 1000.0]])
    cs = CorrelationSet(areas)
    grad = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            d = np.zeros((2, 2))
            d[i, j] = 1e-4
            grad[i, j] = (CorrelationSet(areas + d).E - CorrelationSet(areas - d).E) / 2e-4
    assert cs.E_err == pytest.approx(math.sqrt(np.sum(grad ** 2 * areas)), rel=1e-6)


def test_fidelity_examples():
    assert bell_fidelity(1, 1, -1) == 1
    assert bell_fidelity(0, 0, 0) == 0.25
    assert fidelity_vs_M(0) == 0.25
    assert fidelity_vs_M(0.5) == 0.5
    assert fidelity_vs_M(1) == 1
    with pytest.raises(ContractError):
        bell_fidelity(1.5, 0, 0)
    with pytest.raises(ContractError):
        fidelity_vs_M(-0.1)


def test_fidelity_end_to_end_at_076():
    src = SourceParams(overlap=OverlapModel(0.76))
    f, _ = fidelity_from_correlations(bell_correlations(src, build_cnot(), 400.0))
    assert f == pytest.approx(0.7097, abs=5e-5)


@given(st.floats(0.25, 1.0))
def test_fidelity_inverse_roundtrip(f):
    assert fidelity_vs_M(estimate_M_from_fidelity(f)) == pytest.approx(f, abs=1e-12)


def test_estimate_M_examples():
    assert estimate_M_from_fidelity(0.25) == 0.0
    assert estimate_M_from_fidelity(0.5) == pytest.approx(0.5)
    # exact inverse: 1.84 / 2.42
    assert estimate_M_from_fidelity(0.71) == pytest.approx(0.76033, abs=1e-5)
    with pytest.raises(OutOfModelError):
        estimate_M_from_fidelity(0.2)


@pytest.mark.parametrize("m", np.linspace(0, 1, 101))
def test_state_projection_fidelity_curve(m):
    # mix the post-selected outputs of indistinguishable and distinguishable pairs
    c = build_cnot()
    src = SourceParams(overlap=OverlapModel(float(m)))
    f, _ = fidelity_from_correlations(bell_correlations(src, c, 1000.0))
    assert f == pytest.approx(fidelity_vs_M(m), abs=1e-10)


def test_ideal_state_fidelity_from_projection():
    psi = post_selected_state(build_cnot(), "D", "H")
    es = []
    for a, b in ("HV", "DA", "RL"):
        p = {x + y: project(psi, AnalysisSetting.from_labels(x, y)) for x in (a, b) for y in (a, b)}
        es.append(correlation_E(p[a + a], p[b + b], p[a + b], p[b + a]))
    assert bell_fidelity(*es) == pytest.approx(1.0, abs=1e-12)


def test_entangling_threshold():
    # (1 + M) / (2 (2 - M)) = 1/2 solves to M = 1/2
    m_star = bisect_crossing(fidelity_vs_M, 0.5, 0.0, 1.0, tol=1e-13)
    assert m_star == pytest.approx(0.5, abs=1e-9)
    c = build_cnot()
    for m, above in ((0.5 - 1e-3, False), (0.5 + 1e-3, True)):
        src = SourceParams(overlap=OverlapModel(m))
        f, _ = fidelity_from_correlations(bell_correlations(src, c, 1000.0))
        assert (f > 0.5) is above


def test_bisect_needs_bracket():
    with pytest.raises(ContractError):
        bisect_crossing(fidelity_vs_M, 2.0)


def test_g2_no_contamination():
    h = simulate_hbt(SourceParams(brightness_max=0.7), 1_000_000, rng=1)
    g2, err = g2_with_error(h)
    assert g2 == pytest.approx(0.0, abs=3 * err)
    assert g2_from_histogram(h) == g2


def test_g2_poisson_light():
    h = simulate_hbt(SourceParams(brightness_max=0.7, photon_statistics="poisson"), 500_000, rng=2)
    g2, err = g2_with_error(h)
    assert abs(g2 - 1.0) < 3 * err


def test_g2_needs_side_peaks():
    h = simulate_hbt(SourceParams(brightness_max=0.7), 10_000, rng=3, window_periods=5)
    with pytest.raises(NormalizationError):
        g2_from_histogram(h)


def test_report_json_keys():
    src = SourceParams(overlap=OverlapModel(0.5))
    report = gate_report(src, build_cnot(), 1000.0)
    d = report.to_json_dict()
    assert list(d) == ["truth_table", "overlap", "E_HV", "E_DA", "E_RL", "fidelity",
                       "brightness", "M_estimate", "errors"]
    assert d["overlap"] == pytest.approx(0.75)
    assert d["fidelity"] == pytest.approx(0.5)
    assert d["M_estimate"] == pytest.approx(0.5)
    assert GateReport().to_json_dict()["truth_table"] is None
