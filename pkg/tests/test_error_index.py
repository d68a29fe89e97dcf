import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridsim.error_index import (
    CoverageError, ErrorReport, GridMismatchError, IndexConfig, IndexWindow, ScalarTrace, Verdict,
    build_report, classify, delta_v_diff, equality_tolerance, error_index, heaviside,
    modified_error_index, true_error,
)
from hybridsim.signals import PhasorTrajectory, ThreePhaseWaveform

KV = 0.6
VB = KV * 1e3


def _wave(abc, dt=1e-4, t0=0.0):
    return ThreePhaseWaveform.from_array(t0, dt, abc)


def _traj(mags, dt=1e-4, t0=0.0):
    mags = np.asarray(mags, dtype=float)
    return PhasorTrajectory(t0, dt, mags, np.zeros_like(mags), KV)


def test_heaviside_is_strict():
    assert heaviside(0.2, 0.2) == 0.0
    assert heaviside(0.2000001, 0.2) == 1.0
    assert list(heaviside(np.array([0.1, 0.2, 0.3]), 0.2)) == [0.0, 0.0, 1.0]


def test_one_phase_offset_gives_constant():
    d = 42.0
    n = 50
    emt = np.zeros((3, n))
    emt[1] += d
    dv = delta_v_diff(_wave(emt), _wave(np.zeros((3, n))), KV)
    assert np.allclose(dv.values, d / (math.sqrt(2) * VB), rtol=1e-14)


def test_identical_waveforms_give_zero():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 40))
    dv = delta_v_diff(_wave(x), _wave(x.copy()), KV)
    assert np.all(dv.values == 0.0)


def test_grid_mismatch_rejected():
    with pytest.raises(GridMismatchError):
        delta_v_diff(_wave(np.zeros((3, 10))), _wave(np.zeros((3, 11))), KV)
    with pytest.raises(GridMismatchError):
        delta_v_diff(_wave(np.zeros((3, 10))), _wave(np.zeros((3, 10)), dt=2e-4), KV)


def test_error_index_constant_integrand():
    dv = ScalarTrace(0.0, 0.01, np.full(301, 0.5))
    assert error_index(dv, IndexWindow(0.5, 2.5)) == pytest.approx(1.0, rel=1e-12)


def test_window_is_half_open():
    vals = np.zeros(11)
    vals[5] = 1.0  # sample at t = 0.5
    dv = ScalarTrace(0.0, 0.1, vals)
    assert error_index(dv, IndexWindow(0.5, 0.9)) == pytest.approx(0.1)
    assert error_index(dv, IndexWindow(0.1, 0.5)) == 0.0


def test_coverage_error():
    dv = ScalarTrace(0.0, 0.1, np.zeros(10))
    with pytest.raises(CoverageError):
        error_index(dv, IndexWindow(0.5, 2.0))
    with pytest.raises(ValueError):
        IndexWindow(1.0, 1.0)


def test_modified_index_zero_when_ts_below_threshold():
    dv = ScalarTrace(0.0, 0.01, np.ones(201))
    cfg = IndexConfig(IndexWindow(0.0, 2.0), threshold_a=0.2)
    assert modified_error_index(dv, _traj(np.full(201, 0.1), 0.01), cfg) == 0.0
    assert modified_error_index(dv, _traj(np.full(201, 1.0), 0.01), cfg) == pytest.approx(2.0)


def test_modified_index_needs_ts_coverage():
    dv = ScalarTrace(0.0, 0.01, np.ones(201))
    cfg = IndexConfig(IndexWindow(0.0, 2.0))
    with pytest.raises(CoverageError):
        modified_error_index(dv, _traj(np.ones(20), 0.01), cfg)


def test_true_error_constant_offset():
    a = _traj(np.full(301, 1.0), 0.01)
    b = _traj(np.full(301, 0.9), 0.01)
    assert true_error(a, b, IndexWindow(0.5, 2.5)) == pytest.approx(0.2, rel=1e-9)


def test_true_error_different_grids():
    a = _traj(np.full(301, 1.0), 0.01)
    b = _traj(np.full(601, 0.9), 0.005)
    assert true_error(a, b, IndexWindow(0.5, 2.5)) == pytest.approx(0.2, rel=1e-9)


def test_classify_branches():
    cfg = IndexConfig(IndexWindow(0, 1), large_threshold=0.05)
    assert classify(0.1, 0.05, cfg) is Verdict.TsSideFalseDynamics
    assert classify(0.1, 0.1, cfg) is Verdict.InterfaceError
    assert classify(0.01, 0.01, cfg) is Verdict.AccurateInterface
    # inside the equality tolerance
    assert classify(0.1, 0.1 - 0.5 * equality_tolerance(0.1), cfg) is Verdict.InterfaceError
    with pytest.raises(ValueError):
        classify(0.1, 0.2, cfg)


def test_equality_tolerance_floor():
    assert equality_tolerance(0.0) == 1e-4
    assert equality_tolerance(1.0) == pytest.approx(0.02)


def test_index_config_validation():
    with pytest.raises(ValueError):
        IndexConfig(IndexWindow(0, 1), threshold_a=1.0)
    with pytest.raises(ValueError):
        IndexConfig(IndexWindow(0, 1), large_threshold=0.0)


def test_report_invariants():
    w = IndexWindow(0, 1)
    with pytest.raises(ValueError):
        ErrorReport(0.1, 0.2, Verdict.InterfaceError, w, 0.2, 0.05)
    with pytest.raises(ValueError):
        ErrorReport(0.1, 0.1, Verdict.InterfaceError, w, 0.2, 0.05, e_true=-1.0)
    d = ErrorReport(0.1, 0.1, Verdict.InterfaceError, w, 0.2, 0.05, e_true=0.01).to_dict()
    assert d["verdict"] == "InterfaceError" and d["e_true"] == 0.01


def test_equal_phase_error_averages_two_over_pi():
    """Equal magnitude errors in every phase average to 2/pi of the magnitude error."""
    dt = 20e-6
    t = dt * np.arange(int(round(10 / 60 / dt)))
    dvm = 0.07
    cos = np.cos(2 * np.pi * 60 * t + 0.3)
    amp = math.sqrt(2) * VB / math.sqrt(3)
    emt = np.tile(amp * 1.0 * cos, (3, 1))
    ts = np.tile(amp * (1.0 - dvm) * cos, (3, 1))
    dv = delta_v_diff(_wave(emt, dt), _wave(ts, dt), KV)
    assert np.mean(dv.values) / dvm == pytest.approx(2 / math.pi, rel=1e-3)


# ---- properties -------------------------------------------------------------

arrays = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=60, deadline=None)
@given(arrays, st.floats(0.05, 0.95))
def test_modified_never_exceeds_full(rng, a):
    n = 400
    emt = rng.normal(scale=300, size=(3, n))
    ts = rng.normal(scale=300, size=(3, n))
    dv = delta_v_diff(_wave(emt, 0.005), _wave(ts, 0.005), KV)
    vm = _traj(rng.uniform(0, 1.2, size=n), 0.005)
    cfg = IndexConfig(IndexWindow(0.1, 1.9), threshold_a=a)
    e = error_index(dv, cfg.window)
    em = modified_error_index(dv, vm, cfg)
    assert 0 <= em <= e + 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays, st.floats(0.0, 1.0), st.floats(0.01, 0.99))
def test_window_additivity(rng, u, frac):
    dv = ScalarTrace(0.0, 0.01, rng.uniform(0, 1, size=301))
    t0, t1 = 0.0 + u, 2.0 + u
    tm = round((t0 + frac * (t1 - t0)) / 0.01) * 0.01
    if not t0 < tm < t1:
        return
    whole = error_index(dv, IndexWindow(t0, t1))
    parts = error_index(dv, IndexWindow(t0, tm)) + error_index(dv, IndexWindow(tm, t1))
    assert abs(whole - parts) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays, st.floats(0.1, 1e3))
def test_scale_invariance(rng, k):
    emt = rng.normal(scale=400, size=(3, 64))
    ts = rng.normal(scale=400, size=(3, 64))
    d1 = delta_v_diff(_wave(emt), _wave(ts), KV).values
    d2 = delta_v_diff(_wave(k * emt), _wave(k * ts), k * KV).values
    assert np.max(np.abs(d1 - d2)) <= 1e-12 * max(1.0, np.max(d1))


@settings(max_examples=40, deadline=None)
@given(arrays)
def test_index_zero_iff_identical(rng):
    emt = rng.normal(scale=400, size=(3, 200))
    w = IndexWindow(0.0, 0.02)
    same = delta_v_diff(_wave(emt), _wave(emt.copy()), KV)
    assert error_index(same, w) <= 1e-12
    ts = emt.copy()
    ts[int(rng.integers(3)), int(rng.integers(200))] += 1.0
    assert error_index(delta_v_diff(_wave(emt), _wave(ts), KV), IndexWindow(0.0, 0.02)) > 1e-12


def test_build_report_end_to_end():
    n = 301
    dt = 0.01
    dv = ScalarTrace(0.0, dt, np.full(n, 0.01))
    vm = _traj(np.ones(n), dt)
    cfg = IndexConfig(IndexWindow(0.5, 2.5))
    rep = build_report(dv, vm, cfg, _traj(np.ones(n), dt), _traj(np.full(n, 0.99), dt))
    assert rep.e_idx == pytest.approx(0.02)
    assert rep.e_idx_mod == pytest.approx(0.02)
    assert rep.e_true == pytest.approx(0.02)
    assert rep.verdict is Verdict.AccurateInterface
