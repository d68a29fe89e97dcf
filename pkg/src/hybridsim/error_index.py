"""Boundary-voltage error metrics for hybrid runs and the resulting verdict."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .signals import PhasorTrajectory, ThreePhaseWaveform

_GRID_EPS = 1e-9


class CoverageError(ValueError):
    """The integration window is not covered by the supplied samples."""


class GridMismatchError(ValueError):
    """Two sampled signals do not share the same time grid."""


@dataclass(frozen=True)
class IndexWindow:
    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")

    @property
    def length(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class IndexConfig:
    window: IndexWindow
    threshold_a: float = 0.2
    large_threshold: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.threshold_a < 1.0:
            raise ValueError("threshold_a must lie in (0, 1)")
        if not self.large_threshold > 0:
            raise ValueError("large_threshold must be positive")


class Verdict(str, Enum):
    AccurateInterface = "AccurateInterface"
    InterfaceError = "InterfaceError"
    TsSideFalseDynamics = "TsSideFalseDynamics"


@dataclass(frozen=True)
class ScalarTrace:
    """Uniformly sampled scalar signal."""

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())

    def __len__(self):
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))


@dataclass(frozen=True)
class ErrorReport:
    e_idx: float
    e_idx_mod: float
    verdict: Verdict
    window: IndexWindow
    threshold_a: float
    large_threshold: float
    e_true: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.e_idx_mod < 0 or self.e_idx_mod > self.e_idx + 1e-12:
            raise ValueError("expected e_idx >= e_idx_mod >= 0")
        if self.e_true is not None and self.e_true < 0:
            raise ValueError("e_true must be non-negative")

    def to_dict(self) -> dict:
        out = {
            "e_idx": self.e_idx,
            "e_idx_mod": self.e_idx_mod,
            "verdict": self.verdict.value,
            "window": {"t_start": self.window.t_start, "t_end": self.window.t_end},
            "thresholds": {"threshold_a": self.threshold_a,
                           "large_threshold": self.large_threshold},
        }
        if self.e_true is not None:
            out["e_true"] = self.e_true
        if self.extra:
            out.update(self.extra)
        return out


def _window_indices(t0: float, dt: float, n: int, w: IndexWindow) -> tuple[int, int]:
    """Sample range ``[i0, i1)`` whose times lie in ``[t_start, t_end)``."""
    i0 = math.ceil((w.t_start - t0) / dt - _GRID_EPS)
    i1 = math.ceil((w.t_end - t0) / dt - _GRID_EPS)
    if i0 < 0 or i1 > n or i1 <= i0:
        t_last = t0 + dt * (n - 1)
        raise CoverageError(
            f"window [{w.t_start}, {w.t_end}] not covered by samples spanning [{t0}, {t_last}]"
        )
    return i0, i1


def _riemann(values: np.ndarray, t0: float, dt: float, w: IndexWindow) -> float:
    i0, i1 = _window_indices(t0, dt, values.shape[0], w)
    return float(np.sum(values[i0:i1]) * dt)


def heaviside(x, a: float):
    """1 where ``x > a`` strictly, else 0."""
    return (np.asarray(x) > a).astype(float) if np.ndim(x) else float(x > a)


def _same_grid(t0a, dta, na, t0b, dtb, nb) -> bool:
    return na == nb and math.isclose(dta, dtb, rel_tol=1e-12) and abs(t0a - t0b) <= 1e-9 * max(dta, dtb)


def true_error(vm_hybrid_emt: PhasorTrajectory, vm_full_emt: PhasorTrajectory,
               w: IndexWindow) -> float:
    """Integrated absolute boundary-magnitude difference between two runs (pu*s)."""
    a, b = vm_hybrid_emt, vm_full_emt
    if _same_grid(a.t0, a.dt_macro, len(a), b.t0, b.dt_macro, len(b)):
        diff = np.abs(a.magnitude_pu - b.magnitude_pu)
        return _riemann(diff, a.t0, a.dt_macro, w)
    # Different grids: put both on the finer one over their common span.
    dt = min(a.dt_macro, b.dt_macro)
    t0 = max(a.t0, b.t0)
    t1 = min(a.times[-1], b.times[-1])
    n = int(math.floor((t1 - t0) / dt + _GRID_EPS)) + 1
    t = t0 + dt * np.arange(n)
    diff = np.abs(np.interp(t, a.times, a.magnitude_pu) - np.interp(t, b.times, b.magnitude_pu))
    return _riemann(diff, t0, dt, w)


def delta_v_diff(emt: ThreePhaseWaveform, ts: ThreePhaseWaveform, base_kv_ll: float) -> ScalarTrace:
    """Per-sample three-phase voltage mismatch in per unit.

    The root-mean-square over phases of the instantaneous difference, divided
    by the nominal per-phase peak; equal-phase magnitude errors then average
    to ``2/pi`` times the magnitude error.
    """
    if not _same_grid(emt.t0, emt.dt, len(emt), ts.t0, ts.dt, len(ts)):
        raise GridMismatchError("EMT and TS waveforms must share one sampling grid")
    if not base_kv_ll > 0:
        raise ValueError("base voltage must be positive")
    d = emt.as_array() - ts.as_array()
    norm = np.sqrt(np.sum(d * d, axis=0))
    return ScalarTrace(emt.t0, emt.dt, norm / (math.sqrt(2.0) * base_kv_ll * 1e3))


def error_index(dv: ScalarTrace, w: IndexWindow) -> float:
    return _riemann(dv.values, dv.t0, dv.dt, w)


def gate_on_grid(dv: ScalarTrace, vm_ts: PhasorTrajectory, a: float) -> np.ndarray:
    """Gate values of the TS boundary magnitude, linearly interpolated onto ``dv``'s grid."""
    if len(vm_ts) == 0:
        raise CoverageError("empty TS magnitude trajectory")
    return heaviside(np.interp(dv.times, vm_ts.times, vm_ts.magnitude_pu), a)


def modified_error_index(dv: ScalarTrace, vm_ts: PhasorTrajectory, cfg: IndexConfig) -> float:
    w = cfg.window
    tm = vm_ts.times
    if len(vm_ts) == 0 or tm[0] > w.t_start + _GRID_EPS or tm[-1] < w.t_end - vm_ts.dt_macro - _GRID_EPS:
        raise CoverageError("TS magnitude trajectory does not cover the window")
    gated = dv.values * gate_on_grid(dv, vm_ts, cfg.threshold_a)
    return _riemann(gated, dv.t0, dv.dt, w)


def equality_tolerance(e_idx: float) -> float:
    return max(1e-4, 0.02 * e_idx)


def classify(e_idx: float, e_idx_mod: float, cfg: IndexConfig) -> Verdict:
    if e_idx_mod < 0 or e_idx_mod > e_idx + 1e-12:
        raise ValueError(f"inconsistent indices: e_idx={e_idx}, e_idx_mod={e_idx_mod}")
    if e_idx - e_idx_mod > equality_tolerance(e_idx):
        return Verdict.TsSideFalseDynamics
    if e_idx_mod > cfg.large_threshold:
        return Verdict.InterfaceError
    return Verdict.AccurateInterface


def build_report(dv: ScalarTrace, vm_ts: PhasorTrajectory, cfg: IndexConfig,
                 vm_hybrid_emt: PhasorTrajectory | None = None,
                 vm_full_emt: PhasorTrajectory | None = None) -> ErrorReport:
    e = error_index(dv, cfg.window)
    e_mod = modified_error_index(dv, vm_ts, cfg)
    e_true = None
    if vm_hybrid_emt is not None and vm_full_emt is not None:
        e_true = true_error(vm_hybrid_emt, vm_full_emt, cfg.window)
    return ErrorReport(e_idx=e, e_idx_mod=e_mod, verdict=classify(e, e_mod, cfg),
                       window=cfg.window, threshold_a=cfg.threshold_a,
                       large_threshold=cfg.large_threshold, e_true=e_true)
