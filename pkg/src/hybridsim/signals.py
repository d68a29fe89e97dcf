"""Waveform synthesis, fundamental phasor estimation and symmetrical components.

Phasor conventions used throughout the package:

* **frame phasor** ``P`` (per unit or volts peak): the waveform is
  ``|P| * sin(2*pi*f0*t + angle(P))`` with absolute simulation time ``t``.
  This is the convention of the phasor-to-waveform reconstruction used by
  the error index, and the one the phasor-domain solver works in.
* **end phasor** ``X``: the waveform over an estimation window is
  ``Re{X * exp(j*2*pi*f0*(t - t_end))}``, i.e. ``angle(X)`` is the cosine
  phase at the last sample of the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

A_OP = np.exp(2j * np.pi / 3)
SQRT_2_3 = math.sqrt(2.0 / 3.0)
PHASE_OFFSETS = np.array([0.0, -2.0 * np.pi / 3.0, 2.0 * np.pi / 3.0])


class InsufficientDataError(ValueError):
    """Raised when an estimation window does not fit in the supplied samples."""


def nominal_peak(base_kv_ll: float) -> float:
    """Per-phase peak voltage (V) that corresponds to 1.0 pu."""
    return SQRT_2_3 * base_kv_ll * 1e3


# --------------------------------------------------------------------------
# forced-oscillation waveforms
# --------------------------------------------------------------------------


class FoKind(str, Enum):
    MFO = "MFO"
    SFO = "SFO"


@dataclass(frozen=True)
class FoSourceSpec:
    kind: FoKind
    v_m: float
    v_fo: float
    f_fo: float
    f_syn: float = 60.0
    phi_a: float = 0.0
    t_enable: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FoKind(self.kind))
        if self.f_fo <= 0 or self.f_syn <= 0:
            raise ValueError("f_fo and f_syn must be positive")
        if self.v_fo < 0:
            raise ValueError("v_fo must be non-negative")


def synth_steady(spec: FoSourceSpec, t):
    t = np.asarray(t, dtype=float)
    return spec.v_m * np.cos(2 * np.pi * spec.f_syn * t + spec.phi_a)


def synth_mfo(spec: FoSourceSpec, t):
    """Amplitude-modulated carrier; plain carrier before ``t_enable``."""
    t = np.asarray(t, dtype=float)
    carrier = np.cos(2 * np.pi * spec.f_syn * t + spec.phi_a)
    envelope = spec.v_m + spec.v_fo * np.cos(2 * np.pi * spec.f_fo * t)
    return np.where(t < spec.t_enable, spec.v_m * carrier, envelope * carrier)


def synth_sfo(spec: FoSourceSpec, t):
    """Carrier plus an additive tone at ``f_fo``; plain carrier before ``t_enable``."""
    t = np.asarray(t, dtype=float)
    steady = synth_steady(spec, t)
    tone = spec.v_fo * np.cos(2 * np.pi * spec.f_fo * t)
    return np.where(t < spec.t_enable, steady, steady + tone)


def synth_fo(spec: FoSourceSpec, t):
    if spec.kind is FoKind.MFO:
        return synth_mfo(spec, t)
    return synth_sfo(spec, t)


# --------------------------------------------------------------------------
# sampled data containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ThreePhaseWaveform:
    """Uniformly sampled instantaneous phase quantities in physical units."""

    t0: float
    dt: float
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        arrs = [np.asarray(x, dtype=float) for x in (self.a, self.b, self.c)]
        n = arrs[0].shape
        if len(n) != 1 or n[0] < 1 or any(x.shape != n for x in arrs):
            raise ValueError("phases must be 1-D arrays of equal, non-zero length")
        for name, x in zip("abc", arrs):
            object.__setattr__(self, name, x)

    @classmethod
    def from_array(cls, t0: float, dt: float, abc) -> "ThreePhaseWaveform":
        abc = np.asarray(abc, dtype=float)
        return cls(t0, dt, abc[0], abc[1], abc[2])

    def __len__(self):
        return self.a.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    def as_array(self) -> np.ndarray:
        return np.vstack([self.a, self.b, self.c])


@dataclass(frozen=True)
class PhasorTrajectory:
    """Macro-step samples of one phasor (magnitude in pu, frame angle in rad)."""

    t0: float
    dt_macro: float
    magnitude_pu: np.ndarray
    angle_rad: np.ndarray
    base_kv_ll: float

    def __post_init__(self):
        if not self.dt_macro > 0:
            raise ValueError("dt_macro must be positive")
        mag = np.asarray(self.magnitude_pu, dtype=float).ravel()
        ang = np.asarray(self.angle_rad, dtype=float).ravel()
        if mag.shape != ang.shape:
            raise ValueError("magnitude and angle lengths differ")
        if np.any(mag < 0):
            raise ValueError("magnitudes must be non-negative")
        object.__setattr__(self, "magnitude_pu", mag)
        object.__setattr__(self, "angle_rad", np.unwrap(ang) if ang.size else ang)

    @classmethod
    def from_phasors(cls, t0, dt_macro, phasors, base_kv_ll) -> "PhasorTrajectory":
        z = np.asarray(phasors, dtype=complex)
        return cls(t0, dt_macro, np.abs(z), np.angle(z), base_kv_ll)

    def __len__(self):
        return self.magnitude_pu.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt_macro * np.arange(len(self))

    @property
    def phasors(self) -> np.ndarray:
        return self.magnitude_pu * np.exp(1j * self.angle_rad)

    def interpolate(self, t):
        """Linear interpolation of magnitude and unwrapped angle; ends are held."""
        if len(self) == 0:
            raise ValueError("empty phasor trajectory")
        tm = self.times
        return (np.interp(t, tm, self.magnitude_pu), np.interp(t, tm, self.angle_rad))


# --------------------------------------------------------------------------
# symmetrical components
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceSet:
    pos: complex
    neg: complex
    zero: complex

    def __iter__(self):
        return iter((self.pos, self.neg, self.zero))


def abc_to_seq(va, vb, vc) -> SequenceSet:
    a, a2 = A_OP, A_OP * A_OP
    va, vb, vc = (np.asarray(x, dtype=complex) for x in (va, vb, vc))
    pos = (va + a * vb + a2 * vc) / 3.0
    neg = (va + a2 * vb + a * vc) / 3.0
    zero = (va + vb + vc) / 3.0
    if pos.ndim == 0:
        return SequenceSet(complex(pos), complex(neg), complex(zero))
    return SequenceSet(pos, neg, zero)


def seq_to_abc(s: SequenceSet):
    a, a2 = A_OP, A_OP * A_OP
    pos, neg, zero = (np.asarray(x, dtype=complex) for x in s)
    va = zero + pos + neg
    vb = zero + a2 * pos + a * neg
    vc = zero + a * pos + a2 * neg
    if va.ndim == 0:
        return complex(va), complex(vb), complex(vc)
    return va, vb, vc


# --------------------------------------------------------------------------
# phasor estimation
# --------------------------------------------------------------------------


def end_to_frame(x_end, t_end, f0: float = 60.0):
    """Convert end phasors (cosine phase at ``t_end``) to frame phasors."""
    return 1j * np.asarray(x_end) * np.exp(-2j * np.pi * f0 * np.asarray(t_end))


def frame_to_end(p, t_end, f0: float = 60.0):
    return -1j * np.asarray(p) * np.exp(2j * np.pi * f0 * np.asarray(t_end))


class PhasorEstimator:
    """Trailing-window fundamental-frequency estimator.

    The window holds ``round(window_cycles / (f0 * dt))`` samples ending at
    the evaluation instant.  Cosine, sine and a constant are fitted by least
    squares, which coincides with the single-bin rectangular DFT whenever the
    window spans an integer number of samples per cycle, and stays exact
    for stationary sinusoids when it does not (20 us steps give 833.3
    samples per 60 Hz cycle).
    """

    def __init__(self, dt: float, f0: float = 60.0, window_cycles: float = 1.0):
        if dt <= 0 or f0 <= 0 or window_cycles <= 0:
            raise ValueError("dt, f0 and window_cycles must be positive")
        self.dt, self.f0, self.window_cycles = dt, f0, window_cycles
        self.n = int(round(window_cycles / (f0 * dt)))
        if self.n < 3:
            raise ValueError("window shorter than three samples")
        tau = dt * np.arange(-(self.n - 1), 1)
        w = 2 * np.pi * f0 * tau
        basis = np.column_stack([np.cos(w), np.sin(w), np.ones_like(w)])
        self._pinv = np.linalg.pinv(basis)[:2]

    @property
    def window_length(self) -> float:
        return self.n * self.dt

    def fit(self, window) -> complex:
        """End phasor (peak units) of the last ``n`` samples of ``window``."""
        x = np.asarray(window, dtype=float)
        if x.shape[-1] < self.n:
            raise InsufficientDataError(
                f"need {self.n} samples for a {self.window_cycles}-cycle window, got {x.shape[-1]}"
            )
        ab = self._pinv @ x[..., -self.n:].T
        return ab[0] - 1j * ab[1]

    def fit_at(self, x, end_indices) -> np.ndarray:
        """End phasors of windows ending at each of ``end_indices`` of 1-D ``x``."""
        x = np.asarray(x, dtype=float)
        ends = np.asarray(end_indices, dtype=int)
        if ends.size and (ends.min() < self.n - 1 or ends.max() >= x.shape[0]):
            raise InsufficientDataError("estimation window outside the recorded samples")
        windows = sliding_window_view(x, self.n)[ends - (self.n - 1)]
        ab = windows @ self._pinv.T
        return ab[:, 0] - 1j * ab[:, 1]


def estimate_phasor(samples, dt: float, f0: float = 60.0, window_cycles: float = 1.0,
                    base_kv_ll: float | None = None):
    """Magnitude and end-of-window cosine phase of the trailing window.

    With ``base_kv_ll`` given, the magnitude is in per unit of the nominal
    per-phase peak; otherwise it is the peak in the units of ``samples``.
    """
    x_end = PhasorEstimator(dt, f0, window_cycles).fit(samples)
    scale = nominal_peak(base_kv_ll) if base_kv_ll is not None else 1.0
    return abs(x_end) / scale, float(np.angle(x_end))


def tone_fit(x, t, f: float, with_dc: bool = True) -> complex:
    """Least-squares complex amplitude ``C`` with ``x ~ Re{C exp(j 2 pi f t)}``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    w = 2 * np.pi * f * t
    cols = [np.cos(w), np.sin(w)]
    if with_dc:
        cols.append(np.ones_like(w))
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), x, rcond=None)
    return complex(coef[0], -coef[1])


# --------------------------------------------------------------------------
# reconstruction and spectra
# --------------------------------------------------------------------------


def _unwrap_along(angles: np.ndarray) -> np.ndarray:
    return np.unwrap(angles, axis=-1)


def reconstruct_phases(t0: float, dt_macro: float, phase_phasors, base_kv_ll: float,
                       f0: float, dt_out: float, n_out: int | None = None) -> ThreePhaseWaveform:
    """Waveforms from per-phase frame phasors sampled every ``dt_macro``.

    Magnitude and unwrapped angle of each phase are interpolated linearly
    between macro samples.
    """
    z = np.asarray(phase_phasors, dtype=complex)
    if z.ndim != 2 or z.shape[0] != 3 or z.shape[1] == 0:
        raise ValueError("expected a (3, K) array of phase phasors with K >= 1")
    if dt_out <= 0 or dt_out > dt_macro * (1 + 1e-9):
        raise ValueError("dt_out must be positive and not exceed dt_macro")
    t_macro = t0 + dt_macro * np.arange(z.shape[1])
    if n_out is None:
        n_out = int(math.floor((t_macro[-1] - t0) / dt_out + 1e-9)) + 1
    t = t0 + dt_out * np.arange(n_out)
    mags = np.abs(z)
    angs = _unwrap_along(np.angle(z))
    peak = nominal_peak(base_kv_ll)
    out = np.empty((3, n_out))
    for k in range(3):
        m = np.interp(t, t_macro, mags[k])
        th = np.interp(t, t_macro, angs[k])
        out[k] = peak * m * np.sin(2 * np.pi * f0 * t + th)
    return ThreePhaseWaveform.from_array(t0, dt_out, out)


def reconstruct_abc(p: PhasorTrajectory, f0: float, dt_out: float,
                    n_out: int | None = None) -> ThreePhaseWaveform:
    """Balanced three-phase waveforms from a positive-sequence trajectory."""
    if len(p) == 0:
        raise ValueError("empty phasor trajectory")
    if dt_out <= 0 or dt_out > p.dt_macro * (1 + 1e-9):
        raise ValueError("dt_out must be positive and not exceed dt_macro")
    t_macro = p.times
    if n_out is None:
        n_out = int(math.floor((t_macro[-1] - p.t0) / dt_out + 1e-9)) + 1
    t = p.t0 + dt_out * np.arange(n_out)
    m, th = p.interpolate(t)
    peak = nominal_peak(p.base_kv_ll) * m
    arg = 2 * np.pi * f0 * t + th
    out = peak * np.sin(arg[None, :] + PHASE_OFFSETS[:, None])
    return ThreePhaseWaveform.from_array(p.t0, dt_out, out)


def spectrum(x, dt: float | None = None, t=None):
    """One-sided amplitude spectrum of a uniformly sampled signal.

    Scaled so that a cosine of amplitude ``A`` spanning an integer number of
    periods reports ``A`` at its bin (and a constant reports its value at 0 Hz).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least two samples")
    if t is not None:
        steps = np.diff(np.asarray(t, dtype=float))
        step = steps.mean()
        if step <= 0 or np.max(np.abs(steps - step)) > 1e-9 * step:
            raise ValueError("non-uniform sampling")
        dt = step
    if dt is None or dt <= 0:
        raise ValueError("a positive sample spacing is required")
    n = x.size
    amps = np.abs(np.fft.rfft(x)) * 2.0 / n
    amps[0] /= 2.0
    if n % 2 == 0:
        amps[-1] /= 2.0
    return np.fft.rfftfreq(n, dt), amps


def amplitude_at(freqs, amps, f: float) -> float:
    """Amplitude reported at the bin nearest to ``f``."""
    return float(amps[int(np.argmin(np.abs(np.asarray(freqs) - f)))])
