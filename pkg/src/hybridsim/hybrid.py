"""Lockstep waveform/phasor co-simulation across a bus-type boundary."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .emt.system import DEFAULT_DT, EmtSystem, FaultSpec, FoAttachment
from .network import NetworkError, NetworkModel
from .signals import (PhasorEstimator, PhasorTrajectory, ThreePhaseWaveform,
                      abc_to_seq, end_to_frame, nominal_peak, reconstruct_abc, reconstruct_phases,
                      seq_to_abc, SequenceSet)
from .ts import DEFAULT_DT_MACRO, SeqMode, SeqNetwork, build_ts, check_zero_seq_grounding

DIVERGENCE_PU = 10.0


class HybridDivergenceError(RuntimeError):
    pass


class Protocol(str, Enum):
    PosSeqPQ = "PosSeqPQ"
    ThreeSeqCurrent = "ThreeSeqCurrent"

    @classmethod
    def parse(cls, value) -> "Protocol":
        aliases = {"pos": cls.PosSeqPQ, "3seq": cls.ThreeSeqCurrent}
        if isinstance(value, str) and value in aliases:
            return aliases[value]
        return cls(value)


@dataclass(frozen=True)
class BoundarySpec:
    bus: int
    protocol: Protocol = Protocol.PosSeqPQ
    delay_steps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol.parse(self.protocol))
        if self.delay_steps < 0:
            raise ValueError("delay_steps must be >= 0")


class Direction(str, Enum):
    EmtToTs = "EmtToTs"
    TsToEmt = "TsToEmt"


@dataclass(frozen=True)
class ExchangeMessage:
    """Immutable boundary message; ``payload`` is a tuple of ``(name, value)`` pairs."""

    direction: Direction
    macro_index: int
    kind: str
    payload: tuple

    def __getitem__(self, key):
        for k, v in self.payload:
            if k == key:
                return v
        raise KeyError(key)


def macro_steps(dt: float, dt_macro: float) -> int:
    """Micro steps per macro step (the macro step is snapped to a multiple of ``dt``)."""
    n = int(round(dt_macro / dt))
    if n < 1:
        raise ValueError("dt_macro must be at least dt")
    return n


@dataclass
class HybridSplit:
    emt: EmtSystem
    ts: SeqNetwork
    boundary: BoundarySpec
    z_eq: complex
    emt_buses: tuple[int, ...]
    ts_buses: tuple[int, ...]


def split(model: NetworkModel, boundary: BoundarySpec, emt_buses, dt: float = DEFAULT_DT,
          dt_macro: float = DEFAULT_DT_MACRO, faults=(), fo: FoAttachment | None = None) -> HybridSplit:
    emt_set = set(emt_buses)
    b = boundary.bus
    if b not in emt_set:
        raise NetworkError("the boundary bus must belong to the EMT region")
    ts_set = (set(model.bus_ids) - emt_set) | {b}
    if len(ts_set) < 2 or len(emt_set) < 1 or emt_set == {b}:
        raise NetworkError("the cut leaves one side empty")
    for br in model.branches:
        ends = {br.from_bus, br.to_bus}
        if ends & (emt_set - {b}) and ends & (ts_set - {b}):
            raise NetworkError(f"branch {br.name} crosses the cut away from the boundary bus")
    for f in faults:
        if f.bus not in emt_set:
            raise NetworkError(f"fault at bus {f.bus} is outside the EMT region")
    mode = SeqMode.ThreeSeq if boundary.protocol is Protocol.ThreeSeqCurrent else SeqMode.PosOnly
    ts = build_ts(model, ts_set, mode, boundary_buses=(b,), dt_macro=dt_macro)
    if mode is SeqMode.ThreeSeq:
        check_zero_seq_grounding(ts, b)
    z_eq = ts.thevenin_impedance(b, 1)
    emt = EmtSystem(model, emt_set, dt, boundary={b: z_eq}, faults=faults, fo=fo)
    return HybridSplit(emt, ts, boundary, z_eq, tuple(sorted(emt_set)), tuple(sorted(ts_set)))


@dataclass
class HybridRunRecord:
    dt: float
    dt_macro: float
    steps_per_macro: int
    base_kv_ll: float
    boundary: BoundarySpec
    emt_waveform: ThreePhaseWaveform
    ts_waveform: ThreePhaseWaveform
    emt_seq: np.ndarray        # (3, K+1) boundary voltages estimated on the waveform side
    emt_current_seq: np.ndarray  # (3, K+1) boundary current injected into the phasor side
    ts_seq: np.ndarray         # (3, K+1) boundary voltages of the phasor side
    source_seq: np.ndarray     # (3, K+1) boundary source EMF driving the waveform side
    messages: tuple
    consumption: tuple
    wall_clock: dict = field(default_factory=dict)

    @property
    def macro_times(self) -> np.ndarray:
        return self.dt_macro * np.arange(self.ts_seq.shape[1])

    def ts_trajectory(self, seq: int = 1) -> PhasorTrajectory:
        return PhasorTrajectory.from_phasors(0.0, self.dt_macro, self.ts_seq[_row(seq)], self.base_kv_ll)

    def emt_trajectory(self, seq: int = 1) -> PhasorTrajectory:
        return PhasorTrajectory.from_phasors(0.0, self.dt_macro, self.emt_seq[_row(seq)], self.base_kv_ll)


@dataclass
class FullEmtRecord:
    dt: float
    dt_macro: float
    base_kv_ll: float
    bus: int
    waveform: ThreePhaseWaveform
    seq: np.ndarray  # (3, K+1)
    wall_clock: dict = field(default_factory=dict)

    def trajectory(self, seq: int = 1) -> PhasorTrajectory:
        return PhasorTrajectory.from_phasors(0.0, self.dt_macro, self.seq[_row(seq)], self.base_kv_ll)


def _row(seq: int) -> int:
    return {1: 0, 2: 1, 0: 2}[seq]


def _seq_of(phases: np.ndarray) -> np.ndarray:
    s = abc_to_seq(phases[0], phases[1], phases[2])
    return np.array([s.pos, s.neg, s.zero])


def _abc_of(seq: np.ndarray) -> np.ndarray:
    return np.array(seq_to_abc(SequenceSet(seq[0], seq[1], seq[2])))


class _Boundary:
    """Padded recorder of boundary voltage and source current with phasor estimation."""

    def __init__(self, emt: EmtSystem, bus: int, total_steps: int, f0: float):
        self.bus = bus
        self.est = PhasorEstimator(emt.dt, f0, 1.0)
        self.pad = emt.n_pad
        if self.pad < self.est.n:
            raise ValueError("pre-history shorter than the estimation window")
        self.v = np.empty((3, self.pad + total_steps + 1))
        self.i = np.empty_like(self.v)
        self.v[:, :self.pad] = emt.pre_history_bus(bus)
        self.i[:, :self.pad] = emt.pre_history_element(f"eq:{bus}")
        self.vcols = emt.bus_columns(bus)
        self.icols = emt.monitored_columns(f"eq:{bus}")
        self.filled = self.pad
        model = emt.model
        self.v_peak = nominal_peak(model.bus(bus).base_kv_ll)
        self.i_peak = model.current_peak_base(bus)
        self.dt = emt.dt
        self.f0 = f0

    def append(self, v_blk: np.ndarray, i_blk: np.ndarray):
        n = v_blk.shape[0]
        self.v[:, self.filled:self.filled + n] = v_blk[:, self.vcols].T
        self.i[:, self.filled:self.filled + n] = i_blk[:, self.icols].T
        self.filled += n

    def phasors_at(self, step: int):
        """Frame phasors (pu) of phase voltages and source currents at micro step ``step``."""
        end = self.pad + step + 1
        t_end = step * self.dt
        xv = self.est.fit(self.v[:, :end])
        xi = self.est.fit(self.i[:, :end])
        return (end_to_frame(xv, t_end, self.f0) / self.v_peak,
                end_to_frame(xi, t_end, self.f0) / self.i_peak)


def _interp_block(e0: np.ndarray, e1: np.ndarray, steps: np.ndarray, k: int, n_sub: int,
                  dt: float, omega: float, peak: float, hold: bool) -> np.ndarray:
    """Per-phase waveforms over micro steps of macro interval ``k``."""
    frac = (steps - k * n_sub) / n_sub
    t = steps * dt
    out = np.empty((3, steps.size))
    for ph in range(3):
        m0, m1 = abs(e0[ph]), abs(e1[ph])
        a0 = np.angle(e0[ph])
        a1 = a0 + (np.angle(e1[ph]) - a0 + math.pi) % (2 * math.pi) - math.pi
        if hold:
            m, a = np.full_like(frac, m1), np.full_like(frac, a1)
        else:
            m = m0 + (m1 - m0) * frac
            a = a0 + (a1 - a0) * frac
        out[ph] = peak * m * np.sin(omega * t + a)
    return out


def run_hybrid(model: NetworkModel, boundary: BoundarySpec, emt_buses, duration: float,
               faults=(), fo: FoAttachment | None = None, dt: float = DEFAULT_DT,
               dt_macro: float = DEFAULT_DT_MACRO) -> HybridRunRecord:
    """Run the co-simulation for ``duration`` seconds.

    Per macro interval ``(t_k, t_k+1]``: the phasor side solves for ``t_k+1``
    with the waveform-side measurement taken at ``t_{k+1-d}``, the waveform
    side is then driven by the boundary EMF interpolated between ``t_k`` and
    ``t_k+1`` and, at ``t_k+1``, a new measurement is queued.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    wall0 = time.perf_counter()
    n_sub = macro_steps(dt, dt_macro)
    dtm = n_sub * dt
    k_total = int(math.ceil(duration / dtm - 1e-9))
    total_steps = k_total * n_sub
    hs = split(model, boundary, emt_buses, dt, dtm, faults, fo)
    emt, ts, bus = hs.emt, hs.ts, boundary.bus
    three_seq = boundary.protocol is Protocol.ThreeSeqCurrent
    z_eq = hs.z_eq
    omega = 2 * math.pi * model.f0
    base_kv = model.bus(bus).base_kv_ll
    peak = nominal_peak(base_kv)
    d = boundary.delay_steps

    e_seq = np.zeros((3, k_total + 1), dtype=complex)
    e_seq[0, 0] = ts.open_circuit_voltage(bus)
    v_blk, i_blk = emt.initialize({bus: e_seq[0, 0]})
    rec = _Boundary(emt, bus, total_steps, model.f0)
    rec.append(v_blk, i_blk)

    emt_seq = np.zeros((3, k_total + 1), dtype=complex)
    cur_seq = np.zeros((3, k_total + 1), dtype=complex)
    ts_seq = np.zeros((3, k_total + 1), dtype=complex)
    messages: list[ExchangeMessage] = []
    consumption: list[tuple[int, int]] = []
    by_index: dict[int, ExchangeMessage] = {}

    def measure(k: int) -> ExchangeMessage:
        vph, iph = rec.phasors_at(k * n_sub)
        vs = _seq_of(vph)
        inj = -_seq_of(iph)  # current injected into the phasor-side bus
        emt_seq[:, k] = vs
        cur_seq[:, k] = inj
        if np.max(np.abs(vs)) > DIVERGENCE_PU:
            raise HybridDivergenceError(f"waveform-side boundary voltage exceeds {DIVERGENCE_PU} pu at t={k * dtm:.4f}s")
        if three_seq:
            payload = (("i_pos", complex(inj[0])), ("i_neg", complex(inj[1])), ("i_zero", complex(inj[2])))
            kind = "seq_current"
        else:
            s = vs[0] * np.conj(inj[0])
            payload = (("p", float(s.real)), ("q", float(s.imag)), ("v_pos", complex(vs[0])))
            kind = "pq"
        return ExchangeMessage(Direction.EmtToTs, k, kind, payload)

    def emit(msg: ExchangeMessage):
        messages.append(msg)
        if msg.direction is Direction.EmtToTs:
            by_index[msg.macro_index] = msg

    def consume(msg: ExchangeMessage) -> np.ndarray:
        """Apply ``msg`` to the phasor side; returns the injected sequence currents used."""
        if three_seq:
            used = np.array([msg["i_pos"], msg["i_neg"], msg["i_zero"]])
            for s, val in zip((1, 2, 0), used):
                ts.inject(bus, s, val)
        else:
            ts.inject_pq(bus, msg["p"], msg["q"], v_ref=msg["v_pos"])
            used = np.array([ts.injections[0, ts.index[bus]], 0, 0])
        return used

    # steady pre-start messages for negative indices, then the t = 0 measurement
    first = measure(0)
    for j in range(-max(d, 1) + 1, 0):
        emit(ExchangeMessage(Direction.EmtToTs, j, first.kind, first.payload))
    emit(first)
    used = consume(first)
    state = ts.initial_state(0.0)
    ts_seq[:, 0] = state.seq(ts, bus)
    e_seq[:, 0] = ts_seq[:, 0] - z_eq * used if three_seq else np.array([ts_seq[0, 0] - z_eq * used[0], 0, 0])
    emit(ExchangeMessage(Direction.TsToEmt, 0, "seq_voltage", _seq_payload(ts_seq[:, 0])))

    t_ts = t_emt = 0.0
    for k in range(k_total):
        c0 = time.perf_counter()
        j = k + 1 - max(d, 1)
        msg = by_index[j]
        consumption.append((k + 1, j))
        used = consume(msg)
        state = ts.solve_step(state)
        vts = state.seq(ts, bus)
        if np.max(np.abs(vts)) > DIVERGENCE_PU:
            raise HybridDivergenceError(f"phasor-side boundary voltage exceeds {DIVERGENCE_PU} pu at t={(k + 1) * dtm:.4f}s")
        ts_seq[:, k + 1] = vts
        if three_seq:
            e_seq[:, k + 1] = vts - z_eq * used
        else:
            e_seq[:, k + 1] = (vts[0] - z_eq * used[0], 0, 0)
        emit(ExchangeMessage(Direction.TsToEmt, k + 1, "seq_voltage", _seq_payload(vts)))
        c1 = time.perf_counter()
        steps = np.arange(k * n_sub + 1, (k + 1) * n_sub + 1)
        wave = _interp_block(_abc_of(e_seq[:, k]), _abc_of(e_seq[:, k + 1]), steps, k, n_sub,
                             dt, omega, peak, hold=(d == 0))
        v_blk, i_blk = emt.advance(n_sub, {bus: wave})
        rec.append(v_blk, i_blk)
        emit(measure(k + 1))
        t_ts += c1 - c0
        t_emt += time.perf_counter() - c1

    emt_wave = ThreePhaseWaveform.from_array(0.0, dt, rec.v[:, rec.pad:])
    n_out = total_steps + 1
    if three_seq:
        phases = np.array([_abc_of(ts_seq[:, k]) for k in range(k_total + 1)]).T
        ts_wave = reconstruct_phases(0.0, dtm, phases, base_kv, model.f0, dt, n_out)
    else:
        traj = PhasorTrajectory.from_phasors(0.0, dtm, ts_seq[0], base_kv)
        ts_wave = reconstruct_abc(traj, model.f0, dt, n_out)
    return HybridRunRecord(
        dt=dt, dt_macro=dtm, steps_per_macro=n_sub, base_kv_ll=base_kv, boundary=boundary,
        emt_waveform=emt_wave, ts_waveform=ts_wave, emt_seq=emt_seq, emt_current_seq=cur_seq,
        ts_seq=ts_seq, source_seq=e_seq, messages=tuple(messages), consumption=tuple(consumption),
        wall_clock={"total_s": time.perf_counter() - wall0, "ts_s": t_ts, "emt_s": t_emt},
    )


def _seq_payload(v: np.ndarray) -> tuple:
    return (("v_pos", complex(v[0])), ("v_neg", complex(v[1])), ("v_zero", complex(v[2])))


def run_full_emt(model: NetworkModel, bus: int, duration: float, faults=(),
                 fo: FoAttachment | None = None, dt: float = DEFAULT_DT,
                 dt_macro: float = DEFAULT_DT_MACRO) -> FullEmtRecord:
    """Whole network as waveforms; boundary-bus sequence phasors sampled on the macro grid."""
    wall0 = time.perf_counter()
    n_sub = macro_steps(dt, dt_macro)
    dtm = n_sub * dt
    k_total = int(math.ceil(duration / dtm - 1e-9))
    emt = EmtSystem(model, model.bus_ids, dt, faults=faults, fo=fo)
    emt.run(k_total * dtm)
    v = emt.bus_voltages(bus, padded=True)
    est = PhasorEstimator(dt, model.f0, 1.0)
    ends = emt.n_pad + n_sub * np.arange(k_total + 1)
    peak = nominal_peak(model.bus(bus).base_kv_ll)
    t_end = dt * n_sub * np.arange(k_total + 1)
    phases = np.array([end_to_frame(est.fit_at(v[ph], ends), t_end, model.f0) / peak for ph in range(3)])
    seq = _seq_of(phases)
    wave = ThreePhaseWaveform.from_array(0.0, dt, v[:, emt.n_pad:emt.n_pad + k_total * n_sub + 1])
    return FullEmtRecord(dt, dtm, model.bus(bus).base_kv_ll, bus, wave, seq,
                         {"total_s": time.perf_counter() - wall0})


__all__ = [
    "BoundarySpec", "Direction", "ExchangeMessage", "FaultSpec", "FoAttachment", "FullEmtRecord",
    "HybridDivergenceError", "HybridRunRecord", "HybridSplit", "Protocol", "macro_steps",
    "run_full_emt", "run_hybrid", "split",
]
