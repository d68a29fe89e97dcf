"""Three-phase waveform model of a network region, built on :mod:`.circuit`."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..network import NetworkError, NetworkModel
from ..signals import (PHASE_OFFSETS, FoKind, FoSourceSpec, ThreePhaseWaveform, nominal_peak,
                       synth_fo)
from .circuit import GROUND, Circuit

PHASES = "abc"
DEFAULT_DT = 20e-6


class FaultKind(str, Enum):
    ThreePhaseG = "ThreePhaseG"
    SinglePhaseG = "SinglePhaseG"
    PhaseBCtoG = "PhaseBCtoG"

    @property
    def poles(self) -> tuple[int, ...]:
        return {"ThreePhaseG": (0, 1, 2), "SinglePhaseG": (0,), "PhaseBCtoG": (1, 2)}[self.value]


class Clearing(str, Enum):
    ZERO_CROSSING = "zero_crossing"
    INSTANT = "instant"


@dataclass(frozen=True)
class FaultSpec:
    bus: int
    kind: FaultKind
    t_on: float
    t_off: float
    r_fault: float = 0.0
    clearing: Clearing = Clearing.ZERO_CROSSING

    def __post_init__(self):
        object.__setattr__(self, "kind", FaultKind(self.kind))
        object.__setattr__(self, "clearing", Clearing(self.clearing))
        if not (self.t_off > self.t_on >= 0):
            raise ValueError("fault times must satisfy t_off > t_on >= 0")
        if self.r_fault < 0:
            raise ValueError("r_fault must be non-negative")


@dataclass(frozen=True)
class FoAttachment:
    """Forced-oscillation voltage source connected to ``bus`` through a breaker."""

    bus: int
    kind: FoKind
    v_fo_pu: float
    f_fo: float
    t_enable: float
    t_close: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", FoKind(self.kind))
        if self.v_fo_pu < 0 or self.f_fo <= 0:
            raise ValueError("v_fo_pu must be >= 0 and f_fo > 0")
        if self.t_close < 0 or self.t_enable < 0:
            raise ValueError("FO times must be non-negative")


def coupled_rl(z1: complex, z0: complex, omega: float):
    """Self/mutual R and L matrices of a transposed three-phase branch."""
    zs, zm = (z0 + 2 * z1) / 3.0, (z0 - z1) / 3.0
    r = np.full((3, 3), zm.real) + np.eye(3) * (zs.real - zm.real)
    x = np.full((3, 3), zm.imag) + np.eye(3) * (zs.imag - zm.imag)
    return r, x / omega


class EmtSystem:
    """Waveform model of ``region``.

    ``boundary`` maps a bus to the per-unit impedance of a controlled
    three-phase source that stands in for the network outside the region.
    Node voltages are recorded on every step, starting with the
    steady-state sample at ``t = 0``.
    """

    R_ON_OHM = 1e-4
    FO_R_INT_PU = 1e-3

    def __init__(self, model: NetworkModel, region, dt: float = DEFAULT_DT,
                 boundary: dict[int, complex] | None = None,
                 faults=(), fo: FoAttachment | None = None, pad_cycles: float = 2.0):
        self.model = model
        self.region = sorted(set(region))
        if not self.region:
            raise NetworkError("empty EMT region")
        for b in self.region:
            model.bus(b)
        if not model.is_connected(self.region):
            raise NetworkError(f"EMT region {self.region} is not connected")
        self.dt = dt
        self.omega = 2 * math.pi * model.f0
        self.boundary = dict(boundary or {})
        self.faults = tuple(faults)
        self.fo = fo
        for b in (*self.boundary, *(f.bus for f in self.faults), *([fo.bus] if fo else [])):
            if b not in self.region:
                raise NetworkError(f"bus {b} is outside the EMT region")
        self.n_pad = int(math.ceil(pad_cycles / (model.f0 * dt)))
        self._build()
        self.next_step = 0
        self._v_blocks: list[np.ndarray] = []
        self._i_blocks: list[np.ndarray] = []
        self._events = self._event_table()

    # -- construction ------------------------------------------------------
    def _node(self, bus, ph):
        return f"b{bus}.{PHASES[ph]}"

    def _bus_nodes(self, bus):
        return [self._node(bus, k) for k in range(3)]

    def _build(self):
        m, w = self.model, self.omega
        c = Circuit(self.dt)
        for b in self.region:
            for k in range(3):
                c.add_node(self._node(b, k))
        for br in m.branches_within(self.region):
            zb = m.z_base(br.to_bus)
            r, l = coupled_rl(br.z1 * zb, br.z0 * zb, w)
            coef = m.bus(br.to_bus).base_kv_ll / (br.ratio * m.bus(br.from_bus).base_kv_ll)
            c.add_rl(f"br:{br.name}", self._bus_nodes(br.from_bus), self._bus_nodes(br.to_bus), r, l, coef)
        gnd = [GROUND] * 3
        for idx, ld in enumerate(m.loads):
            if ld.bus not in self.region:
                continue
            y = m.load_admittance(ld)
            zb = m.z_base(ld.bus)
            nodes = self._bus_nodes(ld.bus)
            if y.real > 0:
                c.add_r(f"ld{idx}:r", nodes, gnd, zb / y.real)
            b_ind = -y.imag
            if b_ind > 0:
                c.add_rl(f"ld{idx}:l", nodes, gnd, 0.0, zb / (w * b_ind))
            elif b_ind < 0:
                c.add_c(f"ld{idx}:c", nodes, gnd, -b_ind / (zb * w))
        self.source_cols: list[tuple[int, complex]] = []  # (first column, frame phasor pu)
        for s in m.sources:
            if s.bus not in self.region:
                continue
            if s.emf is None:
                raise NetworkError(f"source {s.name} has no EMF; run a power flow first")
            kn = [c.add_known(f"s:{s.name}.{PHASES[k]}") for k in range(3)]
            zb = m.z_base(s.bus)
            if s.x_pu <= 0:
                raise NetworkError(f"source {s.name} needs positive reactance")
            c.add_rl(f"src:{s.name}", kn, self._bus_nodes(s.bus), s.r_pu * zb, s.x_pu * zb / w)
            self.source_cols.append((c.known[kn[0]], complex(s.emf) * nominal_peak(m.bus(s.bus).base_kv_ll)))
        self.boundary_cols: dict[int, int] = {}
        for bus, z in self.boundary.items():
            z = complex(z)
            if z.imag <= 0 or z.real < 0:
                raise NetworkError("boundary equivalent must be resistive-inductive")
            kn = [c.add_known(f"eq:{bus}.{PHASES[k]}") for k in range(3)]
            zb = m.z_base(bus)
            c.add_rl(f"eq:{bus}", kn, self._bus_nodes(bus), z.real * zb, z.imag * zb / w)
            c.monitor(f"eq:{bus}")
            self.boundary_cols[bus] = c.known[kn[0]]
        for i, f in enumerate(self.faults):
            zb_r = f.r_fault + self.R_ON_OHM
            c.add_switch(f"flt{i}", self._bus_nodes(f.bus), gnd, zb_r, closed=False)
            c.monitor(f"flt{i}")
        self.fo_col = None
        if self.fo is not None:
            kn = [c.add_known(f"fo.{PHASES[k]}") for k in range(3)]
            c.add_switch("fo_brk", kn, self._bus_nodes(self.fo.bus),
                         self.FO_R_INT_PU * m.z_base(self.fo.bus), closed=False)
            c.monitor("fo_brk")
            self.fo_col = c.known[kn[0]]
        c.compile()
        self.circuit = c
        self.node_index = dict(c.nodes)

    def _event_table(self):
        ev = []
        for i, f in enumerate(self.faults):
            ev.append((self._step_of(f.t_on), "close", f"flt{i}", f.kind.poles))
            action = "open_zero" if f.clearing is Clearing.ZERO_CROSSING else "open"
            ev.append((self._step_of(f.t_off), action, f"flt{i}", f.kind.poles))
        if self.fo is not None:
            ev.append((self._step_of(self.fo.t_close), "close", "fo_brk", (0, 1, 2)))
        ev.sort(key=lambda e: e[0])
        return ev

    def _step_of(self, t: float) -> int:
        return int(round(t / self.dt))

    # -- sources -----------------------------------------------------------
    def _known_block(self, steps: np.ndarray, boundary_block: dict | None) -> np.ndarray:
        t = steps * self.dt
        w = np.zeros((steps.size, self.circuit.nk))
        wt = self.omega * t
        for col, p in self.source_cols:
            # sin-referenced frame phasor -> instantaneous value, per phase
            for k in range(3):
                w[:, col + k] = abs(p) * np.sin(wt + np.angle(p) + PHASE_OFFSETS[k])
        for bus, col in self.boundary_cols.items():
            blk = None if boundary_block is None else boundary_block.get(bus)
            if blk is None:
                raise ValueError(f"missing boundary waveform for bus {bus}")
            w[:, col:col + 3] = np.asarray(blk, dtype=float).T
        if self.fo_col is not None:
            for k in range(3):
                w[:, self.fo_col + k] = synth_fo(self._fo_specs[k], t)
        return w

    def _steady_known(self, boundary_phasors: dict | None) -> np.ndarray:
        """Cosine-convention complex amplitudes of the known nodes."""
        x = np.zeros(self.circuit.nk, dtype=complex)
        for col, p in self.source_cols:
            for k in range(3):
                x[col + k] = -1j * p * np.exp(1j * PHASE_OFFSETS[k])
        for bus, col in self.boundary_cols.items():
            ph = np.asarray(boundary_phasors[bus], dtype=complex)
            if ph.ndim == 0:
                ph = ph * np.exp(1j * PHASE_OFFSETS)
            peak = nominal_peak(self.model.bus(bus).base_kv_ll)
            x[col:col + 3] = -1j * peak * ph
        return x

    # -- running -----------------------------------------------------------
    def initialize(self, boundary_phasors: dict | None = None, boundary_block: dict | None = None):
        """Start in the periodic steady state and record the ``t = 0`` sample.

        ``boundary_phasors`` gives frame phasors (pu) of the boundary sources,
        either one positive-sequence value or three per-phase values per bus.
        """
        if self.boundary and boundary_phasors is None:
            raise ValueError("boundary phasors are required to initialise")
        self._x_known = self._steady_known(boundary_phasors)
        v = self.circuit.steady_state(self._x_known, self.omega)
        self.ss_node_phasors = v
        u, i = self.circuit.ss_branch_phasors
        self.ss_monitored_phasors = i[self.circuit.monitored_rows]
        if self.fo is not None:
            peak = nominal_peak(self.model.bus(self.fo.bus).base_kv_ll)
            specs = []
            for k, node in enumerate(self._bus_nodes(self.fo.bus)):
                xb = v[self.node_index[node]]
                specs.append(FoSourceSpec(self.fo.kind, abs(xb), self.fo.v_fo_pu * peak, self.fo.f_fo,
                                          self.model.f0, float(np.angle(xb)), self.fo.t_enable))
            self._fo_specs = specs
        if boundary_block is None and self.boundary:
            boundary_block = {}
            for bus, col in self.boundary_cols.items():
                boundary_block[bus] = np.real(self._x_known[col:col + 3])[:, None]
        return self.advance(1, boundary_block)

    def advance(self, n_steps: int, boundary_block: dict | None = None):
        """Solve the next ``n_steps`` steps; boundary blocks are ``(3, n_steps)`` arrays in volts.

        Returns the node voltages and monitored currents of the new steps.
        """
        if n_steps <= 0:
            raise ValueError("n_steps must be positive")
        start = self.next_step
        steps = np.arange(start, start + n_steps)
        w = self._known_block(steps, boundary_block)
        # split at switching events that fall inside this block
        cuts = sorted({e[0] for e in self._events if start <= e[0] < start + n_steps} | {start})
        cuts.append(start + n_steps)
        vs, is_ = [], []
        for a, b in zip(cuts[:-1], cuts[1:]):
            self._apply_events(a)
            v, i = self.circuit.step_block(w[a - start:b - start])
            vs.append(v)
            is_.append(i)
        v = vs[0] if len(vs) == 1 else np.vstack(vs)
        i = is_[0] if len(is_) == 1 else np.vstack(is_)
        self._v_blocks.append(v)
        self._i_blocks.append(i)
        self.next_step = start + n_steps
        return v, i

    def _apply_events(self, step: int):
        for s, action, name, poles in self._events:
            if s != step:
                continue
            for p in poles:
                if action == "close":
                    self.circuit.set_switch(name, p, True)
                elif action == "open":
                    self.circuit.set_switch(name, p, False)
                    self.circuit.pending_open.pop((name, p), None)
                else:
                    self.circuit.request_open_at_zero(name, p)

    def run(self, duration: float, block: int = 20000):
        """Free-running simulation (no boundary sources) to ``duration`` seconds."""
        if self.boundary:
            raise ValueError("boundary sources need an orchestrator; use the hybrid runner")
        if self.next_step == 0:
            self.initialize()
        total = int(math.ceil(duration / self.dt - 1e-9))
        while self.next_step <= total:
            self.advance(min(block, total + 1 - self.next_step))

    # -- recorders ---------------------------------------------------------
    def _consolidate(self):
        if len(self._v_blocks) > 1:
            self._v_blocks = [np.vstack(self._v_blocks)]
            self._i_blocks = [np.vstack(self._i_blocks)]

    @property
    def n_recorded(self) -> int:
        return sum(b.shape[0] for b in self._v_blocks)

    def _pre_history(self, phasors: np.ndarray) -> np.ndarray:
        t = -self.dt * np.arange(self.n_pad, 0, -1)
        return np.real(phasors[None, :] * np.exp(1j * self.omega * t)[:, None])

    def bus_columns(self, bus: int) -> list[int]:
        return [self.node_index[n] for n in self._bus_nodes(bus)]

    def monitored_columns(self, name: str) -> list[int]:
        c = self.circuit
        offs = 0
        for el in c.monitored:
            if el == name:
                return list(range(offs, offs + c.elements[name].size))
            offs += c.elements[el].size
        raise KeyError(name)

    def pre_history_bus(self, bus: int) -> np.ndarray:
        """Steady-state samples ``(3, n_pad)`` preceding ``t = 0``."""
        return self._pre_history(self.ss_node_phasors[self.bus_columns(bus)]).T

    def pre_history_element(self, name: str) -> np.ndarray:
        return self._pre_history(self.ss_monitored_phasors[self.monitored_columns(name)]).T

    def bus_voltages(self, bus: int, padded: bool = False) -> np.ndarray:
        """Recorded phase voltages ``(3, n)`` in volts from ``t = 0`` (or from ``-n_pad*dt``)."""
        self._consolidate()
        cols = self.bus_columns(bus)
        data = self._v_blocks[0][:, cols]
        if padded:
            data = np.vstack([self._pre_history(self.ss_node_phasors[cols]), data])
        return data.T

    def element_currents(self, name: str, padded: bool = False) -> np.ndarray:
        """Recorded conductor currents ``(m, n)`` in amperes of a monitored element."""
        self._consolidate()
        cols = self.monitored_columns(name)
        data = self._i_blocks[0][:, cols]
        if padded:
            data = np.vstack([self._pre_history(self.ss_monitored_phasors[cols]), data])
        return data.T

    def waveform(self, bus: int) -> ThreePhaseWaveform:
        return ThreePhaseWaveform.from_array(0.0, self.dt, self.bus_voltages(bus))
