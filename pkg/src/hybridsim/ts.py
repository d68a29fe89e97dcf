"""Sequence-domain phasor network solver for the transient-stability side."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .network import NetworkError, NetworkModel

SEQS = (1, 2, 0)  # storage order: positive, negative, zero
DEFAULT_DT_MACRO = 1.0 / 120.0


class SeqMode(str, Enum):
    PosOnly = "PosOnly"
    ThreeSeq = "ThreeSeq"


class FloatingZeroSequenceError(NetworkError):
    """No finite zero-sequence path to ground from the TS region."""


class SmallVoltageError(ZeroDivisionError):
    """Power-to-current conversion attempted at (near) zero voltage."""


@dataclass
class TsState:
    t: float
    v: np.ndarray  # (3, nbus) complex: rows positive, negative, zero

    def pos(self, net: "SeqNetwork", bus: int) -> complex:
        return complex(self.v[0, net.index[bus]])

    def seq(self, net: "SeqNetwork", bus: int) -> np.ndarray:
        return self.v[:, net.index[bus]].copy()


class SeqNetwork:
    """Per-sequence admittance model of ``region`` with Norton sources.

    Loads at ``exclude_shunts_at`` buses are left out; on a bus-type boundary
    those shunts belong to the waveform side.
    """

    V_EPS = 1e-6

    def __init__(self, model: NetworkModel, region, mode: SeqMode = SeqMode.PosOnly,
                 boundary_buses=(), exclude_shunts_at=(), dt_macro: float = DEFAULT_DT_MACRO):
        self.model = model
        self.mode = SeqMode(mode)
        self.buses = sorted(set(region))
        if not self.buses:
            raise NetworkError("empty TS region")
        if not model.is_connected(self.buses):
            raise NetworkError(f"TS region {self.buses} is not connected")
        self.index = {b: i for i, b in enumerate(self.buses)}
        self.boundary_buses = tuple(boundary_buses)
        for b in self.boundary_buses:
            if b not in self.index:
                raise NetworkError(f"boundary bus {b} is not in the TS region")
        if dt_macro <= 0:
            raise ValueError("dt_macro must be positive")
        self.dt_macro = dt_macro
        n = len(self.buses)
        y1, _ = model.branch_ybus(self.buses, seq=1)
        y0, _ = model.branch_ybus(self.buses, seq=0)
        self.y = np.stack([y1, y1.copy(), y0])
        self.i_src = np.zeros(n, dtype=complex)
        excluded = set(exclude_shunts_at)
        for ld in model.loads:
            if ld.bus in self.index and ld.bus not in excluded:
                ya = model.load_admittance(ld)
                k = self.index[ld.bus]
                self.y[:, k, k] += ya
        for s in model.sources:
            if s.bus not in self.index:
                continue
            k = self.index[s.bus]
            ys = 1.0 / s.z
            self.y[0, k, k] += ys
            self.y[1, k, k] += ys
            if s.grounded:
                self.y[2, k, k] += ys
            if s.emf is None:
                raise NetworkError(f"source {s.name} has no EMF; run a power flow first")
            self.i_src[k] += s.emf * ys
        self.injections = np.zeros((3, n), dtype=complex)
        self._last_v: np.ndarray | None = None
        self._factor_cache: dict = {}

    @property
    def active_seqs(self) -> tuple[int, ...]:
        return (0, 1, 2) if self.mode is SeqMode.ThreeSeq else (0,)

    def _inv(self, s: int) -> np.ndarray:
        inv = self._factor_cache.get(s)
        if inv is None:
            y = self.y[s]
            if np.linalg.cond(y) > 1e14:
                if s == 2:
                    raise FloatingZeroSequenceError("zero-sequence admittance matrix is singular")
                raise NetworkError("singular admittance matrix")
            inv = np.linalg.inv(y)
            self._factor_cache[s] = inv
        return inv

    def check(self):
        """Factor every active sequence matrix (raises on singular networks)."""
        for s in self.active_seqs:
            self._inv(s)

    # -- modifications -----------------------------------------------------
    def add_shunt(self, bus: int, y: complex, seqs=(0, 1, 2)):
        k = self.index[bus]
        for s in seqs:
            self.y[s, k, k] += y
        self._factor_cache.clear()

    def inject(self, bus: int, seq: int, current: complex):
        """Set the persistent current (pu) injected into ``bus``; ``seq`` is 1, 2 or 0."""
        if bus not in self.index:
            raise NetworkError(f"bus {bus} is not in the TS region")
        self.injections[SEQS.index(seq), self.index[bus]] = current

    def inject_pq(self, bus: int, p_pu: float, q_pu: float, v_ref: complex | None = None):
        """Positive-sequence injection of ``p + jq`` converted with ``I = conj(S / V)``.

        ``v_ref`` defaults to the last solved voltage at ``bus``.
        """
        if v_ref is None:
            v_ref = 1.0 + 0j if self._last_v is None else self._last_v[0, self.index[bus]]
        if abs(v_ref) < self.V_EPS:
            raise SmallVoltageError(f"|V| = {abs(v_ref):.3e} pu at bus {bus}: cannot convert P/Q to current")
        self.inject(bus, 1, (complex(p_pu, q_pu) / v_ref).conjugate())

    def clear_injections(self):
        self.injections[:] = 0

    # -- solving -----------------------------------------------------------
    def solve(self) -> np.ndarray:
        v = np.zeros_like(self.injections)
        for s in self.active_seqs:
            rhs = self.injections[s] + (self.i_src if s == 0 else 0)
            v[s] = self._inv(s) @ rhs
        self._last_v = v
        return v

    def initial_state(self, t: float = 0.0) -> TsState:
        return TsState(t, self.solve())

    def solve_step(self, state: TsState) -> TsState:
        return TsState(state.t + self.dt_macro, self.solve())

    def thevenin_impedance(self, bus: int, seq: int = 1) -> complex:
        s = SEQS.index(seq)
        k = self.index[bus]
        return complex(self._inv(s)[k, k])

    def open_circuit_voltage(self, bus: int) -> complex:
        """Positive-sequence voltage at ``bus`` with all injections removed."""
        return complex((self._inv(0) @ self.i_src)[self.index[bus]])


def build_ts(model: NetworkModel, region, mode: SeqMode = SeqMode.PosOnly, boundary_buses=(),
             dt_macro: float = DEFAULT_DT_MACRO) -> SeqNetwork:
    net = SeqNetwork(model, region, mode, boundary_buses, exclude_shunts_at=boundary_buses,
                     dt_macro=dt_macro)
    net.check()
    return net


def check_zero_seq_grounding(net: SeqNetwork, bus: int, cap: float = 1e4) -> complex:
    """Zero-sequence Thevenin impedance at ``bus``; raises if effectively infinite."""
    if net.mode is not SeqMode.ThreeSeq:
        raise ValueError("zero-sequence check needs a three-sequence network")
    z0 = net.thevenin_impedance(bus, 0)
    if not np.isfinite(z0) or abs(z0) > cap:
        raise FloatingZeroSequenceError(f"zero-sequence Thevenin impedance {abs(z0):.3e} pu exceeds {cap} pu")
    return z0

