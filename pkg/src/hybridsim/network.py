"""Network description shared by the waveform and phasor solvers.

Impedances are per unit on the system MVA base and the voltage base of the
branch's ``to_bus``.  A branch with ``ratio != 1`` carries an ideal
``ratio:1`` transformer on its ``from_bus`` side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class NetworkError(ValueError):
    pass


class BusKind(str, Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv_ll: float
    kind: BusKind = BusKind.PQ
    v_set: float = 1.0
    angle_set: float = 0.0
    p_gen_mw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BusKind(self.kind))
        if not self.base_kv_ll > 0:
            raise NetworkError(f"bus {self.id}: base voltage must be positive")


@dataclass(frozen=True)
class Branch:
    name: str
    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float
    ratio: float = 1.0
    r0_pu: float | None = None
    x0_pu: float | None = None

    def __post_init__(self):
        if self.r_pu < 0 or self.x_pu < 0 or (self.r_pu == 0 and self.x_pu == 0):
            raise NetworkError(f"branch {self.name}: impedance must be non-negative and non-zero")
        if not self.ratio > 0:
            raise NetworkError(f"branch {self.name}: ratio must be positive")

    @property
    def z1(self) -> complex:
        return complex(self.r_pu, self.x_pu)

    @property
    def z0(self) -> complex:
        r0 = self.r_pu if self.r0_pu is None else self.r0_pu
        x0 = self.x_pu if self.x0_pu is None else self.x0_pu
        return complex(r0, x0)

    @property
    def x_over_r(self) -> float:
        return math.inf if self.r_pu == 0 else self.x_pu / self.r_pu


@dataclass(frozen=True)
class Load:
    bus: int
    p_mw: float
    q_mvar: float


@dataclass(frozen=True)
class Source:
    """Ideal EMF behind a series impedance, star point grounded unless told otherwise."""

    name: str
    bus: int
    r_pu: float
    x_pu: float
    emf: complex | None = None
    grounded: bool = True

    @property
    def z(self) -> complex:
        return complex(self.r_pu, self.x_pu)


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    loads: tuple[Load, ...] = ()
    sources: tuple[Source, ...] = ()
    s_base_mva: float = 100.0
    f0: float = 60.0
    bus_voltages: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate bus ids")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise NetworkError(f"branch {br.name} references an unknown bus")
        for item in (*self.loads, *self.sources):
            if item.bus not in known:
                raise NetworkError(f"element at unknown bus {item.bus}")
        if not self.is_connected(known):
            raise NetworkError("network graph is not connected")

    # -- lookups -----------------------------------------------------------
    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise NetworkError(f"unknown bus {bus_id}")

    def z_base(self, bus_id: int) -> float:
        return self.bus(bus_id).base_kv_ll ** 2 / self.s_base_mva

    def current_peak_base(self, bus_id: int) -> float:
        """Per-phase peak current (A) corresponding to 1 pu."""
        return math.sqrt(2.0) * self.s_base_mva * 1e6 / (math.sqrt(3.0) * self.bus(bus_id).base_kv_ll * 1e3)

    def branches_within(self, region) -> list[Branch]:
        region = set(region)
        return [br for br in self.branches if br.from_bus in region and br.to_bus in region]

    def is_connected(self, region) -> bool:
        region = set(region)
        if not region:
            return False
        adj = {b: set() for b in region}
        for br in self.branches_within(region):
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen, stack = set(), [next(iter(region))]
        while stack:
            b = stack.pop()
            if b in seen:
                continue
            seen.add(b)
            stack.extend(adj[b] - seen)
        return seen == region

    def with_emfs(self, emfs: dict[str, complex]) -> "NetworkModel":
        srcs = tuple(replace(s, emf=emfs.get(s.name, s.emf)) for s in self.sources)
        return replace(self, sources=srcs)

    # -- admittance --------------------------------------------------------
    def branch_ybus(self, buses=None, seq: int = 1) -> tuple[np.ndarray, list[int]]:
        """Branch-only bus admittance matrix for sequence ``seq`` (1, 2 or 0)."""
        order = list(self.bus_ids if buses is None else buses)
        pos = {b: i for i, b in enumerate(order)}
        y = np.zeros((len(order), len(order)), dtype=complex)
        for br in self.branches_within(order):
            z = br.z0 if seq == 0 else br.z1
            ys = 1.0 / z
            f, t, k = pos[br.from_bus], pos[br.to_bus], br.ratio
            y[f, f] += ys / k**2
            y[t, t] += ys
            y[f, t] -= ys / k
            y[t, f] -= ys / k
        return y, order

    def load_admittance(self, load: Load) -> complex:
        """Constant-impedance equivalent (pu) at the solved bus voltage."""
        v = self.bus_voltages.get(load.bus, 1.0)
        s = complex(load.p_mw, load.q_mvar) / self.s_base_mva
        return s.conjugate() / abs(v) ** 2
