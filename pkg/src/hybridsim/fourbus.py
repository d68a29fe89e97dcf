"""Four-bus test system: IBR at bus 1, load at bus 2, synchronous source at bus 4."""

from __future__ import annotations

import cmath
import math

from .network import Branch, Bus, BusKind, Load, NetworkModel, Source
from .powerflow import attach_power_flow

S_BASE = 100.0
Z12 = complex(0.006, 0.06)
K12 = 1.025
Z_TOTAL = complex(0.002, 0.02)
X_OVER_R = 10.0
SCR_BUS2 = 5.0
# Zero-sequence impedance of the 2-3-4 lines relative to positive sequence.
LINE_Z0_FACTOR = 3.0
# Thevenin impedance of the IBR stand-in on the system base.
Z_IBR = complex(0.02, 0.2)


def bus4_source_impedance(scr: float = SCR_BUS2) -> complex:
    """Series impedance behind bus 4 giving the requested short-circuit ratio at bus 2.

    The ratio is taken against a 100 MVA IBR, so the grid seen from bus 2 towards
    bus 4 must have ``|Z_line + Z_s| = 1/scr`` pu with the same X/R as the lines.
    """
    mag = 1.0 / scr - abs(Z_TOTAL)
    if mag <= 0:
        raise ValueError("short-circuit ratio too high for the line impedance")
    return cmath.rect(mag, math.atan(X_OVER_R))


def build_four_bus(alpha: float = 0.1, solve: bool = True) -> NetworkModel:
    """Network with the bus 2 - bus 4 impedance split ``alpha`` : ``1 - alpha`` at bus 3."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    buses = (
        Bus(1, 0.6, BusKind.SLACK, v_set=1.02, angle_set=0.0),
        Bus(2, 34.5, BusKind.PQ),
        Bus(3, 34.5, BusKind.PQ),
        Bus(4, 34.5, BusKind.PV, v_set=1.0445, p_gen_mw=100.0),
    )
    z23, z34 = alpha * Z_TOTAL, (1.0 - alpha) * Z_TOTAL
    branches = (
        Branch("12", 1, 2, Z12.real, Z12.imag, ratio=K12),
        Branch("23", 2, 3, z23.real, z23.imag,
               r0_pu=LINE_Z0_FACTOR * z23.real, x0_pu=LINE_Z0_FACTOR * z23.imag),
        Branch("34", 3, 4, z34.real, z34.imag,
               r0_pu=LINE_Z0_FACTOR * z34.real, x0_pu=LINE_Z0_FACTOR * z34.imag),
    )
    zs4 = bus4_source_impedance()
    sources = (
        Source("ibr", 1, Z_IBR.real, Z_IBR.imag),
        Source("sg", 4, zs4.real, zs4.imag),
    )
    model = NetworkModel(buses, branches, (Load(2, 150.0, 40.0),), sources, S_BASE, 60.0)
    return attach_power_flow(model) if solve else model
