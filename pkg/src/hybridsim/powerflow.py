"""Newton-Raphson power flow in polar coordinates."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .network import BusKind, NetworkError, NetworkModel


class PowerFlowError(NetworkError):
    pass


@dataclass(frozen=True)
class PowerFlowResult:
    voltages: dict[int, complex]
    s_gen: dict[int, complex]
    iterations: int
    mismatch: float


def _injections(v, y):
    return v * np.conj(y @ v)


def solve_power_flow(model: NetworkModel, tol: float = 1e-12, max_iter: int = 30) -> PowerFlowResult:
    y, order = model.branch_ybus()
    n = len(order)
    buses = [model.bus(b) for b in order]
    s_load = np.zeros(n, dtype=complex)
    for ld in model.loads:
        s_load[order.index(ld.bus)] += complex(ld.p_mw, ld.q_mvar) / model.s_base_mva
    p_spec = np.array([b.p_gen_mw / model.s_base_mva for b in buses]) - s_load.real
    q_spec = -s_load.imag

    slack = [i for i, b in enumerate(buses) if b.kind is BusKind.SLACK]
    if len(slack) != 1:
        raise PowerFlowError("exactly one slack bus is required")
    pv = [i for i, b in enumerate(buses) if b.kind is BusKind.PV]
    pq = [i for i, b in enumerate(buses) if b.kind is BusKind.PQ]
    ang_idx = pv + pq

    vm = np.array([b.v_set if b.kind is not BusKind.PQ else 1.0 for b in buses])
    va = np.array([b.angle_set if b.kind is BusKind.SLACK else 0.0 for b in buses])

    mismatch = np.inf
    for it in range(1, max_iter + 1):
        v = vm * np.exp(1j * va)
        s = _injections(v, y)
        f = np.concatenate([p_spec[ang_idx] - s.real[ang_idx], q_spec[pq] - s.imag[pq]])
        mismatch = float(np.max(np.abs(f))) if f.size else 0.0
        if mismatch < tol:
            break
        # Jacobian of S w.r.t. angle and magnitude.
        ibus = y @ v
        diag_v = np.diag(v)
        ds_dva = 1j * diag_v @ np.conj(np.diag(ibus) - y @ diag_v)
        ds_dvm = diag_v @ np.conj(y @ np.diag(v / vm)) + np.conj(np.diag(ibus)) @ np.diag(v / vm)
        jac = np.block([
            [ds_dva.real[np.ix_(ang_idx, ang_idx)], ds_dvm.real[np.ix_(ang_idx, pq)]],
            [ds_dva.imag[np.ix_(pq, ang_idx)], ds_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError("singular power-flow Jacobian") from exc
        va[ang_idx] += dx[: len(ang_idx)]
        vm[pq] += dx[len(ang_idx):]
        if np.any(vm <= 0) or not np.all(np.isfinite(vm)):
            raise PowerFlowError("power flow diverged")
    else:
        raise PowerFlowError(f"power flow did not converge (mismatch {mismatch:.3e})")

    v = vm * np.exp(1j * va)
    s = _injections(v, y)
    s_gen = s + s_load
    return PowerFlowResult(
        voltages={b: complex(v[i]) for i, b in enumerate(order)},
        s_gen={b: complex(s_gen[i]) for i, b in enumerate(order)},
        iterations=it,
        mismatch=mismatch,
    )


def attach_power_flow(model: NetworkModel, pf: PowerFlowResult | None = None) -> NetworkModel:
    """Fix source EMFs and load impedances from a power-flow solution."""
    pf = pf or solve_power_flow(model)
    emfs = {}
    for src in model.sources:
        v = pf.voltages[src.bus]
        i_gen = (pf.s_gen[src.bus] / v).conjugate()
        emfs[src.name] = v + src.z * i_gen
    return replace(model.with_emfs(emfs), bus_voltages=dict(pf.voltages))
