"""Scenario execution, parameter sweeps and file output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FoEvent, FourBusNetwork, InlineNetwork, ScenarioConfig
from .emt.system import FaultSpec, FoAttachment
from .error_index import (ErrorReport, IndexConfig, IndexWindow, ScalarTrace, build_report,
                          delta_v_diff)
from .fourbus import build_four_bus
from .hybrid import (BoundarySpec, FullEmtRecord, HybridRunRecord, Protocol, run_full_emt,
                     run_hybrid)
from .network import Branch, Bus, Load, NetworkModel, Source
from .powerflow import attach_power_flow
from .signals import amplitude_at, spectrum, tone_fit

DEFAULT_ALPHAS = tuple(round(0.1 * k, 1) for k in range(1, 10))
DEFAULT_FO_FREQS = (2.0, 9.0, 16.0, 23.0, 30.0, 37.0, 44.0)
_FMT = "%.9g"
# magnitude modulation below this is numerical noise
_DEPTH_FLOOR_PU = 1e-9


# --------------------------------------------------------------------------
# model assembly
# --------------------------------------------------------------------------


def build_network(cfg: ScenarioConfig) -> NetworkModel:
    net = cfg.network
    if isinstance(net, FourBusNetwork):
        return build_four_bus(net.alpha)
    assert isinstance(net, InlineNetwork)
    model = NetworkModel(
        buses=tuple(Bus(**b.model_dump()) for b in net.buses),
        branches=tuple(Branch(**b.model_dump()) for b in net.branches),
        loads=tuple(Load(**ld.model_dump()) for ld in net.loads),
        sources=tuple(Source(**s.model_dump()) for s in net.sources),
        s_base_mva=net.s_base_mva,
        f0=net.f0,
    )
    return attach_power_flow(model)


def _faults(cfg: ScenarioConfig) -> list[FaultSpec]:
    return [FaultSpec(f.bus, f.kind, f.t_on, f.t_off, f.r_fault, f.clearing) for f in cfg.faults]


def _fo(cfg: ScenarioConfig) -> FoAttachment | None:
    fo = cfg.fo
    if fo is None:
        return None
    return FoAttachment(fo.bus, fo.kind, fo.v_fo_pu, fo.f_fo, fo.t_enable, fo.t_close)


def index_config(cfg: ScenarioConfig) -> IndexConfig:
    ix = cfg.index
    return IndexConfig(IndexWindow(ix.t_start, ix.t_end), ix.threshold_a, ix.large_threshold)


# --------------------------------------------------------------------------
# single scenario
# --------------------------------------------------------------------------


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    hybrid: HybridRunRecord
    full: FullEmtRecord | None
    dv: ScalarTrace
    report: ErrorReport
    metrics: dict = field(default_factory=dict)


def fo_metrics(fo: FoEvent, hybrid: HybridRunRecord) -> dict:
    """Oscillation content on both sides of the boundary over the FO analysis window."""
    t0, t1 = fo.window()
    w_emt, w_ts = hybrid.emt_waveform, hybrid.ts_waveform
    i0 = int(round(t0 / w_emt.dt))
    i1 = int(round(t1 / w_emt.dt))
    f_e, a_e = spectrum(w_emt.a[i0:i1], w_emt.dt)
    f_t, a_t = spectrum(w_ts.a[i0:i1], w_ts.dt)
    amp_emt = amplitude_at(f_e, a_e, fo.f_fo)
    amp_ts = amplitude_at(f_t, a_t, fo.f_fo)
    floor = 1e-15 * max(amp_emt, 1.0)
    tm = hybrid.macro_times
    sel = (tm >= t0 - 1e-12) & (tm < t1 - 1e-12)
    c_emt = tone_fit(np.abs(hybrid.emt_seq[0, sel]), tm[sel], fo.f_fo)
    c_ts = tone_fit(np.abs(hybrid.ts_seq[0, sel]), tm[sel], fo.f_fo)
    depth_emt, depth_ts = abs(c_emt), abs(c_ts)
    modulated = depth_emt > _DEPTH_FLOOR_PU
    mis = float(np.angle(c_ts * np.conj(c_emt))) if modulated and depth_ts > _DEPTH_FLOOR_PU else None
    return {
        "fo_kind": fo.kind,
        "f_fo": fo.f_fo,
        "waveform_amp_emt": amp_emt,
        "waveform_amp_ts": amp_ts,
        "attenuation_db": 20.0 * math.log10(max(amp_emt, floor) / max(amp_ts, floor)),
        "depth_emt_pu": depth_emt,
        "depth_ts_pu": depth_ts,
        "depth_ratio": depth_ts / depth_emt if modulated else None,
        "phase_misalignment_rad": mis,
    }


def run_scenario(cfg: ScenarioConfig, full: FullEmtRecord | None = None) -> ScenarioResult:
    """Hybrid run (plus full-waveform reference when configured) and its error report.

    A precomputed reference run can be passed in ``full`` to share it between runs.
    """
    model = build_network(cfg)
    faults, fo = _faults(cfg), _fo(cfg)
    boundary = BoundarySpec(cfg.boundary.bus, Protocol.parse(cfg.boundary.protocol), cfg.boundary.delay_steps)
    hyb = run_hybrid(model, boundary, cfg.resolved_emt_region(), cfg.duration, faults, fo,
                     cfg.dt, cfg.dt_macro)
    if full is None and cfg.reference == "full_emt":
        full = run_full_emt(model, boundary.bus, cfg.duration, faults, fo, cfg.dt, cfg.dt_macro)
    icfg = index_config(cfg)
    dv = delta_v_diff(hyb.emt_waveform, hyb.ts_waveform, hyb.base_kv_ll)
    report = build_report(dv, hyb.ts_trajectory(1), icfg,
                          hyb.emt_trajectory(1) if full is not None else None,
                          full.trajectory(1) if full is not None else None)
    metrics = {}
    if cfg.fo is not None:
        metrics = fo_metrics(cfg.fo, hyb)
    return ScenarioResult(cfg, hyb, full, dv, report, metrics)


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------


@dataclass
class SweepPoint:
    value: float
    report: ErrorReport
    metrics: dict


@dataclass
class SweepResult:
    variable: str
    values: list[float]
    reports: list[ErrorReport]
    metrics: list[dict]

    def __post_init__(self):
        if not (len(self.values) == len(self.reports) == len(self.metrics)):
            raise ValueError("sweep result lengths differ")

    @property
    def e_true(self) -> list[float | None]:
        return [r.e_true for r in self.reports]

    def __len__(self):
        return len(self.values)


def with_alpha(cfg: ScenarioConfig, alpha: float) -> ScenarioConfig:
    if not isinstance(cfg.network, FourBusNetwork):
        raise ValueError("alpha sweeps need the four-bus network")
    return cfg.model_copy(update={"network": FourBusNetwork(alpha=alpha), "reference": "full_emt"}, deep=True)


def with_fo(cfg: ScenarioConfig, kind: str, f_fo: float) -> ScenarioConfig:
    base = cfg.fo or FoEvent(bus=2, kind=kind, v_fo_pu=0.1, f_fo=f_fo)
    fo = base.model_copy(update={"kind": kind, "f_fo": f_fo})
    events = [e for e in cfg.events if not isinstance(e, FoEvent)] + [fo]
    return ScenarioConfig.model_validate({**cfg.model_dump(), "events": [e.model_dump() for e in events],
                                          "reference": "full_emt"})


def _point(args) -> SweepPoint:
    cfg_json, value, out_dir, waveforms = args
    cfg = ScenarioConfig.model_validate_json(cfg_json)
    res = run_scenario(cfg)
    if out_dir is not None:
        write_scenario(res, Path(out_dir), waveforms=waveforms)
    return SweepPoint(value, res.report, res.metrics)


def _run_points(cfgs, values, workers: int, out_dir, label: str, waveforms: bool) -> list[SweepPoint]:
    jobs = []
    for cfg, v in zip(cfgs, values):
        sub = None if out_dir is None else str(Path(out_dir) / f"{label}_{v:g}")
        jobs.append((cfg.model_dump_json(), v, sub, waveforms))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_point, jobs))
    return [_point(j) for j in jobs]


def sweep_alpha(cfg: ScenarioConfig, values=DEFAULT_ALPHAS, workers: int = 1, out_dir=None,
                waveforms: bool = False) -> SweepResult:
    values = [float(v) for v in values]
    if not values or any(not 0 < v < 1 for v in values):
        raise ValueError("alpha values must lie in (0, 1)")
    pts = _run_points([with_alpha(cfg, v) for v in values], values, workers, out_dir, "alpha", waveforms)
    res = SweepResult("alpha", values, [p.report for p in pts], [p.metrics for p in pts])
    if out_dir is not None:
        write_sweep(res, Path(out_dir), "err_vs_alpha.csv")
    return res


def sweep_fo(cfg: ScenarioConfig, kind: str, freqs=DEFAULT_FO_FREQS, workers: int = 1, out_dir=None,
             waveforms: bool = False) -> SweepResult:
    freqs = [float(f) for f in freqs]
    if not freqs or any(f <= 0 for f in freqs):
        raise ValueError("FO frequencies must be positive")
    nyquist = 0.5 / cfg.dt_macro
    if any(f >= nyquist for f in freqs):
        raise ValueError(f"FO frequencies must stay below the phasor-side Nyquist rate {nyquist:g} Hz")
    pts = _run_points([with_fo(cfg, kind, f) for f in freqs], freqs, workers, out_dir, f"{kind.lower()}", waveforms)
    res = SweepResult("f_fo", freqs, [p.report for p in pts], [p.metrics for p in pts])
    if out_dir is not None:
        write_sweep(res, Path(out_dir), f"err_vs_{kind.lower()}_freq.csv")
    return res


@dataclass
class InterfaceComparison:
    pos: ScenarioResult
    three_seq: ScenarioResult

    @property
    def e_true_pair(self) -> tuple[float, float]:
        return self.pos.report.e_true, self.three_seq.report.e_true


def compare_interfaces(cfg: ScenarioConfig, out_dir=None) -> InterfaceComparison:
    """Same scenario through both boundary protocols against one shared reference run."""
    base = cfg.model_copy(update={"reference": "full_emt"}, deep=True)
    cfg_pos = base.model_copy(update={"boundary": base.boundary.model_copy(update={"protocol": "pos"})})
    cfg_3 = base.model_copy(update={"boundary": base.boundary.model_copy(update={"protocol": "3seq"})})
    pos = run_scenario(cfg_pos)
    three = run_scenario(cfg_3, full=pos.full)
    cmp_ = InterfaceComparison(pos, three)
    if out_dir is not None:
        out = Path(out_dir)
        write_scenario(pos, out / "pos", waveforms=cfg.output.waveforms)
        write_scenario(three, out / "3seq", waveforms=cfg.output.waveforms)
        rows = [["protocol", "e_true", "e_idx", "e_idx_mod", "verdict"]]
        for name, r in (("pos", pos), ("3seq", three)):
            rep = r.report
            rows.append([name, _f(rep.e_true), _f(rep.e_idx), _f(rep.e_idx_mod), rep.verdict.value])
        _write_csv(out / "err_vs_interface.csv", rows)
        _write_seq_voltages(out / "seq_voltages.csv", pos, three)
    return cmp_


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _f(x) -> str:
    return "" if x is None else _FMT % x


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: Path, rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    _atomic_write(path, buf.getvalue().encode())


def _write_matrix(path: Path, header: list[str], cols: list[np.ndarray]):
    data = np.column_stack(cols)
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    np.savetxt(buf, data, fmt=_FMT, delimiter=",")
    _atomic_write(path, buf.getvalue().encode())


def _write_json(path: Path, obj):
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def report_dict(res: ScenarioResult) -> dict:
    out = res.report.to_dict()
    out["scenario"] = res.config.name
    out["protocol"] = res.config.boundary.protocol
    if res.metrics:
        out["metrics"] = res.metrics
    return out


def _write_seq_voltages(path: Path, pos: ScenarioResult, three: ScenarioResult):
    h = pos.hybrid
    cols = [h.macro_times]
    header = ["t"]
    for label, seqs in (("full", pos.full.seq if pos.full else None), ("pos_emt", h.emt_seq),
                        ("3seq_emt", three.hybrid.emt_seq), ("3seq_ts", three.hybrid.ts_seq)):
        if seqs is None:
            continue
        for row, name in enumerate(("pos", "neg", "zero")):
            header.append(f"{label}_{name}_mag")
            cols.append(np.abs(seqs[row]))
    _write_matrix(path, header, cols)


def write_scenario(res: ScenarioResult, out_dir: Path, waveforms: bool = True) -> dict:
    """Write CSV signals, the JSON report and a manifest; returns the manifest."""
    out_dir = Path(out_dir)
    h = res.hybrid
    files: list[Path] = []
    tm = h.macro_times
    header, cols = ["t"], [tm]
    for label, seqs in (("emt", h.emt_seq), ("ts", h.ts_seq), ("full", res.full.seq if res.full else None)):
        if seqs is None:
            continue
        for row, name in enumerate(("pos", "neg", "zero")):
            header += [f"{label}_{name}_mag", f"{label}_{name}_ang"]
            cols += [np.abs(seqs[row]), np.angle(seqs[row])]
    p = out_dir / "boundary_phasors.csv"
    _write_matrix(p, header, cols)
    files.append(p)

    p = out_dir / "boundary_currents.csv"
    _write_matrix(p, ["t", "inj_pos_re", "inj_pos_im", "inj_neg_re", "inj_neg_im", "inj_zero_re", "inj_zero_im"],
                  [tm] + [f(h.emt_current_seq[r]) for r in range(3) for f in (np.real, np.imag)])
    files.append(p)

    if waveforms:
        w_e, w_t = h.emt_waveform, h.ts_waveform
        p = out_dir / "boundary_waveforms.csv"
        _write_matrix(p, ["t", "emt_a", "emt_b", "emt_c", "ts_a", "ts_b", "ts_c", "delta_v_pu"],
                      [w_e.times, w_e.a, w_e.b, w_e.c, w_t.a, w_t.b, w_t.c, res.dv.values])
        files.append(p)

    rows = [["direction", "macro_index", "kind", "payload"]]
    for m in h.messages:
        payload = ";".join(f"{k}={_cfmt(v)}" for k, v in m.payload)
        rows.append([m.direction.value, m.macro_index, m.kind, payload])
    p = out_dir / "messages.csv"
    _write_csv(p, rows)
    files.append(p)

    p = out_dir / "report.json"
    _write_json(p, report_dict(res))
    files.append(p)
    _write_json(out_dir / "timing.json", {"hybrid": h.wall_clock, "full_emt": res.full.wall_clock if res.full else None})

    manifest = {
        "schema_version": res.config.schema_version,
        "scenario": res.config.model_dump(mode="json"),
        "dt": h.dt,
        "dt_macro": h.dt_macro,
        "files": {f.name: _sha256(f) for f in files},
    }
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def _cfmt(v) -> str:
    if isinstance(v, complex):
        return f"{_FMT % v.real}{'+' if v.imag >= 0 else '-'}{_FMT % abs(v.imag)}j"
    return _FMT % v


def write_sweep(res: SweepResult, out_dir: Path, name: str) -> Path:
    rows = [[res.variable, "e_true", "e_idx", "e_idx_mod", "verdict"]]
    extra = sorted({k for m in res.metrics for k in m
                    if not isinstance(m[k], str) and k not in rows[0]})
    rows[0] += extra
    for v, rep, met in zip(res.values, res.reports, res.metrics):
        rows.append([_FMT % v, _f(rep.e_true), _f(rep.e_idx), _f(rep.e_idx_mod), rep.verdict.value]
                    + [_f(met.get(k)) for k in extra])
    p = Path(out_dir) / name
    _write_csv(p, rows)
    return p


def sweep_dict(res: SweepResult) -> dict:
    return {
        "variable": res.variable,
        "points": [{"value": v, **r.to_dict(), **({"metrics": m} if m else {})}
                   for v, r, m in zip(res.values, res.reports, res.metrics)],
    }
