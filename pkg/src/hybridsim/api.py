"""HTTP service exposing scenario runs, sweeps and config validation."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, ValidationError

from . import __version__
from .config import ScenarioConfig
from .scenarios import (DEFAULT_ALPHAS, DEFAULT_FO_FREQS, compare_interfaces, report_dict,
                        run_scenario, sweep_alpha, sweep_dict, sweep_fo, write_scenario)

OUT_ENV = "HYBRIDSIM_OUT"


def default_out_dir() -> str:
    return os.environ.get(OUT_ENV, "out")


class RunRequest(BaseModel):
    scenario: ScenarioConfig
    out_dir: str | None = None


class SweepAlphaRequest(RunRequest):
    values: list[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS))
    workers: int = Field(1, ge=1)
    waveforms: bool = False


class SweepFoRequest(RunRequest):
    kind: Literal["MFO", "SFO"] = "MFO"
    freqs: list[float] = Field(default_factory=lambda: list(DEFAULT_FO_FREQS))
    workers: int = Field(1, ge=1)
    waveforms: bool = False


class ValidateRequest(BaseModel):
    scenario: dict[str, Any]


class RunResponse(BaseModel):
    report: dict[str, Any]
    out_dir: str
    manifest: dict[str, Any]


class SweepResponse(BaseModel):
    sweep: dict[str, Any]
    out_dir: str


class CompareResponse(BaseModel):
    pos: dict[str, Any]
    three_seq: dict[str, Any]
    e_true_ratio: float | None
    out_dir: str


class ValidateResponse(BaseModel):
    valid: bool
    errors: list[dict[str, Any]] = []
    normalized: dict[str, Any] | None = None


app = FastAPI(title="hybridsim", version=__version__)


def _error(status: int, kind: str, message: str, details=None) -> JSONResponse:
    body = {"error": {"type": kind, "message": message}}
    if details is not None:
        body["error"]["details"] = details
    return JSONResponse(status_code=status, content=body)


@app.exception_handler(RequestValidationError)
async def _request_invalid(_: Request, exc: RequestValidationError):
    details = [{"loc": list(e["loc"]), "msg": e["msg"], "type": e["type"]} for e in exc.errors()]
    return _error(422, "ValidationError", "request failed validation", details)


@app.exception_handler(ValueError)
async def _value_error(_: Request, exc: ValueError):
    return _error(422, type(exc).__name__, str(exc))


@app.exception_handler(RuntimeError)
async def _runtime_error(_: Request, exc: RuntimeError):
    return _error(500, type(exc).__name__, str(exc))


@app.exception_handler(ZeroDivisionError)
async def _zero_division(_: Request, exc: ZeroDivisionError):
    return _error(422, type(exc).__name__, str(exc))


@app.exception_handler(OSError)
async def _os_error(_: Request, exc: OSError):
    return _error(500, type(exc).__name__, str(exc))


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/v1/run", response_model=RunResponse)
def run(req: RunRequest) -> RunResponse:
    out = Path(req.out_dir or default_out_dir())
    res = run_scenario(req.scenario)
    manifest = write_scenario(res, out, waveforms=req.scenario.output.waveforms)
    return RunResponse(report=report_dict(res), out_dir=str(out), manifest=manifest)


@app.post("/v1/sweep-alpha", response_model=SweepResponse)
def run_sweep_alpha(req: SweepAlphaRequest) -> SweepResponse:
    out = Path(req.out_dir or default_out_dir())
    res = sweep_alpha(req.scenario, req.values, req.workers, out, req.waveforms)
    return SweepResponse(sweep=sweep_dict(res), out_dir=str(out))


@app.post("/v1/sweep-fo", response_model=SweepResponse)
def run_sweep_fo(req: SweepFoRequest) -> SweepResponse:
    out = Path(req.out_dir or default_out_dir())
    res = sweep_fo(req.scenario, req.kind, req.freqs, req.workers, out, req.waveforms)
    return SweepResponse(sweep=sweep_dict(res), out_dir=str(out))


@app.post("/v1/compare-interfaces", response_model=CompareResponse)
def run_compare(req: RunRequest) -> CompareResponse:
    out = Path(req.out_dir or default_out_dir())
    cmp_ = compare_interfaces(req.scenario, out)
    e_pos, e_3 = cmp_.e_true_pair
    ratio = e_3 / e_pos if e_pos else None
    return CompareResponse(pos=report_dict(cmp_.pos), three_seq=report_dict(cmp_.three_seq),
                           e_true_ratio=ratio, out_dir=str(out))


@app.post("/v1/validate-config", response_model=ValidateResponse)
def validate_config(req: ValidateRequest) -> ValidateResponse:
    try:
        cfg = ScenarioConfig.model_validate(req.scenario)
    except ValidationError as exc:
        errors = [{"loc": list(e["loc"]), "msg": e["msg"], "type": e["type"]} for e in exc.errors()]
        return ValidateResponse(valid=False, errors=errors)
    return ValidateResponse(valid=True, normalized=cfg.model_dump(mode="json"))
