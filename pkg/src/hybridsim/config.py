"""Declarative scenario files (YAML) validated with pydantic."""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FourBusNetwork(_Strict):
    type: Literal["four_bus"] = "four_bus"
    alpha: float = Field(0.1, gt=0.0, lt=1.0)


class BusCfg(_Strict):
    id: int
    base_kv_ll: float = Field(gt=0)
    kind: Literal["slack", "pv", "pq"] = "pq"
    v_set: float = Field(1.0, gt=0)
    angle_set: float = 0.0
    p_gen_mw: float = 0.0


class BranchCfg(_Strict):
    name: str
    from_bus: int
    to_bus: int
    r_pu: float = Field(ge=0)
    x_pu: float = Field(ge=0)
    ratio: float = Field(1.0, gt=0)
    r0_pu: float | None = None
    x0_pu: float | None = None


class LoadCfg(_Strict):
    bus: int
    p_mw: float
    q_mvar: float


class SourceCfg(_Strict):
    name: str
    bus: int
    r_pu: float = Field(ge=0)
    x_pu: float = Field(gt=0)
    grounded: bool = True


class InlineNetwork(_Strict):
    type: Literal["inline"] = "inline"
    buses: list[BusCfg]
    branches: list[BranchCfg]
    loads: list[LoadCfg] = []
    sources: list[SourceCfg] = []
    s_base_mva: float = Field(100.0, gt=0)
    f0: float = Field(60.0, gt=0)


NetworkCfg = Annotated[Union[FourBusNetwork, InlineNetwork], Field(discriminator="type")]


class BoundaryCfg(_Strict):
    bus: int = 3
    protocol: Literal["pos", "3seq"] = "pos"
    delay_steps: int = Field(1, ge=0)


class FaultEvent(_Strict):
    type: Literal["fault"] = "fault"
    bus: int
    kind: Literal["ThreePhaseG", "SinglePhaseG", "PhaseBCtoG"]
    r_fault: float = Field(0.0, ge=0)
    t_on: float = Field(ge=0)
    t_off: float
    clearing: Literal["zero_crossing", "instant"] = "zero_crossing"

    @model_validator(mode="after")
    def _order(self):
        if not self.t_off > self.t_on:
            raise ValueError("t_off must exceed t_on")
        return self


class FoEvent(_Strict):
    type: Literal["fo"] = "fo"
    bus: int
    kind: Literal["MFO", "SFO"]
    v_fo_pu: float = Field(ge=0)
    f_fo: float = Field(gt=0)
    t_enable: float = Field(0.5, ge=0)
    t_close: float = Field(0.1, ge=0)
    analysis_window: tuple[float, float] | None = None

    def window(self) -> tuple[float, float]:
        return self.analysis_window or (self.t_enable + 0.5, self.t_enable + 1.5)


Event = Annotated[Union[FaultEvent, FoEvent], Field(discriminator="type")]


class IndexCfg(_Strict):
    t_start: float = Field(0.5, ge=0)
    t_end: float = 2.5
    threshold_a: float = Field(0.2, gt=0, lt=1)
    large_threshold: float = Field(0.05, gt=0)

    @model_validator(mode="after")
    def _order(self):
        if not self.t_end > self.t_start:
            raise ValueError("index window needs t_end > t_start")
        return self


class OutputCfg(_Strict):
    waveforms: bool = True


class ScenarioConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "scenario"
    network: NetworkCfg = Field(default_factory=FourBusNetwork)
    boundary: BoundaryCfg = Field(default_factory=BoundaryCfg)
    emt_region: list[int] | None = None
    events: list[Event] = []
    duration: float = Field(2.5, gt=0)
    index: IndexCfg = Field(default_factory=IndexCfg)
    dt: float = Field(20e-6, gt=0)
    dt_macro: float = Field(1.0 / 120.0, gt=0)
    reference: Literal["none", "full_emt"] = "full_emt"
    output: OutputCfg = Field(default_factory=OutputCfg)

    @field_validator("reference", mode="before")
    @classmethod
    def _ref_alias(cls, v):
        return "full_emt" if v == "full-emt" else v

    @model_validator(mode="after")
    def _consistency(self):
        if self.dt_macro < self.dt:
            raise ValueError("dt_macro must not be smaller than dt")
        if self.index.t_end > self.duration + 1e-12:
            raise ValueError("index window ends after the simulation")
        for ev in self.events:
            t_last = ev.t_off if isinstance(ev, FaultEvent) else ev.t_enable
            if t_last > self.duration:
                raise ValueError(f"event at bus {ev.bus} lies beyond the simulation duration")
            if isinstance(ev, FoEvent) and ev.window()[1] > self.duration + 1e-12:
                raise ValueError("FO analysis window ends after the simulation")
        if sum(isinstance(e, FoEvent) for e in self.events) > 1:
            raise ValueError("at most one FO source per scenario")
        if self.emt_region is not None and self.boundary.bus not in self.emt_region:
            raise ValueError("boundary bus must be part of emt_region")
        return self

    def resolved_emt_region(self) -> list[int]:
        if self.emt_region is not None:
            return sorted(self.emt_region)
        if isinstance(self.network, FourBusNetwork):
            return [1, 2, 3]
        raise ValueError("emt_region is required for inline networks")

    @property
    def faults(self) -> list[FaultEvent]:
        return [e for e in self.events if isinstance(e, FaultEvent)]

    @property
    def fo(self) -> FoEvent | None:
        return next((e for e in self.events if isinstance(e, FoEvent)), None)


def load_config(path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def parse_config(text: str) -> ScenarioConfig:
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError("scenario file must contain a mapping")
    return ScenarioConfig.model_validate(data)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
