"""Experiment configuration (JSON, schema-validated, full defaults)."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .channel import SystemConfig
from .ddnet import RouteNetConfig
from .federated import FedConfig
from .idetnet import IDetNetConfig
from .oampnet import OAMPNetConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SystemSection(_Strict):
    n_t: int = Field(4, ge=1)
    n_r_range: tuple[int, int] = (4, 16)
    snr_db_range: tuple[float, float] = (-5.0, 15.0)
    rho_range: tuple[float, float] = (0.0, 0.9)

    def build(self) -> SystemConfig:
        return SystemConfig(self.n_t, tuple(self.n_r_range), tuple(self.snr_db_range), tuple(self.rho_range))


class IDetNetSection(_Strict):
    k_id: int = Field(10, ge=1)
    h1: int = Field(64, ge=1)
    h2: int = Field(32, ge=1)
    compat: bool = False


class OAMPNetSection(_Strict):
    k_oa: int = Field(4, ge=1)


class RouteNetSection(_Strict):
    hidden: int = Field(128, ge=1)


class DataSection(_Strict):
    n_clients: int = Field(20, ge=1)
    samples_per_client: int = Field(256, ge=1)
    val_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    rho_subinterval: float = Field(0.2, gt=0.0)
    snr_subinterval: float = Field(5.0, gt=0.0)


class TrainSection(_Strict):
    lr: float = Field(1e-3, gt=0.0)
    id_epochs: int = Field(40, ge=1)
    id_batch: int = Field(64, ge=1)
    patience: int = Field(20, ge=1)
    decay: float = Field(0.9, gt=0.0, le=1.0)
    oa_samples: int = Field(100, ge=1)
    oa_epochs: int = Field(1, ge=1)
    oa_batch: int = Field(1, ge=1)
    ro_epochs: int = Field(60, ge=1)
    ro_batch: int = Field(64, ge=1)
    route_eps: float = 0.0


class FedSection(_Strict):
    m_id: int = Field(8, ge=1)
    m_ro: int = Field(16, ge=1)
    local_steps: int = Field(1, ge=1)
    t_id: int = Field(200, ge=1)
    t_ro: int = Field(100, ge=1)
    delta: float = Field(1.0, gt=0.0, le=1.0)
    bits: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0.0)


class EvalSection(_Strict):
    axis: Literal["snr", "n_r", "rho", "mixed"] = "snr"
    snr_points: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0, 15.0)
    n_r_points: tuple[int, ...] = (4, 8, 12, 16)
    rho_points: tuple[float, ...] = (0.0, 0.3, 0.6, 0.9)
    fixed_snr_db: float = 10.0
    fixed_n_r: int = 8
    fixed_rho: float = 0.0
    samples_per_point: int = Field(2000, ge=1)
    include_ml: bool = True


class ExperimentConfig(_Strict):
    system: SystemSection = SystemSection()
    idetnet: IDetNetSection = IDetNetSection()
    oampnet: OAMPNetSection = OAMPNetSection()
    routenet: RouteNetSection = RouteNetSection()
    mode: Literal["cl", "fedave", "fedgs"] = "cl"
    fed: FedSection = FedSection()
    data: DataSection = DataSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    xi: float = Field(0.5, ge=0.0)
    seed: int = Field(0, ge=0)
    out_dir: str = "runs/default"

    @model_validator(mode="after")
    def _check(self):
        self.system.build()
        if max(self.fed.m_id, self.fed.m_ro) > self.data.n_clients:
            raise ValueError("fed.m_id and fed.m_ro cannot exceed data.n_clients")
        return self

    # -- builders for the library dataclasses --
    def system_config(self) -> SystemConfig:
        return self.system.build()

    def id_config(self) -> IDetNetConfig:
        return IDetNetConfig(n_t=self.system.n_t, k_id=self.idetnet.k_id, h1=self.idetnet.h1,
                             h2=self.idetnet.h2, compat=self.idetnet.compat)

    def oa_config(self) -> OAMPNetConfig:
        return OAMPNetConfig(n_t=self.system.n_t, k_oa=self.oampnet.k_oa)

    def ro_config(self) -> RouteNetConfig:
        return RouteNetConfig(n_t=self.system.n_t, hidden=self.routenet.hidden)

    def fed_config(self) -> FedConfig:
        f = self.fed
        return FedConfig(n_clients=self.data.n_clients, m_id=f.m_id, m_ro=f.m_ro, local_steps=f.local_steps,
                         t_id=f.t_id, t_ro=f.t_ro, delta=f.delta, bits=f.bits, lr=f.lr)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.model_validate_json(text)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def with_updates(self, **changes) -> "ExperimentConfig":
        """Copy with nested updates, e.g. ``with_updates(train={"id_epochs": 5})``; revalidated."""
        d = self.model_dump(mode="json")
        for k, v in changes.items():
            if isinstance(v, dict) and isinstance(d.get(k), dict):
                d[k].update(v)
            else:
                d[k] = v
        return type(self).model_validate(d)
