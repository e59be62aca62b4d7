"""Experiment config files: YAML sections validated against a pydantic schema."""

from __future__ import annotations

import logging
from enum import Enum
from pathlib import Path
from typing import List

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from onebit_precoding.admm import AdmmConfig, ContinuationSchedule, UpdateOrder
from onebit_precoding.errors import ConfigError
from onebit_precoding.model import Modulation, SystemConfig
from onebit_precoding.oracle import MAX_ANTENNAS
from onebit_precoding.sim import MAX_DELTA, CsiErrorModel, PrecoderName

logger = logging.getLogger(__name__)


class ExperimentKind(str, Enum):
    BER_SWEEP = "ber_sweep"
    CONVERGENCE = "convergence"
    CSI_SWEEP = "csi_sweep"
    RUNTIME_SCALING = "runtime_scaling"
    ORACLE_GAP = "oracle_gap"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class SystemSection(_Section):
    users: int = Field(gt=0)
    antennas: int = Field(gt=0)
    modulation: Modulation = Modulation.QPSK
    total_power: float = Field(1.0, gt=0)
    channel_variance: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _underloaded(self):
        if self.users > self.antennas:
            raise ValueError(f"users ({self.users}) must not exceed antennas ({self.antennas})")
        return self

    def to_system(self, num_antennas: int = None) -> SystemConfig:
        return SystemConfig(
            num_users=self.users,
            num_antennas=num_antennas or self.antennas,
            total_power=self.total_power,
            modulation=self.modulation,
            channel_variance=self.channel_variance,
        )


class AdmmSection(_Section):
    max_iters: int = Field(100, ge=1)
    rel_tol: float = Field(1e-7, gt=0)
    lambda_init_divisor: float = Field(64.0, ge=1)
    growth_factor: float = Field(2.0, gt=1)
    hold_iters: int = Field(12, ge=1)
    margin: float = Field(1e-3, gt=0)
    update_order: UpdateOrder = UpdateOrder.PROJECTION_FIRST

    def to_config(self) -> AdmmConfig:
        return AdmmConfig(
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
            continuation=ContinuationSchedule(self.lambda_init_divisor, self.growth_factor, self.hold_iters),
            margin=self.margin,
            update_order=self.update_order,
        )


class CsiSection(_Section):
    delta_grid: List[float] = Field(default_factory=lambda: [0.0], min_length=1)
    error_models: List[CsiErrorModel] = Field(
        default_factory=lambda: [CsiErrorModel.GAUSSIAN], min_length=1
    )
    literal_formula: bool = False

    @field_validator("delta_grid")
    @classmethod
    def _delta_range(cls, grid):
        for delta in grid:
            if not 0.0 <= delta <= MAX_DELTA:
                raise ValueError(f"delta {delta} outside [0, {MAX_DELTA}]")
        return grid


class ExperimentConfig(_Section):
    experiment: ExperimentKind
    system: SystemSection
    snr_grid_db: List[float] = Field(default_factory=lambda: [0.0], min_length=1)
    precoders: List[PrecoderName] = Field(
        default_factory=lambda: [PrecoderName.ADMM, PrecoderName.ZF_Q, PrecoderName.ZFI],
        min_length=1,
    )
    trials: int = Field(1000, ge=1)
    num_symbol_vectors: int = Field(10, ge=1)
    base_seed: int = Field(0, ge=0, lt=2**64)
    admm: AdmmSection = Field(default_factory=AdmmSection)
    csi: CsiSection = Field(default_factory=CsiSection)
    antennas_grid: List[int] = Field(default_factory=lambda: [16, 32, 64, 128, 256], min_length=1)
    # random instances for the convergence statistics
    instances: int = Field(100, ge=1)
    output_path: str = "results"

    @field_validator("system")
    @classmethod
    def _oracle_size(cls, system, info: ValidationInfo):
        if info.data.get("experiment") is ExperimentKind.ORACLE_GAP and system.antennas > MAX_ANTENNAS:
            raise ValueError(
                f"oracle_gap enumerates 4^antennas vectors, antennas ({system.antennas}) "
                f"must not exceed {MAX_ANTENNAS}"
            )
        return system

    @field_validator("antennas_grid")
    @classmethod
    def _antennas(cls, grid, info: ValidationInfo):
        if any(r < 1 for r in grid):
            raise ValueError("antenna counts must be positive")
        system = info.data.get("system")
        scaling = info.data.get("experiment") is ExperimentKind.RUNTIME_SCALING
        if scaling and system is not None and min(grid) < system.users:
            raise ValueError(f"every antenna count must be >= users ({system.users}), got {min(grid)}")
        return grid


def _field_path(error) -> str:
    return ".".join(str(part) for part in error["loc"]) or "<root>"


def parse_config(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections and keys", field="<root>")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = _field_path(first)
        raise ConfigError(f"invalid config field '{field}': {first['msg']}", field=field) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, mode="r") as file:
            data = yaml.safe_load(file)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    config = parse_config(data)
    logger.info("loaded %s experiment from %s", config.experiment.value, path)
    return config
