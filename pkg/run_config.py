"""Run configuration: one JSON file, one strict section per command."""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from errors import ConfigError
from trainer import CONFIG_PRESETS, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.json")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ValidateTheorySection(StrictModel):
    kl_trials: int = Field(default=1000, ge=1)
    scenario_trials: int = Field(default=500, ge=1)
    landscapes: int = Field(default=100, ge=1)
    quadratic_pairs: int = Field(default=20, ge=1)
    quadratic_draws: int = Field(default=200_000, ge=1000)
    stats_draws: int = Field(default=10_000, ge=1)
    memory_models: int = Field(default=100, ge=1)
    dynamics_trials: int = Field(default=1000, ge=1)
    pixel_trials: int = Field(default=1000, ge=1)
    monte_carlo: bool = True
    mc_population: int = Field(default=100_000, ge=1000)
    mc_replicates: int = Field(default=20, ge=2)
    mc_steps: int = Field(default=200, ge=1)
    mc_family_alpha: float = Field(default=0.01, gt=0, lt=1)


class CriteriaSection(StrictModel):
    alpha1: float = Field(default=0.9, gt=0, le=1)
    alpha2: float = Field(default=0.8, gt=0, le=1)
    beta1: float = Field(default=0.3, gt=0, le=1)
    beta2: float = Field(default=0.2, gt=0, le=1)
    pi: float = Field(default=0.6, gt=0, lt=1)


class MemoryBankSection(StrictModel):
    eta: float = Field(default=0.1, gt=0, le=1)
    e0: float = Field(default=0.05, ge=0, le=1)
    knots: List[Tuple[float, float]] = Field(default_factory=lambda: [(0.0, 0.05), (0.5, 0.6), (1.0, 1.0)])
    horizon: int = Field(default=200, ge=1)


class DynamicsSection(StrictModel):
    epsilon0: float = Field(default=0.3, gt=0, lt=1)
    gamma: float = Field(default=0.8, gt=0, lt=1)
    alpha: float = Field(default=0.9, ge=0, lt=1)
    f: float = Field(default=0.5, ge=0, le=1)
    rho: float = Field(default=0.9, ge=0, le=1)
    rho_sweep: List[float] = Field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    f_grid: List[float] = Field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    trajectory_steps: int = Field(default=200, ge=1)
    monte_carlo: bool = True
    mc_population: int = Field(default=100_000, ge=1000)
    mc_replicates: int = Field(default=20, ge=2)
    criteria: CriteriaSection = Field(default_factory=CriteriaSection)
    memory_bank: MemoryBankSection = Field(default_factory=MemoryBankSection)

    @field_validator("rho_sweep", "f_grid")
    @classmethod
    def _unit_interval(cls, values: List[float]) -> List[float]:
        if not values or any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError("grid values must be a nonempty list within [0, 1]")
        return values


class KlScenario(StrictModel):
    name: str
    fisher_current: List[float]
    fisher_hist: Optional[List[float]] = None
    static_lambda: Optional[float] = None
    memory_lambda: float = 1.0
    approx_error: Optional[List[float]] = None


class GasLandscapeSection(StrictModel):
    epsilon_sweep: List[float] = Field(default_factory=lambda: [1e-6, 1e-7, 1e-8, 1e-9])
    noise_variance_sweep: List[float] = Field(default_factory=lambda: [0.1, 1.0, 10.0])
    rho_sweep: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    landscapes: int = Field(default=20, ge=1)
    dimension: int = Field(default=10, ge=1)
    max_condition: float = Field(default=100.0, ge=1)
    mc_draws: int = Field(default=100_000, ge=100)
    buffer_sums: List[float] = Field(default_factory=lambda: [0.0, 1e-8, 1e-6, 1e-3, 1.0])
    kl_scenarios: List[KlScenario] = Field(default_factory=lambda: [
        KlScenario(name="hand-shift", fisher_current=[2.0, 0.5], fisher_hist=[1.0, 1.0], static_lambda=1.0),
        KlScenario(name="anisotropic-gradient-error", fisher_current=[8.0, 4.0, 1.0, 0.25],
                   fisher_hist=[1.0, 1.0, 1.0, 1.0], static_lambda=1.0, approx_error=[0.05, -0.05, 0.02, -0.02]),
    ])

    @field_validator("epsilon_sweep", "noise_variance_sweep", "rho_sweep")
    @classmethod
    def _positive(cls, values: List[float]) -> List[float]:
        if not values or any(v <= 0 for v in values):
            raise ValueError("sweep values must be a nonempty list of positive numbers")
        return values


class BenchSection(StrictModel):
    protocol: str = "joint-shift-3"
    configs: List[str] = Field(default_factory=lambda: list(CONFIG_PRESETS))
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    image_size: Tuple[int, int] = (32, 32)
    shots: int = Field(default=5, ge=1)
    unlabeled_count: int = Field(default=50, ge=0)
    test_count: int = Field(default=20, ge=1)
    save_data: bool = False
    train: TrainConfig = Field(default_factory=TrainConfig)
    base_train: TrainConfig = Field(default_factory=lambda: TrainConfig(epochs=8))


class ReportSection(StrictModel):
    title: str = "Continual learning mechanism lab"


class RunConfig(StrictModel):
    seed: int = 0
    out_dir: str = "lab_output"
    jobs: int = Field(default=1, ge=1)
    validate_theory: ValidateTheorySection = Field(default_factory=ValidateTheorySection)
    dynamics: DynamicsSection = Field(default_factory=DynamicsSection)
    gas_landscape: GasLandscapeSection = Field(default_factory=GasLandscapeSection)
    bench: BenchSection = Field(default_factory=BenchSection)
    report: ReportSection = Field(default_factory=ReportSection)

    def resolved(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def locate_key(raw_text: str, location: Tuple[Any, ...]) -> Optional[int]:
    """1-based line of the innermost key in `location`, scanning the nesting in order."""
    lines = raw_text.splitlines()
    start = 0
    found = None
    for part in location:
        if not isinstance(part, str):
            continue
        needle = f'"{part}"'
        for index in range(start, len(lines)):
            if needle in lines[index]:
                found = index
                start = index + 1
                break
    return None if found is None else found + 1


def _config_error(error: ValidationError, raw_text: Optional[str]) -> ConfigError:
    first = error.errors()[0]
    location = tuple(first["loc"])
    key = ".".join(str(p) for p in location)
    line = locate_key(raw_text, location) if raw_text else None
    if first["type"] == "extra_forbidden":
        message = f"unknown config key {key!r}"
    else:
        message = f"invalid value for {key!r}: {first['msg']}"
    return ConfigError(message, key=key, line=line)


def parse_run_config(raw_text: str) -> RunConfig:
    try:
        data = json.loads(raw_text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e.msg}", line=e.lineno) from e
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise _config_error(e, raw_text) from e


def load_run_config(config_path: Optional[str] = None) -> RunConfig:
    path = Path(config_path or DEFAULT_CONFIG_PATH)
    if not path.exists():
        if config_path is not None:
            raise ConfigError(f"config file {path} not found")
        logger.warning(f"Config file {path} not found, using defaults")
        return RunConfig()
    return parse_run_config(path.read_text())


def apply_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """Merge dotted-key overrides (e.g. "bench.seeds") and revalidate."""
    data = config.model_dump()
    for dotted, value in overrides.items():
        if value is None:
            continue
        target = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            target = target[part]
        target[parts[-1]] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise _config_error(e, None) from e
