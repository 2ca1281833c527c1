"""
Configuration settings for the EZ-PGDPO solver.

Process-level settings come from the environment (and .env); run settings come
from YAML documents validated by pydantic and converted to the library's
frozen dataclasses.
"""
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.evaluation.validation import ValidationThresholds
from src.market.params import MarketParams
from src.market.simulation import InitialStateSampler
from src.models.networks import Activation, NetworkSpec
from src.models.optim import AdamConfig
from src.pgdpo.losses import ActorHamiltonian, LossWeights
from src.pgdpo.trainer import Ablation, TrainConfig
from src.preferences.aggregators import AggregatorKind
from src.preferences.utility import EZParams
from src.projection.constraints import ConstraintMode, PortfolioConstraint

# Base paths
PROJECT_ROOT = Path(__file__).parent.parent

# Load environment variables from .env file
load_dotenv(PROJECT_ROOT / ".env")
CONFIG_DIR = PROJECT_ROOT / "config"
DEFAULT_OUTPUT_DIR = PROJECT_ROOT / "runs"
BASELINE_CONFIG = CONFIG_DIR / "baseline.yaml"
MERTON_CONFIG = CONFIG_DIR / "merton_validation.yaml"

Positive = Annotated[float, Field(gt=0)]
Correlation = Annotated[float, Field(ge=-1, le=1)]


# Application settings
@dataclass
class AppConfig:
    """Process-level settings."""
    log_level: str = os.getenv("LOG_LEVEL", "INFO")
    output_dir: Path = Path(os.getenv("EZ_PGDPO_OUTPUT_DIR", str(DEFAULT_OUTPUT_DIR)))
    threads: int = int(os.getenv("EZ_PGDPO_THREADS", "1"))


class ConfigError(ValueError):
    """Invalid run configuration; `fields` holds the offending dotted paths."""

    def __init__(self, message: str, fields: Tuple[str, ...] = ()):
        super().__init__(message)
        self.fields = fields


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MarketSection(_Section):
    r: float = 0.02
    kappa_y: float = Field(0.40, gt=0)
    y_bar: float = 0.40
    xi: float = Field(0.10, gt=0)
    T: float = Field(1.5, gt=0)
    mu_bar: List[float] = Field(default_factory=lambda: [0.06, 0.08, 0.10, 0.12, 0.14], min_length=1)
    sigma: List[Positive] = Field(default_factory=lambda: [0.15, 0.1875, 0.225, 0.2625, 0.30], min_length=1)
    rho: List[Correlation] = Field(default_factory=lambda: [0.60, 0.50, 0.40, 0.30, 0.20], min_length=1)
    beta_lrr: List[float] = Field(default_factory=lambda: [0.90, 0.9375, 0.90, 0.7875, 0.60], min_length=1)
    W_min: float = Field(0.1, gt=0)
    W_max: float = Field(0.7, gt=0)
    floor_enabled: bool = True

    @model_validator(mode="after")
    def _consistent(self) -> "MarketSection":
        self.to_params()
        return self

    def to_params(self) -> MarketParams:
        return MarketParams(
            r=self.r,
            kappa_y=self.kappa_y,
            y_bar=self.y_bar,
            xi=self.xi,
            T=self.T,
            mu_bar=np.array(self.mu_bar),
            sigma=np.array(self.sigma),
            rho=np.array(self.rho),
            beta_lrr=np.array(self.beta_lrr),
            W_min=self.W_min,
            W_max=self.W_max,
            floor_enabled=self.floor_enabled,
        )


class PreferencesSection(_Section):
    R: float = Field(1.5, gt=0)
    psi: float = Field(0.5, gt=0)
    delta: float = Field(0.03, gt=0)
    kappa_bequest: float = Field(1.0, ge=0)
    c_bar: float = Field(0.25, gt=0, lt=1)
    aggregator: AggregatorKind = AggregatorKind.EPSTEIN_ZIN

    @model_validator(mode="after")
    def _consistent(self) -> "PreferencesSection":
        self.to_params()
        return self

    def to_params(self) -> EZParams:
        return EZParams(
            R=self.R, psi=self.psi, delta=self.delta, kappa_bequest=self.kappa_bequest, c_bar=self.c_bar
        )


class ConstraintSection(_Section):
    mode: ConstraintMode = ConstraintMode.EQUALITY_SIMPLEX
    leverage_cap: float = Field(2.0, ge=1)
    budget: float = Field(1.0, gt=0)

    def to_params(self) -> PortfolioConstraint:
        return PortfolioConstraint(mode=self.mode, leverage_cap=self.leverage_cap, budget=self.budget)


class SamplerSection(_Section):
    w_low: float = Field(0.9, gt=0)
    w_high: float = Field(1.1, gt=0)
    y_sd_multiplier: float = Field(1.0, ge=0)
    truncation: float = Field(3.0, gt=0)

    def to_params(self) -> InitialStateSampler:
        return InitialStateSampler(
            w_low=self.w_low,
            w_high=self.w_high,
            y_sd_multiplier=self.y_sd_multiplier,
            truncation=self.truncation,
        )


class NetworkSection(_Section):
    hidden_layers: int = Field(3, ge=0)
    hidden_width: int = Field(128, ge=1)
    activation: Activation = Activation.SOFTPLUS

    def to_params(self) -> NetworkSpec:
        return NetworkSpec(
            hidden_layers=self.hidden_layers, hidden_width=self.hidden_width, activation=self.activation
        )


class AdamSection(_Section):
    lr_value: float = Field(1e-3, gt=0)
    lr_costate: float = Field(1e-3, gt=0)
    lr_policy: float = Field(5e-4, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)

    def to_params(self) -> AdamConfig:
        return AdamConfig(**self.model_dump())


class LossSection(_Section):
    lambda_adj: float = Field(1.0, ge=0)
    beta_reg: float = Field(0.0, ge=0)
    penalty_weight: float = Field(10.0, ge=0)

    def to_params(self) -> LossWeights:
        return LossWeights(
            lambda_adj=self.lambda_adj, beta_reg=self.beta_reg, penalty_weight=self.penalty_weight
        )


class TrainingSection(_Section):
    N: int = Field(128, ge=1)
    M: int = Field(256, ge=1)
    iterations: int = Field(2000, ge=0)
    seed: int = Field(0, ge=0)
    seeds: List[Annotated[int, Field(ge=0)]] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    stop_tol: float = Field(1e-4, ge=0)
    stop_window: int = Field(100, ge=1)
    smoothing: float = Field(0.05, gt=0, le=1)
    log_every: int = Field(50, ge=0)
    checkpoint_every: int = Field(500, ge=0)
    threads: int = Field(1, ge=1)
    actor_hamiltonian: ActorHamiltonian = ActorHamiltonian.HJB
    ablation: Ablation = Ablation.FULL
    crra_warm_start: bool = False
    warm_start_iterations: int = Field(500, ge=0)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    network: NetworkSection = Field(default_factory=NetworkSection)
    adam: AdamSection = Field(default_factory=AdamSection)
    losses: LossSection = Field(default_factory=LossSection)

    def to_params(self, aggregator: AggregatorKind, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            N=self.N,
            M=self.M,
            iterations=self.iterations,
            seed=self.seed if seed is None else seed,
            seeds=tuple(self.seeds),
            stop_tol=self.stop_tol,
            stop_window=self.stop_window,
            smoothing=self.smoothing,
            log_every=self.log_every,
            checkpoint_every=self.checkpoint_every,
            threads=self.threads,
            actor_hamiltonian=self.actor_hamiltonian,
            aggregator=aggregator,
            crra_warm_start=self.crra_warm_start,
            warm_start_iterations=self.warm_start_iterations,
            sampler=self.sampler.to_params(),
            network=self.network.to_params(),
            adam=self.adam.to_params(),
        )


class ThresholdSection(_Section):
    err_pi: float = Field(0.05, gt=0)
    err_c: float = Field(0.05, gt=0)
    ce_gap: float = Field(0.005, gt=0)
    residual_ratio: float = Field(10.0, gt=0)

    def to_params(self) -> ValidationThresholds:
        return ValidationThresholds(**self.model_dump())


class EvaluationSection(_Section):
    W0: float = Field(1.0, gt=0)
    value_iterations: int = Field(500, ge=0)
    value_paths: int = Field(256, ge=2)
    eval_paths: int = Field(4096, ge=2)
    distribution_paths: int = Field(10_000, ge=1)
    wealth_path_paths: int = Field(2000, ge=1)
    mc_paths: int = Field(100_000, ge=2)
    grid_w: int = Field(10, ge=2)
    grid_y: int = Field(10, ge=2)
    grid_t: Optional[float] = Field(None, ge=0)
    bootstrap_replications: int = Field(1000, ge=2)
    thresholds: ThresholdSection = Field(default_factory=ThresholdSection)


class IOSection(_Section):
    output_dir: Optional[str] = None
    export_paths: bool = False
    export_path_count: int = Field(100, ge=1)


class RunConfig(_Section):
    """Complete, validated run configuration."""
    name: str = "baseline"
    market: MarketSection = Field(default_factory=MarketSection)
    preferences: PreferencesSection = Field(default_factory=PreferencesSection)
    constraint: ConstraintSection = Field(default_factory=ConstraintSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)
    io: IOSection = Field(default_factory=IOSection)

    @model_validator(mode="after")
    def _grid_time_in_horizon(self) -> "RunConfig":
        if self.evaluation.grid_t is not None and self.evaluation.grid_t > self.market.T:
            raise ValueError(f"evaluation.grid_t = {self.evaluation.grid_t} exceeds market.T")
        return self

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return self.training.to_params(self.preferences.aggregator, seed)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Apply dotted-path overrides ("training.iterations": 10) and revalidate."""
        data = self.model_dump(mode="json")
        for path, value in overrides.items():
            node = data
            keys = path.split(".")
            for key in keys[:-1]:
                if not isinstance(node.get(key), dict):
                    raise ConfigError(f"unknown override section in '{path}'", (path,))
                node = node[key]
            if keys[-1] not in node:
                raise ConfigError(f"unknown override field '{path}'", (path,))
            node[keys[-1]] = value
        return parse_run_config(data)


def _field_paths(e: ValidationError) -> Tuple[str, ...]:
    return tuple(".".join(str(part) for part in err["loc"]) for err in e.errors())


def format_validation_error(e: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
    )


def parse_run_config(data: Any) -> RunConfig:
    """
    Validate a mapping as a run configuration.

    Raises:
        ConfigError: with the failing field paths
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("run configuration must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e), _field_paths(e)) from e


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a YAML run configuration.

    Raises:
        ConfigError: if the file is missing, unparsable or invalid
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return parse_run_config(data)


def save_run_config(cfg: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(cfg.to_yaml())
    return path


# Create default instances
app_config = AppConfig()
