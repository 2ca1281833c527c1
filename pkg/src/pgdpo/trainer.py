"""
Training loop: alternate critic descent on L_val + lambda_adj L_adj and actor
ascent on the batch Hamiltonian, on freshly simulated batches.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from src.market.params import MarketParams
from src.market.simulation import InitialStateSampler, simulate_batch
from src.models.checkpoint import save_checkpoint
from src.models.networks import NetworkSpec, NetworkTriple, StateNormalizer, grad_params
from src.models.optim import AdamConfig, adam_step, make_adam
from src.pgdpo.hamiltonian import MarketTensors
from src.pgdpo.losses import (
    ActorHamiltonian,
    CostateSource,
    LossWeights,
    actor_objective,
    adjoint_loss,
    value_loss_terms,
)
from src.preferences.aggregators import AggregatorKind, make_aggregator
from src.preferences.utility import EZParams
from src.projection.constraints import ControlProjector, PortfolioConstraint, diagnostics

logger = logging.getLogger(__name__)

LOG_COLUMNS = [
    "iteration",
    "L_val",
    "L_adj",
    "J_act",
    "portfolio_binding_rate",
    "consumption_binding_rate",
    "floor_hit_rate",
    "mean_relative_projection_distance",
    "mean_applied_infeasibility",
    "domain_exclusions",
    "nonfinite_controls",
]


class DivergenceError(RuntimeError):
    """A loss or parameter became non-finite during training."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class Ablation(str, Enum):
    """Named training variants."""
    FULL = "full"
    SOFT_PENALTY = "soft-penalty"
    NO_FLOOR = "no-floor"
    VALUE_ONLY = "value-only"
    ADJOINT_ONLY = "adjoint-only"


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters."""
    N: int = 128
    M: int = 256
    iterations: int = 2000
    seed: int = 0
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    stop_tol: float = 1e-4
    stop_window: int = 100
    smoothing: float = 0.05
    log_every: int = 50
    checkpoint_every: int = 500
    threads: int = 1
    actor_hamiltonian: ActorHamiltonian = ActorHamiltonian.HJB
    aggregator: AggregatorKind = AggregatorKind.EPSTEIN_ZIN
    crra_warm_start: bool = False
    warm_start_iterations: int = 500
    sampler: InitialStateSampler = field(default_factory=InitialStateSampler)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        object.__setattr__(self, "actor_hamiltonian", ActorHamiltonian(self.actor_hamiltonian))
        object.__setattr__(self, "aggregator", AggregatorKind(self.aggregator))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.N < 1 or self.M < 1:
            raise ValueError(f"need N >= 1 and M >= 1, got N={self.N}, M={self.M}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.stop_window < 1:
            raise ValueError("stop_window must be at least 1")


@dataclass
class TrainingResult:
    """Trained networks with their iteration log."""
    triple: NetworkTriple
    log: pd.DataFrame
    timing: pd.DataFrame
    stopped_early: bool = False

    @property
    def iterations_run(self) -> int:
        return len(self.log)

    def final_row(self) -> Dict[str, Any]:
        return {} if self.log.empty else self.log.iloc[-1].to_dict()


@dataclass(frozen=True)
class AblationSetup:
    market: MarketParams
    weights: LossWeights
    projection_enabled: bool


def apply_ablation(
    ablation: Ablation, mkt: MarketParams, weights: LossWeights
) -> AblationSetup:
    """Market, loss weights and projection switch for a named variant."""
    ablation = Ablation(ablation)
    if ablation == Ablation.SOFT_PENALTY:
        return AblationSetup(mkt, replace(weights, penalty_mode=True), False)
    if ablation == Ablation.NO_FLOOR:
        return AblationSetup(mkt.with_updates(floor_enabled=False), weights, True)
    if ablation == Ablation.VALUE_ONLY:
        return AblationSetup(
            mkt, replace(weights, lambda_adj=0.0, costate_source=CostateSource.VALUE_GRADIENT), True
        )
    if ablation == Ablation.ADJOINT_ONLY:
        return AblationSetup(mkt, replace(weights, value_weight=0.0), True)
    return AblationSetup(mkt, weights, True)


class _ConvergenceMonitor:
    """Relative change of exponentially smoothed losses over a fixed window."""

    def __init__(self, tol: float, window: int, smoothing: float):
        self.tol = tol
        self.window = window
        self.smoothing = smoothing
        self.history: List[np.ndarray] = []

    def update(self, values: List[float]) -> bool:
        current = np.asarray(values, dtype=float)
        if self.history:
            current = (1 - self.smoothing) * self.history[-1] + self.smoothing * current
        self.history.append(current)
        if self.tol <= 0 or len(self.history) <= self.window:
            return False
        past = self.history[-1 - self.window]
        change = np.abs(current - past) / (np.abs(past) + 1e-12)
        return bool(np.all(change < self.tol))


def _ensure_optimizers(triple: NetworkTriple, adam: AdamConfig) -> None:
    for name, net in triple.nets().items():
        if name not in triple.optimizers:
            triple.optimizers[name] = make_adam(net.parameters(), adam.lr_for(name), adam)


def restore_optimizers(
    triple: NetworkTriple, adam: AdamConfig, states: Dict[str, Dict[str, Any]]
) -> None:
    """Create optimizers and load saved Adam moments where available."""
    _ensure_optimizers(triple, adam)
    for name, state in states.items():
        if name in triple.optimizers:
            triple.optimizers[name].load_state_dict(state)


def build_networks(
    cfg: TrainConfig, mkt: MarketParams, ez: EZParams, seed: Optional[int] = None
) -> NetworkTriple:
    """Fresh networks for a market/preference pair."""
    return NetworkTriple.build(
        cfg.network,
        StateNormalizer.from_market(mkt),
        d=mkt.d,
        R=ez.R,
        c_offset=0.5 * ez.c_bar,
        seed=cfg.seed if seed is None else seed,
    )


def train(
    cfg: TrainConfig,
    mkt: MarketParams,
    ez: EZParams,
    cons: PortfolioConstraint,
    weights: Optional[LossWeights] = None,
    triple: Optional[NetworkTriple] = None,
    ablation: Ablation = Ablation.FULL,
    checkpoint_dir: Optional[Path] = None,
    progress: Optional[Callable[[int, Dict[str, float]], None]] = None,
) -> TrainingResult:
    """
    Run the alternating critic/actor iterations.

    Args:
        cfg: Training configuration
        mkt: Market parameters
        ez: Preferences
        cons: Portfolio constraint
        weights: Loss weights (defaults when omitted)
        triple: Networks to continue from; fresh networks when omitted
        ablation: Named variant applied on top of weights and market
        checkpoint_dir: Directory for periodic checkpoints
        progress: Optional callback receiving (iteration, log row)

    Returns:
        TrainingResult with networks and log

    Raises:
        DivergenceError: if a loss or parameter turns non-finite
    """
    setup = apply_ablation(ablation, mkt, weights or LossWeights())
    mkt, weights = setup.market, setup.weights

    if triple is None and cfg.crra_warm_start and not ez.is_crra_limit:
        logger.info(f"CRRA warm start: {cfg.warm_start_iterations} iterations at psi = 1/R")
        warm_cfg = replace(cfg, iterations=cfg.warm_start_iterations, crra_warm_start=False)
        warm = train(warm_cfg, mkt, ez.crra_limit(), cons, weights, ablation=Ablation.FULL)
        triple = warm.triple
        triple.optimizers.clear()

    if triple is None:
        triple = build_networks(cfg, mkt, ez)
    _ensure_optimizers(triple, cfg.adam)

    aggregator = make_aggregator(cfg.aggregator, ez)
    projector = ControlProjector.from_params(cons, ez, enabled=setup.projection_enabled)
    market_tensors = MarketTensors.from_market(mkt)
    monitor = _ConvergenceMonitor(cfg.stop_tol, cfg.stop_window, cfg.smoothing)
    critic_params = list(triple.value.parameters()) + list(triple.costate.parameters())
    n_value = len(list(triple.value.parameters()))

    rows: List[Dict[str, float]] = []
    timing: List[Dict[str, float]] = []
    stopped_early = False
    policy = triple.policy.as_policy()

    logger.info(
        f"Training {cfg.iterations} iterations (N={cfg.N}, M={cfg.M}, seed={cfg.seed}, "
        f"ablation={Ablation(ablation).value}, aggregator={cfg.aggregator.value})"
    )

    for iteration in range(cfg.iterations):
        started = time.perf_counter()
        batch = simulate_batch(
            policy, projector, mkt, cfg.N, cfg.M, cfg.sampler, cfg.seed, stream=iteration, threads=cfg.threads
        )

        L_val, excluded = value_loss_terms(batch, triple.value, aggregator)
        L_adj = adjoint_loss(batch, triple.value, triple.costate)
        L_crit = weights.value_weight * L_val + weights.lambda_adj * L_adj
        if L_crit.requires_grad:
            grads = torch.autograd.grad(L_crit, critic_params, allow_unused=True)
            grads = [torch.zeros_like(p) if g is None else g for p, g in zip(critic_params, grads)]
            adam_step(critic_params[:n_value], grads[:n_value], triple.optimizers["value"])
            adam_step(critic_params[n_value:], grads[n_value:], triple.optimizers["costate"])

        J_act = actor_objective(
            batch, triple, weights, aggregator, market_tensors, projector, cfg.actor_hamiltonian
        )
        if J_act.requires_grad:
            adam_step(
                list(triple.policy.parameters()),
                grad_params(-J_act, triple.policy),
                triple.optimizers["policy"],
            )

        values = [float(L_val), float(L_adj), float(J_act)]
        if not np.all(np.isfinite(values)):
            raise DivergenceError(f"non-finite loss at iteration {iteration}: {values}", iteration)
        try:
            triple.check_finite()
        except RuntimeError as e:
            raise DivergenceError(f"iteration {iteration}: {e}", iteration) from e

        row = {"iteration": iteration, "L_val": values[0], "L_adj": values[1], "J_act": values[2]}
        row.update(diagnostics(batch).to_dict())
        row["domain_exclusions"] = excluded
        row["nonfinite_controls"] = batch.nonfinite_controls
        rows.append(row)
        timing.append({"iteration": iteration, "wall_clock_s": time.perf_counter() - started})

        if progress is not None:
            progress(iteration, row)
        if cfg.log_every and (iteration + 1) % cfg.log_every == 0:
            logger.info(
                f"iter {iteration + 1}: L_val={values[0]:.3e} L_adj={values[1]:.3e} "
                f"J_act={values[2]:.4f} pi_bind={row['portfolio_binding_rate']:.2f} "
                f"c_bind={row['consumption_binding_rate']:.2f} floor={row['floor_hit_rate']:.3f}"
            )
        if checkpoint_dir is not None and cfg.checkpoint_every and (iteration + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"checkpoint_{iteration + 1:06d}.pt", triple)

        if monitor.update([values[0], values[1], abs(values[2])]):
            logger.info(f"Smoothed losses stable over {cfg.stop_window} iterations; stopping at {iteration + 1}")
            stopped_early = True
            break

    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    return TrainingResult(
        triple=triple,
        log=log,
        timing=pd.DataFrame(timing, columns=["iteration", "wall_clock_s"]),
        stopped_early=stopped_early,
    )
