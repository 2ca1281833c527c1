"""
Policy evaluation, direct Monte Carlo values and certainty equivalents.
"""
import logging
import math
from dataclasses import dataclass, asdict, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from src.market.params import MarketParams
from src.market.simulation import InitialStateSampler, PathBatch, Policy, simulate_batch
from src.models.networks import DTYPE, NetworkSpec, StateNormalizer, ValueNetwork, grad_params
from src.models.optim import AdamConfig, adam_step, make_adam
from src.pgdpo.losses import value_loss_terms
from src.preferences.aggregators import Aggregator, AggregatorKind, make_aggregator
from src.preferences.utility import EZParams, crra_utility
from src.projection.constraints import ControlProjector, PortfolioConstraint

logger = logging.getLogger(__name__)

# Stream offset separating evaluation batches from training batches
EVALUATION_STREAM = 1_000_000


@dataclass(frozen=True)
class PolicyEvaluationConfig:
    """Settings of value-only retraining for a frozen policy."""
    iterations: int = 500
    N: int = 128
    M: int = 256
    M_eval: int = 4096
    W0: float = 1.0
    seed: int = 0
    lr: float = 1e-3
    network: NetworkSpec = field(default_factory=NetworkSpec)
    aggregator: AggregatorKind = AggregatorKind.EPSTEIN_ZIN
    threads: int = 1


@dataclass(frozen=True)
class ValueEstimate:
    """Value at (0, W0, y_bar) with its Monte Carlo standard error."""
    value: float
    standard_error: float
    network_value: float
    final_loss: float
    converged: bool

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class WelfareReport:
    """Welfare numbers per seed and their cross-seed summary."""
    policy: str
    ez_value_at_start: List[float]
    ez_certainty_equivalent: List[float]
    crra_certainty_equivalent: List[float]
    seeds: List[int]

    def summary(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for name in ("ez_value_at_start", "ez_certainty_equivalent", "crra_certainty_equivalent"):
            values = np.asarray(getattr(self, name), dtype=float)
            out[name] = {
                "mean": float(values.mean()),
                "sd": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
            }
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "policy": self.policy,
                "seed": self.seeds,
                "ez_value_at_start": self.ez_value_at_start,
                "ez_certainty_equivalent": self.ez_certainty_equivalent,
                "crra_certainty_equivalent": self.crra_certainty_equivalent,
            }
        )


def discounted_crra_pathwise(
    batch: PathBatch,
    R: float,
    delta: float,
    kappa: float,
    flow_weight: float = 1.0,
) -> np.ndarray:
    """Per-path sum w e^(-delta t) u(c) dt + e^(-delta T) kappa U(W_T)."""
    discount = np.exp(-delta * batch.t[:-1])
    flow = flow_weight * (discount * np.asarray(crra_utility(batch.c, R))).sum(axis=1) * batch.dt
    terminal = math.exp(-delta * batch.t[-1]) * kappa * np.asarray(crra_utility(batch.terminal_wealth, R))
    return flow + terminal


def mean_and_se(per_path: np.ndarray) -> Tuple[float, float]:
    per_path = np.asarray(per_path, dtype=float)
    se = per_path.std(ddof=1) / np.sqrt(len(per_path)) if len(per_path) > 1 else 0.0
    return float(per_path.mean()), float(se)


def discounted_crra_value(
    batch: PathBatch,
    R: float,
    delta: float,
    kappa: float,
    flow_weight: float = 1.0,
) -> Tuple[float, float]:
    """
    Direct Monte Carlo of E[sum w e^(-delta t) u(c) dt + e^(-delta T) kappa U(W_T)].

    Returns:
        Tuple of (mean, standard error)
    """
    return mean_and_se(discounted_crra_pathwise(batch, R, delta, kappa, flow_weight))


def annuity_factor(delta: float, kappa: float, T: float) -> float:
    """A(T) = int_0^T e^(-delta t) dt + kappa e^(-delta T)."""
    return (1.0 - math.exp(-delta * T)) / delta + kappa * math.exp(-delta * T)


def crra_certainty_equivalent(J0: float, R: float, delta: float, kappa: float, T: float) -> float:
    """u^-1(J0 / A(T)) for a time-additive discounted CRRA value J0."""
    if not (1.0 - R) * J0 > 0:
        raise ValueError(f"value {J0} has the wrong sign for R = {R}")
    return float(((1.0 - R) * J0 / annuity_factor(delta, kappa, T)) ** (1.0 / (1.0 - R)))


def certainty_equivalents(
    value: float,
    ez: EZParams,
    T: float,
    crra_value: Optional[float] = None,
) -> Tuple[float, float]:
    """
    Certainty equivalents of a value.

    ez_ce = ((1-R) V0)^(1/(1-R)); crra_ce = u^-1(J0 / A(T)), with J0 the
    time-additive value (defaults to value).

    Raises:
        ValueError: if (1 - R) V0 <= 0
    """
    R = ez.R
    J0 = value if crra_value is None else crra_value
    for name, v in (("value", value), ("crra_value", J0)):
        if not (1.0 - R) * v > 0:
            raise ValueError(f"{name} = {v} has the wrong sign for R = {R}")
    ez_ce = ((1.0 - R) * value) ** (1.0 / (1.0 - R))
    crra_ce = crra_certainty_equivalent(J0, R, ez.delta, ez.kappa_bequest, T)
    return float(ez_ce), crra_ce


def _pathwise_values(batch: PathBatch, value_net: ValueNetwork, aggregator: Aggregator) -> np.ndarray:
    """Per-path sum of running terms plus terminal value (telescoped residuals)."""
    M, N = batch.M, batch.N
    t = torch.as_tensor(batch.t[:N], dtype=DTYPE).repeat(M)
    W = torch.as_tensor(batch.W[:, :N], dtype=DTYPE).reshape(-1)
    Y = torch.as_tensor(batch.Y[:, :N], dtype=DTYPE).reshape(-1)
    with torch.no_grad():
        V = value_net(t, W, Y).reshape(M, N)
        flow = aggregator.flow(t.reshape(M, N), torch.as_tensor(batch.c, dtype=DTYPE), V)
        terminal = aggregator.terminal(float(batch.t[-1]), torch.as_tensor(batch.W[:, -1], dtype=DTYPE))
    return (flow.sum(dim=1) * batch.dt + terminal).numpy()


def evaluate_ez_value(
    policy: Policy,
    mkt: MarketParams,
    ez: EZParams,
    cfg: PolicyEvaluationConfig,
    cons: PortfolioConstraint,
    projector: Optional[ControlProjector] = None,
) -> ValueEstimate:
    """
    Value of a frozen policy at (0, W0, y_bar).

    A fresh value network is fitted on the value loss alone; the reported
    value and its standard error come from the per-path telescoped residual
    sums on an evaluation batch started at (W0, y_bar).
    """
    projector = projector or ControlProjector.from_params(cons, ez)
    aggregator = make_aggregator(cfg.aggregator, ez)
    value_net = ValueNetwork(ValueNetwork.spec_for(ez.R, cfg.network), StateNormalizer.from_market(mkt), seed=cfg.seed)
    optimizer = make_adam(value_net.parameters(), cfg.lr, AdamConfig())
    sampler = InitialStateSampler.fixed(cfg.W0)

    loss = float("nan")
    for iteration in range(cfg.iterations):
        batch = simulate_batch(
            policy, projector, mkt, cfg.N, cfg.M, sampler, cfg.seed,
            stream=EVALUATION_STREAM + iteration, threads=cfg.threads,
        )
        L_val, _ = value_loss_terms(batch, value_net, aggregator)
        adam_step(list(value_net.parameters()), grad_params(L_val, value_net), optimizer)
        loss = float(L_val)

    eval_batch = simulate_batch(
        policy, projector, mkt, cfg.N, cfg.M_eval, sampler, cfg.seed,
        stream=2 * EVALUATION_STREAM, threads=cfg.threads,
    )
    per_path = _pathwise_values(eval_batch, value_net, aggregator)
    estimate, se = mean_and_se(per_path)
    with torch.no_grad():
        network_value = float(
            value_net(
                torch.zeros(1, dtype=DTYPE),
                torch.full((1,), cfg.W0, dtype=DTYPE),
                torch.full((1,), mkt.y_bar, dtype=DTYPE),
            )[0]
        )

    converged = bool(np.isfinite(estimate) and abs(network_value - estimate) <= 3.0 * se + 1e-2 * abs(estimate))
    if not converged:
        logger.warning(
            f"Value evaluation not converged: network {network_value:.5f} vs pathwise {estimate:.5f} (se {se:.2e})"
        )
    return ValueEstimate(
        value=estimate, standard_error=se, network_value=network_value, final_loss=loss, converged=converged
    )


def welfare_report(
    policy_name: str,
    seeds: List[int],
    estimates: List[ValueEstimate],
    crra_values: List[float],
    ez: EZParams,
    T: float,
) -> WelfareReport:
    """Assemble a welfare report from per-seed estimates."""
    ez_ce, crra_ce = [], []
    for estimate, crra_value in zip(estimates, crra_values):
        a, b = certainty_equivalents(estimate.value, ez, T, crra_value)
        ez_ce.append(a)
        crra_ce.append(b)
    return WelfareReport(
        policy=policy_name,
        ez_value_at_start=[e.value for e in estimates],
        ez_certainty_equivalent=ez_ce,
        crra_certainty_equivalent=crra_ce,
        seeds=list(seeds),
    )
