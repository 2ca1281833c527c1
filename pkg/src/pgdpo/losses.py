"""
Critic and actor objectives computed on a simulated batch.
"""
import logging
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, Tuple, Union

import torch

from src.market.simulation import PathBatch
from src.models.networks import (
    DTYPE,
    NetworkTriple,
    StateNetwork,
    costate_jacobian,
    state_gradient,
    value_hessian,
)
from src.pgdpo.hamiltonian import MarketTensors, diffusion_term, hamiltonian_batch
from src.preferences.aggregators import Aggregator, EpsteinZinAggregator
from src.preferences.utility import EZParams
from src.projection.constraints import ControlProjector

logger = logging.getLogger(__name__)


class CostateSource(str, Enum):
    """Where the actor reads the costate from."""
    NETWORK = "network"
    VALUE_GRADIENT = "value-gradient"


class ActorHamiltonian(str, Enum):
    """Objective ascended by the actor."""
    HJB = "hjb"
    DRIFT = "drift"


@dataclass(frozen=True)
class LossWeights:
    """Weights and switches of the training objectives."""
    lambda_adj: float = 1.0
    beta_reg: float = 0.0
    penalty_mode: bool = False
    penalty_weight: float = 10.0
    value_weight: float = 1.0
    costate_source: CostateSource = CostateSource.NETWORK

    def __post_init__(self):
        object.__setattr__(self, "costate_source", CostateSource(self.costate_source))
        for name in ("lambda_adj", "beta_reg", "penalty_weight", "value_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["costate_source"] = self.costate_source.value
        return data


def _as_aggregator(agg: Union[Aggregator, EZParams]) -> Aggregator:
    return agg if isinstance(agg, Aggregator) else EpsteinZinAggregator(agg)


def _tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


def _step_states(batch: PathBatch) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Flattened (t, W, Y) at steps 0..N-1 in path-major order."""
    M, N = batch.M, batch.N
    t = _tensor(batch.t[:N]).repeat(M)
    return t, _tensor(batch.W[:, :N]).reshape(-1), _tensor(batch.Y[:, :N]).reshape(-1)


def value_loss_terms(
    batch: PathBatch,
    value_net: StateNetwork,
    aggregator: Union[Aggregator, EZParams],
) -> Tuple[torch.Tensor, int]:
    """
    Mean squared one-step BSDE residual and the number of excluded points.

    The value after the last step is the terminal (bequest) value.
    """
    agg = _as_aggregator(aggregator)
    M, N = batch.M, batch.N
    t, W, Y = _step_states(batch)
    V = value_net(t, W, Y).reshape(M, N)
    terminal = agg.terminal(float(batch.t[-1]), _tensor(batch.W[:, -1]))
    V_next = torch.cat([V[:, 1:], terminal[:, None]], dim=1)

    c = _tensor(batch.c)
    t_grid = _tensor(batch.t[:N]).expand(M, N)
    admissible = agg.admissible(c, V.detach())
    c_safe = torch.where(admissible, c, torch.ones_like(c))
    V_safe = torch.where(admissible, V, -torch.ones_like(V) if agg.R > 1 else torch.ones_like(V))
    flow = agg.flow(t_grid, c_safe, V_safe)

    residual = V - V_next - flow * batch.dt
    valid = admissible & torch.isfinite(residual.detach())
    excluded = int((~valid).sum())
    if excluded:
        logger.warning(f"Value loss excluded {excluded} points outside the aggregator domain")
    if not valid.any():
        return torch.zeros((), dtype=DTYPE), excluded
    return (residual[valid] ** 2).mean(), excluded


def value_loss(
    batch: PathBatch,
    value_net: StateNetwork,
    aggregator: Union[Aggregator, EZParams],
) -> torch.Tensor:
    """Mean squared BSDE residual over all (path, step) pairs."""
    loss, _ = value_loss_terms(batch, value_net, aggregator)
    return loss


def adjoint_loss(batch: PathBatch, value_net: StateNetwork, costate_net: StateNetwork) -> torch.Tensor:
    """
    Mean squared mismatch between the costate network and grad_x V_theta over
    every (path, time point) including the terminal time.
    """
    M, N = batch.M, batch.N
    t = _tensor(batch.t).repeat(M)
    W = _tensor(batch.W).reshape(-1)
    Y = _tensor(batch.Y).reshape(-1)
    _, grad = state_gradient(value_net, t, W, Y, create_graph=True)
    lam = costate_net(t, W, Y)
    return ((lam - grad[:, 1:]) ** 2).sum(dim=-1).mean()


def actor_objective(
    batch: PathBatch,
    nets: NetworkTriple,
    weights: LossWeights,
    aggregator: Union[Aggregator, EZParams],
    mkt: MarketTensors,
    projector: ControlProjector,
    form: ActorHamiltonian = ActorHamiltonian.HJB,
) -> torch.Tensor:
    """
    Batch mean of the Hamiltonian at the projected policy output.

    Value and costate are frozen inputs; gradients reach only the policy
    parameters, through the projection where it is differentiable.
    """
    agg = _as_aggregator(aggregator)
    t, W, Y = _step_states(batch)

    if weights.costate_source == CostateSource.VALUE_GRADIENT:
        v, grad = state_gradient(nets.value, t, W, Y)
        v, p = v.detach(), grad[:, 1:].detach()
    else:
        with torch.no_grad():
            v = nets.value(t, W, Y)
            p = nets.costate(t, W, Y)

    raw_pi, raw_c = nets.policy.raw_controls(t, W, Y)
    pi, c = projector.project_torch(raw_pi, raw_c, W)

    H = hamiltonian_batch(t, W, Y, v, p, pi, c, agg, mkt)
    if ActorHamiltonian(form) == ActorHamiltonian.HJB:
        if weights.costate_source == CostateSource.VALUE_GRADIENT:
            curvature = value_hessian(nets.value, t, W, Y)
        else:
            curvature = costate_jacobian(nets.costate, t, W, Y)
        H = H + diffusion_term(W, pi, curvature, mkt)

    valid = agg.admissible(c.detach(), v) & torch.isfinite(H.detach())
    J = H[valid].mean() if valid.any() else torch.zeros((), dtype=DTYPE)

    if weights.beta_reg > 0:
        J = J - weights.beta_reg * (pi ** 2).sum(dim=-1).mean()
    if weights.penalty_mode:
        J = J - weights.penalty_weight * projector.infeasibility_torch(raw_pi, raw_c, W).mean()
    return J
