"""
Euclidean projections onto the admissible control set and binding diagnostics.

Portfolio projection uses the sorted-threshold simplex algorithm. It is
written once in torch so the trainer can differentiate through it (autograd
then yields the active-set derivative); numpy callers go through thin
wrappers.
"""
import logging
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, NamedTuple, Tuple

import numpy as np
import torch

from src.market.params import Control
from src.preferences.utility import EZParams

logger = logging.getLogger(__name__)

# Lower consumption bound as a fraction of wealth
CONSUMPTION_FLOOR_RATIO = 1e-6
# Tolerance for deciding that a projection changed its input
BINDING_TOL = 1e-12
DISTANCE_EPS = 1e-8


class ConstraintMode(str, Enum):
    """Shape of the portfolio set."""
    EQUALITY_SIMPLEX = "equality-simplex"
    CAPPED_SIMPLEX = "capped-simplex"


@dataclass(frozen=True)
class PortfolioConstraint:
    """Long-only portfolio set, fully invested or leverage-capped."""
    mode: ConstraintMode = ConstraintMode.EQUALITY_SIMPLEX
    leverage_cap: float = 2.0
    budget: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", ConstraintMode(self.mode))
        if self.leverage_cap < 1:
            raise ValueError(f"leverage_cap must be at least 1, got {self.leverage_cap}")
        if self.budget <= 0:
            raise ValueError(f"budget must be positive, got {self.budget}")

    @property
    def level(self) -> float:
        """Sum of weights on the binding face of the set."""
        if self.mode == ConstraintMode.EQUALITY_SIMPLEX:
            return self.budget
        return self.leverage_cap

    def contains(self, pi: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """Feasibility test along the last axis."""
        pi = np.asarray(pi, dtype=float)
        total = pi.sum(axis=-1)
        nonneg = np.all(pi >= -tol, axis=-1)
        if self.mode == ConstraintMode.EQUALITY_SIMPLEX:
            return nonneg & (np.abs(total - self.budget) <= tol)
        return nonneg & (total <= self.leverage_cap + tol)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["mode"] = self.mode.value
        return data


@dataclass(frozen=True)
class ProjectionDiagnostics:
    """Constraint activity over a simulated batch."""
    portfolio_binding_rate: float
    consumption_binding_rate: float
    floor_hit_rate: float
    mean_relative_projection_distance: float
    mean_applied_infeasibility: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


class ProjectionResult(NamedTuple):
    control: Control
    portfolio_active: bool
    consumption_active: bool


class ProjectedControls(NamedTuple):
    """Batched projection output."""
    pi: np.ndarray
    c: np.ndarray
    portfolio_active: np.ndarray
    consumption_active: np.ndarray


def simplex_projection_torch(x: torch.Tensor, level: float) -> torch.Tensor:
    """
    Project each row of x onto {y >= 0, sum(y) = level}.

    Ties in the descending sort keep ascending index order.
    """
    d = x.shape[-1]
    u, _ = torch.sort(x, dim=-1, descending=True, stable=True)
    cssv = torch.cumsum(u, dim=-1) - level
    ind = torch.arange(1, d + 1, dtype=x.dtype, device=x.device)
    cond = u - cssv / ind > 0
    rho = cond.sum(dim=-1, keepdim=True)
    theta = torch.gather(cssv, -1, rho - 1) / rho.to(x.dtype)
    return torch.clamp(x - theta, min=0.0)


def portfolio_projection_torch(x: torch.Tensor, cons: PortfolioConstraint) -> torch.Tensor:
    """Differentiable projection of raw weights onto the portfolio set."""
    if cons.mode == ConstraintMode.EQUALITY_SIMPLEX:
        return simplex_projection_torch(x, cons.budget)
    positive = torch.clamp(x, min=0.0)
    inside = positive.sum(dim=-1, keepdim=True) <= cons.leverage_cap
    return torch.where(inside, positive, simplex_projection_torch(x, cons.leverage_cap))


def consumption_projection_torch(
    raw_c: torch.Tensor,
    W: torch.Tensor,
    c_bar: float,
    floor_ratio: float = CONSUMPTION_FLOOR_RATIO,
) -> torch.Tensor:
    """Clip consumption into [floor_ratio W, c_bar W]."""
    return torch.minimum(torch.maximum(raw_c, floor_ratio * W), c_bar * W)


def project_portfolio(raw, cons: PortfolioConstraint) -> np.ndarray:
    """
    Euclidean projection of raw portfolio weights onto the portfolio set.

    Args:
        raw: Weights of shape (d,) or (M, d)
        cons: Portfolio constraint

    Returns:
        Projected weights with the input shape
    """
    raw = np.asarray(raw, dtype=float)
    with torch.no_grad():
        out = portfolio_projection_torch(torch.from_numpy(np.atleast_2d(raw).copy()), cons)
    return out.numpy().reshape(raw.shape)


def project_consumption(
    raw_c,
    W,
    p: EZParams,
    floor_ratio: float = CONSUMPTION_FLOOR_RATIO,
) -> Tuple[Any, Any]:
    """
    Clip raw consumption into [floor_ratio W, c_bar W].

    Returns:
        Tuple of (consumption, clip flag)
    """
    raw_c = np.asarray(raw_c, dtype=float)
    W = np.asarray(W, dtype=float)
    c = np.minimum(np.maximum(raw_c, floor_ratio * W), p.c_bar * W)
    active = c != raw_c
    if c.ndim == 0:
        return float(c), bool(active)
    return c, active


def project_control(
    raw: Control,
    W: float,
    cons: PortfolioConstraint,
    p: EZParams,
) -> ProjectionResult:
    """Project a single raw control; portfolio and consumption are clipped independently."""
    pi = project_portfolio(raw.pi, cons)
    c, c_active = project_consumption(raw.c, W, p)
    pi_active = bool(np.max(np.abs(pi - raw.pi)) > BINDING_TOL)
    return ProjectionResult(Control(pi=pi, c=c), pi_active, c_active)


@dataclass(frozen=True)
class ControlProjector:
    """
    Projection operator applied to raw policy output.

    With enabled=False the raw portfolio and the raw consumption are applied
    as they are, apart from the positivity floor on consumption; this is the
    soft-penalty configuration of the trainer.
    """
    constraint: PortfolioConstraint
    c_bar: float
    floor_ratio: float = CONSUMPTION_FLOOR_RATIO
    enabled: bool = True

    @classmethod
    def from_params(
        cls, cons: PortfolioConstraint, ez: EZParams, enabled: bool = True
    ) -> "ControlProjector":
        return cls(constraint=cons, c_bar=ez.c_bar, enabled=enabled)

    def project(self, raw_pi: np.ndarray, raw_c: np.ndarray, W: np.ndarray) -> ProjectedControls:
        """Project a batch of raw controls (numpy)."""
        if self.enabled:
            pi = project_portfolio(raw_pi, self.constraint)
            c = np.minimum(np.maximum(raw_c, self.floor_ratio * W), self.c_bar * W)
        else:
            pi = np.array(raw_pi, dtype=float)
            c = np.maximum(raw_c, self.floor_ratio * W)
        portfolio_active = np.max(np.abs(pi - raw_pi), axis=-1) > BINDING_TOL
        consumption_active = c != raw_c
        return ProjectedControls(pi, c, portfolio_active, consumption_active)

    def project_torch(
        self, raw_pi: torch.Tensor, raw_c: torch.Tensor, W: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Differentiable projection of a batch of raw controls."""
        if not self.enabled:
            return raw_pi, torch.maximum(raw_c, self.floor_ratio * W)
        pi = portfolio_projection_torch(raw_pi, self.constraint)
        c = consumption_projection_torch(raw_c, W, self.c_bar, self.floor_ratio)
        return pi, c

    def infeasibility_torch(
        self, pi: torch.Tensor, c: torch.Tensor, W: torch.Tensor
    ) -> torch.Tensor:
        """Squared distance of controls from the admissible set."""
        with torch.no_grad():
            pi_target = portfolio_projection_torch(pi, self.constraint)
            c_target = consumption_projection_torch(c, W, self.c_bar, self.floor_ratio)
        return ((pi - pi_target) ** 2).sum(dim=-1) + (c - c_target) ** 2

    def infeasibility(self, pi: np.ndarray, c: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Euclidean distance of applied controls from the admissible set."""
        with torch.no_grad():
            sq = self.infeasibility_torch(
                torch.from_numpy(np.atleast_2d(pi).astype(float)),
                torch.from_numpy(np.atleast_1d(c).astype(float)),
                torch.from_numpy(np.atleast_1d(W).astype(float)),
            )
        return np.sqrt(sq.numpy())


def diagnostics(batch) -> ProjectionDiagnostics:
    """
    Binding rates and projection distance of a simulated batch.

    Raises:
        ValueError: if the batch holds no control steps
    """
    if batch.M == 0 or batch.N == 0:
        raise ValueError("cannot compute diagnostics on an empty batch")

    moved = np.linalg.norm(batch.pi - batch.raw_pi, axis=-1)
    scale = np.linalg.norm(batch.raw_pi, axis=-1) + DISTANCE_EPS
    return ProjectionDiagnostics(
        portfolio_binding_rate=float(np.mean(batch.portfolio_active)),
        consumption_binding_rate=float(np.mean(batch.consumption_active)),
        floor_hit_rate=float(np.mean(batch.floor_hit)),
        mean_relative_projection_distance=float(np.mean(moved / scale)),
        mean_applied_infeasibility=float(np.mean(batch.infeasibility)),
    )
