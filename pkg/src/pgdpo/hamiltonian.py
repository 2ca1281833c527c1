"""
Epstein-Zin Hamiltonian H = f(c, v) + p^T b(x, u) and its control gradients.

Wealth drift uses the excess-return form b_W = r W + W pi^T (mu(Y) - r) - c,
factor drift b_Y = kappa_y (y_bar - Y).
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch

from src.market.dynamics import drift_mu, vol_matrix
from src.market.params import Control, MarketParams, State
from src.models.networks import DTYPE
from src.preferences.aggregators import Aggregator
from src.preferences.utility import EZParams, ez_aggregator, ez_aggregator_dc


def hamiltonian(s: State, v: float, p, u: Control, mkt: MarketParams, ez: EZParams) -> float:
    """
    Drift-only Hamiltonian at a single point.

    Args:
        s: State (t, W, Y)
        v: Continuation value
        p: Costate (p_W, p_Y)
        u: Projected control
        mkt: Market parameters
        ez: Preferences

    Returns:
        Scalar Hamiltonian
    """
    p_W, p_Y = float(p[0]), float(p[1])
    excess = drift_mu(s.Y, mkt) - mkt.r
    b_W = mkt.r * s.W + s.W * float(u.pi @ excess) - u.c
    b_Y = mkt.kappa_y * (mkt.y_bar - s.Y)
    return float(ez_aggregator(u.c, v, ez)) + p_W * b_W + p_Y * b_Y


def hamiltonian_grad_u(
    s: State, v: float, p, u: Control, mkt: MarketParams, ez: EZParams
) -> Tuple[np.ndarray, float]:
    """
    Closed-form (dH/dpi, dH/dc).

    dH/dpi = p_W W (mu(Y) - r) and dH/dc = df/dc - p_W.
    """
    p_W = float(p[0])
    excess = drift_mu(s.Y, mkt) - mkt.r
    return p_W * s.W * excess, float(ez_aggregator_dc(u.c, v, ez)) - p_W


@dataclass(frozen=True)
class MarketTensors:
    """Market constants as torch tensors for batched evaluation."""
    r: float
    kappa_y: float
    y_bar: float
    xi: float
    mu_bar: torch.Tensor
    beta_lrr: torch.Tensor
    Sigma: torch.Tensor
    covariance: torch.Tensor

    @classmethod
    def from_market(cls, mkt: MarketParams) -> "MarketTensors":
        Sigma = torch.as_tensor(vol_matrix(mkt), dtype=DTYPE)
        return cls(
            r=mkt.r,
            kappa_y=mkt.kappa_y,
            y_bar=mkt.y_bar,
            xi=mkt.xi,
            mu_bar=torch.as_tensor(mkt.mu_bar, dtype=DTYPE),
            beta_lrr=torch.as_tensor(mkt.beta_lrr, dtype=DTYPE),
            Sigma=Sigma,
            covariance=Sigma @ Sigma.T,
        )

    def excess_return(self, Y: torch.Tensor) -> torch.Tensor:
        return self.mu_bar + (Y - self.y_bar)[:, None] * self.beta_lrr - self.r


def hamiltonian_batch(
    t: torch.Tensor,
    W: torch.Tensor,
    Y: torch.Tensor,
    v: torch.Tensor,
    p: torch.Tensor,
    pi: torch.Tensor,
    c: torch.Tensor,
    aggregator: Aggregator,
    mkt: MarketTensors,
) -> torch.Tensor:
    """Drift-only Hamiltonian on a batch; p has columns (p_W, p_Y)."""
    b_W = mkt.r * W + W * (pi * mkt.excess_return(Y)).sum(dim=-1) - c
    b_Y = mkt.kappa_y * (mkt.y_bar - Y)
    return aggregator.flow(t, c, v) + p[:, 0] * b_W + p[:, 1] * b_Y


def diffusion_term(
    W: torch.Tensor,
    pi: torch.Tensor,
    jacobian: torch.Tensor,
    mkt: MarketTensors,
) -> torch.Tensor:
    """
    Second-order generator term (1/2) tr(sigma_X sigma_X^T D), with D the
    symmetrized costate Jacobian standing in for the value Hessian.
    """
    a_WW = W ** 2 * torch.einsum("md,de,me->m", pi, mkt.covariance, pi)
    a_WY = W * mkt.xi * (pi @ mkt.Sigma[:, 0])
    a_YY = mkt.xi ** 2
    V_WW = jacobian[:, 0, 0]
    V_WY = 0.5 * (jacobian[:, 0, 1] + jacobian[:, 1, 0])
    V_YY = jacobian[:, 1, 1]
    return 0.5 * (a_WW * V_WW + 2.0 * a_WY * V_WY + a_YY * V_YY)
