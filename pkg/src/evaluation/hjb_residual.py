"""
HJB residual of a value/policy pair on the single-asset CRRA benchmark.

R(t, W) = V_t + (r W + pi W (mu - r) - c) V_W + 1/2 pi^2 W^2 sigma^2 V_WW + e^(-delta t) u(c)
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Protocol, Tuple

import numpy as np
import pandas as pd
import torch

from src.analytic.merton import MertonParams, merton_policy, merton_value_derivatives
from src.models.networks import DTYPE, StateNetwork, state_gradient
from src.preferences.utility import crra_utility

logger = logging.getLogger(__name__)

# (t, W (M,)) -> (risky share (M,), consumption (M,))
ShareConsumptionFn = Callable[[float, np.ndarray], Tuple[np.ndarray, np.ndarray]]

GRID_TIME_STEPS = 32
GRID_WEALTH_POINTS = 50
GRID_WEALTH_RANGE = (0.1, 2.0)
# Step on the normalized wealth scale
FD_STEP_NORMALIZED = 1e-3


class ValueSurface(Protocol):
    """V, dV/dt and dV/dW at arrays of (t, W)."""

    def derivatives(self, t: float, W: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]: ...


class MertonValueSurface:
    def __init__(self, params: MertonParams):
        self.params = params

    def derivatives(self, t, W):
        V, V_t, V_W = merton_value_derivatives(np.full_like(W, t), W, self.params)
        return np.asarray(V), np.asarray(V_t), np.asarray(V_W)


class NetworkValueSurface:
    """Value network read at a fixed factor level."""

    def __init__(self, value_net: StateNetwork, y: float):
        self.value_net = value_net
        self.y = float(y)

    def derivatives(self, t, W):
        W_t = torch.as_tensor(np.asarray(W, dtype=float), dtype=DTYPE)
        V, grad = state_gradient(
            self.value_net, torch.full_like(W_t, float(t)), W_t, torch.full_like(W_t, self.y)
        )
        return V.detach().numpy(), grad[:, 0].numpy(), grad[:, 1].numpy()


@dataclass(frozen=True)
class HJBGrid:
    t: np.ndarray
    W: np.ndarray

    @classmethod
    def validation(cls, T: float) -> "HJBGrid":
        return cls(
            t=np.linspace(0.0, T, GRID_TIME_STEPS, endpoint=False),
            W=np.linspace(*GRID_WEALTH_RANGE, GRID_WEALTH_POINTS),
        )


@dataclass
class HJBResidual:
    grid: HJBGrid
    residual: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.residual.mean())

    @property
    def sd(self) -> float:
        return float(self.residual.std(ddof=1))

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.residual).max())

    def summary(self) -> Dict[str, float]:
        return {"mean": self.mean, "sd": self.sd, "max_abs": self.max_abs}

    def to_frame(self) -> pd.DataFrame:
        t, W = np.meshgrid(self.grid.t, self.grid.W, indexing="ij")
        return pd.DataFrame({"t": t.ravel(), "W": W.ravel(), "residual": self.residual.ravel()})


def _second_derivative(surface: ValueSurface, t: float, W: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central difference of V_W in W."""
    d1 = [surface.derivatives(t, W + k * h)[2] for k in (-2, -1, 1, 2)]
    return (d1[0] - 8.0 * d1[1] + 8.0 * d1[2] - d1[3]) / (12.0 * h)


def hjb_residual_crra(
    surface: ValueSurface,
    policy: ShareConsumptionFn,
    params: MertonParams,
    grid: Optional[HJBGrid] = None,
    w_scale: float = 0.9,
) -> HJBResidual:
    """
    Residual of the CRRA HJB generator applied to (V, policy) on a grid.

    Args:
        surface: Value and first derivatives
        policy: Risky share and consumption level at (t, W)
        params: Single-asset benchmark
        grid: Evaluation grid; the validation grid when omitted
        w_scale: Wealth normalization scale; the step is 1e-3 of it

    Returns:
        HJBResidual of shape (N_t, N_w)
    """
    grid = grid or HJBGrid.validation(params.T)
    h = FD_STEP_NORMALIZED * w_scale
    excess = params.mu - params.r
    rows = []
    for t in grid.t:
        W = grid.W
        _, V_t, V_W = surface.derivatives(float(t), W)
        V_WW = _second_derivative(surface, float(t), W, h)
        pi, c = policy(float(t), W)
        pi = np.asarray(pi, dtype=float).reshape(W.shape)
        c = np.asarray(c, dtype=float).reshape(W.shape)
        drift = params.r * W + pi * W * excess - c
        rows.append(
            V_t
            + drift * V_W
            + 0.5 * (pi * W * params.sigma) ** 2 * V_WW
            + np.exp(-params.delta * t) * np.asarray(crra_utility(c, params.R))
        )
    result = HJBResidual(grid=grid, residual=np.vstack(rows))
    logger.info(f"HJB residual: mean {result.mean:.3e}, sd {result.sd:.3e}, max |R| {result.max_abs:.3e}")
    return result


def merton_share_consumption(params: MertonParams) -> ShareConsumptionFn:
    """Closed-form Merton controls as a residual policy."""

    def policy(t: float, W: np.ndarray):
        return merton_policy(np.full_like(W, t), W, params)

    return policy
