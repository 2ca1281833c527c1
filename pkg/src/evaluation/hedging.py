"""
Myopic/hedging decomposition of a portfolio policy on a (W, Y) grid.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import pandas as pd

from src.market.params import MarketParams
from src.market.simulation import Policy
from src.projection.constraints import ControlProjector

logger = logging.getLogger(__name__)

# (t, W (M,), Y (M,)) -> feasible weights (M, d)
PortfolioFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]

# Finite-difference step as a fraction of the grid's Y extent
FD_STEP_FRACTION = 0.01
# Half-width of the factor band in stationary standard deviations
Y_BAND_SD = 2.0
Y_TRAINED_SD = 3.0


def feasible_portfolio(policy: Policy, projector: ControlProjector) -> PortfolioFn:
    """Portfolio component of a raw-control policy after projection."""

    def portfolio(t: float, W: np.ndarray, Y: np.ndarray) -> np.ndarray:
        raw_pi, raw_c = policy(t, W, Y)
        return projector.project(np.atleast_2d(raw_pi), np.atleast_1d(raw_c), W).pi

    return portfolio


@dataclass(frozen=True)
class GridSpec:
    """Uniform (W, Y) grid at a fixed time."""
    t: float
    W: np.ndarray
    Y: np.ndarray

    @classmethod
    def uniform(
        cls, t: float, w_range: tuple, y_range: tuple, n_w: int = 10, n_y: int = 10
    ) -> "GridSpec":
        return cls(t=float(t), W=np.linspace(*w_range, n_w), Y=np.linspace(*y_range, n_y))

    @classmethod
    def training_band(
        cls, mkt: MarketParams, W0: float = 1.0, n_w: int = 10, n_y: int = 10, t: Optional[float] = None
    ) -> "GridSpec":
        """
        Grid over the band W0 (1 -/+ W_max), bounded below by W_min, and
        y_bar +/- 2 stationary sd, at t = T/2 unless given.
        """
        w_low = max(mkt.W_min, W0 * (1.0 - mkt.W_max))
        w_high = W0 * (1.0 + mkt.W_max)
        half = Y_BAND_SD * mkt.y_stationary_sd
        return cls.uniform(
            0.5 * mkt.T if t is None else t,
            (w_low, w_high),
            (mkt.y_bar - half, mkt.y_bar + half),
            n_w,
            n_y,
        )

    @property
    def y_extent(self) -> float:
        return float(self.Y.max() - self.Y.min())

    def points(self) -> tuple:
        """Flattened (W, Y) with W varying slowest."""
        W, Y = np.meshgrid(self.W, self.Y, indexing="ij")
        return W.ravel(), Y.ravel()

    def check_band(self, mkt: MarketParams, W0: float = 1.0) -> bool:
        """Warn and return False when the grid leaves the trained region."""
        inside = True
        if self.W.min() < mkt.W_min or self.W.max() > W0 * (1.0 + mkt.W_max) + 1e-12:
            logger.warning(
                f"Wealth grid [{self.W.min():.3f}, {self.W.max():.3f}] extrapolates beyond the training band"
            )
            inside = False
        half = Y_TRAINED_SD * mkt.y_stationary_sd
        if self.Y.min() < mkt.y_bar - half - 1e-12 or self.Y.max() > mkt.y_bar + half + 1e-12:
            logger.warning(
                f"Factor grid [{self.Y.min():.3f}, {self.Y.max():.3f}] extrapolates beyond the training band"
            )
            inside = False
        if not 0.0 <= self.t <= mkt.T:
            logger.warning(f"Grid time {self.t} lies outside [0, T]")
            inside = False
        return inside


@dataclass
class HedgingSurface:
    """Per-asset EZ, myopic and hedging weights on a grid, shape (n_w, n_y, d)."""
    grid: GridSpec
    pi_ez: np.ndarray
    pi_myopic: np.ndarray
    pi_hedge: np.ndarray
    dpi_dY: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return self.pi_ez.shape[-1]

    def to_frame(self) -> pd.DataFrame:
        """One row per grid point per asset."""
        W, Y = np.meshgrid(self.grid.W, self.grid.Y, indexing="ij")
        frames = []
        for i in range(self.d):
            frame = pd.DataFrame(
                {
                    "t": self.grid.t,
                    "W": W.ravel(),
                    "Y": Y.ravel(),
                    "asset": i + 1,
                    "pi_ez": self.pi_ez[..., i].ravel(),
                    "pi_myopic": self.pi_myopic[..., i].ravel(),
                    "pi_hedge": self.pi_hedge[..., i].ravel(),
                }
            )
            frame["dpi_dY"] = np.nan if self.dpi_dY is None else self.dpi_dY[..., i].ravel()
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)


def hedging_surfaces(
    policy: PortfolioFn,
    myopic: PortfolioFn,
    grid: GridSpec,
    mkt: Optional[MarketParams] = None,
    with_gradient: bool = True,
) -> HedgingSurface:
    """
    Evaluate pi_ez, pi_myopic and pi_hedge = pi_ez - pi_myopic on a grid.

    Args:
        policy: Feasible portfolio of the learned policy
        myopic: Feasible myopic portfolio
        grid: Evaluation grid
        mkt: Market, used only to flag extrapolation
        with_gradient: Also compute d pi_ez / dY by central differences

    Returns:
        HedgingSurface
    """
    if mkt is not None:
        grid.check_band(mkt)
    W, Y = grid.points()
    shape = (len(grid.W), len(grid.Y))

    pi_ez = np.asarray(policy(grid.t, W, Y), dtype=float)
    pi_myo = np.asarray(myopic(grid.t, W, Y), dtype=float)
    d = pi_ez.shape[-1]
    pi_ez = pi_ez.reshape(*shape, d)
    pi_myo = pi_myo.reshape(*shape, d)

    dpi_dY = None
    if with_gradient:
        h = FD_STEP_FRACTION * grid.y_extent
        if h <= 0:
            raise ValueError("finite differences in Y need a grid with positive Y extent")
        up = np.asarray(policy(grid.t, W, Y + h), dtype=float)
        down = np.asarray(policy(grid.t, W, Y - h), dtype=float)
        dpi_dY = ((up - down) / (2.0 * h)).reshape(*shape, d)

    return HedgingSurface(grid=grid, pi_ez=pi_ez, pi_myopic=pi_myo, pi_hedge=pi_ez - pi_myo, dpi_dY=dpi_dY)


def mean_hedging_by_asset(surface: HedgingSurface) -> pd.DataFrame:
    """Grid-uniform mean |pi_hedge| per asset with rank 1 for the largest."""
    magnitude = np.abs(surface.pi_hedge).reshape(-1, surface.d).mean(axis=0)
    order = np.argsort(-magnitude, kind="stable")
    rank = np.empty(surface.d, dtype=int)
    rank[order] = np.arange(1, surface.d + 1)
    return pd.DataFrame({"asset": np.arange(1, surface.d + 1), "mean_abs_hedge": magnitude, "rank": rank})


def hedging_by_wealth(surface: HedgingSurface) -> pd.DataFrame:
    """Mean |pi_hedge| over factor levels, per wealth level and asset."""
    profile = np.abs(surface.pi_hedge).mean(axis=1)
    frames = [
        pd.DataFrame({"W": surface.grid.W, "asset": i + 1, "mean_abs_hedge": profile[:, i]})
        for i in range(surface.d)
    ]
    return pd.concat(frames, ignore_index=True)
