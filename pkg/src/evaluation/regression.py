"""
Cross-sectional regressions of hedging demand on asset characteristics.
"""
import logging
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.linear_model import LinearRegression

from src.evaluation.hedging import HedgingSurface
from src.market.params import MarketParams

logger = logging.getLogger(__name__)

BOOTSTRAP_REPLICATIONS = 1000
# Sub-seed mixed into the bootstrap generator
BOOTSTRAP_SUBSEED = 7919

CHARACTERISTICS = ("sharpe", "sigma", "rho", "beta_lrr")


@dataclass(frozen=True)
class RegressionResult:
    """Univariate OLS of a response on one characteristic."""
    characteristic: str
    slope: float
    intercept: float
    bootstrap_se: float
    t_stat: float
    r_squared: float
    n: int
    replications: int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def asset_characteristics(mkt: MarketParams) -> pd.DataFrame:
    """Sharpe ratio at Y = y_bar, volatility, factor correlation and LRR beta per asset."""
    return pd.DataFrame(
        {
            "asset": np.arange(1, mkt.d + 1),
            "mu_bar": mkt.mu_bar,
            "sigma": mkt.sigma,
            "rho": mkt.rho,
            "beta_lrr": mkt.beta_lrr,
            "sharpe": mkt.sharpe_ratios(),
        }
    )


def cross_sectional_regression(
    y: np.ndarray,
    x: np.ndarray,
    characteristic: str = "x",
    replications: int = BOOTSTRAP_REPLICATIONS,
    seed: int = 0,
) -> RegressionResult:
    """
    OLS slope with intercept and a pairs-bootstrap standard error.

    Args:
        y: Response, shape (n,)
        x: Regressor, shape (n,)
        characteristic: Name recorded in the result
        replications: Bootstrap replications
        seed: Base seed; the bootstrap uses a fixed sub-seed of it

    Returns:
        RegressionResult

    Raises:
        ValueError: if x has zero variance or shapes differ
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"x and y differ in length: {x.size} vs {y.size}")
    if x.size < 2 or np.ptp(x) == 0.0:
        raise ValueError(f"regressor '{characteristic}' has zero variance")

    model = LinearRegression().fit(x[:, None], y)
    slope = float(model.coef_[0])
    r_squared = float(model.score(x[:, None], y)) if np.ptp(y) > 0 else 1.0

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(BOOTSTRAP_SUBSEED,)))
    idx = rng.integers(0, x.size, size=(replications, x.size))
    xb, yb = x[idx], y[idx]
    xc = xb - xb.mean(axis=1, keepdims=True)
    yc = yb - yb.mean(axis=1, keepdims=True)
    sxx = (xc ** 2).sum(axis=1)
    valid = sxx > 0
    slopes = (xc * yc).sum(axis=1)[valid] / sxx[valid]
    if valid.sum() < replications:
        logger.warning(f"{replications - valid.sum()} bootstrap resamples had a constant regressor")
    se = float(slopes.std(ddof=1)) if slopes.size > 1 else float("nan")

    if se > 0:
        t_stat = slope / se
    else:
        t_stat = 0.0 if slope == 0 else float(np.sign(slope) * np.inf)
    return RegressionResult(
        characteristic=characteristic,
        slope=slope,
        intercept=float(model.intercept_),
        bootstrap_se=se,
        t_stat=float(t_stat),
        r_squared=r_squared,
        n=int(x.size),
        replications=int(replications),
    )


def hedging_observations(surface: HedgingSurface, mkt: MarketParams) -> pd.DataFrame:
    """|pi_hedge| per (asset, grid point) joined with the asset characteristics."""
    frame = surface.to_frame()[["asset", "W", "Y", "pi_hedge"]]
    frame = frame.assign(abs_hedge=frame["pi_hedge"].abs())
    return frame.merge(asset_characteristics(mkt), on="asset", how="left")


def hedging_regressions(
    surface: HedgingSurface,
    mkt: MarketParams,
    characteristics: Sequence[str] = CHARACTERISTICS,
    replications: int = BOOTSTRAP_REPLICATIONS,
    seed: int = 0,
) -> List[RegressionResult]:
    """Univariate regressions of |pi_hedge| on each characteristic."""
    obs = hedging_observations(surface, mkt)
    return [
        cross_sectional_regression(
            obs["abs_hedge"].to_numpy(), obs[name].to_numpy(), name, replications, seed
        )
        for name in characteristics
    ]


def regression_table(results: List[RegressionResult]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in results])


def rank_agreement(ranks: Sequence[int], reference: Optional[Sequence[int]] = None) -> float:
    """Spearman correlation between computed ranks and reference ranks (default 1..d)."""
    ranks = np.asarray(ranks)
    reference = np.arange(1, len(ranks) + 1) if reference is None else np.asarray(reference)
    if len(ranks) < 2:
        raise ValueError("rank agreement needs at least two assets")
    rho, _ = stats.spearmanr(ranks, reference)
    return float(rho)
