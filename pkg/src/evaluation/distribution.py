"""
Terminal wealth statistics and mean wealth paths under common random numbers.
"""
import logging
from dataclasses import dataclass, asdict
from typing import Dict, Optional

import numpy as np
import pandas as pd
from scipy import stats

from src.market.params import MarketParams
from src.market.simulation import InitialStateSampler, Policy, draw_noise, simulate_from_noise
from src.projection.constraints import ControlProjector

logger = logging.getLogger(__name__)

# Paths with wealth below this multiple of W_min count as near the floor
NEAR_FLOOR_MULTIPLE = 1.25


@dataclass(frozen=True)
class WealthStats:
    """Moments and quantiles of terminal wealth."""
    mean: float
    sd: float
    skewness: float
    excess_kurtosis: float
    q05: float
    q50: float
    q95: float
    n_paths: int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def terminal_wealth_stats(W_T) -> WealthStats:
    """
    Sample moments and 5/50/95% quantiles of terminal wealth.

    Skewness and excess kurtosis are the bias-corrected sample estimators;
    both are 0 for a degenerate sample. A moment the sample is too small to
    define (sd below 2 values, skewness below 3, kurtosis below 4) is NaN,
    as is every field when no value is finite.

    Raises:
        ValueError: if the sample is empty
    """
    W_T = np.asarray(W_T, dtype=float).ravel()
    if W_T.size == 0:
        raise ValueError("terminal wealth sample is empty")
    W_T = W_T[np.isfinite(W_T)]
    n = int(W_T.size)
    if n == 0:
        logger.warning("No finite terminal wealth values")
        return WealthStats(*([float("nan")] * 7), n_paths=0)
    if n < 4:
        logger.warning(f"Only {n} terminal wealth values, higher moments are undefined")

    nan = float("nan")
    degenerate = np.ptp(W_T) == 0.0
    sd = nan if n < 2 else (0.0 if degenerate else float(W_T.std(ddof=1)))
    if n < 3:
        skewness = nan
    else:
        skewness = 0.0 if degenerate else float(stats.skew(W_T, bias=False))
    if n < 4:
        kurt = nan
    else:
        kurt = 0.0 if degenerate else float(stats.kurtosis(W_T, fisher=True, bias=False))
    q05, q50, q95 = np.quantile(W_T, [0.05, 0.5, 0.95])
    return WealthStats(
        mean=float(W_T.mean()),
        sd=sd,
        skewness=skewness,
        excess_kurtosis=kurt,
        q05=float(q05),
        q50=float(q50),
        q95=float(q95),
        n_paths=n,
    )


def compare_terminal_wealth(samples: Dict[str, np.ndarray]) -> pd.DataFrame:
    """One row of terminal wealth statistics per named policy."""
    rows = []
    for name, W_T in samples.items():
        row = {"policy": name}
        row.update(terminal_wealth_stats(W_T).to_dict())
        rows.append(row)
    return pd.DataFrame(rows)


def mean_wealth_paths(
    policies: Dict[str, Policy],
    projector: ControlProjector,
    mkt: MarketParams,
    N: int,
    M: int,
    seed: int,
    W0: float = 1.0,
    sampler: Optional[InitialStateSampler] = None,
    threads: int = 1,
) -> pd.DataFrame:
    """
    Mean wealth over time and the share of paths near the floor, per policy.

    Every policy is driven by the same initial states and Brownian increments.

    Returns:
        Long frame with columns policy, t, mean_W, near_floor_share
    """
    sampler = sampler or InitialStateSampler.fixed(W0)
    W0_draw, Y0_draw, dB = draw_noise(mkt, N, M, sampler, seed, stream=0, threads=threads)
    threshold = NEAR_FLOOR_MULTIPLE * mkt.W_min

    frames = []
    for name, policy in policies.items():
        batch = simulate_from_noise(policy, projector, mkt, W0_draw, Y0_draw, dB)
        frames.append(
            pd.DataFrame(
                {
                    "policy": name,
                    "t": batch.t,
                    "mean_W": batch.W.mean(axis=0),
                    "near_floor_share": (batch.W < threshold).mean(axis=0),
                }
            )
        )
        logger.debug(f"{name}: mean terminal wealth {batch.terminal_wealth.mean():.4f}")
    return pd.concat(frames, ignore_index=True)
