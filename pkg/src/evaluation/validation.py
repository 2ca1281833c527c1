"""
Validation of a trained single-asset run against the closed-form Merton solution.
"""
import logging
from dataclasses import dataclass, asdict, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from src.analytic.merton import MertonParams, merton_policy
from src.evaluation.hjb_residual import (
    HJBGrid,
    HJBResidual,
    NetworkValueSurface,
    hjb_residual_crra,
)
from src.evaluation.welfare import crra_certainty_equivalent, discounted_crra_pathwise, mean_and_se
from src.market.params import MarketParams
from src.market.simulation import InitialStateSampler, Policy, draw_noise, simulate_from_noise
from src.models.networks import DTYPE, NetworkTriple
from src.preferences.utility import EZParams
from src.projection.constraints import ControlProjector, PortfolioConstraint

logger = logging.getLogger(__name__)

VALIDATION_STREAM = 3_000_000
CHUNK_PATHS = 10_000


@dataclass(frozen=True)
class ValidationThresholds:
    err_pi: float = 0.05
    err_c: float = 0.05
    ce_gap: float = 0.005
    residual_ratio: float = 10.0


@dataclass
class MertonValidationReport:
    """Policy errors on the grid, certainty equivalents and the HJB residual summary."""
    err_pi: float
    err_c: float
    ce_merton: float
    ce_learned: float
    ce_gap: float
    residual: Dict[str, float]
    thresholds: ValidationThresholds = field(default_factory=ValidationThresholds)

    @property
    def checks(self) -> Dict[str, bool]:
        th = self.thresholds
        return {
            "err_pi": self.err_pi <= th.err_pi,
            "err_c": self.err_c <= th.err_c,
            "ce_gap": self.ce_gap <= th.ce_gap,
            "hjb_residual": abs(self.residual["mean"]) <= th.residual_ratio * self.residual["sd"],
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["checks"] = self.checks
        data["passed"] = self.passed
        return data


def merton_params_for(mkt: MarketParams, ez: EZParams) -> MertonParams:
    """
    Closed-form benchmark matching a single-asset market.

    Raises:
        ValueError: if the market is not a single asset free of factor exposure
    """
    if mkt.d != 1:
        raise ValueError(f"Merton validation needs a single asset, got d = {mkt.d}")
    if mkt.beta_lrr[0] != 0.0:
        raise ValueError("Merton validation needs beta_lrr = 0")
    return MertonParams(
        mu=float(mkt.mu_bar[0]),
        sigma=float(mkt.sigma[0]),
        r=mkt.r,
        R=ez.R,
        delta=ez.delta,
        kappa=ez.kappa_bequest,
        T=mkt.T,
    )


def merton_raw_policy(params: MertonParams) -> Policy:
    """Merton controls in the simulator's raw-control format."""

    def policy(t: float, W: np.ndarray, Y: np.ndarray):
        pi, c = merton_policy(np.full_like(W, t), W, params)
        return pi[:, None], c

    return policy


def learned_share_consumption(triple: NetworkTriple, projector: ControlProjector, y: float):
    """Projected learned (risky share, consumption) at a fixed factor level."""

    def policy(t: float, W: np.ndarray):
        W_t = torch.as_tensor(np.asarray(W, dtype=float), dtype=DTYPE)
        with torch.no_grad():
            raw_pi, raw_c = triple.policy.raw_controls(
                torch.full_like(W_t, t), W_t, torch.full_like(W_t, y)
            )
            pi, c = projector.project_torch(raw_pi, raw_c, W_t)
        return pi[:, 0].numpy(), c.numpy()

    return policy


def policy_grid_frame(
    triple: NetworkTriple, projector: ControlProjector, params: MertonParams, y: float, grid: HJBGrid
) -> pd.DataFrame:
    """Learned and closed-form controls on the validation grid."""
    learned = learned_share_consumption(triple, projector, y)
    frames = []
    for t in grid.t:
        pi_hat, c_hat = learned(float(t), grid.W)
        pi_m, c_m = merton_policy(np.full_like(grid.W, t), grid.W, params)
        frames.append(
            pd.DataFrame(
                {
                    "t": t,
                    "W": grid.W,
                    "pi_learned": pi_hat,
                    "pi_merton": pi_m,
                    "c_ratio_learned": c_hat / grid.W,
                    "c_ratio_merton": c_m / grid.W,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def policy_errors(frame: pd.DataFrame) -> Dict[str, float]:
    """RMS errors of the risky share and of the consumption-wealth ratio."""
    return {
        "err_pi": float(np.sqrt(np.mean((frame["pi_learned"] - frame["pi_merton"]) ** 2))),
        "err_c": float(np.sqrt(np.mean((frame["c_ratio_learned"] - frame["c_ratio_merton"]) ** 2))),
    }


def certainty_equivalent_pair(
    learned: Policy,
    params: MertonParams,
    mkt: MarketParams,
    projector: ControlProjector,
    paths: int = 100_000,
    N: int = 128,
    seed: int = 0,
    W0: float = 1.0,
    threads: int = 1,
) -> Dict[str, float]:
    """CRRA certainty equivalents of learned and Merton policies on common noise."""
    policies = {"merton": merton_raw_policy(params), "learned": learned}
    per_path: Dict[str, list] = {name: [] for name in policies}
    sampler = InitialStateSampler.fixed(W0)
    for chunk, start in enumerate(range(0, paths, CHUNK_PATHS)):
        size = min(CHUNK_PATHS, paths - start)
        W0_draw, Y0_draw, dB = draw_noise(
            mkt, N, size, sampler, seed, stream=VALIDATION_STREAM + chunk, threads=threads
        )
        for name, policy in policies.items():
            batch = simulate_from_noise(policy, projector, mkt, W0_draw, Y0_draw, dB)
            per_path[name].append(discounted_crra_pathwise(batch, params.R, params.delta, params.kappa))

    out = {}
    for name in policies:
        J, se = mean_and_se(np.concatenate(per_path[name]))
        out[f"value_{name}"] = J
        out[f"value_se_{name}"] = se
        out[f"ce_{name}"] = crra_certainty_equivalent(J, params.R, params.delta, params.kappa, params.T)
    out["ce_gap"] = abs(out["ce_learned"] - out["ce_merton"]) / out["ce_merton"]
    return out


def merton_validation(
    triple: NetworkTriple,
    mkt: MarketParams,
    ez: EZParams,
    cons: PortfolioConstraint,
    grid: Optional[HJBGrid] = None,
    mc_paths: int = 100_000,
    N: int = 128,
    seed: int = 0,
    thresholds: Optional[ValidationThresholds] = None,
    threads: int = 1,
) -> Tuple[MertonValidationReport, pd.DataFrame, HJBResidual]:
    """
    Compare a trained single-asset run with the Merton solution.

    Returns:
        Tuple of (MertonValidationReport, policy grid frame, HJBResidual)
    """
    params = merton_params_for(mkt, ez)
    grid = grid or HJBGrid.validation(mkt.T)
    projector = ControlProjector.from_params(cons, ez)

    frame = policy_grid_frame(triple, projector, params, mkt.y_bar, grid)
    errors = policy_errors(frame)
    ce = certainty_equivalent_pair(
        triple.policy.as_policy(), params, mkt, projector, mc_paths, N, seed, threads=threads
    )
    residual = hjb_residual_crra(
        NetworkValueSurface(triple.value, mkt.y_bar),
        learned_share_consumption(triple, projector, mkt.y_bar),
        params,
        grid,
        w_scale=triple.value.normalizer.w_scale,
    )
    report = MertonValidationReport(
        err_pi=errors["err_pi"],
        err_c=errors["err_c"],
        ce_merton=ce["ce_merton"],
        ce_learned=ce["ce_learned"],
        ce_gap=ce["ce_gap"],
        residual=residual.summary(),
        thresholds=thresholds or ValidationThresholds(),
    )
    logger.info(
        f"Merton validation: Err_pi={report.err_pi:.4f} Err_c={report.err_c:.4f} "
        f"CE {report.ce_learned:.4f} vs {report.ce_merton:.4f} (gap {100 * report.ce_gap:.2f}%)"
    )
    return report, frame, residual
