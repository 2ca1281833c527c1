"""
CRRA utility and the Epstein-Zin aggregator with its CRRA-limit branch.

The arithmetic helpers prefixed with an underscore only use +, *, ** and so
accept numpy arrays and torch tensors alike; the public functions add the
domain checks and operate on numpy inputs.
"""
import logging
from dataclasses import dataclass, asdict
from typing import Any, Dict, Iterable, Optional

import numpy as np

logger = logging.getLogger(__name__)

# Exact-equality tolerance for the log branch of CRRA utility
LOG_BRANCH_TOL = 1e-12


class AggregatorDomainError(ValueError):
    """Raised when (c, v) lies outside the Epstein-Zin aggregator domain."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class EZParams:
    """
    Epstein-Zin preference constants.

    S = 1/psi is the inverse EIS and theta = (1 - R)/(1 - S). When |S - R| is
    below limit_tol the aggregator switches to its time-additive CRRA limit.
    """
    R: float = 1.5
    psi: float = 0.5
    delta: float = 0.03
    kappa_bequest: float = 1.0
    c_bar: float = 0.25
    limit_tol: float = 1e-6

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if abs(self.R - 1.0) < LOG_BRANCH_TOL:
            raise ValueError("R = 1 is outside the Epstein-Zin aggregator family")
        if self.psi <= 0:
            raise ValueError(f"psi must be positive, got {self.psi}")
        if abs(self.psi - 1.0) < LOG_BRANCH_TOL:
            raise ValueError("psi = 1 (unit EIS) is not supported")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.kappa_bequest < 0:
            raise ValueError(f"kappa_bequest must be non-negative, got {self.kappa_bequest}")
        if not 0 < self.c_bar < 1:
            raise ValueError(f"c_bar must lie in (0, 1), got {self.c_bar}")
        if self.limit_tol <= 0:
            raise ValueError(f"limit_tol must be positive, got {self.limit_tol}")

    @property
    def S(self) -> float:
        return 1.0 / self.psi

    @property
    def theta(self) -> float:
        return (1.0 - self.R) / (1.0 - self.S)

    @property
    def is_crra_limit(self) -> bool:
        """True when psi is close enough to 1/R to use the time-additive branch."""
        return abs(self.S - self.R) < self.limit_tol

    def crra_limit(self) -> "EZParams":
        """Same preferences with psi set to 1/R."""
        return EZParams(
            R=self.R,
            psi=1.0 / self.R,
            delta=self.delta,
            kappa_bequest=self.kappa_bequest,
            c_bar=self.c_bar,
            limit_tol=self.limit_tol,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _power_utility(c, R: float):
    return c ** (1.0 - R) / (1.0 - R)


def _ez_value(c, v, p: EZParams):
    if p.is_crra_limit:
        return p.delta * (_power_utility(c, p.R) - v)
    base = ((1.0 - p.R) * v) ** (1.0 / (1.0 - p.R))
    return p.delta * p.theta * v * ((c / base) ** (1.0 - p.S) - 1.0)


def _ez_marginal(c, v, p: EZParams):
    if p.is_crra_limit:
        return p.delta * c ** (-p.R)
    return (
        p.delta * p.theta * (1.0 - p.S) * v * c ** (-p.S)
        * ((1.0 - p.R) * v) ** ((p.S - 1.0) / (1.0 - p.R))
    )


def _check_domain(c: np.ndarray, v: np.ndarray, R: float) -> None:
    bad_c = ~(c > 0)
    if bad_c.any():
        idx = int(np.flatnonzero(bad_c.reshape(-1))[0])
        raise AggregatorDomainError(
            f"consumption must be positive, got {c.reshape(-1)[idx]} at index {idx}", idx
        )
    bad_v = ~((1.0 - R) * v > 0)
    if bad_v.any():
        idx = int(np.flatnonzero(bad_v.reshape(-1))[0])
        raise AggregatorDomainError(
            f"(1 - R) * v must be positive, got v = {v.reshape(-1)[idx]} at index {idx}", idx
        )


def _as_output(x: np.ndarray):
    return float(x) if x.ndim == 0 else x


def crra_utility(c, R: float):
    """
    CRRA utility c^(1-R)/(1-R), with the log branch at R = 1.

    c = 0 returns 0 when R < 1 and -inf (with a warning) when R >= 1.
    """
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("consumption must be non-negative")

    zero = c == 0
    with np.errstate(divide="ignore"):
        if abs(R - 1.0) < LOG_BRANCH_TOL:
            out = np.log(c)
        else:
            out = _power_utility(c, R)
    if zero.any():
        if R < 1:
            out = np.where(zero, 0.0, out)
        else:
            logger.warning(f"crra_utility evaluated at c = 0 with R = {R}; returning -inf")
            out = np.where(zero, -np.inf, out)
    return _as_output(out)


def ez_aggregator(c, v, p: EZParams):
    """
    Epstein-Zin aggregator f(c, v).

    Raises:
        AggregatorDomainError: if c <= 0 or (1 - R) v <= 0 anywhere
    """
    c = np.asarray(c, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_domain(c, v, p.R)
    return _as_output(np.asarray(_ez_value(c, v, p)))


def ez_aggregator_dc(c, v, p: EZParams):
    """Closed-form derivative of the aggregator with respect to consumption."""
    c = np.asarray(c, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_domain(c, v, p.R)
    return _as_output(np.asarray(_ez_marginal(c, v, p)))


def bequest_utility(W, p: EZParams):
    """Terminal value kappa * W^(1-R)/(1-R)."""
    W = np.asarray(W, dtype=float)
    if np.any(W <= 0):
        raise ValueError("terminal wealth must be positive")
    return _as_output(p.kappa_bequest * _power_utility(W, p.R))


def zero_point_consumption(v, R: float):
    """Consumption at which the aggregator vanishes: ((1-R) v)^(1/(1-R))."""
    v = np.asarray(v, dtype=float)
    return _as_output(((1.0 - R) * v) ** (1.0 / (1.0 - R)))


def crra_limit_sweep(
    c,
    v,
    R: float,
    psi_grid: Iterable[float],
    delta: float = 0.03,
) -> np.ndarray:
    """
    Maximum deviation |f_psi(c, v) - delta (u(c) - v)| along a psi grid.

    Args:
        c, v: Admissible test points (broadcastable arrays)
        R: Risk aversion
        psi_grid: EIS values approaching 1/R
        delta: Discount rate

    Returns:
        Array with one maximum deviation per grid value
    """
    c = np.asarray(c, dtype=float)
    v = np.asarray(v, dtype=float)
    target = delta * (_power_utility(c, R) - v)
    deviations = []
    for psi in psi_grid:
        params = EZParams(R=R, psi=psi, delta=delta)
        value = ez_aggregator(c, v, params)
        deviations.append(float(np.max(np.abs(np.asarray(value) - target))))
    return np.array(deviations)
