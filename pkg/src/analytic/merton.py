"""
Closed-form Merton benchmark for a single risky asset under discounted CRRA.

The value function is V(t, W) = e^(-delta t) g(t)^R W^(1-R)/(1-R) where g
solves g' = nu g - 1 with g(T) = kappa^(1/R); optimal consumption is W/g(t)
and the risky share is constant.
"""
from dataclasses import dataclass, asdict
from typing import Any, Dict, Tuple

import numpy as np

# Below this |nu| the linear-in-time limit of g is used
NU_TOL = 1e-12


@dataclass(frozen=True)
class MertonParams:
    """Single-asset CRRA consumption-investment problem."""
    mu: float = 0.10
    sigma: float = 0.20
    r: float = 0.02
    R: float = 1.5
    delta: float = 0.03
    kappa: float = 1.0
    T: float = 1.5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.R <= 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @classmethod
    def from_sharpe(
        cls, sharpe_sq: float, r: float, R: float, delta: float, kappa: float, T: float
    ) -> "MertonParams":
        """Unit-volatility asset carrying a given squared Sharpe ratio."""
        return cls(mu=r + float(np.sqrt(sharpe_sq)), sigma=1.0, r=r, R=R, delta=delta, kappa=kappa, T=T)

    @property
    def sharpe_sq(self) -> float:
        return ((self.mu - self.r) / self.sigma) ** 2

    @property
    def nu(self) -> float:
        return consumption_rate_nu(self.sharpe_sq, self.r, self.R, self.delta)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def consumption_rate_nu(sharpe_sq, r: float, R: float, delta: float):
    """nu = [delta - (1-R)(r + sharpe^2/(2R))]/R; accepts array sharpe_sq."""
    return (delta - (1.0 - R) * (r + np.asarray(sharpe_sq) / (2.0 * R))) / R


def _g(t, nu, kappa: float, R: float, T: float):
    t = np.asarray(t, dtype=float)
    nu = np.asarray(nu, dtype=float)
    terminal = kappa ** (1.0 / R)
    tau = T - t
    small = np.abs(nu) < NU_TOL
    safe_nu = np.where(small, 1.0, nu)
    general = 1.0 / safe_nu + (terminal - 1.0 / safe_nu) * np.exp(-safe_nu * tau)
    return np.where(small, terminal + tau, general)


def merton_weight(p: MertonParams) -> float:
    """Optimal risky share (mu - r)/(R sigma^2); independent of t and W."""
    return (p.mu - p.r) / (p.R * p.sigma ** 2)


def consumption_fraction(t, sharpe_sq, r: float, R: float, delta: float, kappa: float, T: float):
    """Vectorized optimal consumption-wealth ratio 1/g(t) for given squared Sharpe ratios."""
    nu = consumption_rate_nu(sharpe_sq, r, R, delta)
    return 1.0 / _g(t, nu, kappa, R, T)


def merton_consumption_fraction(t, p: MertonParams):
    """
    Optimal consumption-wealth ratio at time t.

    Equals nu / (1 + (nu kappa^(1/R) - 1) e^(-nu (T - t))), and
    1 / (T - t + kappa^(1/R)) when nu = 0.
    """
    out = consumption_fraction(t, p.sharpe_sq, p.r, p.R, p.delta, p.kappa, p.T)
    return float(out) if np.ndim(out) == 0 else out


def merton_value(t, W, p: MertonParams):
    """
    Discounted Merton value e^(-delta t) g(t)^R W^(1-R)/(1-R).

    Raises:
        ValueError: for non-positive wealth or R = 1
    """
    W = np.asarray(W, dtype=float)
    if np.any(W <= 0):
        raise ValueError("wealth must be positive")
    if abs(p.R - 1.0) < 1e-12:
        raise ValueError("merton_value is implemented for R != 1")
    g = _g(t, p.nu, p.kappa, p.R, p.T)
    out = np.exp(-p.delta * np.asarray(t, dtype=float)) * g ** p.R * W ** (1.0 - p.R) / (1.0 - p.R)
    return float(out) if np.ndim(out) == 0 else out


def merton_value_derivatives(t, W, p: MertonParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Closed-form V, dV/dt and dV/dW.

    Returns:
        Tuple of (V, V_t, V_W)
    """
    t = np.asarray(t, dtype=float)
    W = np.asarray(W, dtype=float)
    g = _g(t, p.nu, p.kappa, p.R, p.T)
    V = np.asarray(merton_value(t, W, p))
    g_dot = p.nu * g - 1.0
    V_t = V * (-p.delta + p.R * g_dot / g)
    V_W = np.exp(-p.delta * t) * g ** p.R * W ** (-p.R)
    return V, V_t, V_W


def merton_policy(t, W, p: MertonParams) -> Tuple[np.ndarray, np.ndarray]:
    """Optimal (risky share, consumption) at arrays of (t, W)."""
    W = np.asarray(W, dtype=float)
    pi = np.full(W.shape, merton_weight(p))
    c = np.asarray(merton_consumption_fraction(t, p)) * W
    return pi, c
