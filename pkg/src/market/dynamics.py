"""
Drift, volatility and the Euler-Maruyama step of the wealth/factor system.
"""
from typing import Optional, Tuple

import numpy as np

from src.market.params import Control, MarketParams, State


def drift_mu(Y, p: MarketParams) -> np.ndarray:
    """
    Instantaneous expected returns mu(Y) = mu_bar + beta_lrr * (Y - y_bar).

    Args:
        Y: Scalar factor level or array of shape (M,)
        p: Market parameters

    Returns:
        Array of shape (d,) for scalar Y, (M, d) otherwise
    """
    Y = np.asarray(Y, dtype=float)
    return p.mu_bar + np.multiply.outer(Y - p.y_bar, p.beta_lrr)


def vol_matrix(p: MarketParams) -> np.ndarray:
    """
    Volatility matrix Sigma of shape (d, d+1).

    Column 0 loads on the factor shock; row i is
    sigma_i * (rho_i, 0, ..., sqrt(1 - rho_i^2) at column i+1, ..., 0).
    """
    if np.any(np.abs(p.rho) >= 1):
        raise ValueError("|rho| must be strictly below 1 for every asset")
    d = p.d
    Sigma = np.zeros((d, d + 1))
    Sigma[:, 0] = p.sigma * p.rho
    Sigma[np.arange(d), np.arange(1, d + 1)] = p.sigma * np.sqrt(1.0 - p.rho ** 2)
    return Sigma


def covariance(p: MarketParams) -> np.ndarray:
    """Instantaneous return covariance Sigma Sigma^T."""
    Sigma = vol_matrix(p)
    return Sigma @ Sigma.T


def euler_step(
    W: np.ndarray,
    Y: np.ndarray,
    pi: np.ndarray,
    c: np.ndarray,
    dB: np.ndarray,
    dt: float,
    p: MarketParams,
    Sigma: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorized Euler-Maruyama step with wealth-floor clamp.

    Args:
        W, Y: Arrays of shape (M,)
        pi: Portfolio weights, shape (M, d)
        c: Consumption rates, shape (M,)
        dB: Brownian increments, shape (M, d+1); column 0 is the factor shock
        dt: Time step
        p: Market parameters
        Sigma: Precomputed volatility matrix (optional)

    Returns:
        Tuple of (next wealth, next factor, floor-hit flags)
    """
    if Sigma is None:
        Sigma = vol_matrix(p)
    excess = drift_mu(Y, p) - p.r
    portfolio_return = np.einsum("md,md->m", pi, excess * dt + dB @ Sigma.T)
    candidate = W * (1.0 + p.r * dt + portfolio_return) - c * dt

    floor = p.wealth_floor
    floor_hit = candidate < floor
    W_next = np.maximum(candidate, floor)
    if not p.floor_enabled:
        floor_hit = np.zeros_like(floor_hit)

    Y_next = Y + p.kappa_y * (p.y_bar - Y) * dt + p.xi * dB[:, 0]
    return W_next, Y_next, floor_hit


def step_euler(s: State, u: Control, dB: np.ndarray, dt: float, p: MarketParams) -> Tuple[State, bool]:
    """
    Advance a single state by one step.

    Returns:
        Tuple of (next state, floor-hit flag)
    """
    dB = np.asarray(dB, dtype=float).reshape(-1)
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if dB.shape[0] != p.n_shocks:
        raise ValueError(f"dB has {dB.shape[0]} components, expected {p.n_shocks}")
    if not (
        np.isfinite([s.t, s.W, s.Y, u.c]).all()
        and np.isfinite(u.pi).all()
        and np.isfinite(dB).all()
    ):
        raise ValueError("step_euler received non-finite input")

    W_next, Y_next, hit = euler_step(
        np.array([s.W]), np.array([s.Y]), u.pi[None, :], np.array([u.c]), dB[None, :], dt, p
    )
    return State(t=s.t + dt, W=float(W_next[0]), Y=float(Y_next[0])), bool(hit[0])
