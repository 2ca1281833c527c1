"""
Market parameters and the state/control atoms of the long-run-risk market.
"""
from dataclasses import dataclass, asdict
from typing import Any, Dict, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class MarketParams:
    """
    Constants of the long-run-risk market.

    Asset drifts are affine in the factor level, volatilities are constant,
    and Brownian component 0 is the factor shock shared with every asset.
    """
    r: float
    kappa_y: float
    y_bar: float
    xi: float
    T: float
    mu_bar: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    beta_lrr: np.ndarray
    W_min: float = 0.1
    W_max: float = 0.7
    floor_enabled: bool = True

    def __post_init__(self):
        for name in ("mu_bar", "sigma", "rho", "beta_lrr"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))

        d = self.mu_bar.shape[0]
        if d < 1:
            raise ValueError("market needs at least one risky asset")
        for name in ("sigma", "rho", "beta_lrr"):
            if getattr(self, name).shape[0] != d:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} entries, expected {d}")

        if self.kappa_y <= 0:
            raise ValueError(f"kappa_y must be positive, got {self.kappa_y}")
        if self.xi <= 0:
            raise ValueError(f"xi must be positive, got {self.xi}")
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive for every asset")
        if np.any(np.abs(self.rho) >= 1):
            raise ValueError("|rho| must be strictly below 1 for every asset")
        if not 0 < self.W_min < self.W_max:
            raise ValueError(f"need 0 < W_min < W_max, got {self.W_min}, {self.W_max}")

    @property
    def d(self) -> int:
        """Number of risky assets."""
        return int(self.mu_bar.shape[0])

    @property
    def n_shocks(self) -> int:
        """Brownian dimension: one factor shock plus one idiosyncratic shock per asset."""
        return self.d + 1

    @property
    def y_stationary_sd(self) -> float:
        """Standard deviation of the stationary factor distribution."""
        return self.xi / np.sqrt(2.0 * self.kappa_y)

    @property
    def wealth_floor(self) -> float:
        """Effective lower clamp applied in simulation."""
        return self.W_min if self.floor_enabled else NUMERICAL_WEALTH_FLOOR

    def sharpe_ratios(self) -> np.ndarray:
        """Unconditional Sharpe ratios at Y = y_bar."""
        return (self.mu_bar - self.r) / self.sigma

    def with_updates(self, **changes: Any) -> "MarketParams":
        """Copy with some fields replaced."""
        values = {**self.to_dict(), **changes}
        return MarketParams(**values)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for name in ("mu_bar", "sigma", "rho", "beta_lrr"):
            data[name] = getattr(self, name).tolist()
        return data

    @classmethod
    def baseline(cls) -> "MarketParams":
        """Five-asset long-run-risk market of the main experiment."""
        return cls(
            r=0.02,
            kappa_y=0.40,
            y_bar=0.40,
            xi=0.10,
            T=1.5,
            mu_bar=np.array([0.06, 0.08, 0.10, 0.12, 0.14]),
            sigma=np.array([0.15, 0.1875, 0.225, 0.2625, 0.30]),
            rho=np.array([0.60, 0.50, 0.40, 0.30, 0.20]),
            beta_lrr=np.array([0.90, 0.9375, 0.90, 0.7875, 0.60]),
            W_min=0.1,
            W_max=0.7,
        )

    @classmethod
    def single_asset(
        cls,
        mu: float = 0.10,
        sigma: float = 0.20,
        r: float = 0.02,
        T: float = 1.5,
        W_min: float = 0.01,
    ) -> "MarketParams":
        """One-asset market without factor exposure (the Merton setting)."""
        return cls(
            r=r,
            kappa_y=0.40,
            y_bar=0.40,
            xi=0.10,
            T=T,
            mu_bar=np.array([mu]),
            sigma=np.array([sigma]),
            rho=np.array([0.0]),
            beta_lrr=np.array([0.0]),
            W_min=W_min,
            W_max=max(0.7, 2.0 * W_min),
        )


# Positivity clamp used when the wealth floor is switched off
NUMERICAL_WEALTH_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class State:
    """A single (t, W, Y) state point."""
    t: float
    W: float
    Y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.t, self.W, self.Y])


@dataclass(frozen=True, eq=False)
class Control:
    """Portfolio weights (fractions of wealth) and consumption rate."""
    pi: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float).reshape(-1))

    @classmethod
    def from_sequence(cls, pi: Sequence[float], c: float) -> "Control":
        return cls(pi=np.asarray(pi, dtype=float), c=float(c))

    def to_dict(self) -> Dict[str, Any]:
        return {"pi": self.pi.tolist(), "c": self.c}
