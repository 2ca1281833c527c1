"""
Monte Carlo simulation of policy-driven wealth/factor paths.

Every path owns a counter-based random stream derived from
(seed, stream, path index), so a batch is reproducible whatever the number
of worker threads used to draw it.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from src.market.dynamics import euler_step, vol_matrix
from src.market.params import MarketParams
from src.projection.constraints import ControlProjector

logger = logging.getLogger(__name__)

# (t, W, Y) -> (raw portfolio (M, d), raw consumption (M,))
Policy = Callable[[float, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def path_rng(seed: int, stream: int, path: int) -> np.random.Generator:
    """Independent generator for one path of one batch."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream, path)))


@dataclass(frozen=True)
class InitialStateSampler:
    """
    Initial-state distribution around (W_0, y_bar).

    W_0 is uniform on [w_low, w_high]; Y_0 is normal around y_bar with
    y_sd_multiplier times the stationary factor sd, truncated at
    +/- truncation sd.
    """
    w_low: float = 0.9
    w_high: float = 1.1
    y_sd_multiplier: float = 1.0
    truncation: float = 3.0
    y_center: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.w_low <= self.w_high:
            raise ValueError(f"need 0 < w_low <= w_high, got {self.w_low}, {self.w_high}")
        if self.y_sd_multiplier < 0:
            raise ValueError("y_sd_multiplier must be non-negative")

    @classmethod
    def fixed(cls, W0: float, Y0: Optional[float] = None) -> "InitialStateSampler":
        """Degenerate sampler starting every path at (W0, Y0)."""
        return cls(w_low=W0, w_high=W0, y_sd_multiplier=0.0, y_center=Y0)

    def sample(self, rng: np.random.Generator, p: MarketParams) -> Tuple[float, float]:
        W0 = self.w_low if self.w_high == self.w_low else rng.uniform(self.w_low, self.w_high)
        center = p.y_bar if self.y_center is None else self.y_center
        sd = self.y_sd_multiplier * p.y_stationary_sd
        if sd == 0:
            return float(W0), float(center)
        z = stats.truncnorm.rvs(-self.truncation, self.truncation, random_state=rng)
        return float(W0), float(center + sd * z)


@dataclass
class PathBatch:
    """
    Simulated trajectories of one batch.

    States have N + 1 time points, controls and flags one entry per step.
    """
    t: np.ndarray              # (N+1,)
    W: np.ndarray              # (M, N+1)
    Y: np.ndarray              # (M, N+1)
    raw_pi: np.ndarray         # (M, N, d)
    raw_c: np.ndarray          # (M, N)
    pi: np.ndarray             # (M, N, d)
    c: np.ndarray              # (M, N)
    dB: np.ndarray             # (M, N, d+1)
    portfolio_active: np.ndarray
    consumption_active: np.ndarray
    floor_hit: np.ndarray
    infeasibility: np.ndarray  # (M, N) distance of applied controls from the admissible set
    nonfinite_controls: int = 0

    @property
    def M(self) -> int:
        return int(self.W.shape[0])

    @property
    def N(self) -> int:
        return int(self.t.shape[0] - 1)

    @property
    def d(self) -> int:
        return int(self.pi.shape[-1])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def terminal_wealth(self) -> np.ndarray:
        return self.W[:, -1]

    def to_frame(self) -> pd.DataFrame:
        """One row per (path, time point); controls are empty at the last time point."""
        M, N, d = self.M, self.N, self.d
        path = np.repeat(np.arange(M), N + 1)
        step = np.tile(np.arange(N + 1), M)

        def _pad(x: np.ndarray, fill=np.nan) -> np.ndarray:
            tail = np.full((M, 1) + x.shape[2:], fill, dtype=float)
            return np.concatenate([x.astype(float), tail], axis=1)

        data = {
            "path": path,
            "step": step,
            "t": np.tile(self.t, M),
            "W": self.W.reshape(-1),
            "Y": self.Y.reshape(-1),
        }
        pi = _pad(self.pi).reshape(-1, d)
        for i in range(d):
            data[f"pi_{i + 1}"] = pi[:, i]
        data["c"] = _pad(self.c).reshape(-1)
        raw_pi = _pad(self.raw_pi).reshape(-1, d)
        for i in range(d):
            data[f"raw_pi_{i + 1}"] = raw_pi[:, i]
        data["raw_c"] = _pad(self.raw_c).reshape(-1)
        for name in ("portfolio_active", "consumption_active", "floor_hit"):
            data[name] = _pad(getattr(self, name), fill=0).reshape(-1).astype(int)
        return pd.DataFrame(data)


def _draw_path(
    seed: int, stream: int, path: int, N: int, dt: float, p: MarketParams, sampler: InitialStateSampler
) -> Tuple[float, float, np.ndarray]:
    rng = path_rng(seed, stream, path)
    W0, Y0 = sampler.sample(rng, p)
    dB = rng.standard_normal((N, p.n_shocks)) * np.sqrt(dt)
    return W0, Y0, dB


def draw_noise(
    p: MarketParams,
    N: int,
    M: int,
    sampler: InitialStateSampler,
    seed: int,
    stream: int = 0,
    threads: int = 1,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Initial states and Brownian increments for M paths.

    Returns:
        Tuple of (W0 (M,), Y0 (M,), dB (M, N, d+1))
    """
    dt = p.T / N

    def _draw(path: int):
        return _draw_path(seed, stream, path, N, dt, p, sampler)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            draws: List = list(pool.map(_draw, range(M)))
    else:
        draws = [_draw(path) for path in range(M)]

    W0 = np.array([d[0] for d in draws])
    Y0 = np.array([d[1] for d in draws])
    dB = np.stack([d[2] for d in draws]) if draws else np.zeros((0, N, p.n_shocks))
    return W0, Y0, dB


def simulate_from_noise(
    policy: Policy,
    projector: ControlProjector,
    p: MarketParams,
    W0: np.ndarray,
    Y0: np.ndarray,
    dB: np.ndarray,
) -> PathBatch:
    """Roll the policy forward on pre-drawn noise (common random numbers)."""
    M, N = dB.shape[0], dB.shape[1]
    dt = p.T / N
    d = p.d
    Sigma = vol_matrix(p)
    t = np.linspace(0.0, p.T, N + 1)

    W = np.empty((M, N + 1))
    Y = np.empty((M, N + 1))
    W[:, 0], Y[:, 0] = W0, Y0
    raw_pi = np.empty((M, N, d))
    raw_c = np.empty((M, N))
    pi = np.empty((M, N, d))
    c = np.empty((M, N))
    portfolio_active = np.zeros((M, N), dtype=bool)
    consumption_active = np.zeros((M, N), dtype=bool)
    floor_hit = np.zeros((M, N), dtype=bool)
    infeasibility = np.zeros((M, N))
    nonfinite = 0

    for k in range(N):
        rp, rc = policy(t[k], W[:, k], Y[:, k])
        rp = np.array(rp, dtype=float).reshape(M, d)
        rc = np.array(rc, dtype=float).reshape(M)
        bad = ~np.isfinite(rp)
        bad_c = ~np.isfinite(rc)
        if bad.any() or bad_c.any():
            nonfinite += int(bad.sum() + bad_c.sum())
            rp[bad] = 0.0
            rc[bad_c] = 0.0

        projected = projector.project(rp, rc, W[:, k])
        raw_pi[:, k], raw_c[:, k] = rp, rc
        pi[:, k], c[:, k] = projected.pi, projected.c
        portfolio_active[:, k] = projected.portfolio_active
        consumption_active[:, k] = projected.consumption_active
        if not projector.enabled:
            infeasibility[:, k] = projector.infeasibility(projected.pi, projected.c, W[:, k])

        W[:, k + 1], Y[:, k + 1], floor_hit[:, k] = euler_step(
            W[:, k], Y[:, k], projected.pi, projected.c, dB[:, k], dt, p, Sigma
        )

    if nonfinite:
        logger.warning(f"Replaced {nonfinite} non-finite raw control entries with 0")

    return PathBatch(
        t=t,
        W=W,
        Y=Y,
        raw_pi=raw_pi,
        raw_c=raw_c,
        pi=pi,
        c=c,
        dB=dB,
        portfolio_active=portfolio_active,
        consumption_active=consumption_active,
        floor_hit=floor_hit,
        infeasibility=infeasibility,
        nonfinite_controls=nonfinite,
    )


def simulate_batch(
    policy: Policy,
    projector: ControlProjector,
    p: MarketParams,
    N: int,
    M: int,
    init_sampler: InitialStateSampler,
    seed: int,
    stream: int = 0,
    threads: int = 1,
) -> PathBatch:
    """
    Simulate M paths of N Euler steps under a projected policy.

    Args:
        policy: Maps (t, W, Y) to raw controls
        projector: Projection applied before every step
        p: Market parameters
        N: Number of time steps
        M: Number of paths
        init_sampler: Initial-state distribution
        seed: Base seed
        stream: Batch counter mixed into every path stream
        threads: Worker threads for noise generation

    Returns:
        PathBatch with states, controls, noise and flags
    """
    if N < 1 or M < 1:
        raise ValueError(f"need N >= 1 and M >= 1, got N={N}, M={M}")
    W0, Y0, dB = draw_noise(p, N, M, init_sampler, seed, stream, threads)
    return simulate_from_noise(policy, projector, p, W0, Y0, dB)
