"""
Builders shared by the tests: tiny run configurations and hand-made batches.
"""
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))

from config.settings import RunConfig
from src.market.simulation import PathBatch

TINY_OVERRIDES = {
    "training.N": 4,
    "training.M": 8,
    "training.iterations": 2,
    "training.seeds": [0, 1],
    "training.log_every": 0,
    "training.checkpoint_every": 0,
    "training.network.hidden_layers": 1,
    "training.network.hidden_width": 8,
    "evaluation.value_iterations": 1,
    "evaluation.value_paths": 4,
    "evaluation.eval_paths": 16,
    "evaluation.distribution_paths": 16,
    "evaluation.wealth_path_paths": 8,
    "evaluation.mc_paths": 64,
    "evaluation.grid_w": 3,
    "evaluation.grid_y": 3,
    "evaluation.bootstrap_replications": 20,
}


def tiny(cfg: RunConfig, **extra) -> RunConfig:
    """Shrink a run configuration to a few seconds of work."""
    overrides = dict(TINY_OVERRIDES)
    overrides.update({key.replace("__", "."): value for key, value in extra.items()})
    return cfg.with_overrides(overrides)


def hand_batch(
    W: np.ndarray,
    Y: np.ndarray,
    c: np.ndarray,
    pi: np.ndarray,
    dt: float,
    raw_pi: np.ndarray = None,
    raw_c: np.ndarray = None,
) -> PathBatch:
    """PathBatch built from explicit arrays; flags default to inactive."""
    W = np.asarray(W, dtype=float)
    M, N = W.shape[0], W.shape[1] - 1
    pi = np.asarray(pi, dtype=float).reshape(M, N, -1)
    c = np.asarray(c, dtype=float).reshape(M, N)
    return PathBatch(
        t=np.arange(N + 1) * dt,
        W=W,
        Y=np.asarray(Y, dtype=float).reshape(M, N + 1),
        raw_pi=pi.copy() if raw_pi is None else np.asarray(raw_pi, dtype=float).reshape(pi.shape),
        raw_c=c.copy() if raw_c is None else np.asarray(raw_c, dtype=float).reshape(M, N),
        pi=pi,
        c=c,
        dB=np.zeros((M, N, pi.shape[-1] + 1)),
        portfolio_active=np.zeros((M, N), dtype=bool),
        consumption_active=np.zeros((M, N), dtype=bool),
        floor_hit=np.zeros((M, N), dtype=bool),
        infeasibility=np.zeros((M, N)),
    )


