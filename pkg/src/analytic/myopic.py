"""
Myopic benchmark for the multi-asset long-run-risk market.

The portfolio maximizes the one-period mean-variance criterion
pi^T (mu(Y) - r) - (R/2) pi^T Sigma Sigma^T pi over the admissible set. Without
binding constraints this is (1/R)(Sigma Sigma^T)^-1 (mu(Y) - r); otherwise the
exact constrained maximizer is found by enumerating active sets, which is
cheap for the handful of assets involved.
"""
import itertools
import logging
from typing import List, Tuple

import numpy as np

from src.analytic.merton import consumption_fraction
from src.market.dynamics import covariance, drift_mu
from src.market.params import Control, MarketParams, State
from src.preferences.utility import EZParams
from src.projection.constraints import ConstraintMode, PortfolioConstraint

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-12


def _checked_covariance(p: MarketParams) -> np.ndarray:
    cov = covariance(p)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise ValueError("return covariance is singular; myopic benchmark undefined") from e
    return cov


def myopic_weights_unconstrained(Y, p: MarketParams, R: float) -> np.ndarray:
    """(1/R) (Sigma Sigma^T)^-1 (mu(Y) - r) for scalar or array Y."""
    cov = _checked_covariance(p)
    excess = drift_mu(Y, p) - p.r
    return np.linalg.solve(cov, np.atleast_2d(excess).T).T.reshape(excess.shape) / R


def effective_sharpe_sq(Y, p: MarketParams) -> np.ndarray:
    """(mu(Y) - r)^T (Sigma Sigma^T)^-1 (mu(Y) - r)."""
    cov = _checked_covariance(p)
    excess = np.atleast_2d(drift_mu(Y, p) - p.r)
    solved = np.linalg.solve(cov, excess.T).T
    out = np.einsum("md,md->m", excess, solved)
    return out if np.ndim(Y) > 0 else out[0]


class MeanVarianceSolver:
    """
    Exact maximizer of b^T pi - (1/2) pi^T A pi over the portfolio set.

    A = R Sigma Sigma^T is fixed, so the KKT matrix of every candidate face is
    inverted once; solving for a batch of excess-return vectors is then a
    matrix product per face. Each candidate is the stationary point on one
    face; the best feasible candidate is the constrained optimum.
    """

    def __init__(self, cov: np.ndarray, R: float, cons: PortfolioConstraint):
        self.A = R * np.asarray(cov, dtype=float)
        self.cons = cons
        self.d = self.A.shape[0]
        self._faces = self._build_faces()

    def _build_faces(self) -> List[Tuple[np.ndarray, bool, np.ndarray]]:
        faces = []
        indices = range(self.d)
        for size in range(0, self.d + 1):
            for support in itertools.combinations(indices, size):
                S = np.array(support, dtype=int)
                if size > 0:
                    A_SS = self.A[np.ix_(S, S)]
                    kkt = np.zeros((size + 1, size + 1))
                    kkt[:size, :size] = A_SS
                    kkt[:size, size] = 1.0
                    kkt[size, :size] = 1.0
                    faces.append((S, True, np.linalg.inv(kkt)))
                if self.cons.mode == ConstraintMode.CAPPED_SIMPLEX:
                    inverse = np.linalg.inv(self.A[np.ix_(S, S)]) if size > 0 else np.zeros((0, 0))
                    faces.append((S, False, inverse))
        return faces

    def solve(self, b: np.ndarray) -> np.ndarray:
        """
        Args:
            b: Excess returns, shape (M, d)

        Returns:
            Optimal weights, shape (M, d)
        """
        b = np.atleast_2d(np.asarray(b, dtype=float))
        M = b.shape[0]
        level = self.cons.level
        best = np.zeros((M, self.d))
        best_obj = np.full(M, -np.inf)

        for S, on_budget, inverse in self._faces:
            pi = np.zeros((M, self.d))
            size = S.shape[0]
            if size > 0:
                if on_budget:
                    rhs = np.concatenate([b[:, S], np.full((M, 1), level)], axis=1)
                    pi[:, S] = (rhs @ inverse.T)[:, :size]
                else:
                    pi[:, S] = b[:, S] @ inverse.T
            feasible = np.all(pi >= -FEASIBILITY_TOL, axis=1)
            if not on_budget:
                feasible &= pi.sum(axis=1) <= level + FEASIBILITY_TOL
            pi = np.maximum(pi, 0.0)
            obj = np.einsum("md,md->m", pi, b) - 0.5 * np.einsum("md,de,me->m", pi, self.A, pi)
            better = feasible & (obj > best_obj)
            best[better] = pi[better]
            best_obj[better] = obj[better]
        return best


def myopic_policy(s: State, p: MarketParams, R: float, cons: PortfolioConstraint) -> Control:
    """
    Myopic portfolio at a state; depends on Y only.

    Returns:
        Control whose consumption entry is left at 0 (see MyopicPolicy)
    """
    solver = MeanVarianceSolver(_checked_covariance(p), R, cons)
    pi = solver.solve((drift_mu(s.Y, p) - p.r)[None, :])[0]
    return Control(pi=pi, c=0.0)


class MyopicPolicy:
    """
    Myopic benchmark as a simulation policy.

    Consumption uses the Merton consumption fraction at the effective squared
    Sharpe ratio of the current factor level.
    """

    def __init__(
        self,
        p: MarketParams,
        ez: EZParams,
        cons: PortfolioConstraint,
    ):
        self.market = p
        self.ez = ez
        self.cons = cons
        self._solver = MeanVarianceSolver(_checked_covariance(p), ez.R, cons)

    def portfolio(self, t: float, W: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Feasible myopic weights, shape (M, d)."""
        Y = np.atleast_1d(np.asarray(Y, dtype=float))
        return self._solver.solve(drift_mu(Y, self.market) - self.market.r)

    def consumption(self, t: float, W: np.ndarray, Y: np.ndarray) -> np.ndarray:
        W = np.atleast_1d(np.asarray(W, dtype=float))
        sharpe_sq = effective_sharpe_sq(np.atleast_1d(Y), self.market)
        fraction = consumption_fraction(
            t, sharpe_sq, self.market.r, self.ez.R, self.ez.delta, self.ez.kappa_bequest, self.market.T
        )
        return fraction * W

    def __call__(self, t: float, W: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.portfolio(t, W, Y), self.consumption(t, W, Y)
