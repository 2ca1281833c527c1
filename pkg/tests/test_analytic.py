"""
Tests for the closed-form Merton benchmark and the myopic portfolio.
"""
import pytest
import numpy as np
from scipy.optimize import minimize

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.analytic.merton import (
    MertonParams,
    merton_consumption_fraction,
    merton_policy,
    merton_value,
    merton_value_derivatives,
    merton_weight,
)
from src.analytic.myopic import (
    MeanVarianceSolver,
    MyopicPolicy,
    myopic_policy,
    myopic_weights_unconstrained,
)
from src.market.dynamics import covariance, drift_mu
from src.market.params import State
from src.projection.constraints import ConstraintMode, PortfolioConstraint
from tests.merton_oracle import solve_reduced_hjb


@pytest.fixture(scope="module")
def reference():
    return solve_reduced_hjb(MertonParams())


def mean_variance_oracle(b, A, cons):
    """SLSQP maximization of b.pi - pi.A.pi/2 over the portfolio set."""
    d = len(b)
    if cons.mode == ConstraintMode.EQUALITY_SIMPLEX:
        constraints = [{"type": "eq", "fun": lambda x: x.sum() - cons.budget}]
    else:
        constraints = [{"type": "ineq", "fun": lambda x: cons.leverage_cap - x.sum()}]
    result = minimize(
        lambda x: -(b @ x - 0.5 * x @ A @ x),
        np.full(d, 1.0 / d),
        jac=lambda x: -(b - A @ x),
        bounds=[(0.0, None)] * d,
        constraints=constraints,
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    return result.x, -result.fun


class TestMertonWeight:
    """Tests for merton_weight."""

    def test_baseline(self):
        assert merton_weight(MertonParams()) == pytest.approx(4.0 / 3.0)

    def test_no_risk_premium(self):
        assert merton_weight(MertonParams(mu=0.02)) == 0.0

    def test_low_risk_aversion(self):
        assert merton_weight(MertonParams(R=0.5)) == pytest.approx(4.0)

    def test_rejects_zero_volatility(self):
        with pytest.raises(ValueError):
            MertonParams(sigma=0.0)


class TestConsumptionFraction:
    """Tests for merton_consumption_fraction."""

    def test_terminal_value_with_unit_bequest(self):
        p = MertonParams()
        assert merton_consumption_fraction(p.T, p) == pytest.approx(1.0)

    def test_matches_hjb_reference(self, reference):
        p = MertonParams()
        for t in (0.0, 0.75, 1.4):
            _, x = reference.controls(t)
            assert merton_consumption_fraction(t, p) == pytest.approx(x, rel=1e-6)

    def test_reference_risky_share(self, reference):
        pi, _ = reference.controls(0.0)
        assert pi == pytest.approx(merton_weight(MertonParams()), rel=1e-6)

    def test_deterministic_smoothing_limit(self):
        p = MertonParams(mu=0.02, R=1.0, kappa=0.0, delta=0.03, T=1.5)
        t = 0.5
        expected = 0.03 / (1 - np.exp(-0.03 * (p.T - t)))
        assert merton_consumption_fraction(t, p) == pytest.approx(expected)

    def test_vectorized(self):
        p = MertonParams()
        out = merton_consumption_fraction(np.array([0.0, 0.5, 1.0]), p)
        assert out.shape == (3,)
        assert np.all(np.diff(out) > 0)


class TestMertonValue:
    """Tests for merton_value and its derivatives."""

    def test_matches_hjb_reference(self, reference):
        p = MertonParams()
        assert merton_value(0.0, 1.0, p) == pytest.approx(reference.value(0.0, 1.0), rel=1e-7)
        assert merton_value(0.8, 1.7, p) == pytest.approx(reference.value(0.8, 1.7), rel=1e-7)

    def test_terminal_value_is_bequest(self):
        p = MertonParams()
        expected = np.exp(-p.delta * p.T) * 2.0 ** (-0.5) / (-0.5)
        assert merton_value(p.T, 2.0, p) == pytest.approx(expected)

    def test_derivatives_match_finite_differences(self):
        p = MertonParams()
        t, W, h = 0.6, 1.3, 1e-5
        _, V_t, V_W = merton_value_derivatives(t, W, p)
        assert float(V_W) == pytest.approx(
            (merton_value(t, W + h, p) - merton_value(t, W - h, p)) / (2 * h), rel=1e-6
        )
        assert float(V_t) == pytest.approx(
            (merton_value(t + h, W, p) - merton_value(t - h, W, p)) / (2 * h), rel=1e-5
        )

    def test_rejects_non_positive_wealth(self):
        with pytest.raises(ValueError):
            merton_value(0.0, 0.0, MertonParams())

    def test_policy_consumption_scales_with_wealth(self):
        p = MertonParams()
        pi, c = merton_policy(np.zeros(2), np.array([1.0, 2.0]), p)
        np.testing.assert_allclose(pi, 4.0 / 3.0)
        assert c[1] == pytest.approx(2.0 * c[0])


class TestMyopic:
    """Tests for the myopic benchmark."""

    def test_zero_risk_premium_gives_zero_unconstrained_weights(self, baseline_market):
        mkt = baseline_market.with_updates(mu_bar=np.full(5, 0.02), beta_lrr=np.zeros(5))
        np.testing.assert_allclose(myopic_weights_unconstrained(0.4, mkt, 1.5), 0.0, atol=1e-15)

    @pytest.mark.parametrize("mode", [ConstraintMode.EQUALITY_SIMPLEX, ConstraintMode.CAPPED_SIMPLEX])
    def test_matches_qp_oracle(self, baseline_market, mode):
        cons = PortfolioConstraint(mode=mode, leverage_cap=2.0)
        b = drift_mu(baseline_market.y_bar, baseline_market) - baseline_market.r
        A = 1.5 * covariance(baseline_market)
        pi = myopic_policy(State(0.0, 1.0, baseline_market.y_bar), baseline_market, 1.5, cons).pi
        oracle_pi, oracle_obj = mean_variance_oracle(b, A, cons)
        assert cons.contains(pi)
        assert b @ pi - 0.5 * pi @ A @ pi >= oracle_obj - 1e-10
        np.testing.assert_allclose(pi, oracle_pi, atol=1e-5)

    def test_interior_optimum_is_unconstrained_solution(self, single_market):
        cons = PortfolioConstraint(mode=ConstraintMode.CAPPED_SIMPLEX, leverage_cap=2.0)
        solver = MeanVarianceSolver(covariance(single_market), 1.5, cons)
        np.testing.assert_allclose(solver.solve(np.array([[0.08]])), [[4.0 / 3.0]])

    def test_batched_solve_matches_pointwise(self, baseline_market, ez, simplex):
        Y = np.array([0.2, 0.4, 0.6])
        policy = MyopicPolicy(baseline_market, ez, simplex)
        batched = policy.portfolio(0.0, np.ones(3), Y)
        for i, y in enumerate(Y):
            single = myopic_policy(State(0.0, 1.0, y), baseline_market, 1.5, simplex).pi
            np.testing.assert_allclose(batched[i], single)

    def test_single_asset_consumption_is_merton(self, single_market, ez, capped):
        policy = MyopicPolicy(single_market, ez, capped)
        params = MertonParams(mu=0.10, sigma=0.20, r=0.02, R=ez.R, delta=ez.delta, kappa=ez.kappa_bequest, T=1.5)
        W = np.array([0.5, 1.0])
        c = policy.consumption(0.3, W, np.full(2, 0.4))
        np.testing.assert_allclose(c, merton_consumption_fraction(0.3, params) * W)

    def test_singular_covariance_is_rejected(self, baseline_market, simplex):
        # Squared volatility underflows to zero
        mkt = baseline_market.with_updates(sigma=np.array([1e-200, 0.1875, 0.225, 0.2625, 0.30]))
        with pytest.raises(ValueError, match="singular"):
            myopic_policy(State(0.0, 1.0, 0.4), mkt, 1.5, simplex)
