"""
Tests for market parameters, dynamics and path simulation.
"""
import pytest
import numpy as np

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.market.dynamics import covariance, drift_mu, euler_step, step_euler, vol_matrix
from src.market.params import Control, MarketParams, State
from src.market.simulation import InitialStateSampler, draw_noise, simulate_batch
from src.preferences.utility import EZParams
from src.projection.constraints import ControlProjector, ConstraintMode, PortfolioConstraint


def constant_policy(pi, c_ratio):
    """Raw policy holding fixed weights and consuming a fixed share of wealth."""
    pi = np.asarray(pi, dtype=float)

    def policy(t, W, Y):
        return np.tile(pi, (len(W), 1)), c_ratio * np.asarray(W)

    return policy


@pytest.fixture
def capped_projector():
    return ControlProjector.from_params(
        PortfolioConstraint(mode=ConstraintMode.CAPPED_SIMPLEX), EZParams()
    )


class TestMarketParams:
    """Tests for MarketParams validation and derived quantities."""

    def test_baseline_shapes(self, baseline_market):
        assert baseline_market.d == 5
        assert baseline_market.n_shocks == 6
        assert baseline_market.y_stationary_sd == pytest.approx(0.10 / np.sqrt(0.8))

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError, match="sigma"):
            MarketParams(
                r=0.02, kappa_y=0.4, y_bar=0.4, xi=0.1, T=1.5,
                mu_bar=[0.1, 0.2], sigma=[0.2], rho=[0.0, 0.0], beta_lrr=[0.0, 0.0],
            )

    def test_rejects_perfect_correlation(self):
        with pytest.raises(ValueError, match="rho"):
            MarketParams.baseline().with_updates(rho=[1.0, 0.5, 0.4, 0.3, 0.2])

    def test_rejects_negative_sigma(self):
        with pytest.raises(ValueError, match="sigma"):
            MarketParams.baseline().with_updates(sigma=[-0.15, 0.1875, 0.225, 0.2625, 0.30])

    def test_rejects_zero_sigma(self):
        with pytest.raises(ValueError, match="sigma must be positive"):
            MarketParams.baseline().with_updates(sigma=[0.15, 0.0, 0.225, 0.2625, 0.30])

    def test_rejects_zero_factor_volatility(self):
        with pytest.raises(ValueError, match="xi must be positive"):
            MarketParams.baseline().with_updates(xi=0.0)

    def test_sharpe_ratios_are_finite(self, baseline_market):
        np.testing.assert_allclose(baseline_market.sharpe_ratios()[0], (0.06 - 0.02) / 0.15)
        assert np.isfinite(baseline_market.sharpe_ratios()).all()

    def test_wealth_floor_switch(self, baseline_market):
        assert baseline_market.wealth_floor == 0.1
        assert baseline_market.with_updates(floor_enabled=False).wealth_floor == pytest.approx(1e-8)


class TestDrift:
    """Tests for drift_mu."""

    def test_mean_factor_gives_mu_bar(self, baseline_market):
        np.testing.assert_allclose(drift_mu(0.40, baseline_market), [0.06, 0.08, 0.10, 0.12, 0.14])

    def test_factor_shift(self, baseline_market):
        assert drift_mu(0.50, baseline_market)[0] == pytest.approx(0.15)

    def test_zero_beta_is_factor_independent(self, single_market):
        np.testing.assert_allclose(drift_mu(0.9, single_market), drift_mu(0.1, single_market))

    def test_batched_shape(self, baseline_market):
        assert drift_mu(np.array([0.3, 0.4, 0.5]), baseline_market).shape == (3, 5)


class TestVolMatrix:
    """Tests for vol_matrix and covariance."""

    def test_first_row(self, baseline_market):
        Sigma = vol_matrix(baseline_market)
        np.testing.assert_allclose(Sigma[0], [0.09, 0.12, 0, 0, 0, 0], atol=1e-15)

    def test_row_norms_equal_sigma(self, baseline_market):
        Sigma = vol_matrix(baseline_market)
        np.testing.assert_allclose(np.linalg.norm(Sigma, axis=1), baseline_market.sigma)

    def test_zero_correlation_has_empty_factor_column(self, baseline_market):
        Sigma = vol_matrix(baseline_market.with_updates(rho=np.zeros(5)))
        np.testing.assert_array_equal(Sigma[:, 0], 0.0)
        np.testing.assert_allclose(Sigma[:, 1:], np.diag(baseline_market.sigma))

    def test_covariance_is_symmetric_positive_definite(self, baseline_market):
        cov = covariance(baseline_market)
        np.testing.assert_allclose(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) > 0)


class TestStepEuler:
    """Tests for the single-state Euler step."""

    def test_risk_free_growth(self, baseline_market):
        s = State(t=0.0, W=1.0, Y=0.40)
        u = Control(pi=np.zeros(5), c=0.0)
        nxt, hit = step_euler(s, u, np.zeros(6), 0.01, baseline_market)
        assert nxt.W == pytest.approx(1.0002)
        assert nxt.Y == pytest.approx(0.40)
        assert nxt.t == pytest.approx(0.01)
        assert not hit

    def test_floor_clamp(self, baseline_market):
        # Candidate wealth 1.0002 - 91.02 * 0.01 = 0.09 < W_min
        s = State(t=0.0, W=1.0, Y=0.40)
        u = Control(pi=np.zeros(5), c=91.02)
        nxt, hit = step_euler(s, u, np.zeros(6), 0.01, baseline_market)
        assert nxt.W == 0.1
        assert hit

    def test_factor_mean_reversion(self, baseline_market):
        s = State(t=0.0, W=1.0, Y=0.50)
        nxt, _ = step_euler(s, Control(pi=np.zeros(5), c=0.0), np.zeros(6), 0.01, baseline_market)
        assert nxt.Y == pytest.approx(0.4996)

    def test_no_floor_clamps_at_positivity_without_flag(self, baseline_market):
        mkt = baseline_market.with_updates(floor_enabled=False)
        W_next, _, hit = euler_step(
            np.array([1.0]), np.array([0.4]), np.zeros((1, 5)), np.array([200.0]),
            np.zeros((1, 6)), 0.01, mkt,
        )
        assert W_next[0] == pytest.approx(1e-8)
        assert not hit[0]

    def test_rejects_wrong_noise_dimension(self, baseline_market):
        with pytest.raises(ValueError, match="components"):
            step_euler(State(0.0, 1.0, 0.4), Control(np.zeros(5), 0.0), np.zeros(5), 0.01, baseline_market)

    def test_rejects_non_finite_input(self, baseline_market):
        with pytest.raises(ValueError, match="non-finite"):
            step_euler(State(0.0, np.nan, 0.4), Control(np.zeros(5), 0.0), np.zeros(6), 0.01, baseline_market)

    def test_rejects_non_positive_dt(self, baseline_market):
        with pytest.raises(ValueError, match="dt"):
            step_euler(State(0.0, 1.0, 0.4), Control(np.zeros(5), 0.0), np.zeros(6), 0.0, baseline_market)


class TestInitialStateSampler:
    """Tests for the initial-state distribution."""

    def test_fixed_sampler_is_degenerate(self, baseline_market):
        rng = np.random.default_rng(0)
        assert InitialStateSampler.fixed(1.0).sample(rng, baseline_market) == (1.0, 0.40)

    def test_truncated_factor_draws(self, baseline_market):
        sampler = InitialStateSampler(w_low=0.9, w_high=1.1, truncation=2.0)
        W0, Y0, _ = draw_noise(baseline_market, 2, 500, sampler, seed=3)
        sd = baseline_market.y_stationary_sd
        assert np.all((W0 >= 0.9) & (W0 <= 1.1))
        assert np.all(np.abs(Y0 - baseline_market.y_bar) <= 2.0 * sd + 1e-12)

    def test_rejects_inverted_range(self):
        with pytest.raises(ValueError):
            InitialStateSampler(w_low=1.1, w_high=0.9)


class TestSimulateBatch:
    """Tests for simulate_batch."""

    def test_deterministic_growth_under_risk_free_policy(self, single_market, capped_projector):
        N, x = 16, 0.01
        batch = simulate_batch(
            constant_policy([0.0], x), capped_projector, single_market, N, 3,
            InitialStateSampler(w_low=0.5, w_high=1.5), seed=1,
        )
        dt = single_market.T / N
        expected = batch.W[:, :1] * (1.0 + (single_market.r - x) * dt) ** np.arange(N + 1)
        np.testing.assert_allclose(batch.W, np.maximum(single_market.W_min, expected), rtol=1e-12)
        assert not batch.floor_hit.any()

    def test_same_seed_gives_identical_batches(self, baseline_market, ez, simplex):
        projector = ControlProjector.from_params(simplex, ez)
        policy = constant_policy(np.full(5, 0.2), 0.05)
        sampler = InitialStateSampler()
        a = simulate_batch(policy, projector, baseline_market, 8, 2, sampler, seed=7)
        b = simulate_batch(policy, projector, baseline_market, 8, 2, sampler, seed=7)
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.Y, b.Y)
        np.testing.assert_array_equal(a.dB, b.dB)

    def test_thread_count_does_not_change_paths(self, baseline_market, ez, simplex):
        projector = ControlProjector.from_params(simplex, ez)
        policy = constant_policy(np.full(5, 0.2), 0.05)
        sampler = InitialStateSampler()
        a = simulate_batch(policy, projector, baseline_market, 8, 16, sampler, seed=2, threads=1)
        b = simulate_batch(policy, projector, baseline_market, 8, 16, sampler, seed=2, threads=4)
        np.testing.assert_array_equal(a.W, b.W)

    def test_different_streams_differ(self, baseline_market, ez, simplex):
        projector = ControlProjector.from_params(simplex, ez)
        policy = constant_policy(np.full(5, 0.2), 0.05)
        sampler = InitialStateSampler()
        a = simulate_batch(policy, projector, baseline_market, 8, 4, sampler, seed=2, stream=0)
        b = simulate_batch(policy, projector, baseline_market, 8, 4, sampler, seed=2, stream=1)
        assert not np.array_equal(a.dB, b.dB)

    def test_factor_matches_ou_moments(self, single_market, capped_projector):
        Y0, M, N = 0.5, 10_000, 128
        batch = simulate_batch(
            constant_policy([0.0], 0.01), capped_projector, single_market, N, M,
            InitialStateSampler.fixed(1.0, Y0), seed=11,
        )
        mkt = single_market
        mean = mkt.y_bar + (Y0 - mkt.y_bar) * np.exp(-mkt.kappa_y * mkt.T)
        var = mkt.xi ** 2 * (1 - np.exp(-2 * mkt.kappa_y * mkt.T)) / (2 * mkt.kappa_y)
        Y_T = batch.Y[:, -1]
        assert abs(Y_T.mean() - mean) < 3 * np.sqrt(var / M)
        assert abs(Y_T.var(ddof=1) - var) < 3 * var * np.sqrt(2.0 / (M - 1))
        assert abs(Y_T.mean() - mean) / mean < 0.01

    def test_non_finite_controls_are_replaced(self, single_market, capped_projector):
        def broken(t, W, Y):
            return np.full((len(W), 1), np.nan), 0.01 * W

        batch = simulate_batch(
            broken, capped_projector, single_market, 4, 2, InitialStateSampler.fixed(1.0), seed=0
        )
        assert batch.nonfinite_controls == 8
        np.testing.assert_array_equal(batch.pi, 0.0)

    def test_frame_layout(self, baseline_market, ez, simplex):
        projector = ControlProjector.from_params(simplex, ez)
        batch = simulate_batch(
            constant_policy(np.full(5, 0.2), 0.05), projector, baseline_market, 4, 3,
            InitialStateSampler(), seed=0,
        )
        frame = batch.to_frame()
        assert len(frame) == 3 * 5
        assert {"path", "step", "t", "W", "Y", "pi_1", "pi_5", "c", "raw_c", "floor_hit"} <= set(frame.columns)
        assert frame.loc[frame["step"] == 4, "c"].isna().all()

    def test_rejects_empty_batch(self, baseline_market, ez, simplex):
        projector = ControlProjector.from_params(simplex, ez)
        with pytest.raises(ValueError):
            simulate_batch(constant_policy(np.full(5, 0.2), 0.05), projector, baseline_market, 0, 3,
                           InitialStateSampler(), seed=0)
