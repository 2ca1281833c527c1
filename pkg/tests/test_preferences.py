"""
Tests for CRRA utility, the Epstein-Zin aggregator and the torch aggregators.
"""
import pytest
import numpy as np
import torch

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.preferences.aggregators import (
    AggregatorKind,
    DiscountedCRRAAggregator,
    EpsteinZinAggregator,
    make_aggregator,
)
from src.preferences.utility import (
    AggregatorDomainError,
    EZParams,
    bequest_utility,
    crra_limit_sweep,
    crra_utility,
    ez_aggregator,
    ez_aggregator_dc,
    zero_point_consumption,
)


@pytest.fixture
def limit_params():
    return EZParams(R=1.5, psi=2.0 / 3.0, delta=0.03)


class TestEZParams:
    """Tests for EZParams validation and derived constants."""

    def test_derived_constants(self, ez):
        assert ez.S == pytest.approx(2.0)
        assert ez.theta == pytest.approx(0.5)
        assert not ez.is_crra_limit

    def test_crra_limit_detection(self, limit_params):
        assert limit_params.is_crra_limit
        assert EZParams().crra_limit().is_crra_limit

    @pytest.mark.parametrize("kwargs", [{"R": 1.0}, {"psi": 1.0}, {"delta": 0.0}, {"c_bar": 1.0}, {"R": -1.0}])
    def test_rejects_unsupported_values(self, kwargs):
        with pytest.raises(ValueError):
            EZParams(**kwargs)


class TestCRRAUtility:
    """Tests for crra_utility."""

    def test_power_branch(self):
        assert crra_utility(1.0, 1.5) == pytest.approx(-2.0)
        assert crra_utility(4.0, 0.5) == pytest.approx(4.0)

    def test_log_branch(self):
        assert crra_utility(1.0, 1.0) == 0.0
        assert crra_utility(np.e, 1.0) == pytest.approx(1.0)

    def test_zero_consumption(self):
        assert crra_utility(0.0, 0.5) == 0.0
        assert crra_utility(0.0, 1.5) == -np.inf

    def test_rejects_negative_consumption(self):
        with pytest.raises(ValueError):
            crra_utility(-0.1, 1.5)

    def test_vectorized(self):
        out = crra_utility(np.array([1.0, 4.0]), 1.5)
        np.testing.assert_allclose(out, [-2.0, -1.0])


class TestEZAggregator:
    """Tests for ez_aggregator and its consumption derivative."""

    def test_vanishes_at_zero_point(self, ez):
        assert ez_aggregator(1.0, -2.0, ez) == pytest.approx(0.0, abs=1e-15)
        assert zero_point_consumption(-2.0, 1.5) == pytest.approx(1.0)

    def test_general_branch(self, ez):
        assert ez_aggregator(2.0, -2.0, ez) == pytest.approx(0.015)

    def test_limit_branch(self, limit_params):
        assert ez_aggregator(1.0, -3.0, limit_params) == pytest.approx(0.03)

    def test_marginal_general_branch(self, ez):
        assert ez_aggregator_dc(2.0, -2.0, ez) == pytest.approx(0.0075)

    def test_marginal_limit_branch(self, limit_params):
        assert ez_aggregator_dc(1.0, -3.0, limit_params) == pytest.approx(0.03)

    def test_marginal_matches_finite_difference(self, ez):
        c, v, h = 0.7, -3.1, 1e-6
        fd = (ez_aggregator(c + h, v, ez) - ez_aggregator(c - h, v, ez)) / (2 * h)
        assert ez_aggregator_dc(c, v, ez) == pytest.approx(fd, rel=1e-6)

    def test_rejects_non_positive_consumption(self, ez):
        with pytest.raises(AggregatorDomainError) as excinfo:
            ez_aggregator(np.array([1.0, 0.0]), np.array([-2.0, -2.0]), ez)
        assert excinfo.value.index == 1

    def test_rejects_wrong_value_sign(self, ez):
        with pytest.raises(AggregatorDomainError, match="v ="):
            ez_aggregator(1.0, 2.0, ez)


class TestBequestUtility:
    """Tests for bequest_utility."""

    def test_unit_wealth(self, ez):
        assert bequest_utility(1.0, ez) == pytest.approx(-2.0)

    def test_floor_wealth(self, ez):
        assert bequest_utility(0.1, ez) == pytest.approx(-6.3246, abs=1e-4)

    def test_zero_bequest_weight(self):
        p = EZParams(kappa_bequest=0.0)
        np.testing.assert_array_equal(bequest_utility(np.array([0.5, 1.0, 3.0]), p), 0.0)

    def test_rejects_non_positive_wealth(self, ez):
        with pytest.raises(ValueError):
            bequest_utility(0.0, ez)


class TestCRRALimitSweep:
    """Tests for convergence of the aggregator to its time-additive limit."""

    def test_deviation_shrinks(self):
        psi_grid = 1.0 / 1.5 - np.array([1e-2, 1e-3, 1e-4, 1e-5])
        deviations = crra_limit_sweep(2.0, -2.0, 1.5, psi_grid)
        assert np.all(np.diff(deviations) < 0)
        assert deviations[2] <= 1e-3

    def test_exact_limit_has_no_deviation(self):
        c = np.array([0.5, 1.0, 2.0])
        v = np.array([-1.0, -2.0, -4.0])
        assert crra_limit_sweep(c, v, 1.5, [1.0 / 1.5])[0] == pytest.approx(0.0, abs=1e-15)


class TestTorchAggregators:
    """Tests for the torch aggregators used in training."""

    def test_epstein_zin_matches_numpy(self, ez):
        agg = make_aggregator(AggregatorKind.EPSTEIN_ZIN, ez)
        assert isinstance(agg, EpsteinZinAggregator)
        c = torch.tensor([0.5, 2.0], dtype=torch.float64)
        v = torch.tensor([-1.5, -2.0], dtype=torch.float64)
        out = agg.flow(torch.zeros(2, dtype=torch.float64), c, v)
        np.testing.assert_allclose(out.numpy(), ez_aggregator(c.numpy(), v.numpy(), ez))
        np.testing.assert_allclose(agg.flow_dc(None, c, v).numpy(), ez_aggregator_dc(c.numpy(), v.numpy(), ez))

    def test_epstein_zin_admissible_mask(self, ez):
        agg = EpsteinZinAggregator(ez)
        mask = agg.admissible(torch.tensor([1.0, 0.0, 1.0]), torch.tensor([-1.0, -1.0, 1.0]))
        assert mask.tolist() == [True, False, False]

    def test_discounted_crra(self, ez):
        agg = make_aggregator(AggregatorKind.DISCOUNTED_CRRA, ez)
        assert isinstance(agg, DiscountedCRRAAggregator)
        t = torch.tensor([0.0, 1.0], dtype=torch.float64)
        c = torch.tensor([1.0, 1.0], dtype=torch.float64)
        out = agg.flow(t, c, torch.zeros(2, dtype=torch.float64))
        np.testing.assert_allclose(out.numpy(), [-2.0, -2.0 * np.exp(-0.03)])
        terminal = agg.terminal(1.5, torch.tensor([1.0], dtype=torch.float64))
        assert float(terminal[0]) == pytest.approx(-2.0 * np.exp(-0.045))
