"""
Shared fixtures for the test suite.
"""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from config.settings import BASELINE_CONFIG, MERTON_CONFIG, load_run_config
from src.market.params import MarketParams
from src.models.networks import NetworkSpec
from src.preferences.utility import EZParams
from src.projection.constraints import ConstraintMode, PortfolioConstraint
from tests.helpers import tiny


@pytest.fixture
def baseline_market():
    return MarketParams.baseline()


@pytest.fixture
def single_market():
    return MarketParams.single_asset()


@pytest.fixture
def ez():
    return EZParams()


@pytest.fixture
def simplex():
    return PortfolioConstraint(mode=ConstraintMode.EQUALITY_SIMPLEX)


@pytest.fixture
def capped():
    return PortfolioConstraint(mode=ConstraintMode.CAPPED_SIMPLEX, leverage_cap=2.0)


@pytest.fixture
def small_spec():
    return NetworkSpec(hidden_layers=1, hidden_width=8)


@pytest.fixture
def baseline_config():
    return load_run_config(BASELINE_CONFIG)


@pytest.fixture
def merton_config():
    return load_run_config(MERTON_CONFIG)


@pytest.fixture
def tiny_baseline(baseline_config):
    return tiny(baseline_config)


@pytest.fixture
def tiny_merton(merton_config):
    return tiny(merton_config)
