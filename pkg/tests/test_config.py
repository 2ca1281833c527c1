"""
Tests for run configuration loading, validation and overrides.
"""
import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config.settings import (
    AppConfig,
    ConfigError,
    RunConfig,
    load_run_config,
    parse_run_config,
    save_run_config,
)
from src.pgdpo.trainer import Ablation
from src.preferences.aggregators import AggregatorKind
from src.projection.constraints import ConstraintMode


class TestShippedConfigs:
    """Tests for the YAML files under config/."""

    def test_baseline(self, baseline_config):
        mkt = baseline_config.market.to_params()
        assert mkt.d == 5
        assert mkt.beta_lrr[1] == pytest.approx(0.9375)
        ez = baseline_config.preferences.to_params()
        assert ez.R == 1.5 and ez.psi == 0.5
        assert baseline_config.constraint.mode == ConstraintMode.EQUALITY_SIMPLEX
        assert baseline_config.train_config().seeds == (0, 1, 2, 3, 4)

    def test_merton_validation(self, merton_config):
        assert merton_config.preferences.to_params().is_crra_limit
        assert merton_config.preferences.aggregator == AggregatorKind.DISCOUNTED_CRRA
        assert merton_config.constraint.to_params().leverage_cap == 2.0
        mkt = merton_config.market.to_params()
        assert mkt.d == 1 and mkt.W_min == 0.01
        sampler = merton_config.train_config().sampler
        assert (sampler.w_low, sampler.w_high) == (0.1, 2.0)

    def test_yaml_round_trip(self, tmp_path, baseline_config):
        path = save_run_config(baseline_config, tmp_path / "config.yaml")
        assert load_run_config(path) == baseline_config


class TestValidation:
    """Tests for validation errors."""

    def test_negative_volatility_names_the_field(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_run_config({"market": {"sigma": [-0.1, 0.2, 0.2, 0.2, 0.2]}})
        assert "market.sigma.0" in excinfo.value.fields

    def test_zero_volatilities_rejected(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_run_config({"market": {"sigma": [0.15, 0.0, 0.2, 0.2, 0.2], "xi": 0.0}})
        assert {"market.sigma.1", "market.xi"} <= set(excinfo.value.fields)

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_run_config({"market": {"sigmas": [0.2]}})
        assert "market.sigmas" in excinfo.value.fields

    def test_inconsistent_market_lengths(self):
        with pytest.raises(ConfigError, match="sigma"):
            parse_run_config({"market": {"sigma": [0.2, 0.2]}})

    def test_unit_eis_rejected(self):
        with pytest.raises(ConfigError, match="psi"):
            parse_run_config({"preferences": {"psi": 1.0}})

    def test_grid_time_beyond_horizon(self):
        with pytest.raises(ConfigError, match="grid_t"):
            parse_run_config({"evaluation": {"grid_t": 5.0}})

    def test_empty_document_gives_defaults(self):
        assert parse_run_config(None) == RunConfig()

    def test_non_mapping(self):
        with pytest.raises(ConfigError, match="mapping"):
            parse_run_config([1, 2, 3])


class TestLoading:
    """Tests for load_run_config."""

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.yaml")

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("market: [unclosed\n")
        with pytest.raises(ConfigError, match="cannot parse"):
            load_run_config(path)


class TestOverrides:
    """Tests for RunConfig.with_overrides."""

    def test_nested_override(self, baseline_config):
        cfg = baseline_config.with_overrides(
            {"training.iterations": 7, "training.network.hidden_width": 16, "training.ablation": "no-floor"}
        )
        assert cfg.training.iterations == 7
        assert cfg.train_config().network.hidden_width == 16
        assert cfg.training.ablation == Ablation.NO_FLOOR
        assert baseline_config.training.iterations == 2000

    def test_unknown_field(self, baseline_config):
        with pytest.raises(ConfigError) as excinfo:
            baseline_config.with_overrides({"training.iteratons": 7})
        assert excinfo.value.fields == ("training.iteratons",)

    def test_unknown_section(self, baseline_config):
        with pytest.raises(ConfigError, match="section"):
            baseline_config.with_overrides({"trainer.iterations": 7})

    def test_override_is_revalidated(self, baseline_config):
        with pytest.raises(ConfigError):
            baseline_config.with_overrides({"training.N": 0})

    def test_seed_selection(self, baseline_config):
        assert baseline_config.train_config(seed=3).seed == 3


class TestAppConfig:
    """Tests for process-level settings."""

    def test_defaults(self):
        cfg = AppConfig()
        assert cfg.threads >= 1
        assert cfg.log_level
