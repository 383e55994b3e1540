"""Tests for the configuration dataclasses.

This module tests:
- validate(): range and choice checks on every config class
- load_config / GpConfig.for_mode: YAML loading and mode limits
"""

from pathlib import Path

import pytest

from classes import ConfigError, GpConfig, LmConfig, PdpSpec, SplitSpec, load_config


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "config.yaml"
    path.write_text(text, encoding="utf-8")
    return path


# =============================================================================
# validate()
# =============================================================================


class TestValidate:
    """Tests for the validate() methods."""

    def test_defaults_are_valid(self) -> None:
        GpConfig().validate()
        SplitSpec().validate()
        PdpSpec().validate()

    @pytest.mark.parametrize(
        "changes, name",
        [
            ({"population_size": 1}, "population_size"),
            ({"max_tree_nodes": 2}, "max_tree_nodes"),
            ({"generations": -1}, "generations"),
            ({"generations": 2.5}, "generations"),
            ({"crossover_probability": 1.5}, "crossover_probability"),
            ({"factor_mutation_sigma": float("inf")}, "factor_mutation_sigma"),
            ({"function_set": ["add", "sqrt"]}, "function_set"),
        ],
    )
    def test_gp_bounds(self, changes: dict, name: str) -> None:
        config = GpConfig(**changes)
        with pytest.raises(ConfigError, match=name):
            config.validate()

    def test_elitism_below_population(self) -> None:
        with pytest.raises(ConfigError, match="elitism"):
            GpConfig(population_size=4, elitism=4).validate()

    def test_nested_lm_settings(self) -> None:
        with pytest.raises(ConfigError, match="damping_down"):
            GpConfig(lm=LmConfig(damping_down=1.0)).validate()

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2])
    def test_train_fraction_is_open(self, fraction: float) -> None:
        with pytest.raises(ConfigError, match="strictly between 0 and 1"):
            SplitSpec(train_fraction=fraction).validate()

    def test_unknown_split_strategy(self) -> None:
        with pytest.raises(ConfigError, match="strategy"):
            SplitSpec(strategy="random").validate()

    def test_grid_needs_two_points(self) -> None:
        with pytest.raises(ConfigError, match="at least 2 points"):
            PdpSpec(grid_points=1).validate()


# =============================================================================
# Loading
# =============================================================================


class TestLoad:
    """Tests for load_config() and GpConfig.for_mode()."""

    def test_mode_limits(self) -> None:
        assert GpConfig.for_mode("factor").max_tree_nodes == 25
        onehot = GpConfig.for_mode("onehot")
        assert onehot.max_tree_nodes == 50
        assert not onehot.use_factor_variables

    def test_explicit_tree_limit_wins(self, tmp_path: Path) -> None:
        config = GpConfig.for_mode("onehot", _write(tmp_path, "max_tree_nodes: 30\n"))
        assert config.max_tree_nodes == 30

    def test_nested_keys(self, tmp_path: Path) -> None:
        config = GpConfig.for_mode("factor", _write(tmp_path, "lm:\n  max_iterations: 3\n"))
        assert config.lm.max_iterations == 3

    def test_out_of_range_value_in_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="mutation_probability"):
            GpConfig.for_mode("factor", _write(tmp_path, "mutation_probability: 2\n"))

    def test_unknown_key(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError):
            load_config(GpConfig(), _write(tmp_path, "population: 10\n"))

    def test_linear_is_not_a_gp_mode(self) -> None:
        with pytest.raises(ConfigError):
            GpConfig.for_mode("linear")

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="doesn't exist"):
            load_config(GpConfig(), tmp_path / "missing.yaml")
