"""End-to-end runs on the synthetic benchmark.

The full-size runs (10 seeds with the factor-mode settings) are marked slow;
run them with `pytest -m slow`. Reduced versions of the same properties run
by default.
"""

import os
from pathlib import Path

import pytest

from classes import CsvOptions, SplitSpec
from dataset import generate_synthetic, load_csv
from experiment import fit_model
from resources_paths import SETTINGS_PATH
from utils import load_yaml, save_yaml_from_data

SEEDS = 10

SMALL_CONFIG = """\
population_size: 20
generations: 3
lm:
  max_iterations: 5
"""

# A training MSE this low means the generating structure was found.
EXACT_FIT = 1e-10


@pytest.fixture
def small_config_file(tmp_path: Path) -> Path:
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return path


@pytest.fixture
def stopping_settings(tmp_path: Path) -> Path:
    """The factor-mode settings, stopping once a run has found an exact fit."""
    settings = load_yaml(SETTINGS_PATH)
    settings["target_fitness"] = EXACT_FIT
    path = tmp_path / "settings.yaml"
    save_yaml_from_data(path, settings)
    return path


def _interleaved() -> SplitSpec:
    return SplitSpec(train_fraction=0.75, strategy="interleaved")


class TestSyntheticRecovery:
    """The evolved factor model on the noise-free benchmark."""

    @pytest.mark.slow
    def test_best_of_ten_runs(self, stopping_settings: Path) -> None:
        """The best of 10 seeded runs reaches R² > 0.999 on training and held-out points."""
        result = fit_model(
            generate_synthetic(), "factor", stopping_settings, seed=0, runs=SEEDS, split_spec=_interleaved()
        )
        assert result.train_report.r2 > 0.999
        assert result.test_report.r2 > 0.999

    @pytest.mark.slow
    def test_repeat_is_byte_identical(self, tmp_path: Path, stopping_settings: Path) -> None:
        """Repeating the first seed writes the same model file."""
        paths = []
        for attempt in range(2):
            result = fit_model(generate_synthetic(), "factor", stopping_settings, seed=0, split_spec=_interleaved())
            path = tmp_path / f"model{attempt}.yaml"
            result.model.save(path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_small_repeat_is_byte_identical(self, tmp_path: Path, small_config_file: Path) -> None:
        """The same holds for a short run with a small population."""
        data = generate_synthetic(step=2.0)
        paths = []
        for attempt in range(2):
            result = fit_model(data, "factor", small_config_file, seed=11, split_spec=_interleaved())
            path = tmp_path / f"model{attempt}.yaml"
            result.model.save(path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_reached_target_skips_remaining_runs(self, tmp_path: Path) -> None:
        """Once a run meets target_fitness the later seeds are not run."""
        path = tmp_path / "always.yaml"
        path.write_text(SMALL_CONFIG + "target_fitness: 1.0e+300\n", encoding="utf-8")
        result = fit_model(generate_synthetic(step=2.0), "factor", path, seed=3, runs=4, split_spec=_interleaved())
        assert [run.seed for run in result.runs] == [3]
        assert result.model.seed == 3


class TestBaselineOrdering:
    """Evolved factor models against least squares on noisy data."""

    @pytest.mark.slow
    def test_factor_beats_linear(self) -> None:
        """With 1% noise the factor model has the lower test relative error in at least 9 of 10 seeds."""
        wins = 0
        for seed in range(SEEDS):
            data = generate_synthetic(noise=0.01, seed=seed)
            spec = SplitSpec(train_fraction=0.75, seed=seed)
            factor = fit_model(data, "factor", SETTINGS_PATH, seed=seed, split_spec=spec)
            linear = fit_model(data, "linear", seed=seed, split_spec=spec)
            if (
                factor.test_report.average_relative_error_percent
                < linear.test_report.average_relative_error_percent
            ):
                wins += 1
        assert wins >= 9

    def test_linear_cannot_fit_the_curve(self) -> None:
        """Least squares leaves a clear error on the non-linear benchmark."""
        result = fit_model(generate_synthetic(), "linear", split_spec=_interleaved())
        assert result.test_report.mse > 1e-4
        assert result.test_report.r2 < 0.999


@pytest.mark.skipif(not os.environ.get("FRICTION_CSV"), reason="FRICTION_CSV is not set")
def test_friction_linear_baseline() -> None:
    """Least squares on the published friction data lands near 4.15% average relative error."""
    data = load_csv(Path(os.environ["FRICTION_CSV"]), CsvOptions())
    result = fit_model(data, "linear", split_spec=SplitSpec(train_fraction=0.75, seed=0))
    assert abs(result.test_report.average_relative_error_percent - 4.15) <= 1.5
