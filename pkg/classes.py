from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from marshmallow.exceptions import ValidationError as SchemaValidationError
from strenum import StrEnum
from yamldataclassconfig.config import YamlDataClassConfig

import validators
from utils import load_yaml, config_to_dict


class ConfigError(ValueError):
    pass


class FitMode(StrEnum):
    factor = "factor"
    onehot = "onehot"
    linear = "linear"


class SplitStrategy(StrEnum):
    stratified = "stratified"  # random, stratified by the nominal inputs
    leading = "leading"
    interleaved = "interleaved"


# max_tree_nodes per mode
MODE_TREE_LIMITS = {FitMode.factor: 25, FitMode.onehot: 50}


def load_config(config: YamlDataClassConfig, path: Path | str):
    """Load a YAML key-value file into `config`, mapping schema problems to ConfigError."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file {path} doesn't exist")
    if not load_yaml(path):
        return config
    try:
        config.load(path=path.absolute())
    except SchemaValidationError as e:
        raise ConfigError(f"{path}: {e.messages}") from e
    return config


@dataclass
class LmConfig(YamlDataClassConfig):
    max_iterations: int = 10  # every damping attempt counts, accepted or not
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    max_damping: float = 1e10
    min_step_tolerance: float = 1e-12
    degenerate_row_fraction: float = 0.5  # more excluded rows than this -> left unrefined

    def validate(self) -> "LmConfig":
        check = validators.check
        check(self.max_iterations, validators.integer_at_least(1), "max_iterations", ConfigError)
        check(self.initial_damping, validators.positive, "initial_damping", ConfigError)
        check(self.damping_up, validators.greater_than_one, "damping_up", ConfigError)
        check(self.damping_down, validators.open_fraction, "damping_down", ConfigError)
        check(self.max_damping, validators.positive, "max_damping", ConfigError)
        check(self.min_step_tolerance, validators.non_negative, "min_step_tolerance", ConfigError)
        check(self.degenerate_row_fraction, validators.probability, "degenerate_row_fraction", ConfigError)
        return self


@dataclass
class GpConfig(YamlDataClassConfig):
    population_size: int = 200
    generations: int = 100
    max_tree_nodes: int = 25
    function_set: list[str] = field(
        default_factory=lambda: ["add", "sub", "mul", "div", "log", "exp"]
    )
    use_constants: bool = True
    use_numeric_variables: bool = True
    use_factor_variables: bool = True
    tournament_size: int = 5
    crossover_probability: float = 0.9
    mutation_probability: float = 0.25
    factor_mutation_sigma: float = 0.05
    constant_init_min: float = -1.0
    constant_init_max: float = 1.0
    elitism: int = 1
    rng_seed: int = 0
    memetic: bool = True  # false: parameters are fitted by mutation only
    target_fitness: Optional[float] = None  # stop once best training MSE <= this
    parallel_evaluation: bool = True
    progress: bool = False
    lm: LmConfig = field(default_factory=LmConfig)

    def validate(self) -> "GpConfig":
        from expr import Operator

        check = validators.check
        check(self.population_size, validators.integer_at_least(2), "population_size", ConfigError)
        check(self.generations, validators.integer_at_least(0), "generations", ConfigError)
        check(self.max_tree_nodes, validators.integer_at_least(3), "max_tree_nodes", ConfigError)
        check(self.function_set, validators.all_in(op.value for op in Operator), "function_set", ConfigError)
        if not self.function_set:
            raise ConfigError("function_set must not be empty")
        if not (self.use_constants or self.use_numeric_variables or self.use_factor_variables):
            raise ConfigError("At least one terminal kind must be enabled")
        check(self.tournament_size, validators.integer_at_least(1), "tournament_size", ConfigError)
        check(self.crossover_probability, validators.probability, "crossover_probability", ConfigError)
        check(self.mutation_probability, validators.probability, "mutation_probability", ConfigError)
        check(self.factor_mutation_sigma, validators.non_negative, "factor_mutation_sigma", ConfigError)
        if self.constant_init_min > self.constant_init_max:
            raise ConfigError("constant_init_min must not exceed constant_init_max")
        check(self.elitism, validators.integer_at_least(0), "elitism", ConfigError)
        if self.elitism >= self.population_size:
            raise ConfigError("elitism must be smaller than population_size")
        self.lm.validate()
        return self

    @classmethod
    def for_mode(cls, mode: FitMode | str, path: Path | str | None = None) -> "GpConfig":
        """Configuration for one of the GP fit modes.

        factor mode turns factor terminals on and limits trees to 25 nodes,
        onehot mode turns them off and allows 50 nodes. A `max_tree_nodes`
        key in the file takes precedence over the mode limit.
        """
        mode = FitMode(mode)
        if mode not in MODE_TREE_LIMITS:
            raise ConfigError(f"{mode} is not a genetic programming mode")

        config = cls()
        explicit_keys = {}
        if path is not None:
            load_config(config, path)
            explicit_keys = load_yaml(Path(path)) or {}

        config.use_factor_variables = mode == FitMode.factor
        if "max_tree_nodes" not in explicit_keys:
            config.max_tree_nodes = MODE_TREE_LIMITS[mode]
        return config.validate()

    def as_dict(self) -> dict:
        return config_to_dict(self)


@dataclass
class SplitSpec(YamlDataClassConfig):
    train_fraction: float = 0.75
    strategy: str = SplitStrategy.stratified.value
    seed: int = 0
    stratify: Optional[list[str]] = None  # default: every nominal input

    def validate(self) -> "SplitSpec":
        validators.check(self.train_fraction, validators.open_fraction, "train_fraction", ConfigError)
        validators.check(
            self.strategy, validators.one_of(s.value for s in SplitStrategy), "strategy", ConfigError
        )
        return self


@dataclass
class CsvOptions(YamlDataClassConfig):
    target: Optional[str] = None  # default: last column
    kinds: dict[str, str] = field(default_factory=dict)  # column -> "numeric" | "nominal"
    delimiter: str = ","


@dataclass
class PdpSpec(YamlDataClassConfig):
    sweep_column: str = "x"
    grid_points: int = 50
    sweep_min: Optional[float] = None  # default: training minimum
    sweep_max: Optional[float] = None  # default: training maximum
    fixed_values: dict[str, float] = field(default_factory=dict)  # default: training median
    nominal_column: Optional[str] = None  # default: first nominal input
    levels: Optional[list[str]] = None  # default: every level
    fixed_levels: dict[str, str] = field(default_factory=dict)  # other nominal inputs, default: first level

    def validate(self) -> "PdpSpec":
        validators.check(self.grid_points, validators.grid_count, "grid_points", ConfigError)
        if (
            self.sweep_min is not None
            and self.sweep_max is not None
            and self.sweep_min > self.sweep_max
        ):
            raise ConfigError("sweep_min must not exceed sweep_max")
        return self
