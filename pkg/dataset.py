"""Columnar datasets with numeric and nominal columns.

Numeric columns hold float64 values, nominal columns hold level indices into
the column's level table. Level tables are built in first-appearance order
and travel with saved models, so new files are always mapped by level name.
Datasets are never modified in place; every transformation returns a new one.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from strenum import StrEnum

from logging import debug, warning

from classes import CsvOptions, SplitSpec, SplitStrategy


class DataError(Exception):
    pass


class UnseenLevelError(DataError):
    """Nominal values that are not in the level table the model was fitted with."""

    def __init__(self, column: str, levels: Sequence[str], rows: Sequence[int]):
        self.column = column
        self.levels = list(levels)
        self.rows = list(rows)
        shown = ", ".join(str(r) for r in self.rows[:20])
        more = f" (+{len(self.rows) - 20} more)" if len(self.rows) > 20 else ""
        super().__init__(
            f"Unseen level(s) {', '.join(self.levels)} in column '{column}' at row(s) {shown}{more}"
        )


class ColumnKind(StrEnum):
    numeric = "numeric"
    nominal = "nominal"


def indicator_name(column: str, level: str) -> str:
    return f"{column}={level}"


@dataclass(frozen=True)
class Column:
    name: str
    kind: ColumnKind
    levels: tuple[str, ...] = ()
    indicator_of: str | None = None  # source nominal column of a one-hot indicator

    def to_dict(self) -> dict:
        data = {"name": self.name, "kind": self.kind.value}
        if self.kind == ColumnKind.nominal:
            data["levels"] = list(self.levels)
        if self.indicator_of is not None:
            data["indicator_of"] = self.indicator_of
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "Column":
        return cls(
            name=str(data["name"]),
            kind=ColumnKind(data["kind"]),
            levels=tuple(str(level) for level in data.get("levels", ())),
            indicator_of=data.get("indicator_of"),
        )


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    target: str | None = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        duplicated = {n for n in names if names.count(n) > 1}
        if duplicated:
            raise DataError(f"Duplicated column names: {sorted(duplicated)}")
        if self.target is not None:
            if self.target not in names:
                raise DataError(f"Target column '{self.target}' is missing")
            if self.column(self.target).kind != ColumnKind.numeric:
                raise DataError(f"Target column '{self.target}' is not numeric")

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise DataError(f"Unknown column '{name}'")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def inputs(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.name != self.target)

    @property
    def numeric_inputs(self) -> tuple[Column, ...]:
        return tuple(c for c in self.inputs if c.kind == ColumnKind.numeric)

    @property
    def nominal_inputs(self) -> tuple[Column, ...]:
        return tuple(c for c in self.inputs if c.kind == ColumnKind.nominal)

    def to_dict(self) -> dict:
        return {"target": self.target, "columns": [c.to_dict() for c in self.columns]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Schema":
        return cls(
            columns=tuple(Column.from_dict(c) for c in data["columns"]),
            target=data.get("target"),
        )


@dataclass(frozen=True)
class ScalingRecord:
    """x' = (x - minimum) / (maximum - minimum), in the original units."""

    minimum: float
    maximum: float

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.minimum) / (self.maximum - self.minimum)

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * (self.maximum - self.minimum) + self.minimum

    def then(self, other: "ScalingRecord") -> "ScalingRecord":
        """The single record equivalent to applying self and then other."""
        width = self.maximum - self.minimum
        return ScalingRecord(
            self.minimum + other.minimum * width,
            self.minimum + other.maximum * width,
        )

    def to_dict(self) -> dict:
        return {"min": float(self.minimum), "max": float(self.maximum)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScalingRecord":
        return cls(float(data["min"]), float(data["max"]))


@dataclass(frozen=True, eq=False)
class Dataset:
    schema: Schema
    data: Mapping[str, np.ndarray]
    scaling: Mapping[str, ScalingRecord] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(self.data[c.name]) for c in self.schema.columns if c.name in self.data}
        missing = [c.name for c in self.schema.columns if c.name not in self.data]
        if missing:
            raise DataError(f"No values for column(s) {missing}")
        if len(lengths) > 1:
            raise DataError(f"Columns have different lengths: {sorted(lengths)}")

        frozen = {}
        for c in self.schema.columns:
            if c.kind == ColumnKind.numeric:
                values = np.array(self.data[c.name], dtype=np.float64)
            else:
                values = np.array(self.data[c.name], dtype=np.int64)
                if len(values) and (values.min() < 0 or values.max() >= len(c.levels)):
                    raise DataError(f"Level index out of range in column '{c.name}'")
            values.setflags(write=False)
            frozen[c.name] = values
        object.__setattr__(self, "data", frozen)
        object.__setattr__(self, "scaling", dict(self.scaling))

    @property
    def n_rows(self) -> int:
        if not self.schema.columns:
            return 0
        return len(self.data[self.schema.columns[0].name])

    def __len__(self) -> int:
        return self.n_rows

    def values(self, name: str) -> np.ndarray:
        if name not in self.data:
            raise DataError(f"Unknown column '{name}'")
        return self.data[name]

    @property
    def target_values(self) -> np.ndarray:
        if self.schema.target is None:
            raise DataError("Dataset has no target column")
        return self.data[self.schema.target]

    def level_names(self, name: str) -> np.ndarray:
        column = self.schema.column(name)
        if column.kind != ColumnKind.nominal:
            raise DataError(f"Column '{name}' is not nominal")
        return np.array(column.levels, dtype=object)[self.data[name]]

    def take(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.schema,
            {name: values[indices] for name, values in self.data.items()},
            self.scaling,
        )

    def row(self, index: int) -> dict[str, Any]:
        result = {}
        for c in self.schema.columns:
            if c.kind == ColumnKind.numeric:
                result[c.name] = float(self.data[c.name][index])
            else:
                result[c.name] = c.levels[self.data[c.name][index]]
        return result

    def to_frame(self) -> pd.DataFrame:
        frame = {}
        for c in self.schema.columns:
            if c.kind == ColumnKind.numeric:
                frame[c.name] = self.data[c.name]
            else:
                frame[c.name] = self.level_names(c.name)
        return pd.DataFrame(frame, columns=self.schema.names)

    @classmethod
    def from_rows(cls, schema: Schema, rows: Sequence[Mapping[str, Any]]) -> "Dataset":
        """Build a dataset from dict rows.

        Only columns present in every row are kept; the level tables of
        `schema` are used for nominal values and unknown names raise
        UnseenLevelError.
        """
        present = [c for c in schema.columns if all(c.name in r for r in rows)] if rows else []
        data = {}
        for c in present:
            if c.kind == ColumnKind.numeric:
                try:
                    data[c.name] = np.array([float(r[c.name]) for r in rows], dtype=np.float64)
                except (TypeError, ValueError) as e:
                    raise DataError(f"Non-numeric value in column '{c.name}': {e}") from e
            else:
                data[c.name] = _level_codes(c, [str(r[c.name]) for r in rows])
        target = schema.target if schema.target in data else None
        return cls(Schema(tuple(present), target), data)

    def summary(self, name: str) -> dict[str, float]:
        values = self.values(name)
        record = self.scaling.get(name)
        if record is not None:
            values = record.invert(values)
        return {
            "min": float(np.min(values)),
            "max": float(np.max(values)),
            "median": float(np.median(values)),
        }


def _level_codes(column: Column, names: Sequence[str]) -> np.ndarray:
    lookup = {level: i for i, level in enumerate(column.levels)}
    codes = np.empty(len(names), dtype=np.int64)
    unseen: dict[str, list[int]] = {}
    for i, name in enumerate(names):
        code = lookup.get(name)
        if code is None:
            unseen.setdefault(name, []).append(i)
            code = 0
        codes[i] = code
    if unseen:
        rows = sorted(i for indices in unseen.values() for i in indices)
        raise UnseenLevelError(column.name, list(unseen), rows)
    return codes


def _is_numeric_column(cells: pd.Series) -> bool:
    return bool(pd.to_numeric(cells, errors="coerce").notna().all())


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return np.nan


def _parse_numeric(name: str, cells: pd.Series) -> np.ndarray:
    # float() is correctly rounded, so saved files read back bit for bit.
    values = cells.map(_to_float).to_numpy(dtype=np.float64)
    bad = np.isnan(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataError(
            f"Column '{name}', data row {row + 1}: cannot parse {cells.iloc[row]!r} as a number"
        )
    return values


def _read_frame(path: Path | str, options: CsvOptions) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path,
            sep=options.delimiter,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as e:
        raise DataError(f"{path}: empty file") from e
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: ragged rows ({e})") from e
    except FileNotFoundError as e:
        raise DataError(f"{path}: file not found") from e

    if frame.empty:
        raise DataError(f"{path}: no data rows")
    # Missing trailing fields come back as "" and can't be told apart from empty cells.
    missing = (frame == "") | frame.isna()
    if missing.to_numpy().any():
        row, col = (int(i[0]) for i in np.nonzero(missing.to_numpy()))
        raise DataError(
            f"{path}: ragged row {row + 1}, column '{frame.columns[col]}' is missing or empty"
        )
    return frame


def load_csv(path: Path | str, options: CsvOptions | None = None) -> Dataset:
    """Read a CSV file, detecting column kinds.

    A column is numeric when every cell parses as a number and nominal
    otherwise, unless `options.kinds` says differently. The target (default:
    last column) must be numeric.
    """
    options = options or CsvOptions()
    frame = _read_frame(path, options)
    target = options.target if options.target is not None else frame.columns[-1]
    if target not in frame.columns:
        raise DataError(f"{path}: target column '{target}' is missing")
    unknown = set(options.kinds) - set(frame.columns)
    if unknown:
        raise DataError(f"{path}: kind override for unknown column(s) {sorted(unknown)}")

    columns, data = [], {}
    for name in frame.columns:
        cells = frame[name]
        kind = options.kinds.get(name)
        if kind is None:
            kind = ColumnKind.numeric if _is_numeric_column(cells) else ColumnKind.nominal
        kind = ColumnKind(kind)

        if kind == ColumnKind.numeric:
            data[name] = _parse_numeric(name, cells)
            columns.append(Column(name, kind))
        else:
            if name == target:
                raise DataError(f"{path}: target column '{target}' is not numeric")
            codes, uniques = pd.factorize(cells, sort=False)
            data[name] = codes
            columns.append(Column(name, kind, tuple(str(u) for u in uniques)))

    dataset = Dataset(Schema(tuple(columns), target), data)
    debug(f"Loaded {dataset.n_rows} rows, columns {dataset.schema.names} from {path}")
    return dataset


def load_csv_with_schema(
    path: Path | str, schema: Schema, delimiter: str = ",", require_target: bool = False
) -> Dataset:
    """Read a CSV file against a known schema, mapping nominal values by level name."""
    frame = _read_frame(path, CsvOptions(delimiter=delimiter))
    columns, data = [], {}
    for c in schema.columns:
        if c.name not in frame.columns:
            if c.name == schema.target and not require_target:
                continue
            raise DataError(f"{path}: column '{c.name}' is missing")
        if c.kind == ColumnKind.numeric:
            data[c.name] = _parse_numeric(c.name, frame[c.name])
        else:
            data[c.name] = _level_codes(c, frame[c.name].tolist())
        columns.append(c)
    target = schema.target if schema.target in data else None
    return Dataset(Schema(tuple(columns), target), data)


def save_csv(dataset: Dataset, path: Path | str, extra: Mapping[str, np.ndarray] | None = None):
    frame = dataset.to_frame()
    for name, values in (extra or {}).items():
        frame[name] = values
    frame.to_csv(path, index=False, lineterminator="\n")


def scale_unit(dataset: Dataset, columns: Iterable[str] | None = None) -> Dataset:
    """Scale numeric columns to [0, 1] and remember how to undo it.

    Without `columns` every numeric input is scaled; the target is only
    scaled when named explicitly.
    """
    if columns is None:
        columns = [c.name for c in dataset.schema.numeric_inputs]
    data = dict(dataset.data)
    scaling = dict(dataset.scaling)
    for name in columns:
        if dataset.schema.column(name).kind != ColumnKind.numeric:
            raise DataError(f"Column '{name}' is not numeric and can't be scaled")
        values = dataset.values(name)
        low, high = float(np.min(values)), float(np.max(values))
        if not high > low:
            raise DataError(f"Column '{name}' is constant and can't be scaled")
        record = ScalingRecord(low, high)
        data[name] = record.apply(values)
        previous = scaling.get(name)
        scaling[name] = previous.then(record) if previous is not None else record
    return Dataset(dataset.schema, data, scaling)


def unscale(dataset: Dataset, columns: Iterable[str] | None = None) -> Dataset:
    if columns is None:
        columns = list(dataset.scaling)
    data = dict(dataset.data)
    scaling = dict(dataset.scaling)
    for name in columns:
        record = scaling.pop(name, None)
        if record is None:
            raise DataError(f"Column '{name}' is not scaled")
        data[name] = record.invert(dataset.values(name))
    return Dataset(dataset.schema, data, scaling)


def apply_scaling(dataset: Dataset, records: Mapping[str, ScalingRecord]) -> Dataset:
    """Scale new data with stored records (no re-derived min/max, no clipping)."""
    data = dict(dataset.data)
    scaling = dict(dataset.scaling)
    for name, record in records.items():
        if name not in data:
            continue
        data[name] = record.apply(dataset.values(name))
        scaling[name] = record
    return Dataset(dataset.schema, data, scaling)


def _as_list(value) -> list:
    if isinstance(value, (list, tuple, set, frozenset)):
        return list(value)
    return [value]


def filter_rows(
    dataset: Dataset, predicate: Mapping[str, Any], drop_unused_levels: bool = False
) -> Dataset:
    """Keep the rows where every column matches (conjunction over columns).

    A predicate value is a single value or a collection of allowed values.
    """
    mask = np.ones(dataset.n_rows, dtype=bool)
    for name, wanted in predicate.items():
        column = dataset.schema.column(name)
        wanted = _as_list(wanted)
        if column.kind == ColumnKind.nominal:
            indices = []
            for level in wanted:
                if str(level) not in column.levels:
                    raise DataError(f"Unknown level '{level}' for column '{name}'")
                indices.append(column.levels.index(str(level)))
            mask &= np.isin(dataset.values(name), indices)
        else:
            mask &= np.isin(dataset.values(name), [float(v) for v in wanted])

    result = dataset.take(np.flatnonzero(mask))
    if result.n_rows == 0:
        warning(f"Filter {dict(predicate)} left 0 of {dataset.n_rows} rows")
    if drop_unused_levels:
        result = _drop_unused_levels(result)
    return result


def _drop_unused_levels(dataset: Dataset) -> Dataset:
    columns, data = [], dict(dataset.data)
    for c in dataset.schema.columns:
        if c.kind != ColumnKind.nominal:
            columns.append(c)
            continue
        codes = dataset.values(c.name)
        used = [i for i in range(len(c.levels)) if np.any(codes == i)]
        remap = np.zeros(len(c.levels), dtype=np.int64)
        remap[used] = np.arange(len(used))
        data[c.name] = remap[codes]
        columns.append(replace(c, levels=tuple(c.levels[i] for i in used)))
    return Dataset(Schema(tuple(columns), dataset.schema.target), data, dataset.scaling)


def top_levels(dataset: Dataset, column: str, k: int = 1) -> list[str]:
    """The k most frequent levels of a nominal column, ties by first appearance."""
    c = dataset.schema.column(column)
    if c.kind != ColumnKind.nominal:
        raise DataError(f"Column '{column}' is not nominal")
    counts = np.bincount(dataset.values(column), minlength=len(c.levels))
    order = sorted(range(len(c.levels)), key=lambda i: (-counts[i], i))
    return [c.levels[i] for i in order[:k] if counts[i] > 0]


def one_hot_schema(schema: Schema, columns: Iterable[str] | None = None) -> Schema:
    if columns is None:
        columns = [c.name for c in schema.nominal_inputs]
    columns = set(columns)
    expanded = []
    for c in schema.columns:
        if c.name not in columns:
            expanded.append(c)
            continue
        if c.kind != ColumnKind.nominal:
            raise DataError(f"Column '{c.name}' is not nominal")
        expanded.extend(
            Column(indicator_name(c.name, level), ColumnKind.numeric, indicator_of=c.name)
            for level in c.levels
        )
    return Schema(tuple(expanded), schema.target)


def one_hot(dataset: Dataset, columns: Iterable[str] | None = None) -> Dataset:
    """Replace nominal columns by 0/1 indicator columns named `<column>=<level>`."""
    schema = one_hot_schema(dataset.schema, columns)
    data = {}
    for c in schema.columns:
        if c.indicator_of is not None and c.name not in dataset.data:
            source = dataset.schema.column(c.indicator_of)
            level = source.levels.index(c.name[len(c.indicator_of) + 1 :])
            data[c.name] = (dataset.values(c.indicator_of) == level).astype(np.float64)
        else:
            data[c.name] = dataset.values(c.name)
    return Dataset(schema, data, dataset.scaling)


def _strata(dataset: Dataset, columns: Sequence[str]) -> list[np.ndarray]:
    if not columns:
        return [np.arange(dataset.n_rows)]
    keys = np.stack([dataset.values(c) for c in columns], axis=1)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    order = np.argsort(first, kind="stable")  # strata in first-appearance order
    return [np.flatnonzero(inverse == group) for group in order]


def _train_quotas(sizes: np.ndarray, fraction: float) -> np.ndarray:
    """Largest-remainder allocation of round(fraction * n) training rows over strata."""
    total = int(np.floor(fraction * sizes.sum() + 0.5))
    exact = fraction * sizes
    quotas = np.floor(exact).astype(np.int64)
    remainders = exact - quotas
    for i in np.argsort(-remainders, kind="stable")[: total - quotas.sum()]:
        quotas[i] += 1
    return np.minimum(quotas, sizes)


def split(dataset: Dataset, spec: SplitSpec | None = None) -> tuple[Dataset, Dataset]:
    spec = (spec or SplitSpec()).validate()
    strategy = SplitStrategy(spec.strategy)
    n = dataset.n_rows
    train_mask = np.zeros(n, dtype=bool)

    if strategy == SplitStrategy.leading:
        train_mask[: int(np.floor(spec.train_fraction * n + 0.5))] = True
    else:
        stratify = spec.stratify
        if stratify is None:
            stratify = [c.name for c in dataset.schema.nominal_inputs]
        strata = _strata(dataset, stratify)
        if strategy == SplitStrategy.stratified:
            rng = np.random.default_rng(spec.seed)
            quotas = _train_quotas(np.array([len(s) for s in strata]), spec.train_fraction)
            for members, quota in zip(strata, quotas):
                train_mask[rng.permutation(members)[:quota]] = True
        else:
            held_out = 1.0 - spec.train_fraction
            for members in strata:
                j = np.arange(len(members))
                is_test = np.floor((j + 1) * held_out) > np.floor(j * held_out)
                train_mask[members[~is_test]] = True

    train_idx, test_idx = np.flatnonzero(train_mask), np.flatnonzero(~train_mask)
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise DataError(
            f"Split of {n} rows with train_fraction={spec.train_fraction} leaves "
            f"{len(train_idx)} training and {len(test_idx)} test rows"
        )
    debug(f"Split {n} rows into {len(train_idx)} train / {len(test_idx)} test ({strategy})")
    return dataset.take(train_idx), dataset.take(test_idx)


# (theta_1, theta_2) per level of the synthetic benchmark
SYNTHETIC_PARAMETERS = {
    "A": (1.0, -0.16),
    "B": (1.0, -0.32),
    "C": (1.5, -0.80),
    "D": (2.0, -1.60),
}


def synthetic_function(x: np.ndarray, level: str) -> np.ndarray:
    theta_1, theta_2 = SYNTHETIC_PARAMETERS[level]
    return theta_1 * np.exp(-0.08 * x) - np.exp(theta_2 * x) - 0.1


def generate_synthetic(
    x_min: float = 0.0,
    x_max: float = 30.0,
    step: float = 0.5,
    levels: Sequence[str] = ("A", "B", "C", "D"),
    noise: float = 0.0,
    seed: int = 0,
) -> Dataset:
    """Sample f(x) = θ1·exp(−0.08·x) − exp(θ2·x) − 0.1 on a regular x grid for every level.

    With `noise` > 0 the targets get multiplicative Gaussian noise
    y·(1 + noise·N(0, 1)).
    """
    if not step > 0:
        raise DataError(f"Grid step must be > 0, got {step}")
    if x_max < x_min:
        raise DataError(f"Grid maximum {x_max} is below its minimum {x_min}")
    if noise < 0:
        raise DataError(f"Noise level must be >= 0, got {noise}")
    levels = list(levels)
    unknown = [level for level in levels if level not in SYNTHETIC_PARAMETERS]
    if unknown or not levels:
        raise DataError(
            f"Levels must be a non-empty subset of {list(SYNTHETIC_PARAMETERS)}, got {levels}"
        )

    count = int(np.floor((x_max - x_min) / step + 1e-9)) + 1
    grid = x_min + step * np.arange(count)
    x = np.tile(grid, len(levels))
    codes = np.repeat(np.arange(len(levels)), count)
    y = np.concatenate([synthetic_function(grid, level) for level in levels])
    if noise > 0:
        rng = np.random.default_rng(seed)
        y = y * (1.0 + noise * rng.standard_normal(len(y)))

    schema = Schema(
        (
            Column("x", ColumnKind.numeric),
            Column("c", ColumnKind.nominal, tuple(levels)),
            Column("y", ColumnKind.numeric),
        ),
        target="y",
    )
    return Dataset(schema, {"x": x, "c": codes, "y": y})
