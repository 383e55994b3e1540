"""Fitting pipeline, saved models, partial dependence grids and report tables.

Ties the library modules together the way the command line uses them:
data is optionally scaled, split, expanded to indicators for the one-hot
and linear modes, and the chosen model is stored together with everything
needed to apply it to new raw files.
"""
from dataclasses import dataclass, field
from logging import info, warning
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from baselines import ErrorReport, compute_errors, fit_ols
from classes import FitMode, GpConfig, PdpSpec, SplitSpec
from dataset import (
    DataError,
    Dataset,
    ScalingRecord,
    Schema,
    UnseenLevelError,
    apply_scaling,
    one_hot,
    one_hot_schema,
    scale_unit,
    split,
)
from expr import (
    ExpressionTree,
    FactorVar,
    evaluate_dataset,
    factor_similarity,
    iter_nodes,
    parameter_count,
    parse_model,
    render,
    variables_used,
)
from gp import RunReport, evolve
from utils import key_values_from_text, load_yaml, save_yaml_from_data

MODEL_FORMAT_VERSION = 1


@dataclass(eq=False)
class SavedModel:
    mode: str
    schema: Schema  # raw columns, as read from the training file
    model_text: str
    one_hot_columns: list[str] = field(default_factory=list)
    scaling: dict[str, ScalingRecord] = field(default_factory=dict)
    summary: dict[str, dict[str, float]] = field(default_factory=dict)  # raw units
    config: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def model_schema(self) -> Schema:
        if self.one_hot_columns:
            return one_hot_schema(self.schema, self.one_hot_columns)
        return self.schema

    def tree(self) -> ExpressionTree:
        return parse_model(self.model_text, self.model_schema)

    def prepare(self, dataset: Dataset) -> Dataset:
        """Raw data → the representation the model was fitted on."""
        prepared = apply_scaling(dataset, self.scaling)
        if self.one_hot_columns:
            prepared = one_hot(prepared, self.one_hot_columns)
        return prepared

    def predict(self, dataset: Dataset) -> np.ndarray:
        return evaluate_dataset(self.tree(), self.prepare(dataset))

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT_VERSION,
            "mode": self.mode,
            "seed": self.seed,
            "schema": self.schema.to_dict(),
            "one_hot_columns": list(self.one_hot_columns),
            "scaling": {name: record.to_dict() for name, record in self.scaling.items()},
            "summary": self.summary,
            "model": self.model_text,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SavedModel":
        try:
            return cls(
                mode=FitMode(data["mode"]).value,
                schema=Schema.from_dict(data["schema"]),
                model_text=data["model"],
                one_hot_columns=list(data.get("one_hot_columns") or []),
                scaling={
                    name: ScalingRecord.from_dict(record)
                    for name, record in (data.get("scaling") or {}).items()
                },
                summary=data.get("summary") or {},
                config=data.get("config") or {},
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Malformed model file: {e!r}") from e

    def save(self, path: Path | str):
        save_yaml_from_data(Path(path), self.to_dict())

    @classmethod
    def load(cls, path: Path | str) -> "SavedModel":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"Model file {path} doesn't exist")
        data = load_yaml(path)
        if not isinstance(data, dict):
            raise DataError(f"{path} is not a model file")
        return cls.from_dict(data)


@dataclass(eq=False)
class FitResult:
    model: SavedModel
    tree: ExpressionTree
    train_report: ErrorReport
    test_report: ErrorReport
    labels: dict
    runs: list[RunReport] = field(default_factory=list)

    def report_text(self, split_name: str) -> str:
        report = self.train_report if split_name == "train" else self.test_report
        return report.to_text({**self.labels, "split": split_name})


def fit_model(
    data: Dataset,
    mode: FitMode | str = FitMode.factor,
    config_path: Path | str | None = None,
    seed: int = 0,
    runs: int = 1,
    split_spec: SplitSpec | None = None,
    scale: bool = False,
    name: str | None = None,
    progress: bool = False,
) -> FitResult:
    """Split `data`, fit one model with `mode` and evaluate it on both sides of the split.

    GP modes run `runs` seeds (seed, seed+1, ...) and keep the best on
    training fitness. Runs after the first one that reaches
    `target_fitness` are skipped.
    """
    mode = FitMode(mode)
    raw_schema = data.schema
    if scale:
        data = scale_unit(data)
    train, test = split(data, split_spec)
    one_hot_columns = [] if mode == FitMode.factor else [c.name for c in raw_schema.nominal_inputs]
    if one_hot_columns:
        train, test = one_hot(train, one_hot_columns), one_hot(test, one_hot_columns)

    run_reports = []
    if mode == FitMode.linear:
        tree = fit_ols(train).to_tree()
        config = {"intercept": True}
        chosen_seed = seed
    else:
        gp_config = GpConfig.for_mode(mode, config_path)
        gp_config.progress = progress
        for run in range(runs):
            report = evolve(gp_config, train, seed=seed + run, test=test)
            run_reports.append(report)
            info(
                f"Run {run + 1}/{runs} (seed {report.seed}): train MSE {report.best.fitness:.6g}, "
                f"test MSE {report.test_errors.mse if report.test_errors else float('nan'):.6g}"
            )
            if gp_config.target_fitness is not None and report.best.fitness <= gp_config.target_fitness:
                info(f"Target fitness {gp_config.target_fitness:g} reached, skipping the remaining runs")
                break
        best = min(run_reports, key=lambda r: r.best.fitness)
        tree = best.best.tree
        chosen_seed = best.seed
        config = gp_config.as_dict()
        config.pop("progress", None)

    summary = {c.name: train.summary(c.name) for c in raw_schema.numeric_inputs}
    model = SavedModel(
        mode=mode.value,
        schema=raw_schema,
        model_text=render(tree).to_text(),
        one_hot_columns=one_hot_columns,
        scaling=dict(data.scaling),
        summary=summary,
        config=config,
        seed=chosen_seed,
    )
    labels = {
        "name": name or mode.value,
        "mode": mode.value,
        "nodes": tree.size,
        "parameters": parameter_count(tree),
    }
    return FitResult(
        model=model,
        tree=tree,
        train_report=compute_errors(evaluate_dataset(tree, train), train.target_values),
        test_report=compute_errors(evaluate_dataset(tree, test), test.target_values),
        labels=labels,
        runs=run_reports,
    )


def partial_dependence(model: SavedModel, spec: PdpSpec | None = None) -> pd.DataFrame:
    """Model output over a grid of one numeric input, one curve per level.

    Other numeric inputs stay at their training median (or `fixed_values`),
    other nominal inputs at their first level (or `fixed_levels`).
    """
    spec = (spec or PdpSpec()).validate()
    schema = model.schema
    numeric = {c.name: c for c in schema.numeric_inputs}
    nominal = {c.name: c for c in schema.nominal_inputs}
    if spec.sweep_column not in numeric:
        raise DataError(f"Sweep column '{spec.sweep_column}' is not a numeric input")
    unknown = (set(spec.fixed_values) - set(numeric)) | (set(spec.fixed_levels) - set(nominal))
    if unknown:
        raise DataError(f"Fixed value(s) for unknown column(s) {sorted(unknown)}")

    summary = model.summary.get(spec.sweep_column, {})
    low = spec.sweep_min if spec.sweep_min is not None else summary.get("min")
    high = spec.sweep_max if spec.sweep_max is not None else summary.get("max")
    if low is None or high is None:
        raise DataError(f"No training range stored for '{spec.sweep_column}', give sweep_min/sweep_max")
    if low > high:
        raise DataError(f"Sweep range {low}..{high} is empty")
    grid = np.linspace(low, high, spec.grid_points)

    curve_column = spec.nominal_column or (next(iter(nominal)) if nominal else None)
    if curve_column is not None and curve_column not in nominal:
        raise DataError(f"'{curve_column}' is not a nominal input")
    if curve_column is None:
        levels = [None]
    else:
        levels = list(spec.levels) if spec.levels else list(nominal[curve_column].levels)
        unseen = [level for level in levels if level not in nominal[curve_column].levels]
        if unseen:
            raise UnseenLevelError(curve_column, unseen, [])

    fixed = {}
    for name in numeric:
        if name != spec.sweep_column:
            fixed[name] = spec.fixed_values.get(name, model.summary.get(name, {}).get("median", 0.0))
    for name, column in nominal.items():
        if name != curve_column:
            fixed[name] = spec.fixed_levels.get(name, column.levels[0])

    rows = []
    for level in levels:
        for value in grid:
            row = {**fixed, spec.sweep_column: float(value)}
            if curve_column is not None:
                row[curve_column] = level
            rows.append(row)
    predictions = model.predict(Dataset.from_rows(schema, rows))

    return pd.DataFrame(
        {
            "level": [level if level is not None else "" for level in levels for _ in grid],
            spec.sweep_column: np.tile(grid, len(levels)),
            "prediction": predictions,
        }
    )


REPORT_COLUMNS = ["name", "mode", "split", "mse", "rmse", "avg_rel_error_%", "r2", "rows"]


def load_report(path: Path | str) -> dict[str, str]:
    path = Path(path)
    try:
        return key_values_from_text(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise DataError(f"Can't read report {path}: {e}") from e


def save_report(path: Path | str, text: str):
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def parse_external(entry: str) -> dict[str, str]:
    """`Name=2.86` → a report row with only the average relative error."""
    name, sep, value = entry.rpartition("=")
    if not sep or not name:
        raise DataError(f"External row must look like 'Name=2.86', got {entry!r}")
    try:
        float(value)
    except ValueError:
        raise DataError(f"External row {entry!r}: {value!r} is not a number") from None
    return {"name": name, "mode": "external", "average_relative_error_percent": value}


def _cell(row: dict, key: str, fmt: str) -> str:
    if key not in row:
        return "-"
    try:
        return format(float(row[key]), fmt)
    except ValueError:
        return str(row[key])


def report_table(reports: Iterable[dict], external: Iterable[str] = ()) -> str:
    """Aligned text table of report rows (as read by `load_report`) and external rows."""
    rows = list(reports) + [parse_external(entry) for entry in external]
    if not rows:
        warning("No reports given, the table is empty")
        return "  ".join(REPORT_COLUMNS) + "\n"

    frame = pd.DataFrame(
        {
            "name": [row.get("name", "-") for row in rows],
            "mode": [row.get("mode", "-") for row in rows],
            "split": [row.get("split", "-") for row in rows],
            "mse": [_cell(row, "mse", ".6g") for row in rows],
            "rmse": [_cell(row, "rmse", ".6g") for row in rows],
            "avg_rel_error_%": [_cell(row, "average_relative_error_percent", ".2f") for row in rows],
            "r2": [_cell(row, "r2", ".6f") for row in rows],
            "rows": [row.get("row_count", "-") for row in rows],
        },
        columns=REPORT_COLUMNS,
    )
    return frame.to_string(index=False) + "\n"


def describe_model(model: SavedModel) -> str:
    tree = model.tree()
    rendered = render(tree)
    lines = [
        f"mode: {model.mode}",
        f"model: {rendered.pretty()}",
        *rendered.parameter_lines(),
        f"variables: {', '.join(sorted(variables_used(tree))) or '-'}",
        f"nodes: {tree.size}",
        f"parameters: {parameter_count(tree)}",
    ]
    factor_columns = sorted({n.column for n in iter_nodes(tree.root) if isinstance(n, FactorVar)})
    for column in factor_columns:
        lines.append(f"level distances for {column}:")
        lines.append(factor_similarity(tree, column).round(6).to_string())
    return "\n".join(lines) + "\n"
