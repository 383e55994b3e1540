import logging
import sys
from pathlib import Path

import click

from baselines import MetricError
from classes import ConfigError, CsvOptions, FitMode, PdpSpec, SplitSpec, SplitStrategy
from dataset import DataError, generate_synthetic, load_csv, load_csv_with_schema, save_csv
from experiment import (
    SavedModel,
    describe_model,
    fit_model,
    load_report,
    partial_dependence,
    report_table,
    save_report,
)
from expr import ExpressionError
from optim import DegenerateFitError
from resources_paths import MODELS_PATH, ONEHOT_SETTINGS_PATH, SETTINGS_PATH
from utils import bcolors, ensure_dirs_exist

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_CONFIGS = {FitMode.factor: SETTINGS_PATH, FitMode.onehot: ONEHOT_SETTINGS_PATH}


def _split_list(ctx, param, value):
    if value is None:
        return None
    items = [item.strip() for item in value.split(",") if item.strip()]
    if not items:
        raise click.BadParameter("expected a comma-separated list")
    return items


def _assignments(values, convert=str) -> dict:
    result = {}
    for entry in values:
        name, sep, value = entry.partition("=")
        if not sep or not name:
            raise click.BadParameter(f"expected COLUMN=VALUE, got {entry!r}")
        try:
            result[name] = convert(value)
        except ValueError:
            raise click.BadParameter(f"{entry!r}: {value!r} is not a number") from None
    return result


def _status(message: str):
    click.echo(f"{bcolors.OKGREEN}{message}{bcolors.ENDC}", err=True)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log debug messages.")
def cli(verbose):
    """Symbolic regression with factor variables for nominal inputs."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )


@cli.command()
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--x-min", default=0.0, show_default=True)
@click.option("--x-max", default=30.0, show_default=True)
@click.option("--step", default=0.5, show_default=True, type=click.FloatRange(min=0.0, min_open=True))
@click.option("--levels", default="A,B,C,D", show_default=True, callback=_split_list)
@click.option("--noise", default=0.0, show_default=True, type=click.FloatRange(min=0.0),
              help="Multiplicative Gaussian noise level.")
@click.option("--seed", default=0, show_default=True)
def synth(output, x_min, x_max, step, levels, noise, seed):
    """Write the synthetic benchmark f(x, c) sampled on a regular grid."""
    dataset = generate_synthetic(x_min, x_max, step, levels, noise, seed)
    ensure_dirs_exist([output.parent])
    save_csv(dataset, output)
    _status(f"Wrote {dataset.n_rows} rows to {output}")


@cli.command()
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--mode", type=click.Choice([m.value for m in FitMode]), default=FitMode.factor.value,
              show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="GP settings file (default: settings.yaml, or data/configs/onehot.yaml for onehot).")
@click.option("--seed", default=0, show_default=True)
@click.option("--runs", default=1, show_default=True, type=click.IntRange(min=1),
              help="Independent runs with seeds seed, seed+1, ...; the best on training data is kept.")
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path),
              help="Model file (default: data/models/<mode>.yaml).")
@click.option("--report-dir", type=click.Path(file_okay=False, path_type=Path),
              help="Where the train/test reports go (default: next to the model).")
@click.option("--name", help="Model name used in the reports (default: the mode).")
@click.option("--target", help="Target column (default: last column).")
@click.option("--delimiter", default=",", show_default=True)
@click.option("--train-fraction", default=0.75, show_default=True,
              type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True))
@click.option("--split", "split_strategy", type=click.Choice([s.value for s in SplitStrategy]),
              default=SplitStrategy.stratified.value, show_default=True)
@click.option("--split-seed", default=0, show_default=True)
@click.option("--scale/--no-scale", default=False, show_default=True,
              help="Scale numeric inputs to [0, 1] before fitting.")
def fit(data, mode, config_path, seed, runs, output, report_dir, name, target, delimiter,
        train_fraction, split_strategy, split_seed, scale):
    """Fit a model (factor, onehot or linear) and write it with its reports."""
    mode = FitMode(mode)
    if config_path is None and mode in DEFAULT_CONFIGS:
        config_path = DEFAULT_CONFIGS[mode]
    dataset = load_csv(data, CsvOptions(target=target, delimiter=delimiter))
    split_spec = SplitSpec(train_fraction=train_fraction, strategy=split_strategy, seed=split_seed)

    result = fit_model(
        dataset,
        mode=mode,
        config_path=config_path,
        seed=seed,
        runs=runs,
        split_spec=split_spec,
        scale=scale,
        name=name,
        progress=True,
    )

    output = output or MODELS_PATH / f"{mode.value}.yaml"
    report_dir = report_dir or output.parent
    ensure_dirs_exist([output.parent, report_dir])
    result.model.save(output)
    for split_name in ("train", "test"):
        save_report(report_dir / f"{output.stem}.{split_name}.report", result.report_text(split_name))

    click.echo(result.model.model_text, nl=False)
    for split_name, report in (("train", result.train_report), ("test", result.test_report)):
        click.echo(
            f"{split_name}: mse={report.mse:.6g} r2={report.r2:.6f} "
            f"avg_rel_error={report.average_relative_error_percent:.2f}%"
        )
    _status(f"Saved {mode.value} model to {output}")


@cli.command()
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path),
              help="Output CSV (default: standard output).")
@click.option("--column", default="prediction", show_default=True, help="Name of the appended column.")
@click.option("--delimiter", default=",", show_default=True)
def predict(model_path, data, output, column, delimiter):
    """Append model predictions to a CSV file."""
    model = SavedModel.load(model_path)
    dataset = load_csv_with_schema(data, model.schema, delimiter=delimiter)
    predictions = model.predict(dataset)
    if output is None:
        save_csv(dataset, sys.stdout, extra={column: predictions})
    else:
        ensure_dirs_exist([output.parent])
        save_csv(dataset, output, extra={column: predictions})
        _status(f"Wrote {len(predictions)} predictions to {output}")


@cli.command()
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--sweep", "sweep_column", default="x", show_default=True)
@click.option("--grid-points", default=50, show_default=True, type=click.IntRange(min=2))
@click.option("--min", "sweep_min", type=float, help="Grid start (default: training minimum).")
@click.option("--max", "sweep_max", type=float, help="Grid end (default: training maximum).")
@click.option("--fixed", multiple=True, help="COLUMN=VALUE for another numeric input (default: training median).")
@click.option("--nominal", "nominal_column", help="Nominal input giving one curve per level.")
@click.option("--levels", callback=_split_list, help="Comma-separated levels (default: all).")
@click.option("--fixed-level", multiple=True, help="COLUMN=LEVEL for another nominal input.")
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path),
              help="Output CSV (default: standard output).")
def pdp(model_path, sweep_column, grid_points, sweep_min, sweep_max, fixed, nominal_column, levels,
        fixed_level, output):
    """Partial dependence grid: (level, sweep value, prediction) rows."""
    spec = PdpSpec(
        sweep_column=sweep_column,
        grid_points=grid_points,
        sweep_min=sweep_min,
        sweep_max=sweep_max,
        fixed_values=_assignments(fixed, float),
        nominal_column=nominal_column,
        levels=levels,
        fixed_levels=_assignments(fixed_level),
    )
    frame = partial_dependence(SavedModel.load(model_path), spec)
    if output is None:
        frame.to_csv(sys.stdout, index=False, lineterminator="\n")
    else:
        ensure_dirs_exist([output.parent])
        frame.to_csv(output, index=False, lineterminator="\n")
        _status(f"Wrote {len(frame)} grid rows to {output}")


@cli.command()
@click.argument("reports", nargs=-1, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--external", multiple=True, help="Externally computed row, NAME=AVG_REL_ERROR_PERCENT.")
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path))
def report(reports, external, output):
    """Merge report files into one table."""
    table = report_table([load_report(path) for path in reports], external)
    if output is None:
        click.echo(table, nl=False)
    else:
        ensure_dirs_exist([output.parent])
        save_report(output, table)


@cli.command()
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def inspect(model_path):
    """Show a saved model, its parameter tables and level distances."""
    click.echo(describe_model(SavedModel.load(model_path)), nl=False)


def _fail(message: str, code: int) -> int:
    click.echo(f"{bcolors.FAIL}Error: {message}{bcolors.ENDC}", err=True)
    return code


def main(argv=None) -> int:
    try:
        result = cli.main(args=argv, prog_name="factor-sr", standalone_mode=False)
    except click.exceptions.Abort:
        return _fail("aborted", EXIT_USAGE)
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except ConfigError as e:
        return _fail(str(e), EXIT_USAGE)
    except (DataError, MetricError, ExpressionError) as e:
        return _fail(str(e), EXIT_DATA)
    except (DegenerateFitError, ArithmeticError) as e:
        return _fail(str(e), EXIT_NUMERIC)
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
