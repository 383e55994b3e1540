"""Linear least-squares baseline and the error metrics every model is reported with."""
from dataclasses import asdict, dataclass
from typing import Optional
from logging import warning

import numpy as np
from scipy.linalg import qr, solve_triangular

from dataset import ColumnKind, DataError, Dataset, Schema
from expr import BinaryOp, Constant, ExpressionTree, NumericVar, Operator, evaluate_dataset
from utils import key_values_to_text


class MetricError(ValueError):
    pass


@dataclass(eq=False)
class LinearModel:
    coefficients: dict[str, float]  # one per input column, 0.0 for dropped columns
    intercept: Optional[float]  # None when fitted without one
    schema: Schema
    dropped: tuple[str, ...] = ()

    def to_tree(self) -> ExpressionTree:
        """intercept + b1·x1 + b2·x2 + ..., dropped columns left out."""
        terms = [
            BinaryOp(Operator.mul, [Constant(value), NumericVar(name)])
            for name, value in self.coefficients.items()
            if name not in self.dropped
        ]
        nodes = [Constant(self.intercept), *terms] if self.intercept is not None else terms
        if not nodes:
            return ExpressionTree(Constant(0.0), self.schema)
        root = nodes[0]
        for node in nodes[1:]:
            root = BinaryOp(Operator.add, [root, node])
        return ExpressionTree(root, self.schema)

    def predict(self, dataset: Dataset) -> np.ndarray:
        return evaluate_dataset(self.to_tree(), dataset)


def _reference_level_drops(schema: Schema, columns: list[str]) -> list[str]:
    groups: dict[str, list[str]] = {}
    for name in columns:
        source = schema.column(name).indicator_of
        if source is not None:
            groups.setdefault(source, []).append(name)
    return [members[-1] for members in groups.values()]


def fit_ols(dataset: Dataset, intercept: bool = True, rank_tolerance: float | None = None) -> LinearModel:
    """Least squares through a column-pivoted QR factorization.

    With an intercept the last indicator of every one-hot group is dropped
    (reference-level coding). Columns that are still linearly dependent get
    a zero coefficient and are reported.
    """
    schema = dataset.schema
    nominal = [c.name for c in schema.inputs if c.kind != ColumnKind.numeric]
    if nominal:
        raise DataError(f"OLS needs a numeric design, one-hot encode {nominal} first")
    columns = [c.name for c in schema.inputs]
    dropped = _reference_level_drops(schema, columns) if intercept else []
    if dropped:
        warning(f"Dropped reference indicator column(s) {dropped} (collinear with the intercept)")
    used = [name for name in columns if name not in dropped]

    n = dataset.n_rows
    p = len(used) + (1 if intercept else 0)
    if n <= p:
        raise DataError(f"OLS needs more rows than parameters ({n} rows, {p} parameters)")

    blocks = ([np.ones(n)] if intercept else []) + [dataset.values(name) for name in used]
    X = np.column_stack(blocks) if blocks else np.zeros((n, 0))
    y = dataset.target_values

    if X.shape[1] == 0:
        raise DataError("OLS needs at least one input column or an intercept")
    Q, R, pivot = qr(X, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(R))
    if rank_tolerance is None:
        rank_tolerance = max(X.shape) * np.finfo(float).eps * (diagonal[0] if len(diagonal) else 0.0)
    rank = int(np.sum(diagonal > rank_tolerance))
    beta = np.zeros(X.shape[1])
    if rank:
        beta[pivot[:rank]] = solve_triangular(R[:rank, :rank], Q[:, :rank].T @ y)

    labels = (["(intercept)"] if intercept else []) + used
    dependent = [labels[i] for i in pivot[rank:]]
    if dependent:
        warning(f"Dropped linearly dependent column(s) {dependent}")
    dropped = dropped + [name for name in dependent if name != "(intercept)"]

    offset = 1 if intercept else 0
    coefficients = {name: 0.0 for name in columns}
    for i, name in enumerate(used):
        coefficients[name] = float(beta[offset + i])
    return LinearModel(
        coefficients=coefficients,
        intercept=float(beta[0]) if intercept else None,
        schema=schema,
        dropped=tuple(dropped),
    )


@dataclass
class ErrorReport:
    mse: float
    rmse: float
    average_relative_error_percent: float
    r2: float
    row_count: int
    excluded_rows: int = 0  # rows with a zero target, left out of the relative error

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self, labels: dict | None = None) -> str:
        return key_values_to_text({**(labels or {}), **self.to_dict()})


def compute_errors(predictions, targets) -> ErrorReport:
    """MSE, RMSE, R² and the average relative error 100·mean(|ŷ − y| / |y|) over rows with y ≠ 0."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise MetricError(f"{len(predictions)} predictions for {len(targets)} targets")
    n = len(targets)
    if n == 0:
        raise MetricError("No rows to compute errors on")

    nonzero = targets != 0
    if not nonzero.any():
        raise MetricError("Every target is zero, the relative error is undefined")
    excluded = int(n - nonzero.sum())
    if excluded:
        warning(f"{excluded} row(s) with a zero target left out of the relative error")

    with np.errstate(all="ignore"):
        residuals = predictions - targets
        mse = float(np.mean(residuals**2))
        if not np.isfinite(mse):
            mse = float("inf")
        relative = 100.0 * float(np.mean(np.abs(residuals[nonzero]) / np.abs(targets[nonzero])))
        total = float(np.sum((targets - targets.mean()) ** 2))
        r2 = 1.0 - float(np.sum(residuals**2)) / total if total > 0 else float("nan")

    return ErrorReport(
        mse=mse,
        rmse=float(np.sqrt(mse)),
        average_relative_error_percent=relative,
        r2=r2,
        row_count=n,
        excluded_rows=excluded,
    )
