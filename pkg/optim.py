"""Budgeted Levenberg-Marquardt refinement of tree parameters."""
from dataclasses import dataclass
from logging import debug

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from autodiff import ParameterVector, evaluate_parameters, extract_parameters, jacobian, write_back
from classes import LmConfig
from dataset import Dataset
from expr import ExpressionTree, evaluate_dataset


class DegenerateFitError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class LmResult:
    theta: ParameterVector
    sse_before: float
    sse_after: float
    iterations_used: int
    accepted: bool
    skipped_rows: int


def _sum_of_squares(predictions: np.ndarray, targets: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        residuals = predictions - targets
        if not np.all(np.isfinite(residuals)):
            return float("inf")
        total = float(np.dot(residuals, residuals))
    return total if np.isfinite(total) else float("inf")


def sse(tree: ExpressionTree, dataset: Dataset) -> float:
    """Σ (f(x) − y)², +inf when any row is non-finite."""
    return _sum_of_squares(evaluate_dataset(tree, dataset), dataset.target_values)


def mse(tree: ExpressionTree, dataset: Dataset) -> float:
    if dataset.n_rows == 0:
        return float("inf")
    return sse(tree, dataset) / dataset.n_rows


def refine(tree: ExpressionTree, dataset: Dataset, config: LmConfig | None = None) -> LmResult:
    """Run at most `config.max_iterations` damped Gauss-Newton attempts on the tree's θ.

    Every attempt counts, accepted or not. Candidates are evaluated without
    touching the tree; θ is written back only when the final SSE is lower
    than the initial one. Rows with non-finite outputs or derivatives are
    left out of the normal equations.

    Raises:
        DegenerateFitError: no row can be used (the tree is left untouched)
    """
    config = (config or LmConfig()).validate()
    initial = extract_parameters(tree)
    n = dataset.n_rows
    if n == 0:
        raise DegenerateFitError("Can't fit parameters on an empty dataset")
    targets = dataset.target_values
    sse_before = sse(tree, dataset)

    if len(initial) == 0:
        return LmResult(initial, sse_before, sse_before, 0, False, 0)

    theta = initial.values.copy()
    current = sse_before
    damping = config.initial_damping
    iterations = 0
    skipped = 0
    normal_equations = None

    while iterations < config.max_iterations:
        if normal_equations is None:
            linearization = jacobian(tree, dataset, theta)
            with np.errstate(all="ignore"):
                residuals = linearization.values - targets
            usable = linearization.finite & np.isfinite(residuals)
            skipped = int(n - usable.sum())
            if skipped == n:
                if iterations == 0:
                    raise DegenerateFitError(f"All {n} rows have non-finite outputs or derivatives")
                break
            if skipped > config.degenerate_row_fraction * n:
                debug(f"LM stopped: {skipped} of {n} rows are non-finite")
                break
            if skipped:
                debug(f"LM skipped {skipped} of {n} rows")
            J = linearization.matrix[usable]
            r = residuals[usable]
            JtJ = J.T @ J
            gradient = J.T @ r
            diagonal = np.diag(JtJ).copy()
            if not np.all(diagonal > 0):
                diagonal = np.ones_like(diagonal)
            normal_equations = (JtJ, gradient, diagonal)

        iterations += 1
        JtJ, gradient, diagonal = normal_equations
        try:
            step = cho_solve(cho_factor(JtJ + damping * np.diag(diagonal)), -gradient)
        except (LinAlgError, ValueError):
            step = None

        if step is not None and np.all(np.isfinite(step)):
            candidate = theta + step
            candidate_sse = _sum_of_squares(evaluate_parameters(tree, dataset, candidate), targets)
            if candidate_sse < current:
                theta, current = candidate, candidate_sse
                damping = max(damping * config.damping_down, np.finfo(float).tiny)
                normal_equations = None
                if np.linalg.norm(step) <= config.min_step_tolerance * (
                    np.linalg.norm(theta) + config.min_step_tolerance
                ):
                    break
                continue

        damping *= config.damping_up
        if damping > config.max_damping:
            debug(f"LM gave up at damping {damping:.3g}")
            break

    if current < sse_before:
        final = initial.with_values(theta)
        write_back(tree, final)
        return LmResult(final, sse_before, current, iterations, True, skipped)
    return LmResult(initial, sse_before, sse_before, iterations, False, skipped)
