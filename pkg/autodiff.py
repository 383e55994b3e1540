"""Forward-mode derivatives of a tree's output with respect to its parameters.

The parameter vector θ lists every constant and every factor level value in
depth-first, left-to-right order, factor levels in level-table order. One
pass over the tree evaluates all rows at once and carries, per node, a
sparse map from θ index to the column of partial derivatives.
"""
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from dataset import Dataset
from expr import (
    OPERATIONS,
    BinaryOp,
    Constant,
    ExpressionTree,
    FactorVar,
    NumericVar,
    Operator,
    StructuralError,
    UnaryOp,
    check_schema,
    iter_nodes,
)


class LayoutMismatchError(StructuralError):
    pass


@dataclass(frozen=True)
class Slot:
    position: int  # preorder index of the node
    level: Optional[int] = None  # level index for factor slots


@dataclass(frozen=True, eq=False)
class ParameterVector:
    values: np.ndarray
    layout: tuple[Slot, ...]

    def __len__(self) -> int:
        return len(self.layout)

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(self.layout),):
            raise LayoutMismatchError(f"Expected {len(self.layout)} parameters, got {values.shape}")
        return ParameterVector(values.copy(), self.layout)


@dataclass(frozen=True)
class DualValue:
    value: float
    grad: np.ndarray
    finite: bool


@dataclass(frozen=True, eq=False)
class Jacobian:
    values: np.ndarray  # (n,)
    matrix: np.ndarray  # (n, |θ|)
    finite: np.ndarray  # rows whose value and derivatives are all finite


def parameter_layout(tree: ExpressionTree) -> tuple[Slot, ...]:
    layout = []
    for position, node in enumerate(iter_nodes(tree.root)):
        if isinstance(node, Constant):
            layout.append(Slot(position))
        elif isinstance(node, FactorVar):
            layout.extend(Slot(position, level) for level in range(len(node.values)))
    return tuple(layout)


def extract_parameters(tree: ExpressionTree) -> ParameterVector:
    values = []
    for node in iter_nodes(tree.root):
        if isinstance(node, Constant):
            values.append(float(node.value))
        elif isinstance(node, FactorVar):
            values.extend(float(v) for v in node.values)
    return ParameterVector(np.array(values, dtype=np.float64), parameter_layout(tree))


def write_back(tree: ExpressionTree, theta: ParameterVector):
    """Store θ in the tree's constants and factor values, in place."""
    if theta.layout != parameter_layout(tree):
        raise LayoutMismatchError("Parameter layout doesn't match the tree")
    offset = 0
    for node in iter_nodes(tree.root):
        if isinstance(node, Constant):
            node.value = float(theta.values[offset])
            offset += 1
        elif isinstance(node, FactorVar):
            width = len(node.values)
            node.values = theta.values[offset : offset + width].copy()
            offset += width


def _theta_values(tree: ExpressionTree, theta) -> np.ndarray:
    if theta is None:
        return extract_parameters(tree).values
    if isinstance(theta, ParameterVector):
        if theta.layout != parameter_layout(tree):
            raise LayoutMismatchError("Parameter layout doesn't match the tree")
        return theta.values
    values = np.asarray(theta, dtype=np.float64)
    expected = len(parameter_layout(tree))
    if values.shape != (expected,):
        raise LayoutMismatchError(f"Expected {expected} parameters, got shape {values.shape}")
    return values


Gradient = dict[int, np.ndarray]


class _ForwardPass:
    """Evaluates a tree on a dataset with θ taken from `theta`, optionally with derivatives."""

    def __init__(self, dataset: Dataset, theta: np.ndarray, with_gradient: bool):
        self.dataset = dataset
        self.theta = theta
        self.with_gradient = with_gradient
        self.offset = 0
        self.factor_masks: dict[int, np.ndarray] = {}

    def run(self, node) -> tuple[np.ndarray, Gradient]:
        n = self.dataset.n_rows
        if isinstance(node, Constant):
            k = self.offset
            self.offset += 1
            value = np.full(n, self.theta[k], dtype=np.float64)
            return value, ({k: np.ones(n)} if self.with_gradient else {})

        if isinstance(node, NumericVar):
            return self.dataset.values(node.column), {}

        if isinstance(node, FactorVar):
            start = self.offset
            width = len(node.values)
            self.offset += width
            codes = self.dataset.values(node.column)
            value = self.theta[start : start + width][codes]
            grad = {}
            if self.with_gradient:
                for level in np.unique(codes):
                    mask = codes == level
                    self.factor_masks[start + int(level)] = mask
                    grad[start + int(level)] = mask.astype(np.float64)
            return value, grad

        if isinstance(node, UnaryOp):
            a, ga = self.run(node.children[0])
            value = OPERATIONS[node.op](a)
            if node.op == Operator.log:
                grad = {k: g / a for k, g in ga.items()}
            else:
                grad = {k: g * value for k, g in ga.items()}
            return value, grad

        if isinstance(node, BinaryOp):
            a, ga = self.run(node.children[0])
            b, gb = self.run(node.children[1])
            value = OPERATIONS[node.op](a, b)
            if not self.with_gradient:
                return value, {}
            if node.op == Operator.add:
                grad = _combine(ga, gb, lambda x, y: x + y, lambda x: x, lambda y: y)
            elif node.op == Operator.sub:
                grad = _combine(ga, gb, lambda x, y: x - y, lambda x: x, lambda y: -y)
            elif node.op == Operator.mul:
                grad = _combine(
                    ga, gb, lambda x, y: x * b + y * a, lambda x: x * b, lambda y: y * a
                )
            else:
                grad = _combine(
                    ga,
                    gb,
                    lambda x, y: (x - value * y) / b,
                    lambda x: x / b,
                    lambda y: -value * y / b,
                )
            return value, grad

        raise StructuralError(f"Unknown node {node!r}")


def _combine(ga: Gradient, gb: Gradient, both, left_only, right_only) -> Gradient:
    result = {}
    for k in ga.keys() | gb.keys():
        if k in ga and k in gb:
            result[k] = both(ga[k], gb[k])
        elif k in ga:
            result[k] = left_only(ga[k])
        else:
            result[k] = right_only(gb[k])
    return result


def evaluate_parameters(tree: ExpressionTree, dataset: Dataset, theta=None) -> np.ndarray:
    """Tree output on every row with θ substituted, the tree itself untouched."""
    check_schema(tree, dataset.schema)
    values = _theta_values(tree, theta)
    with np.errstate(all="ignore"):
        result, _ = _ForwardPass(dataset, values, with_gradient=False).run(tree.root)
    return np.array(result, dtype=np.float64)


def jacobian(tree: ExpressionTree, dataset: Dataset, theta=None) -> Jacobian:
    """Outputs and the n × |θ| matrix of partial derivatives.

    Factor-level columns are exactly 0 on rows of other levels.
    """
    check_schema(tree, dataset.schema)
    values = _theta_values(tree, theta)
    forward = _ForwardPass(dataset, values, with_gradient=True)
    with np.errstate(all="ignore"):
        output, grad = forward.run(tree.root)
        output = np.array(output, dtype=np.float64)
        matrix = np.zeros((dataset.n_rows, len(values)), dtype=np.float64)
        for k, column in grad.items():
            matrix[:, k] = column
        for k, mask in forward.factor_masks.items():
            matrix[~mask, k] = 0.0
        finite = np.isfinite(output) & np.all(np.isfinite(matrix), axis=1)
    return Jacobian(output, matrix, finite)


def evaluate_with_gradient(tree: ExpressionTree, row: Mapping, theta=None) -> DualValue:
    result = jacobian(tree, Dataset.from_rows(tree.schema, [row]), theta)
    return DualValue(float(result.values[0]), result.matrix[0].copy(), bool(result.finite[0]))
