"""Shared fixtures: the three-row factor example, the synthetic benchmark and small GP settings."""

import numpy as np
import pytest

from classes import GpConfig, LmConfig
from dataset import Column, ColumnKind, Dataset, Schema, generate_synthetic
from expr import BinaryOp, Constant, ExpressionTree, FactorVar, NumericVar, Operator, UnaryOp


@pytest.fixture
def example_schema() -> Schema:
    return Schema(
        (
            Column("x", ColumnKind.numeric),
            Column("c", ColumnKind.nominal, ("A", "B", "C")),
            Column("f", ColumnKind.numeric),
        ),
        target="f",
    )


def make_example_tree(schema: Schema) -> ExpressionTree:
    """c_{0,c} + x · c_{1,c} with c0 = (1, 2, 1.5) and c1 = (1, 2, 1)."""
    return ExpressionTree(
        BinaryOp(
            Operator.add,
            [
                FactorVar("c", [1.0, 2.0, 1.5]),
                BinaryOp(Operator.mul, [NumericVar("x"), FactorVar("c", [1.0, 2.0, 1.0])]),
            ],
        ),
        schema,
    )


@pytest.fixture
def example_tree(example_schema: Schema) -> ExpressionTree:
    return make_example_tree(example_schema)


@pytest.fixture
def example_dataset(example_schema: Schema) -> Dataset:
    return Dataset.from_rows(
        example_schema,
        [
            {"x": 3.0, "c": "A", "f": 4.0},
            {"x": 2.0, "c": "B", "f": 6.0},
            {"x": 1.0, "c": "C", "f": 2.5},
        ],
    )


@pytest.fixture(scope="session")
def synthetic() -> Dataset:
    return generate_synthetic()


def make_synthetic_tree(schema: Schema, theta_1, theta_2, rate: float = -0.08, offset: float = 0.1) -> ExpressionTree:
    """θ1[c] · exp(rate · x) − exp(θ2[c] · x) − offset, the generating structure of the benchmark."""
    return ExpressionTree(
        BinaryOp(
            Operator.sub,
            [
                BinaryOp(
                    Operator.sub,
                    [
                        BinaryOp(
                            Operator.mul,
                            [
                                FactorVar("c", theta_1),
                                UnaryOp(Operator.exp, [BinaryOp(Operator.mul, [Constant(rate), NumericVar("x")])]),
                            ],
                        ),
                        UnaryOp(Operator.exp, [BinaryOp(Operator.mul, [FactorVar("c", theta_2), NumericVar("x")])]),
                    ],
                ),
                Constant(offset),
            ],
        ),
        schema,
    )


@pytest.fixture
def small_config() -> GpConfig:
    return GpConfig(
        population_size=30,
        generations=3,
        max_tree_nodes=15,
        parallel_evaluation=False,
        lm=LmConfig(max_iterations=5),
    )


@pytest.fixture
def random_schema() -> Schema:
    return Schema(
        (
            Column("x", ColumnKind.numeric),
            Column("z", ColumnKind.numeric),
            Column("c", ColumnKind.nominal, ("A", "B", "C")),
            Column("m", ColumnKind.nominal, ("p", "q")),
            Column("y", ColumnKind.numeric),
        ),
        target="y",
    )


@pytest.fixture
def random_dataset(random_schema: Schema) -> Dataset:
    rng = np.random.default_rng(7)
    n = 40
    x = rng.uniform(0.1, 2.0, n)
    z = rng.uniform(0.1, 2.0, n)
    c = rng.integers(3, size=n)
    m = rng.integers(2, size=n)
    y = 0.5 + x * np.array([1.0, -0.5, 2.0])[c] + 0.3 * z * np.array([1.0, 2.0])[m]
    return Dataset(random_schema, {"x": x, "z": z, "c": c, "m": m, "y": y})
