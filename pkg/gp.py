"""Tree-based genetic programming with memetic parameter fitting.

Every offspring gets its own random stream derived from (run seed,
generation, index), so results don't depend on how evaluation is scheduled.
"""
import asyncio
import math
import os
import time
from dataclasses import dataclass, field
from logging import debug, warning
from typing import Optional

import numpy as np
from strenum import StrEnum
from tqdm import tqdm

from baselines import ErrorReport, MetricError, compute_errors
from classes import GpConfig
from dataset import ColumnKind, Dataset, Schema
from expr import (
    ARITY,
    BinaryOp,
    Constant,
    ExpressionTree,
    FactorVar,
    Node,
    NumericVar,
    Operator,
    StructuralError,
    UnaryOp,
    copy_tree,
    count_nodes,
    evaluate_dataset,
    iter_nodes,
    make_operation,
    node_at,
    parameter_count,
    replace_subtree,
)
from optim import DegenerateFitError, LmResult, mse, refine

CROSSOVER_ATTEMPTS = 10


class MutationKind(StrEnum):
    constant = "constant"  # shift one constant
    factor_value = "factor_value"  # shift one level value of one factor
    factor_vector = "factor_vector"  # shift every level value of one factor
    subtree = "subtree"  # replace a subtree with a new random one
    function = "function"  # swap a function symbol for another of the same arity


@dataclass(eq=False)
class Individual:
    tree: ExpressionTree
    fitness: float = math.inf
    lm_stats: Optional[LmResult] = None


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_fitness: float
    median_fitness: float
    best_size: int
    mean_size: float


@dataclass(eq=False)
class RunReport:
    seed: int
    best: Individual
    history: list[GenerationStats] = field(default_factory=list)
    train_errors: Optional[ErrorReport] = None
    test_errors: Optional[ErrorReport] = None
    wall_time: float = 0.0


# ---------------------------------------------------------------- creation

def _terminal_choices(config: GpConfig, schema: Schema) -> list[tuple[str, Optional[str]]]:
    choices = []
    if config.use_constants:
        choices.append(("constant", None))
    if config.use_numeric_variables:
        choices.extend(("numeric", c.name) for c in schema.numeric_inputs)
    if config.use_factor_variables:
        choices.extend(("factor", c.name) for c in schema.nominal_inputs)
    return choices


def init_factor_terminal(schema: Schema, column: str, rng: np.random.Generator) -> FactorVar:
    """Factor terminal with one N(0, 1) value per level of `column`."""
    if schema.column(column).kind != ColumnKind.nominal:
        raise StructuralError(f"Column '{column}' is not nominal")
    return FactorVar(column, rng.standard_normal(len(schema.column(column).levels)))


def random_terminal(config: GpConfig, schema: Schema, rng: np.random.Generator) -> Node:
    choices = _terminal_choices(config, schema)
    if not choices:
        raise StructuralError("The terminal set is empty")
    kind, column = choices[rng.integers(len(choices))]
    if kind == "constant":
        return Constant(float(rng.uniform(config.constant_init_min, config.constant_init_max)))
    if kind == "numeric":
        return NumericVar(column)
    return init_factor_terminal(schema, column, rng)


def _random_node_ptc2(config: GpConfig, schema: Schema, target_size: int, rng) -> Node:
    """PTC2: grow from the root, expanding random open slots until the size target is met.

    A function is only placed when its arity still fits, so the result never
    exceeds `target_size`.
    """
    functions = [Operator(name) for name in config.function_set]

    def pick_function(room: int) -> Optional[Operator]:
        fitting = [op for op in functions if ARITY[op] <= room]
        return fitting[rng.integers(len(fitting))] if fitting else None

    if target_size <= 1:
        return random_terminal(config, schema, rng)
    op = pick_function(target_size - 1)
    if op is None:
        return random_terminal(config, schema, rng)

    root = make_operation(op, [None] * ARITY[op])
    open_slots = [(root, i) for i in range(ARITY[op])]
    total = 1 + ARITY[op]  # size if every open slot became a terminal

    while open_slots and total < target_size:
        op = pick_function(target_size - total)
        if op is None:
            break
        parent, index = open_slots.pop(rng.integers(len(open_slots)))
        node = make_operation(op, [None] * ARITY[op])
        parent.children[index] = node
        open_slots.extend((node, i) for i in range(ARITY[op]))
        total += ARITY[op]

    for parent, index in open_slots:
        parent.children[index] = random_terminal(config, schema, rng)
    return root


def random_tree_ptc2(
    config: GpConfig, schema: Schema, target_size: int, rng: np.random.Generator
) -> ExpressionTree:
    if target_size > config.max_tree_nodes:
        raise StructuralError(f"Target size {target_size} exceeds max_tree_nodes={config.max_tree_nodes}")
    return ExpressionTree(_random_node_ptc2(config, schema, target_size, rng), schema)


# ---------------------------------------------------------------- variation

def _applicable_mutations(tree: ExpressionTree, config: GpConfig) -> list[MutationKind]:
    nodes = list(iter_nodes(tree.root))
    kinds = []
    if any(isinstance(n, Constant) for n in nodes):
        kinds.append(MutationKind.constant)
    if any(isinstance(n, FactorVar) for n in nodes):
        kinds.extend([MutationKind.factor_value, MutationKind.factor_vector])
    kinds.append(MutationKind.subtree)
    if any(_alternative_functions(n, config) for n in nodes):
        kinds.append(MutationKind.function)
    return kinds


def _alternative_functions(node: Node, config: GpConfig) -> list[Operator]:
    if not isinstance(node, (BinaryOp, UnaryOp)):
        return []
    return [
        Operator(name)
        for name in config.function_set
        if ARITY[Operator(name)] == ARITY[node.op] and Operator(name) != node.op
    ]


def _pick(nodes: list, rng: np.random.Generator):
    return nodes[rng.integers(len(nodes))]


def mutate(
    tree: ExpressionTree,
    config: GpConfig,
    rng: np.random.Generator,
    kind: MutationKind | str | None = None,
) -> ExpressionTree:
    """A mutated copy of `tree`; one mutation, chosen uniformly among the applicable kinds.

    A requested `kind` that has no site in the tree leaves the copy unchanged.
    """
    applicable = _applicable_mutations(tree, config)
    if kind is None:
        kind = _pick(applicable, rng)
    kind = MutationKind(kind)
    child = copy_tree(tree)
    if kind not in applicable:
        return child

    nodes = list(iter_nodes(child.root))
    sigma = config.factor_mutation_sigma

    if kind == MutationKind.constant:
        node = _pick([n for n in nodes if isinstance(n, Constant)], rng)
        node.value = float(node.value + rng.normal(0.0, sigma))
    elif kind == MutationKind.factor_value:
        node = _pick([n for n in nodes if isinstance(n, FactorVar)], rng)
        values = node.values.copy()
        values[rng.integers(len(values))] += rng.normal(0.0, sigma)
        node.values = values
    elif kind == MutationKind.factor_vector:
        node = _pick([n for n in nodes if isinstance(n, FactorVar)], rng)
        node.values = node.values + rng.normal(0.0, sigma, size=len(node.values))
    elif kind == MutationKind.function:
        node = _pick([n for n in nodes if _alternative_functions(n, config)], rng)
        node.op = _pick(_alternative_functions(node, config), rng)
    else:
        position = int(rng.integers(len(nodes)))
        room = config.max_tree_nodes - (len(nodes) - count_nodes(nodes[position]))
        target = int(rng.integers(1, max(room, 1) + 1))
        subtree = _random_node_ptc2(config, child.schema, target, rng)
        child = replace_subtree(child, position, subtree, max_nodes=config.max_tree_nodes)
    return child


def crossover(
    parent_a: ExpressionTree,
    parent_b: ExpressionTree,
    config: GpConfig,
    rng: np.random.Generator,
) -> ExpressionTree:
    """Parent A with one random subtree replaced by a random subtree of parent B.

    Falls back to a copy of parent A when no size-respecting pair is found.
    """
    if parent_a.schema != parent_b.schema:
        raise StructuralError("Crossover parents were built against different schemas")
    size_a, size_b = parent_a.size, parent_b.size
    for _ in range(CROSSOVER_ATTEMPTS):
        position_a = int(rng.integers(size_a))
        donor = node_at(parent_b, int(rng.integers(size_b)))
        removed = count_nodes(node_at(parent_a, position_a))
        if size_a - removed + count_nodes(donor) <= config.max_tree_nodes:
            return replace_subtree(parent_a, position_a, donor)
    return copy_tree(parent_a)


def tournament(population: list[Individual], size: int, rng: np.random.Generator) -> Individual:
    """Best of `size` draws with replacement; ties go to the earliest draw."""
    best = None
    for index in rng.integers(len(population), size=size):
        candidate = population[index]
        if best is None or candidate.fitness < best.fitness:
            best = candidate
    return best


# ---------------------------------------------------------------- evaluation

def evaluate_individual(tree: ExpressionTree, train: Dataset, config: GpConfig) -> Individual:
    """Refine the tree's parameters in place (when memetic), then score it by training MSE."""
    lm_stats = None
    if config.memetic and parameter_count(tree) > 0:
        try:
            lm_stats = refine(tree, train, config.lm)
        except DegenerateFitError as e:
            debug(f"Degenerate fit: {e}")
            return Individual(tree, math.inf)
    fitness = mse(tree, train)
    if not math.isfinite(fitness):
        fitness = math.inf
    return Individual(tree, fitness, lm_stats)


async def _evaluate_batch(trees: list[ExpressionTree], train: Dataset, config: GpConfig) -> list[Individual]:
    tasks = []

    for tree in trees:
        tasks.append(asyncio.to_thread(evaluate_individual, tree, train, config))

    return await asyncio.gather(*tasks)


def evaluate_population(trees: list[ExpressionTree], train: Dataset, config: GpConfig) -> list[Individual]:
    if config.parallel_evaluation and len(trees) > 1 and (os.cpu_count() or 1) > 1:
        return list(asyncio.run(_evaluate_batch(trees, train, config)))
    return [evaluate_individual(tree, train, config) for tree in trees]


# ---------------------------------------------------------------- generational loop

def _best(population: list[Individual]) -> Individual:
    best = population[0]
    for individual in population[1:]:
        if individual.fitness < best.fitness:
            best = individual
    return best


def _stats(generation: int, population: list[Individual]) -> GenerationStats:
    best = _best(population)
    sizes = [ind.tree.size for ind in population]
    return GenerationStats(
        generation=generation,
        best_fitness=best.fitness,
        median_fitness=float(np.median([ind.fitness for ind in population])),
        best_size=best.tree.size,
        mean_size=float(np.mean(sizes)),
    )


def _errors(tree: ExpressionTree, dataset: Optional[Dataset]) -> Optional[ErrorReport]:
    if dataset is None:
        return None
    try:
        return compute_errors(evaluate_dataset(tree, dataset), dataset.target_values)
    except MetricError as e:
        warning(f"No error report: {e}")
        return None


def individual_rng(seed: int, generation: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, generation, index])


def evolve(
    config: GpConfig,
    train: Dataset,
    seed: Optional[int] = None,
    test: Optional[Dataset] = None,
) -> RunReport:
    """Generational GP with elitism, tournament selection and memetic evaluation.

    Returns the best individual on the training data together with the
    per-generation history. `test` is only used for the final error report.
    """
    config.validate()
    if train.n_rows == 0:
        raise ValueError("Training data is empty")
    seed = config.rng_seed if seed is None else seed
    started = time.perf_counter()

    trees = []
    for index in range(config.population_size):
        rng = individual_rng(seed, 0, index)
        target = int(rng.integers(1, config.max_tree_nodes + 1))
        trees.append(random_tree_ptc2(config, train.schema, target, rng))
    population = evaluate_population(trees, train, config)
    history = [_stats(0, population)]
    best = _best(population)

    generations = tqdm(
        range(1, config.generations + 1), desc="generations", disable=not config.progress
    )
    for generation in generations:
        if config.target_fitness is not None and best.fitness <= config.target_fitness:
            debug(f"Target fitness reached after {generation - 1} generations")
            break

        ranked = sorted(range(len(population)), key=lambda i: population[i].fitness)
        elites = [population[i] for i in ranked[: config.elitism]]

        offspring = []
        for index in range(config.population_size - config.elitism):
            rng = individual_rng(seed, generation, index)
            parent = tournament(population, config.tournament_size, rng)
            if rng.random() < config.crossover_probability:
                other = tournament(population, config.tournament_size, rng)
                child = crossover(parent.tree, other.tree, config, rng)
            else:
                child = copy_tree(parent.tree)
            if rng.random() < config.mutation_probability:
                child = mutate(child, config, rng)
            offspring.append(child)

        population = elites + evaluate_population(offspring, train, config)
        best = _best(population)
        stats = _stats(generation, population)
        history.append(stats)
        generations.set_postfix(best=f"{best.fitness:.4g}")
        debug(f"Generation {generation}: best {stats.best_fitness:.6g} ({stats.best_size} nodes)")

    return RunReport(
        seed=seed,
        best=best,
        history=history,
        train_errors=_errors(best.tree, train),
        test_errors=_errors(best.tree, test),
        wall_time=time.perf_counter() - started,
    )
