"""Expression trees with factor-variable terminals.

A factor variable is a terminal bound to a nominal column that holds one
numeric value per level; evaluating it looks up the value of the row's level.
Division, log and exp are unprotected: non-finite results propagate and are
penalized by the fitness layer.

Models are persisted in a small text grammar:

    expression  := term (("+" | "-") term)*
    term        := factor (("*" | "/") factor)*
    factor      := NUMBER | "-" NUMBER | PARAM | column
                 | ("log" | "exp") "(" expression ")" | "(" expression ")"
    PARAM       := "c" DIGITS
    column      := IDENTIFIER | '"' quoted name '"'
    param line  := "param" PARAM "=" value
                 | "param" PARAM "on" column ":" level "=" value ("," level "=" value)*

`·`, `×`, `−`, `÷` and subscript digits are accepted as `*`, `*`, `-`, `/`
and plain digits.
"""
import copy
import itertools
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

import numpy as np
import pandas as pd
from strenum import StrEnum

from dataset import (
    ColumnKind,
    Dataset,
    Schema,
    UnseenLevelError,
    indicator_name,
    one_hot_schema,
)
from utils import format_float


class ExpressionError(Exception):
    pass


class StructuralError(ExpressionError):
    pass


class ModelSyntaxError(ExpressionError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class Operator(StrEnum):
    add = "add"
    sub = "sub"
    mul = "mul"
    div = "div"
    log = "log"
    exp = "exp"


ARITY = {
    Operator.add: 2,
    Operator.sub: 2,
    Operator.mul: 2,
    Operator.div: 2,
    Operator.log: 1,
    Operator.exp: 1,
}

OPERATIONS = {
    Operator.add: np.add,
    Operator.sub: np.subtract,
    Operator.mul: np.multiply,
    Operator.div: np.divide,
    Operator.log: np.log,
    Operator.exp: np.exp,
}

SYMBOLS = {Operator.add: "+", Operator.sub: "-", Operator.mul: "*", Operator.div: "/"}
PRECEDENCE = {Operator.add: 1, Operator.sub: 1, Operator.mul: 2, Operator.div: 2}
ATOM_PRECEDENCE = 3


class Terminal:
    children = ()


@dataclass(eq=False)
class Constant(Terminal):
    value: float


@dataclass(eq=False)
class NumericVar(Terminal):
    column: str


@dataclass(eq=False)
class FactorVar(Terminal):
    column: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64)


@dataclass(eq=False)
class BinaryOp:
    op: Operator
    children: list = field(default_factory=list)

    def __post_init__(self):
        self.op = Operator(self.op)
        if ARITY[self.op] != 2 or len(self.children) != 2:
            raise StructuralError(f"{self.op} needs exactly 2 children, got {len(self.children)}")


@dataclass(eq=False)
class UnaryOp:
    op: Operator
    children: list = field(default_factory=list)

    def __post_init__(self):
        self.op = Operator(self.op)
        if ARITY[self.op] != 1 or len(self.children) != 1:
            raise StructuralError(f"{self.op} needs exactly 1 child, got {len(self.children)}")


Node = Union[Constant, NumericVar, FactorVar, BinaryOp, UnaryOp]


def make_operation(op: Operator | str, children: list) -> Node:
    op = Operator(op)
    if ARITY[op] == 2:
        return BinaryOp(op, list(children))
    return UnaryOp(op, list(children))


def iter_nodes(node: Node) -> Iterator[Node]:
    """Depth-first, left-to-right (preorder). Node positions follow this order."""
    stack = [node]
    while stack:
        current = stack.pop()
        yield current
        stack.extend(reversed(current.children))


def _iter_with_parents(node: Node) -> Iterator[tuple[Node, Optional[Node], int]]:
    stack = [(node, None, -1)]
    while stack:
        current, parent, index = stack.pop()
        yield current, parent, index
        for i in reversed(range(len(current.children))):
            stack.append((current.children[i], current, i))


@dataclass(eq=False)
class ExpressionTree:
    root: Node
    schema: Schema

    def __post_init__(self):
        inputs = {c.name: c for c in self.schema.inputs}
        for node in iter_nodes(self.root):
            if isinstance(node, NumericVar):
                column = inputs.get(node.column)
                if column is None or column.kind != ColumnKind.numeric:
                    raise StructuralError(f"'{node.column}' is not a numeric input column")
            elif isinstance(node, FactorVar):
                column = inputs.get(node.column)
                if column is None or column.kind != ColumnKind.nominal:
                    raise StructuralError(f"'{node.column}' is not a nominal input column")
                if len(node.values) != len(column.levels):
                    raise StructuralError(
                        f"Factor on '{node.column}' has {len(node.values)} values "
                        f"for {len(column.levels)} levels"
                    )

    @property
    def size(self) -> int:
        return count_nodes(self)

    def __str__(self) -> str:
        return render(self).expression


def count_nodes(tree: ExpressionTree | Node) -> int:
    root = tree.root if isinstance(tree, ExpressionTree) else tree
    return sum(1 for _ in iter_nodes(root))


def copy_tree(tree: ExpressionTree) -> ExpressionTree:
    return ExpressionTree(copy.deepcopy(tree.root), tree.schema)


def node_at(tree: ExpressionTree, position: int) -> Node:
    for i, node in enumerate(iter_nodes(tree.root)):
        if i == position:
            return node
    raise StructuralError(f"Position {position} is out of range for a tree of {tree.size} nodes")


def replace_subtree(
    tree: ExpressionTree, position: int, subtree: Node, max_nodes: int | None = None
) -> ExpressionTree:
    """New tree with the node at preorder `position` replaced by a copy of `subtree`.

    With `max_nodes` the result is rejected when it grows past the limit.
    """
    if position < 0:
        raise StructuralError(f"Position {position} is out of range")
    result = copy_tree(tree)
    replacement = copy.deepcopy(subtree)
    for i, (_, parent, index) in enumerate(_iter_with_parents(result.root)):
        if i == position:
            if parent is None:
                result = ExpressionTree(replacement, tree.schema)
            else:
                parent.children[index] = replacement
                result = ExpressionTree(result.root, tree.schema)
            break
    else:
        raise StructuralError(f"Position {position} is out of range for a tree of {tree.size} nodes")

    if max_nodes is not None and result.size > max_nodes:
        raise StructuralError(f"Tree of {result.size} nodes exceeds the limit of {max_nodes}")
    return result


def parameter_count(tree: ExpressionTree) -> int:
    count = 0
    for node in iter_nodes(tree.root):
        if isinstance(node, Constant):
            count += 1
        elif isinstance(node, FactorVar):
            count += len(node.values)
    return count


def variables_used(tree: ExpressionTree) -> set[str]:
    return {
        node.column for node in iter_nodes(tree.root) if isinstance(node, (NumericVar, FactorVar))
    }


def check_schema(tree: ExpressionTree, schema: Schema):
    """Raise StructuralError unless every column the tree reads exists in `schema` unchanged."""
    for node in iter_nodes(tree.root):
        if not isinstance(node, (NumericVar, FactorVar)):
            continue
        if node.column not in schema:
            raise StructuralError(f"Column '{node.column}' is missing from the data")
        expected = tree.schema.column(node.column)
        actual = schema.column(node.column)
        if actual.kind != expected.kind:
            raise StructuralError(
                f"Column '{node.column}' is {actual.kind} in the data, {expected.kind} in the model"
            )
        if actual.levels != expected.levels:
            raise StructuralError(f"Level table of column '{node.column}' differs from the model's")


def _evaluate_node(node: Node, dataset: Dataset) -> np.ndarray:
    if isinstance(node, Constant):
        return np.full(dataset.n_rows, node.value, dtype=np.float64)
    if isinstance(node, NumericVar):
        return dataset.values(node.column)
    if isinstance(node, FactorVar):
        return node.values[dataset.values(node.column)]
    arguments = [_evaluate_node(child, dataset) for child in node.children]
    return OPERATIONS[node.op](*arguments)


def evaluate_dataset(tree: ExpressionTree, dataset: Dataset) -> np.ndarray:
    check_schema(tree, dataset.schema)
    with np.errstate(all="ignore"):
        result = _evaluate_node(tree.root, dataset)
    return np.array(result, dtype=np.float64)


def evaluate(tree: ExpressionTree, row: Mapping) -> float:
    """Evaluate one row given as {column: value}; nominal values are level names."""
    return float(evaluate_dataset(tree, Dataset.from_rows(tree.schema, [row]))[0])


def expand_to_one_hot(tree: ExpressionTree, target_schema: Schema | None = None) -> ExpressionTree:
    """Replace every factor by Σ value_i · [column = level_i] over indicator columns."""
    if target_schema is None:
        target_schema = one_hot_schema(tree.schema)

    def expand(node: Node) -> Node:
        if isinstance(node, FactorVar):
            levels = tree.schema.column(node.column).levels
            terms = [
                BinaryOp(
                    Operator.mul,
                    [Constant(float(value)), NumericVar(indicator_name(node.column, level))],
                )
                for level, value in zip(levels, node.values)
            ]
            result = terms[0]
            for term in terms[1:]:
                result = BinaryOp(Operator.add, [result, term])
            return result
        if isinstance(node, (BinaryOp, UnaryOp)):
            return make_operation(node.op, [expand(child) for child in node.children])
        return copy.deepcopy(node)

    return ExpressionTree(expand(tree.root), target_schema)


def factor_similarity(tree: ExpressionTree, column: str) -> pd.DataFrame:
    """Euclidean distances between levels, using every factor on `column` as one coordinate each."""
    vectors = [node.values for node in iter_nodes(tree.root) if isinstance(node, FactorVar) and node.column == column]
    if not vectors:
        raise StructuralError(f"No factor variable on column '{column}'")
    levels = tree.schema.column(column).levels
    points = np.stack(vectors, axis=1)
    distances = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    return pd.DataFrame(distances, index=list(levels), columns=list(levels))


# ---------------------------------------------------------------- rendering

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_PARAMETER = re.compile(r"c\d+\Z")
_PARAM_LINE = re.compile(r"\s*param\b")
RESERVED = {"log", "exp", "param", "on"}
_SUBSCRIPTS = str.maketrans("0123456789", "₀₁₂₃₄₅₆₇₈₉")


def quote_name(name: str) -> str:
    if _IDENTIFIER.match(name) and name not in RESERVED and not _PARAMETER.match(name):
        return name
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


@dataclass
class FactorTable:
    column: str
    values: dict[str, float]


@dataclass
class RenderedModel:
    expression: str
    constants: dict[str, float] = field(default_factory=dict)
    factors: dict[str, FactorTable] = field(default_factory=dict)

    def parameter_lines(self) -> list[str]:
        names = sorted([*self.constants, *self.factors], key=lambda name: int(name[1:]))
        lines = []
        for name in names:
            if name in self.constants:
                lines.append(f"param {name} = {format_float(self.constants[name])}")
            else:
                table = self.factors[name]
                entries = ", ".join(
                    f"{quote_name(level)}={format_float(value)}" for level, value in table.values.items()
                )
                lines.append(f"param {name} on {quote_name(table.column)}: {entries}")
        return lines

    def to_text(self) -> str:
        return "\n".join([self.expression, *self.parameter_lines()]) + "\n"

    def pretty(self) -> str:
        """The expression with subscripted parameter names and `·` for products."""
        expression = re.sub(r"\bc(\d+)\b", lambda m: "c" + m.group(1).translate(_SUBSCRIPTS), self.expression)
        return expression.replace(" * ", "·")


def render(tree: ExpressionTree) -> RenderedModel:
    """Infix text with parameters c0, c1, ... numbered depth-first, left to right."""
    model = RenderedModel("")
    counter = itertools.count()

    def walk(node: Node) -> tuple[str, int]:
        if isinstance(node, Constant):
            name = f"c{next(counter)}"
            model.constants[name] = float(node.value)
            return name, ATOM_PRECEDENCE
        if isinstance(node, FactorVar):
            name = f"c{next(counter)}"
            levels = tree.schema.column(node.column).levels
            model.factors[name] = FactorTable(
                node.column, {level: float(v) for level, v in zip(levels, node.values)}
            )
            return name, ATOM_PRECEDENCE
        if isinstance(node, NumericVar):
            return quote_name(node.column), ATOM_PRECEDENCE
        if isinstance(node, UnaryOp):
            text, _ = walk(node.children[0])
            return f"{node.op.value}({text})", ATOM_PRECEDENCE

        precedence = PRECEDENCE[node.op]
        left, left_precedence = walk(node.children[0])
        right, right_precedence = walk(node.children[1])
        if left_precedence < precedence:
            left = f"({left})"
        if right_precedence <= precedence:
            right = f"({right})"
        return f"{left} {SYMBOLS[node.op]} {right}", precedence

    model.expression = walk(tree.root)[0]
    return model


# ---------------------------------------------------------------- parsing

_NORMALIZE = str.maketrans("·×−÷₀₁₂₃₄₅₆₇₈₉", "**-/0123456789")
_TOKEN = re.compile(
    r"""
    (?P<space>[ \t\r\n]+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<punct>[-+*/()=,:])
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str
    text: str
    offset: int

    @property
    def value(self) -> str:
        if self.kind == "string":
            return re.sub(r"\\(.)", r"\1", self.text[1:-1])
        return self.text


def _tokenize(text: str, base: int) -> list[_Token]:
    tokens = []
    position = 0
    while position < len(text):
        match = _TOKEN.match(text, position)
        if match is None:
            raise ModelSyntaxError(f"Unexpected character {text[position]!r}", base + position)
        if match.lastgroup != "space":
            tokens.append(_Token(match.lastgroup, match.group(), base + position))
        position = match.end()
    tokens.append(_Token("end", "", base + len(text)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.position = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.position]

    def advance(self) -> _Token:
        token = self.current
        if token.kind != "end":
            self.position += 1
        return token

    def at(self, text: str) -> bool:
        return self.current.kind in ("punct", "name") and self.current.text == text

    def expect(self, text: str) -> _Token:
        if not self.at(text):
            self.fail(f"Expected {text!r}")
        return self.advance()

    def fail(self, message: str):
        token = self.current
        found = "end of input" if token.kind == "end" else repr(token.text)
        raise ModelSyntaxError(f"{message}, found {found}", token.offset)

    def expect_end(self):
        if self.current.kind != "end":
            self.fail("Expected end of line")


class _ExpressionParser(_Parser):
    """Builds nodes; parameter references become placeholders resolved afterwards."""

    def __init__(self, tokens: list[_Token], schema: Schema):
        super().__init__(tokens)
        self.schema = schema
        self.references: list[tuple[str, int, Node]] = []

    def expression(self) -> Node:
        node = self.term()
        while self.at("+") or self.at("-"):
            op = Operator.add if self.advance().text == "+" else Operator.sub
            node = BinaryOp(op, [node, self.term()])
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.at("*") or self.at("/"):
            op = Operator.mul if self.advance().text == "*" else Operator.div
            node = BinaryOp(op, [node, self.factor()])
        return node

    def factor(self) -> Node:
        token = self.current
        if token.kind == "number":
            self.advance()
            return Constant(float(token.text))
        if self.at("-") and self.tokens[self.position + 1].kind == "number":
            self.advance()
            return Constant(-float(self.advance().text))
        if self.at("("):
            self.advance()
            node = self.expression()
            self.expect(")")
            return node
        if token.kind == "name" and token.text in ("log", "exp"):
            self.advance()
            self.expect("(")
            argument = self.expression()
            self.expect(")")
            return UnaryOp(Operator(token.text), [argument])
        if token.kind == "name" and _PARAMETER.match(token.text):
            self.advance()
            placeholder = Constant(float("nan"))
            self.references.append((token.text, token.offset, placeholder))
            return placeholder
        if (token.kind == "name" and token.text not in RESERVED) or token.kind == "string":
            self.advance()
            name = token.value
            if name not in self.schema or name == self.schema.target:
                raise ModelSyntaxError(f"Unknown column '{name}'", token.offset)
            if self.schema.column(name).kind != ColumnKind.numeric:
                raise ModelSyntaxError(
                    f"Nominal column '{name}' can only be used through a factor parameter",
                    token.offset,
                )
            return NumericVar(name)
        self.fail("Expected a number, parameter, column, function or '('")


@dataclass
class _ParameterDefinition:
    offset: int
    value: Optional[float] = None
    column: Optional[str] = None
    values: Optional[np.ndarray] = None


def _parse_signed_number(parser: _Parser) -> float:
    sign = 1.0
    if parser.at("-") or parser.at("+"):
        sign = -1.0 if parser.advance().text == "-" else 1.0
    token = parser.current
    if token.kind == "number" or (token.kind == "name" and token.text in ("inf", "nan")):
        parser.advance()
        return sign * float(token.text)
    parser.fail("Expected a number")


def _parse_parameter_line(tokens: list[_Token], schema: Schema) -> tuple[str, _ParameterDefinition]:
    parser = _Parser(tokens)
    parser.expect("param")
    token = parser.current
    if token.kind != "name" or not _PARAMETER.match(token.text):
        parser.fail("Expected a parameter name like c0")
    name = parser.advance().text
    definition = _ParameterDefinition(token.offset)

    if parser.at("="):
        parser.advance()
        definition.value = _parse_signed_number(parser)
        parser.expect_end()
        return name, definition

    parser.expect("on")
    column_token = parser.current
    if column_token.kind not in ("name", "string"):
        parser.fail("Expected a column name")
    parser.advance()
    column_name = column_token.value
    if column_name not in schema or schema.column(column_name).kind != ColumnKind.nominal:
        raise ModelSyntaxError(f"Unknown nominal column '{column_name}'", column_token.offset)
    column = schema.column(column_name)
    parser.expect(":")

    values: dict[str, float] = {}
    while True:
        level_token = parser.current
        if level_token.kind not in ("name", "string", "number"):
            parser.fail("Expected a level name")
        parser.advance()
        level = level_token.value
        if level not in column.levels:
            raise ModelSyntaxError(f"Unknown level '{level}' of column '{column_name}'", level_token.offset)
        if level in values:
            raise ModelSyntaxError(f"Level '{level}' given twice", level_token.offset)
        parser.expect("=")
        values[level] = _parse_signed_number(parser)
        if not parser.at(","):
            break
        parser.advance()
    parser.expect_end()

    missing = [level for level in column.levels if level not in values]
    if missing:
        raise ModelSyntaxError(f"No value for level(s) {missing} of column '{column_name}'", token.offset)
    definition.column = column_name
    definition.values = np.array([values[level] for level in column.levels])
    return name, definition


def parse_model(text: str, schema: Schema) -> ExpressionTree:
    """Parse a model written by `RenderedModel.to_text` (or by hand) against `schema`.

    Syntax errors report absolute character offsets into `text`.
    """
    text = text.translate(_NORMALIZE)
    lines = text.splitlines(keepends=True)
    starts = np.cumsum([0] + [len(line) for line in lines])
    split_at = next(
        (i for i, line in enumerate(lines) if _PARAM_LINE.match(line)), len(lines)
    )
    expression_text = "".join(lines[:split_at])

    parser = _ExpressionParser(_tokenize(expression_text, 0), schema)
    if parser.current.kind == "end":
        parser.fail("Empty expression")
    root = parser.expression()
    parser.expect_end()

    definitions: dict[str, _ParameterDefinition] = {}
    for index in range(split_at, len(lines)):
        line = lines[index]
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        tokens = _tokenize(line, int(starts[index]))
        name, definition = _parse_parameter_line(tokens, schema)
        if name in definitions:
            raise ModelSyntaxError(f"Parameter {name} defined twice", definition.offset)
        definitions[name] = definition

    used = set()
    replacements = {}
    for name, offset, placeholder in parser.references:
        definition = definitions.get(name)
        if definition is None:
            raise ModelSyntaxError(f"Parameter {name} is not defined", offset)
        used.add(name)
        if definition.column is None:
            replacements[id(placeholder)] = Constant(definition.value)
        else:
            replacements[id(placeholder)] = FactorVar(definition.column, definition.values.copy())
    unused = [name for name in definitions if name not in used]
    if unused:
        raise ModelSyntaxError(f"Parameter {unused[0]} is never used", definitions[unused[0]].offset)

    if id(root) in replacements:
        root = replacements[id(root)]
    for node in iter_nodes(root):
        for i, child in enumerate(node.children):
            if id(child) in replacements:
                node.children[i] = replacements[id(child)]
    return ExpressionTree(root, schema)
