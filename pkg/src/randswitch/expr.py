"""Scalar arithmetic expressions over state variables ``x1..xn``.

Expressions are parsed once into an immutable AST and compiled to a closure
that evaluates over a batch of points (rows of an ``(B, n)`` array). Scalar
evaluation is the batch path with ``B = 1``.

Grammar (highest precedence last)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | VAR | FUNC '(' args ')' | '(' expr ')'
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "tanh": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
}


class ExpressionError(ValueError):
    pass


class ParseError(ExpressionError):
    def __init__(self, message: str, position: int, source: str):
        super().__init__(f"{message} at position {position}: {source!r}")
        self.position = position
        self.source = source


class DomainError(ExpressionError, ArithmeticError):
    """Evaluation left the domain of a sub-expression."""

    def __init__(self, message: str, subexpression: str):
        super().__init__(f"{message} in {subexpression!r}")
        self.subexpression = subexpression


# ---------------------------------------------------------------- AST nodes


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Num, Var, Neg, BinOp, Call]


def to_source(node: Node) -> str:
    """Fully parenthesised source text that re-parses to the same tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    return f"{node.name}({', '.join(to_source(a) for a in node.args)})"


# ---------------------------------------------------------------- tokenizer

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            bad = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ParseError(f"unexpected character {source[bad]!r}", bad, source)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, dimension: int):
        self.source = source
        self.dimension = dimension
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, found {found}", pos, self.source)

    def error(self, message: str, pos: int):
        raise ParseError(message, pos, self.source)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            self.error(f"unexpected token {text!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            m = re.fullmatch(r"x([1-9]\d*)", text)
            if m:
                index = int(m.group(1))
                if index > self.dimension:
                    self.error(
                        f"variable {text} out of range for dimension {self.dimension}", pos
                    )
                return Var(index - 1)
            if text not in FUNCTIONS:
                self.error(f"unknown identifier {text!r}", pos)
            self.expect("(")
            args = [self.expr()]
            while self.peek()[0] == "op" and self.peek()[1] == ",":
                self.take()
                args.append(self.expr())
            self.expect(")")
            if len(args) != FUNCTIONS[text]:
                self.error(f"{text} takes {FUNCTIONS[text]} argument(s), got {len(args)}", pos)
            return Call(text, tuple(args))
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        self.error(f"unexpected {found}", pos)


# ---------------------------------------------------------------- compiler

Kernel = Callable[[np.ndarray], np.ndarray]


def _guard(result: np.ndarray, node: Node) -> np.ndarray:
    if not np.isfinite(result).all():
        raise DomainError("non-finite result (overflow)", to_source(node))
    return result


def _compile(node: Node) -> Kernel:
    if isinstance(node, Num):
        value = float(node.value)
        return lambda X: np.full(X.shape[0], value)
    if isinstance(node, Var):
        j = node.index
        return lambda X: X[:, j]
    if isinstance(node, Neg):
        inner = _compile(node.operand)
        return lambda X: -inner(X)
    if isinstance(node, BinOp):
        lhs, rhs = _compile(node.left), _compile(node.right)
        op = node.op
        if op == "+":
            return lambda X: _guard(lhs(X) + rhs(X), node)
        if op == "-":
            return lambda X: _guard(lhs(X) - rhs(X), node)
        if op == "*":
            return lambda X: _guard(lhs(X) * rhs(X), node)
        if op == "/":

            def divide(X):
                den = rhs(X)
                if np.any(den == 0.0):
                    raise DomainError("division by zero", to_source(node))
                return _guard(lhs(X) / den, node)

            return divide

        if isinstance(node.right, Num):
            c = float(node.right.value)
            integral = c == round(c)

            def const_power(X):
                base = lhs(X)
                if not integral and np.any(base < 0):
                    raise DomainError("negative base with non-integer exponent", to_source(node))
                if c < 0 and np.any(base == 0):
                    raise DomainError("division by zero", to_source(node))
                return _guard(base * base if c == 2.0 else np.power(base, c), node)

            return const_power

        def power(X):
            base, expo = lhs(X), rhs(X)
            if np.any((base < 0) & (expo != np.round(expo))):
                raise DomainError("negative base with non-integer exponent", to_source(node))
            if np.any((base == 0) & (expo < 0)):
                raise DomainError("division by zero", to_source(node))
            with np.errstate(over="ignore"):
                return _guard(np.power(base, expo), node)

        return power

    args = [_compile(a) for a in node.args]
    name = node.name
    if name == "log":

        def log(X):
            a = args[0](X)
            if np.any(a <= 0):
                raise DomainError("log of nonpositive value", to_source(node))
            return np.log(a)

        return log
    if name == "sqrt":

        def sqrt(X):
            a = args[0](X)
            if np.any(a < 0):
                raise DomainError("sqrt of negative value", to_source(node))
            return np.sqrt(a)

        return sqrt
    if name == "exp":

        def exp(X):
            with np.errstate(over="ignore"):
                return _guard(np.exp(args[0](X)), node)

        return exp
    if name in ("min", "max"):
        ufunc = np.minimum if name == "min" else np.maximum
        return lambda X: ufunc(args[0](X), args[1](X))
    ufunc = {"sin": np.sin, "cos": np.cos, "tanh": np.tanh, "abs": np.abs}[name]
    return lambda X: ufunc(args[0](X))


# ---------------------------------------------------------------- public API


@dataclass(frozen=True)
class Expression:
    """A parsed expression; immutable and safe to share between workers."""

    source: str
    dimension: int
    root: Node = field(repr=False)
    _kernel: Kernel = field(repr=False, compare=False)

    def __reduce__(self):
        return (parse, (self.source, self.dimension))

    def __call__(self, point) -> float:
        return evaluate(self, point)

    def batch(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at every row of ``X`` (shape ``(B, n)``)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dimension:
            raise ValueError(
                f"expected points of shape (B, {self.dimension}), got {X.shape}"
            )
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            return self._kernel(X)

    def to_source(self) -> str:
        return to_source(self.root)


def parse(source: str, dimension: int) -> Expression:
    if not isinstance(source, str) or not source.strip():
        raise ParseError("empty expression", 0, str(source))
    if dimension < 1:
        raise ValueError("dimension must be positive")
    root = _Parser(source, dimension).parse()
    return Expression(source, dimension, root, _compile(root))


def evaluate(e: Expression, point) -> float:
    x = np.asarray(point, dtype=float).reshape(-1)
    if x.shape[0] != e.dimension:
        raise ValueError(f"point has dimension {x.shape[0]}, expected {e.dimension}")
    return float(e.batch(x[None, :])[0])


def fd_steps(X: np.ndarray, step: float) -> np.ndarray:
    """Per-coordinate central-difference steps ``step * max(1, |x_i|)``."""
    return step * np.maximum(1.0, np.abs(X))


def gradient_batch(e: Expression, X: np.ndarray, step: float = 1e-6) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    H = fd_steps(X, step)
    G = np.empty_like(X)
    for i in range(X.shape[1]):
        Xp = X.copy()
        Xm = X.copy()
        Xp[:, i] += H[:, i]
        Xm[:, i] -= H[:, i]
        G[:, i] = (e.batch(Xp) - e.batch(Xm)) / (Xp[:, i] - Xm[:, i])
    return G


def gradient(e: Expression, point, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient at ``point``.

    The step along coordinate ``i`` is ``step * max(1, |x_i|)``; the divisor is
    the representable distance between the two stencil points.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(point, dtype=float).reshape(1, -1)
    if x.shape[1] != e.dimension:
        raise ValueError(f"point has dimension {x.shape[1]}, expected {e.dimension}")
    return gradient_batch(e, x, step)[0]


def parse_vector(sources: Sequence[str], dimension: int) -> tuple[Expression, ...]:
    return tuple(parse(s, dimension) for s in sources)
