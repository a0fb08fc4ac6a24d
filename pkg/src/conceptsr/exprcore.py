"""Expression trees: the hypothesis language.

Expressions are immutable trees of :class:`Constant`, :class:`Variable`,
:class:`Unary` and :class:`Binary` nodes. Evaluation is vectorised with numpy
and total: numeric domain errors produce ``nan``/``inf`` entries instead of
raising.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, ParseError, UnknownSymbol

BINARY_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
UNARY_NAMES = ("neg", "sin", "cos", "exp", "log", "sqrt")
BINARY_NAMES = tuple(BINARY_SYMBOLS)
_SYMBOL_TO_BINARY = {v: k for k, v in BINARY_SYMBOLS.items()}
_SYMBOL_TO_BINARY["**"] = "pow"

_BINARY_FUNCS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": np.power,
}
_UNARY_FUNCS = {
    "neg": np.negative,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}


@dataclass(frozen=True)
class OperatorSet:
    """The grammar a search is allowed to use."""

    binary_ops: tuple = ("add", "sub", "mul", "div")
    unary_ops: tuple = ("sin", "cos", "exp", "log", "sqrt")
    variable_names: tuple = ()
    allow_constants: bool = True

    def __post_init__(self):
        binary = set(self.binary_ops)
        unary = set(self.unary_ops)
        if not binary:
            raise ValueError("at least one binary operator is required")
        if binary - set(BINARY_NAMES):
            raise ValueError(f"unsupported binary operators: {sorted(binary - set(BINARY_NAMES))}")
        if unary - set(UNARY_NAMES):
            raise ValueError(f"unsupported unary operators: {sorted(unary - set(UNARY_NAMES))}")
        names = tuple(self.variable_names)
        if not names:
            raise ValueError("variable_names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("variable_names must be unique")
        for name in names:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
                raise ValueError(f"invalid variable name {name!r}")
            if name in UNARY_NAMES:
                raise ValueError(f"variable name {name!r} clashes with an operator")
        # canonical ordering keeps describe_grammar and equality stable
        object.__setattr__(self, "binary_ops", tuple(op for op in BINARY_NAMES if op in binary))
        object.__setattr__(self, "unary_ops", tuple(op for op in UNARY_NAMES if op in unary))
        object.__setattr__(self, "variable_names", names)

    def with_variables(self, names: Iterable[str]) -> "OperatorSet":
        return OperatorSet(self.binary_ops, self.unary_ops, tuple(names), self.allow_constants)

    def variable(self, name: str) -> "Variable":
        try:
            return Variable(self.variable_names.index(name), name)
        except ValueError:
            raise UnknownSymbol(name) from None


# ---------------------------------------------------------------------------
# nodes


@dataclass(frozen=True, slots=True)
class Constant:
    value: float
    size: int = field(default=1, init=False, compare=False, repr=False)
    depth: int = field(default=1, init=False, compare=False, repr=False)

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v):
            raise ValueError(f"constants must be finite, got {v}")
        object.__setattr__(self, "value", v)


@dataclass(frozen=True, slots=True)
class Variable:
    index: int
    name: str
    size: int = field(default=1, init=False, compare=False, repr=False)
    depth: int = field(default=1, init=False, compare=False, repr=False)


@dataclass(frozen=True, slots=True)
class Unary:
    op: str
    child: "Expr"
    size: int = field(default=0, init=False, compare=False, repr=False)
    depth: int = field(default=0, init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.op not in _UNARY_FUNCS:
            raise ValueError(f"unknown unary operator {self.op!r}")
        object.__setattr__(self, "size", 1 + self.child.size)
        object.__setattr__(self, "depth", 1 + self.child.depth)


@dataclass(frozen=True, slots=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    size: int = field(default=0, init=False, compare=False, repr=False)
    depth: int = field(default=0, init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.op not in _BINARY_FUNCS:
            raise ValueError(f"unknown binary operator {self.op!r}")
        object.__setattr__(self, "size", 1 + self.left.size + self.right.size)
        object.__setattr__(self, "depth", 1 + max(self.left.depth, self.right.depth))


Expr = Union[Constant, Variable, Unary, Binary]
LEAF_TYPES = (Constant, Variable)


def children(e: Expr) -> tuple:
    if isinstance(e, Binary):
        return (e.left, e.right)
    if isinstance(e, Unary):
        return (e.child,)
    return ()


def complexity(e: Expr) -> int:
    """Number of nodes in the tree."""
    return e.size


def depth(e: Expr) -> int:
    return e.depth


def iter_nodes(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Binary):
            stack.append(node.right)
            stack.append(node.left)
        elif isinstance(node, Unary):
            stack.append(node.child)


def node_paths(e: Expr, prefix: tuple = ()) -> list:
    """(path, node) pairs in pre-order; a path is a tuple of child indices."""
    out = [(prefix, e)]
    for i, c in enumerate(children(e)):
        out.extend(node_paths(c, prefix + (i,)))
    return out


def get_at(e: Expr, path: Sequence[int]) -> Expr:
    for i in path:
        e = children(e)[i]
    return e


def replace_at(e: Expr, path: Sequence[int], new: Expr) -> Expr:
    if not path:
        return new
    head, rest = path[0], path[1:]
    if isinstance(e, Unary):
        return Unary(e.op, replace_at(e.child, rest, new))
    if isinstance(e, Binary):
        if head == 0:
            return Binary(e.op, replace_at(e.left, rest, new), e.right)
        return Binary(e.op, e.left, replace_at(e.right, rest, new))
    raise IndexError("path descends below a leaf")


def variables_used(e: Expr) -> set:
    return {n.name for n in iter_nodes(e) if isinstance(n, Variable)}


def constants(e: Expr) -> list:
    """Constant values in pre-order."""
    return [n.value for n in iter_nodes(e) if isinstance(n, Constant)]


def with_constants(e: Expr, values: Sequence[float]) -> Expr:
    """Return ``e`` with its constants (pre-order) replaced by ``values``."""
    it = iter(values)

    def rebuild(node):
        if isinstance(node, Constant):
            return Constant(next(it))
        if isinstance(node, Variable):
            return node
        if isinstance(node, Unary):
            return Unary(node.op, rebuild(node.child))
        return Binary(node.op, rebuild(node.left), rebuild(node.right))

    return rebuild(e)


# ---------------------------------------------------------------------------
# parsing and printing

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
    r")"
)


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, ops: OperatorSet):
        self.tokens = _tokenize(text)
        self.i = 0
        self.ops = ops

    def peek(self, k=0):
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            raise ParseError(f"expected {value!r}, got {val or 'end of input'!r}", pos)

    def binary(self, symbol, left, right):
        op = _SYMBOL_TO_BINARY[symbol]
        if op not in self.ops.binary_ops:
            raise UnknownSymbol(symbol)
        return Binary(op, left, right)

    def negate(self, operand):
        if "neg" in self.ops.unary_ops:
            return Unary("neg", operand)
        if "mul" in self.ops.binary_ops:
            return Binary("mul", Constant(-1.0), operand)
        raise UnknownSymbol("neg")

    def parse(self):
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", pos)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            sym = self.take()[1]
            e = self.binary(sym, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            sym = self.take()[1]
            e = self.binary(sym, e, self.unary())
        return e

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        if kind == "op" and val == "-":
            self.take()
            nxt = self.peek()
            after = self.peek(1)
            if nxt[0] == "num" and after[1] not in ("^", "**"):
                self.take()
                return Constant(-float(nxt[1]))
            return self.negate(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] in ("^", "**"):
            self.take()
            return self.binary("^", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            if not self.ops.allow_constants:
                raise UnknownSymbol(val)
            return Constant(float(val))
        if kind == "ident":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in self.ops.unary_ops:
                    raise UnknownSymbol(val)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Unary(val, arg)
            if val in self.ops.variable_names:
                return Variable(self.ops.variable_names.index(val), val)
            if val == "pi" and self.ops.allow_constants:
                return Constant(math.pi)
            raise UnknownSymbol(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {val or 'end of input'!r}", pos)


def parse(text: str, ops: OperatorSet) -> Expr:
    """Parse infix text such as ``"sin(x1) + 2.5*x2^2"``."""
    return _Parser(text, ops).parse()


def _format_constant(v: float) -> str:
    s = repr(v)
    return f"({s})" if s.startswith("-") else s


def format_expr(e: Expr) -> str:
    """Fully parenthesised infix text that parses back to the same tree."""
    if isinstance(e, Constant):
        return _format_constant(e.value)
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Unary):
        inner = format_expr(e.child)
        if e.op == "neg":
            if isinstance(e.child, Constant) and not inner.startswith("("):
                inner = f"({inner})"
            return f"(-{inner})"
        return f"{e.op}({inner})"
    return f"({format_expr(e.left)} {BINARY_SYMBOLS[e.op]} {format_expr(e.right)})"


# ``format`` is the public name; keep the builtin reachable under its usual name
format = format_expr  # noqa: A001


def describe_grammar(ops: OperatorSet) -> str:
    binary = ", ".join(BINARY_SYMBOLS[op] for op in ops.binary_ops)
    parts = [f"binary: {binary}"]
    if ops.unary_ops:
        parts.append(f"unary: {', '.join(ops.unary_ops)}")
    parts.append(f"variables: {', '.join(ops.variable_names)}")
    return "; ".join(parts)


# ---------------------------------------------------------------------------
# evaluation


def _columns(data):
    from .data import Dataset

    if isinstance(data, Dataset):
        return data.columns, data.variable_names
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return np.ascontiguousarray(arr.T), None


def _eval(e, cols, names):
    if isinstance(e, Binary):
        return _BINARY_FUNCS[e.op](_eval(e.left, cols, names), _eval(e.right, cols, names))
    if isinstance(e, Unary):
        return _UNARY_FUNCS[e.op](_eval(e.child, cols, names))
    if isinstance(e, Variable):
        idx = e.index
        if names is not None and (idx >= len(names) or names[idx] != e.name):
            try:
                idx = names.index(e.name)
            except ValueError:
                raise DimensionMismatch(f"dataset has no column {e.name!r}") from None
        if idx >= len(cols):
            raise DimensionMismatch(f"variable index {idx} out of range for {len(cols)} columns")
        return cols[idx]
    return np.float64(e.value)


def evaluate(e: Expr, data) -> np.ndarray:
    """Evaluate ``e`` row-wise on a Dataset (or an N x d array).

    Out-of-domain rows come back as nan/inf; this never raises on numeric
    errors.
    """
    cols, names = _columns(data)
    n = cols.shape[1]
    with np.errstate(all="ignore"):
        out = _eval(e, cols, names)
    if np.ndim(out) == 0:
        return np.full(n, float(out))
    return np.asarray(out, dtype=float)


# ---------------------------------------------------------------------------
# simplification


def _is_const(e, value=None):
    return isinstance(e, Constant) and (value is None or e.value == value)


def _fold(func, *args):
    with np.errstate(all="ignore"):
        v = float(func(*(np.float64(a) for a in args)))
    return Constant(v) if math.isfinite(v) else None


def simplify(e: Expr) -> Expr:
    """Bottom-up rewrite: constant folding and identity elimination.

    Never increases node count; finite evaluations are unchanged.
    """
    if isinstance(e, LEAF_TYPES):
        return e
    if isinstance(e, Unary):
        c = simplify(e.child)
        if isinstance(c, Constant):
            folded = _fold(_UNARY_FUNCS[e.op], c.value)
            if folded is not None:
                return folded
        if e.op == "neg" and isinstance(c, Unary) and c.op == "neg":
            return c.child
        return e if c is e.child else Unary(e.op, c)

    left, right = simplify(e.left), simplify(e.right)
    op = e.op
    if isinstance(left, Constant) and isinstance(right, Constant):
        folded = _fold(_BINARY_FUNCS[op], left.value, right.value)
        if folded is not None:
            return folded
    if op == "add":
        if _is_const(left, 0.0):
            return right
        if _is_const(right, 0.0):
            return left
    elif op == "sub":
        if _is_const(right, 0.0):
            return left
        if left == right:
            return Constant(0.0)
    elif op == "mul":
        if _is_const(left, 1.0):
            return right
        if _is_const(right, 1.0):
            return left
        if _is_const(left, 0.0) or _is_const(right, 0.0):
            return Constant(0.0)
    elif op == "div":
        if _is_const(right, 1.0):
            return left
        if left == right:
            return Constant(1.0)
        if _is_const(left, 0.0):
            return Constant(0.0)
    elif op == "pow":
        if _is_const(right, 1.0):
            return left
        if _is_const(right, 0.0):
            return Constant(1.0)
    if left is e.left and right is e.right:
        return e
    return Binary(op, left, right)


# ---------------------------------------------------------------------------
# random generation


def random_leaf(ops: OperatorSet, rng, const_prob: float = 0.25, const_scale: float = 2.0) -> Expr:
    if ops.allow_constants and rng.random() < const_prob:
        return Constant(float(rng.normal(0.0, const_scale)))
    i = int(rng.integers(len(ops.variable_names)))
    return Variable(i, ops.variable_names[i])


def random_expr(
    ops: OperatorSet,
    max_depth: int,
    rng,
    leaf_prob: float = 0.3,
    unary_prob: float = 0.25,
    const_prob: float = 0.25,
) -> Expr:
    """Grow a random tree of depth at most ``max_depth``."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")

    def grow(d):
        if d >= max_depth or (d > 1 and rng.random() < leaf_prob):
            return random_leaf(ops, rng, const_prob)
        if ops.unary_ops and rng.random() < unary_prob:
            op = ops.unary_ops[int(rng.integers(len(ops.unary_ops)))]
            return Unary(op, grow(d + 1))
        op = ops.binary_ops[int(rng.integers(len(ops.binary_ops)))]
        return Binary(op, grow(d + 1), grow(d + 1))

    return grow(1)


def compile_with_constants(e: Expr, variable_names=None):
    """Compile ``e`` into ``f(columns, theta)`` where ``theta`` replaces the
    pre-order constants. Used by the constant optimiser's inner loop."""
    counter = [0]

    def build(node):
        if isinstance(node, Constant):
            k = counter[0]
            counter[0] += 1
            return lambda cols, theta: theta[k]
        if isinstance(node, Variable):
            idx = node.index
            if variable_names is not None:
                if node.name not in variable_names:
                    raise DimensionMismatch(f"dataset has no column {node.name!r}")
                idx = list(variable_names).index(node.name)
            return lambda cols, theta: cols[idx]
        if isinstance(node, Unary):
            f, c = _UNARY_FUNCS[node.op], build(node.child)
            return lambda cols, theta: f(c(cols, theta))
        f, a, b = _BINARY_FUNCS[node.op], build(node.left), build(node.right)
        return lambda cols, theta: f(a(cols, theta), b(cols, theta))

    return build(e)
