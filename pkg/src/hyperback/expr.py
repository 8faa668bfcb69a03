"""Small arithmetic language for coefficient functions.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

``^`` is right-associative and binds tighter than unary minus, so ``-x^2``
means ``-(x^2)`` and ``2^-1`` is allowed.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ExpressionEvaluationError, ExpressionSyntaxError, UnknownIdentifier

VARIABLES = ("x", "z1", "z2")
CONSTANTS = {"pi": math.pi}
FUNCTIONS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


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
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]

# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, name, op, end
    text: str
    offset: int


def _tokenize(src: str) -> list[_Tok]:
    data = src.encode("utf-8")
    text = data.decode("latin-1")  # one char per byte, so offsets are byte offsets
    toks = []
    pos = 0
    while pos < len(text):
        mt = _TOKEN.match(text, pos)
        if mt is None:
            raise ExpressionSyntaxError(pos, {"number", "identifier", "operator"}, text[pos])
        kind = mt.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, mt.group(), pos))
        pos = mt.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_ATOM_START = {"number", "identifier", "'('", "'-'"}


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.k = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.k]

    def _fail(self, expected):
        raise ExpressionSyntaxError(self.tok.offset, expected, self.tok.text)

    def _is_op(self, *ops) -> bool:
        return self.tok.kind == "op" and self.tok.text in ops

    def _expect_op(self, op: str):
        if not self._is_op(op):
            self._fail({f"'{op}'"})
        self.k += 1

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            self._fail({"end of input", "'+'", "'-'", "'*'", "'/'", "'^'"})
        return node

    def expr(self) -> Node:
        node = self.term()
        while self._is_op("+", "-"):
            op = self.tok.text
            self.k += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self._is_op("*", "/"):
            op = self.tok.text
            self.k += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self._is_op("-"):
            self.k += 1
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self._is_op("^"):
            self.k += 1
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.k += 1
            return Num(float(tok.text))
        if tok.kind == "name":
            self.k += 1
            if self._is_op("("):
                if tok.text not in FUNCTIONS:
                    raise UnknownIdentifier(tok.text, tok.offset)
                self.k += 1
                arg = self.expr()
                self._expect_op(")")
                return Call(tok.text, arg)
            if tok.text in FUNCTIONS:
                self._fail({"'('"})
            if tok.text not in VARIABLES and tok.text not in CONSTANTS:
                raise UnknownIdentifier(tok.text, tok.offset)
            return Var(tok.text)
        if self._is_op("("):
            self.k += 1
            node = self.expr()
            self._expect_op(")")
            return node
        self._fail(_ATOM_START)


def parse_expression(src: str) -> Node:
    """Parse ``src`` into an AST.

    Raises
    ------
    ExpressionSyntaxError
        With the byte offset of the offending token and the expected set.
    UnknownIdentifier
        For names outside the variables, constants and functions.
    """
    if not src or not src.strip():
        raise ExpressionSyntaxError(0, _ATOM_START)
    return _Parser(src).parse()


# ---------------------------------------------------------------------------
# Printing and evaluation
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def _wrap(s: str, yes: bool) -> str:
    return f"({s})" if yes else s


def to_source(node: Node) -> str:
    """Print with the minimal parentheses that re-parse to the same tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, Neg):
        return "-" + _wrap(to_source(node.operand), _prec(node.operand) < _PREC["neg"])
    p = _PREC[node.op]
    if node.op == "^":
        left = _wrap(to_source(node.left), _prec(node.left) <= p)
        right = _wrap(to_source(node.right), _prec(node.right) < _PREC["neg"])
        return f"{left}^{right}"
    left = _wrap(to_source(node.left), _prec(node.left) < p)
    right = _wrap(to_source(node.right), _prec(node.right) <= p)
    return f"{left} {node.op} {right}"


def free_variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return set() if node.name in CONSTANTS else {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return free_variables(node.operand)
    if isinstance(node, Call):
        return free_variables(node.arg)
    return free_variables(node.left) | free_variables(node.right)


def _eval(node: Node, env: dict):
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Var):
        if node.name in CONSTANTS:
            return np.float64(CONSTANTS[node.name])
        try:
            return env[node.name]
        except KeyError:
            raise UnknownIdentifier(node.name) from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_eval(node.arg, env))
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    return np.power(a, b)


def evaluate(node: Node, **env):
    """Evaluate with numpy broadcasting over the supplied variables.

    Raises ExpressionEvaluationError on division by zero, overflow or an
    invalid operation such as ``sqrt`` of a negative number.
    """
    env = {k: np.asarray(v, dtype=float) for k, v in env.items()}
    try:
        with np.errstate(divide="raise", invalid="raise", over="raise"):
            out = _eval(node, env)
    except FloatingPointError as exc:
        raise ExpressionEvaluationError(f"{exc} in {to_source(node)}") from None
    return out


class Expression:
    """Parsed expression that can be called like a coefficient profile."""

    def __init__(self, src: str):
        self.src = src
        self.ast = parse_expression(src)
        self.variables = free_variables(self.ast)

    def __repr__(self):
        return f"Expression({self.src!r})"

    def __call__(self, **env):
        return evaluate(self.ast, **env)

    def of_x(self):
        """Profile ``x -> value`` broadcast to the shape of ``x``."""
        extra = self.variables - {"x"}
        if extra:
            raise UnknownIdentifier(sorted(extra)[0])

        def profile(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(self(x=x), x.shape).astype(float)
        return profile
