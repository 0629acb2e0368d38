"""Arithmetic expression language used to declare fields, curves and Nagumo functions.

Grammar (see docs/grammar.md):

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?
    atom   := number | name | func "(" expr ")" | "(" expr ")"

`^` binds tighter than unary minus and is right-associative, so -2^2 = -4 and
2^3^2 = 512. Evaluation is vectorised: compiled expressions accept numpy arrays.
"""

import math
import re
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Iterable, Mapping, Optional, Union

import numpy as np

from lusolve.errors import (
    EmptyExpressionError,
    ExpressionDomainError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
)

# number with optional fraction / exponent, identifier, operator or paren
_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


def _positive_log(x, source: str = ""):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ExpressionDomainError(f"ln of non-positive value {np.min(x):g}", source)
    return np.log(x)


def _nonnegative_sqrt(x, source: str = ""):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ExpressionDomainError(f"sqrt of negative value {np.min(x):g}", source)
    return np.sqrt(x)


# functions that raise ExpressionDomainError outside their domain
_DOMAIN_CHECKED: dict[str, Callable] = {"ln": _positive_log, "sqrt": _nonnegative_sqrt}

FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    **_DOMAIN_CHECKED,
    "abs": np.abs,
    "tanh": np.tanh,
}

CONSTANTS: dict[str, float] = {"pi": math.pi, "e": math.e}

STATE_VARIABLES = frozenset({"t", "u", "v"})

# binding strength used by the pretty printer
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or a function name
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


Node = Union[Const, Var, Param, Unary, Binary]


@dataclass(frozen=True)
class ExprAst:
    """A parsed expression together with the parameter values it was bound to."""

    root: Node
    params: Mapping[str, float] = field(default_factory=dict)
    source: str = ""

    @property
    def free_variables(self) -> frozenset:
        return frozenset(_collect(self.root, Var))

    @property
    def parameters(self) -> frozenset:
        return frozenset(_collect(self.root, Param))

    def pretty(self) -> str:
        return pretty(self.root)

    def compile(self) -> Callable:
        """Return a vectorised callable f(t, u, v)."""
        code = _to_python(self.root)
        functions = dict(FUNCTIONS)
        for name, fn in _DOMAIN_CHECKED.items():
            functions[name] = partial(fn, source=self.source)
        namespace = {"np": np, "_p": dict(self.params), "_f": functions}
        return eval(compile(f"lambda t, u, v: {code}", f"<expr {self.source!r}>", "eval"), namespace)

    def evaluate(self, t=0.0, u=0.0, v=0.0):
        return self.compile()(t, u, v)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def parse_expr(
    source: str,
    allowed_vars: Iterable[str] = STATE_VARIABLES,
    params: Optional[Mapping[str, float]] = None,
) -> ExprAst:
    """
    Parse `source` into an ExprAst.

    Identifiers resolve, in order, to a state variable from `allowed_vars`, a
    parameter from `params`, or one of the constants `pi`, `e`. Anything else is
    rejected with its offset. Syntax errors carry the 0-based offset of the
    offending token (end of input for truncated expressions).
    """
    if source is None or not source.strip():
        raise EmptyExpressionError("empty expression", 0, source or "")
    bound = dict(CONSTANTS)
    bound.update(params or {})
    parser = _Parser(source, frozenset(allowed_vars), bound)
    root = parser.parse()
    used = _collect(root, Param)
    return ExprAst(root=root, params={k: float(bound[k]) for k in sorted(used)}, source=source)


def pretty(node: Node) -> str:
    text, _ = _pretty(node)
    return text


# ---------------------------------------------------------------------------
# Tokenizer / recursive-descent parser
# ---------------------------------------------------------------------------


@dataclass
class _Token:
    kind: str  # number | name | op | eof
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(source, pos)
        if match is None or match.end() == pos:
            offset = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {source[offset]!r}", offset, source)
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(_Token("eof", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, allowed_vars: frozenset, bound: Mapping[str, float]) -> None:
        self.source = source
        self.allowed_vars = allowed_vars
        self.bound = bound
        self.tokens = _tokenize(source)
        self.index = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def _advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def _expect(self, text: str) -> None:
        token = self.current
        if token.kind != "op" or token.text != text:
            found = "end of input" if token.kind == "eof" else repr(token.text)
            raise ExpressionSyntaxError(f"expected {text!r}, found {found}", token.pos, self.source)
        self._advance()

    def parse(self) -> Node:
        node = self._expr()
        if self.current.kind != "eof":
            raise ExpressionSyntaxError(f"unexpected {self.current.text!r}", self.current.pos, self.source)
        return node

    def _expr(self) -> Node:
        node = self._term()
        while self.current.kind == "op" and self.current.text in "+-":
            op = self._advance().text
            node = Binary(op, node, self._term())
        return node

    def _term(self) -> Node:
        node = self._unary()
        while self.current.kind == "op" and self.current.text in "*/":
            op = self._advance().text
            node = Binary(op, node, self._unary())
        return node

    def _unary(self) -> Node:
        if self.current.kind == "op" and self.current.text == "-":
            self._advance()
            return Unary("neg", self._unary())
        if self.current.kind == "op" and self.current.text == "+":
            self._advance()
            return self._unary()
        return self._power()

    def _power(self) -> Node:
        base = self._atom()
        if self.current.kind == "op" and self.current.text == "^":
            self._advance()
            return Binary("^", base, self._unary())
        return base

    def _atom(self) -> Node:
        token = self.current
        if token.kind == "number":
            self._advance()
            return Const(float(token.text))
        if token.kind == "name":
            self._advance()
            if token.text in FUNCTIONS:
                self._expect("(")
                arg = self._expr()
                self._expect(")")
                return Unary(token.text, arg)
            if token.text in self.allowed_vars:
                return Var(token.text)
            if token.text in self.bound:
                return Param(token.text)
            raise UnknownIdentifierError(f"unknown identifier {token.text!r}", token.pos, self.source)
        if token.kind == "op" and token.text == "(":
            self._advance()
            node = self._expr()
            self._expect(")")
            return node
        found = "end of input" if token.kind == "eof" else repr(token.text)
        raise ExpressionSyntaxError(f"unexpected {found}", token.pos, self.source)


# ---------------------------------------------------------------------------
# Printing and compilation
# ---------------------------------------------------------------------------


def _collect(node: Node, kind) -> set:
    if isinstance(node, kind):
        return {node.name}
    if isinstance(node, Unary):
        return _collect(node.operand, kind)
    if isinstance(node, Binary):
        return _collect(node.left, kind) | _collect(node.right, kind)
    return set()


def _format_number(value: float) -> str:
    text = repr(float(value))
    return text


def _pretty(node: Node) -> tuple[str, int]:
    if isinstance(node, Const):
        text = _format_number(node.value)
        return text, (_PREC_NEG if text.startswith("-") else _PREC_ATOM)
    if isinstance(node, (Var, Param)):
        return node.name, _PREC_ATOM
    if isinstance(node, Unary):
        inner, prec = _pretty(node.operand)
        if node.op == "neg":
            return "-" + (inner if prec >= _PREC_NEG else f"({inner})"), _PREC_NEG
        return f"{node.op}({inner})", _PREC_ATOM

    left, lp = _pretty(node.left)
    right, rp = _pretty(node.right)
    if node.op == "^":
        left = left if lp > _PREC_POW else f"({left})"
        right = right if rp >= _PREC_NEG else f"({right})"
        return f"{left}^{right}", _PREC_POW
    prec = _PREC_ADD if node.op in "+-" else _PREC_MUL
    left = left if lp >= prec else f"({left})"
    right = right if rp > prec else f"({right})"
    return f"{left} {node.op} {right}", prec


def _to_python(node: Node) -> str:
    if isinstance(node, Const):
        return f"({_format_number(node.value)})"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Param):
        return f"_p[{node.name!r}]"
    if isinstance(node, Unary):
        inner = _to_python(node.operand)
        if node.op == "neg":
            return f"(-{inner})"
        return f"_f[{node.op!r}]({inner})"
    op = "**" if node.op == "^" else node.op
    return f"({_to_python(node.left)} {op} {_to_python(node.right)})"
