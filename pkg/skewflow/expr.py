"""
Expression language for vector fields and coefficient functions.

Grammar (loosest to tightest binding)::

    expr    := expr ('+' | '-') expr        left associative
             | expr ('*' | '/') expr        left associative
             | '-' expr                     unary minus
             | expr '^' expr                right associative
             | NUMBER | NAME | 'pi' | FUNC '(' expr ')' | '(' expr ')'

Unary minus binds looser than ``^``: ``-x^2`` is ``-(x^2)``. The exponent
of ``^`` may itself start with a unary minus (``2^-1``).

Trees are immutable and evaluate with numpy, so the same tree evaluates
scalars and arrays alike. IEEE exceptional values propagate; division by
zero is reported through ``warnings`` as ``EvaluationWarning``.
"""

from __future__ import annotations

import warnings
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Any, Union

import numpy as np

from skewflow.error_handler import (
    EvaluationWarning,
    ParseError,
    UnboundVariableError,
    UnknownFunctionError,
)


FUNCTIONS: dict[str, Callable[[Any], Any]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "cbrt": np.cbrt,  # real cube root, cbrt(-8) == -2
}

CONSTANTS: dict[str, float] = {"pi": float(np.pi)}


# =============================================================================
# AST
# =============================================================================

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: Expr


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call:
    func: str
    arg: Expr


Expr = Union[Num, Var, Const, Neg, BinOp, Call]


# =============================================================================
# TOKENIZER
# =============================================================================

@dataclass(frozen=True)
class Token:
    kind: str  # "num", "name", "op", "end"
    text: str
    offset: int  # byte offset into the UTF-8 source


_OPERATORS = "+-*/^(),"


def tokenize(text: str) -> list[Token]:
    """Split ``text`` into tokens; offsets are UTF-8 byte offsets."""
    tokens: list[Token] = []
    idx = 0
    byte = 0
    n = len(text)

    def width(s: str) -> int:
        return len(s.encode("utf-8"))

    while idx < n:
        c = text[idx]
        if c.isspace():
            byte += width(c)
            idx += 1
            continue
        start, start_byte = idx, byte
        if c.isdigit() or (c == "." and idx + 1 < n and text[idx + 1].isdigit()):
            while idx < n and (text[idx].isdigit() or text[idx] == "."):
                idx += 1
            if idx < n and text[idx] in "eE":
                look = idx + 1
                if look < n and text[look] in "+-":
                    look += 1
                if look < n and text[look].isdigit():
                    idx = look
                    while idx < n and text[idx].isdigit():
                        idx += 1
            literal = text[start:idx]
            if literal.count(".") > 1:
                raise ParseError(f"malformed number '{literal}'", start_byte, "number")
            tokens.append(Token("num", literal, start_byte))
        elif c.isalpha() or c == "_":
            while idx < n and (text[idx].isalnum() or text[idx] == "_"):
                idx += 1
            tokens.append(Token("name", text[start:idx], start_byte))
        elif c in _OPERATORS:
            idx += 1
            tokens.append(Token("op", c, start_byte))
        else:
            raise ParseError(f"unexpected character {c!r}", start_byte)
        byte = start_byte + width(text[start:idx])
    tokens.append(Token("end", "", byte))
    return tokens


# =============================================================================
# PRATT PARSER
# =============================================================================

# Left binding powers of infix operators.
_INFIX_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_PREFIX_MINUS_BP = 30


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.next()
        if tok.text != text or tok.kind != "op":
            found = tok.text or "end of input"
            raise ParseError(f"unexpected {found!r}", tok.offset, f"'{text}'")
        return tok

    def expression(self, min_bp: int = 0) -> Expr:
        lhs = self.prefix()
        while True:
            tok = self.peek()
            if tok.kind != "op" or tok.text not in _INFIX_BP:
                break
            bp = _INFIX_BP[tok.text]
            if bp <= min_bp:
                break
            self.next()
            # right associative: parse the rhs at a slightly lower power
            rhs = self.expression(bp - 1 if tok.text == "^" else bp)
            lhs = BinOp(tok.text, lhs, rhs)
        return lhs

    def prefix(self) -> Expr:
        tok = self.next()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "op" and tok.text == "-":
            return Neg(self.expression(_PREFIX_MINUS_BP))
        if tok.kind == "op" and tok.text == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        if tok.kind == "name":
            follow = self.peek()
            if follow.kind == "op" and follow.text == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownFunctionError(tok.text, tok.offset)
                self.next()
                arg = self.expression()
                self.expect(")")
                return Call(tok.text, arg)
            if tok.text in CONSTANTS:
                return Const(tok.text)
            return Var(tok.text)
        found = tok.text or "end of input"
        raise ParseError(
            f"unexpected {found!r}", tok.offset, "number, name, '-' or '('"
        )


def parse(text: str) -> Expr:
    """
    Parse ``text`` into an expression tree.

    Raises:
        ParseError: syntax error, with byte offset and expected token.
        UnknownFunctionError: call to an unsupported function.
    """
    if not text or not text.strip():
        raise ParseError("empty expression", 0, "an expression")
    parser = _Parser(text)
    tree = parser.expression()
    tail = parser.peek()
    if tail.kind != "end":
        raise ParseError(f"unexpected {tail.text!r}", tail.offset, "operator or end of input")
    return tree


# =============================================================================
# PRINTING / INSPECTION
# =============================================================================

def to_text(expr: Expr) -> str:
    """Fully parenthesized rendering; ``parse(to_text(e)) == e``."""
    if isinstance(expr, Num):
        return repr(float(expr.value))
    if isinstance(expr, (Var, Const)):
        return expr.name
    if isinstance(expr, Neg):
        return f"(-{to_text(expr.operand)})"
    if isinstance(expr, BinOp):
        return f"({to_text(expr.left)} {expr.op} {to_text(expr.right)})"
    return f"{expr.func}({to_text(expr.arg)})"


def free_variables(expr: Expr) -> frozenset[str]:
    if isinstance(expr, Var):
        return frozenset({expr.name})
    if isinstance(expr, (Num, Const)):
        return frozenset()
    if isinstance(expr, Neg):
        return free_variables(expr.operand)
    if isinstance(expr, BinOp):
        return free_variables(expr.left) | free_variables(expr.right)
    return free_variables(expr.arg)


# =============================================================================
# EVALUATION
# =============================================================================

def _divide(num: Any, den: Any) -> Any:
    if np.any(np.asarray(den) == 0.0):
        warnings.warn("division by zero", EvaluationWarning, stacklevel=3)
    return np.divide(num, den)


_BINARY: dict[str, Callable[[Any, Any], Any]] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _divide,
    "^": np.power,
}


def _evaluate(expr: Expr, env: Mapping[str, Any]) -> Any:
    if isinstance(expr, Num):
        return np.float64(expr.value)
    if isinstance(expr, Const):
        return np.float64(CONSTANTS[expr.name])
    if isinstance(expr, Var):
        try:
            value = env[expr.name]
        except KeyError:
            raise UnboundVariableError(expr.name) from None
        return np.asarray(value, dtype=np.float64)
    if isinstance(expr, Neg):
        return np.negative(_evaluate(expr.operand, env))
    if isinstance(expr, BinOp):
        return _BINARY[expr.op](_evaluate(expr.left, env), _evaluate(expr.right, env))
    return FUNCTIONS[expr.func](_evaluate(expr.arg, env))


def evaluate(expr: Expr, env: Mapping[str, Any]) -> Any:
    """
    Evaluate ``expr`` in IEEE double precision.

    Scalars in ``env`` give a float, arrays give an array (numpy
    broadcasting rules). NaN and Inf propagate.

    Raises:
        UnboundVariableError: a free variable has no binding.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        result = _evaluate(expr, env)
    if np.ndim(result) == 0:
        return float(result)
    return result


def compile_expr(expr: Expr) -> Callable[[Mapping[str, Any]], Any]:
    """
    Turn a tree into nested closures; same results as ``evaluate`` without
    the per-node dispatch. Used on the integrator's hot path.
    """
    if isinstance(expr, (Num, Const)):
        constant = np.float64(expr.value if isinstance(expr, Num) else CONSTANTS[expr.name])
        return lambda env: constant
    if isinstance(expr, Var):
        name = expr.name

        def lookup(env: Mapping[str, Any]) -> Any:
            try:
                return env[name]
            except KeyError:
                raise UnboundVariableError(name) from None

        return lookup
    if isinstance(expr, Neg):
        inner = compile_expr(expr.operand)
        return lambda env: np.negative(inner(env))
    if isinstance(expr, BinOp):
        left, right = compile_expr(expr.left), compile_expr(expr.right)
        op = _BINARY[expr.op]
        return lambda env: op(left(env), right(env))
    func = FUNCTIONS[expr.func]
    arg = compile_expr(expr.arg)
    return lambda env: func(arg(env))


__all__ = [
    "CONSTANTS",
    "FUNCTIONS",
    "BinOp",
    "Call",
    "Const",
    "Expr",
    "Neg",
    "Num",
    "Token",
    "Var",
    "compile_expr",
    "evaluate",
    "free_variables",
    "parse",
    "to_text",
    "tokenize",
]
