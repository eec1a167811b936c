"""Arithmetic expression parser and evaluator for user-defined densities.

Grammar (EBNF):

    expr    = term , { ("+" | "-") , term } ;
    term    = unary , { ("*" | "/") , unary } ;
    unary   = ("+" | "-") , unary | power ;
    power   = atom , [ "^" , unary ] ;            (* right associative *)
    atom    = NUMBER | IDENT | IDENT "(" expr { "," expr } ")" | "(" expr ")" ;

Identifiers are the declared variables (``x, m`` for interval families,
``x, a, t`` in collar form), the constants ``pi`` and ``e``, and the
functions ``sin cos exp log sqrt abs min max``.  Evaluation accepts numpy
arrays and raises EvaluationDomainError where the mathematical domain is
left (log of a non-positive value, division by zero, sqrt of a negative,
0 raised to a negative power).
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationDomainError, ExpressionSyntaxError

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
}

CONSTANTS = {"pi": math.pi, "e": math.e}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    pos: int


def tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            offset = len(text) - len(stripped)
            raise ExpressionSyntaxError(f"unexpected character {stripped[0]!r}", offset)
        if match.group("num") is not None:
            tokens.append(Token("num", match.group("num"), match.start("num")))
        elif match.group("ident") is not None:
            tokens.append(Token("ident", match.group("ident"), match.start("ident")))
        else:
            tokens.append(Token("op", match.group("op"), match.start("op")))
        pos = match.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


class Node:
    def evaluate(self, env):
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Node):
    value: float

    def evaluate(self, env):
        return self.value

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Var(Node):
    name: str

    def evaluate(self, env):
        if self.name in env:
            return env[self.name]
        return CONSTANTS[self.name]

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Node):
    operand: Node

    def evaluate(self, env):
        return -self.operand.evaluate(env)

    def __str__(self):
        return f"-{_paren(self.operand, 25)}"


def _safe_divide(num, den):
    den_arr = np.asarray(den)
    if np.any(den_arr == 0):
        raise EvaluationDomainError("division by zero")
    return num / den

def _safe_pow(base, exponent):
    base_arr = np.asarray(base, dtype=float)
    exp_arr = np.asarray(exponent, dtype=float)
    if np.any((base_arr == 0) & (exp_arr < 0)):
        raise EvaluationDomainError("zero raised to a negative power")
    if np.any((base_arr < 0) & (exp_arr != np.round(exp_arr))):
        raise EvaluationDomainError("negative base with non-integer exponent")
    return np.power(base, exponent)


_BINOPS = {
    "+": (10, lambda a, b: a + b),
    "-": (10, lambda a, b: a - b),
    "*": (20, lambda a, b: a * b),
    "/": (20, _safe_divide),
    "^": (30, _safe_pow),
}


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def evaluate(self, env):
        return _BINOPS[self.op][1](self.left.evaluate(env), self.right.evaluate(env))

    def __str__(self):
        prec = _BINOPS[self.op][0]
        # left-assoc except ^; tighten the right side for - and /
        left = _paren(self.left, prec + (1 if self.op == "^" else 0))
        right = _paren(self.right, prec + (0 if self.op == "^" else 1))
        return f"{left} {self.op} {right}"


def _safe_log(v):
    arr = np.asarray(v, dtype=float)
    if np.any(arr <= 0):
        raise EvaluationDomainError("log of a non-positive value")
    return np.log(v)

def _safe_sqrt(v):
    arr = np.asarray(v, dtype=float)
    if np.any(arr < 0):
        raise EvaluationDomainError("sqrt of a negative value")
    return np.sqrt(v)


_FUNC_IMPL = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": _safe_log,
    "sqrt": _safe_sqrt,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}


@dataclass(frozen=True)
class Call(Node):
    func: str
    args: tuple

    def evaluate(self, env):
        vals = [arg.evaluate(env) for arg in self.args]
        return _FUNC_IMPL[self.func](*vals)

    def __str__(self):
        inner = ", ".join(str(a) for a in self.args)
        return f"{self.func}({inner})"


def _precedence(node):
    if isinstance(node, BinOp):
        return _BINOPS[node.op][0]
    if isinstance(node, Neg):
        return 25
    return 100


def _paren(node, minimum):
    text = str(node)
    return f"({text})" if _precedence(node) < minimum else text


class _Parser:
    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.i = 0
        self.variables = frozenset(variables)

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        tok = self.advance()
        if tok.kind != "op" or tok.value != op:
            raise ExpressionSyntaxError(f"expected {op!r}", tok.pos)

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExpressionSyntaxError(f"unexpected trailing input {tok.value!r}", tok.pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().value in "+-":
            op = self.advance().value
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind == "op" and self.peek().value in "*/":
            op = self.advance().value
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.value in "+-":
            self.advance()
            operand = self.unary()
            return operand if tok.value == "+" else Neg(operand)
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.value == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.value))
        if tok.kind == "ident":
            name = tok.value
            if self.peek().kind == "op" and self.peek().value == "(":
                if name not in FUNCTIONS:
                    raise ExpressionSyntaxError(f"unknown function {name!r}", tok.pos)
                self.advance()
                args = [self.expr()]
                while self.peek().kind == "op" and self.peek().value == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect_op(")")
                if len(args) != FUNCTIONS[name]:
                    raise ExpressionSyntaxError(
                        f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", tok.pos
                    )
                return Call(name, tuple(args))
            if name in self.variables or name in CONSTANTS:
                return Var(name)
            raise ExpressionSyntaxError(f"unknown identifier {name!r}", tok.pos)
        if tok.kind == "op" and tok.value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionSyntaxError(
            f"expected a number, name or parenthesis, got {tok.value!r}" if tok.kind != "end"
            else "unexpected end of input",
            tok.pos,
        )


@dataclass(frozen=True)
class ExpressionAst:
    """Parsed expression plus its declared variables."""

    root: Node
    variables: tuple
    source: str

    def evaluate(self, **env):
        missing = set(self.variables) - set(env)
        if missing:
            raise EvaluationDomainError(f"missing variables {sorted(missing)}")
        return self.root.evaluate(env)

    def pretty(self):
        """Canonical rendering; re-parsing it yields an equivalent AST."""
        return str(self.root)


def parse_density_expression(text, variables=("x", "m")):
    """Parse a density expression over the given variables.

    Raises ExpressionSyntaxError (with byte offset) for malformed input,
    unknown identifiers and arity mismatches.
    """
    tokens = tokenize(text)
    root = _Parser(tokens, variables).parse()
    return ExpressionAst(root=root, variables=tuple(variables), source=text)
