"""Tiny scalar expression language: parsing, evaluation, symbolic derivatives.

The grammar covers number literals, the variables ``t``, ``s``, ``x1..xn``,
``u1..um``, the binary operators ``+ - * / ^`` (with ``^`` right-associative
and binding tighter than unary minus), the calls ``sin cos tan exp log sqrt
abs max min tanh`` and the constants ``pi`` and ``e``.  Everything the rest
of the package consumes (vector fields, Lyapunov candidates, decay rates,
gains, signals) is declared in this language.

``Expr.eval`` is the reference scalar evaluator with strict error reporting;
``compile_expr`` emits a fast callable with a plain-float path (``math``) and
an ndarray path (``numpy``), dispatched per call.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

import numpy as np


class ExpressionError(Exception):
    """Base class for parse/eval failures; carries 1-based line/column."""

    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class ExpressionSyntaxError(ExpressionError):
    pass


class UnknownIdentifierError(ExpressionError):
    pass


class ArityError(ExpressionError):
    pass


class UnboundVariableError(ExpressionError):
    pass


class EvalDomainError(ExpressionError):
    pass


class NonSmoothPrimitiveError(ExpressionError):
    """Raised when differentiating through abs/max/min."""


_VAR_RE = re.compile(r"^(t|s|x[0-9]+|u[0-9]+)$")

_FUNCTIONS: dict[str, int] = {
    "sin": 1, "cos": 1, "tan": 1, "exp": 1, "log": 1, "sqrt": 1,
    "abs": 1, "tanh": 1, "max": 2, "min": 2,
}
_CONSTANTS = {"pi": math.pi, "e": math.e}
_NON_SMOOTH = {"abs", "max", "min"}


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Expr:
    """Immutable expression node."""

    def eval(self, env: Mapping[str, float]) -> float:
        raise NotImplementedError

    def variables(self) -> set[str]:
        raise NotImplementedError

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def eval(self, env):
        return self.value

    def variables(self):
        return set()


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def eval(self, env):
        try:
            return float(env[self.name])
        except KeyError:
            raise UnboundVariableError(f"unbound variable '{self.name}'") from None

    def variables(self):
        return {self.name}


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def eval(self, env):
        return -self.arg.eval(env)

    def variables(self):
        return self.arg.variables()


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            if b == 0.0:
                raise EvalDomainError("division by zero")
            return a / b
        # power: guard the cases where float ** would go complex or raise
        if a < 0.0 and b != round(b):
            raise EvalDomainError("negative base with fractional exponent")
        try:
            return float(a ** b)
        except (OverflowError, ZeroDivisionError) as exc:
            raise EvalDomainError(str(exc)) from None

    def variables(self):
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple[Expr, ...]

    def eval(self, env):
        vals = [a.eval(env) for a in self.args]
        f = self.func
        try:
            if f == "abs":
                return abs(vals[0])
            if f == "max":
                return max(vals[0], vals[1])
            if f == "min":
                return min(vals[0], vals[1])
            return getattr(math, f)(*vals)
        except ValueError as exc:
            raise EvalDomainError(f"{f}: {exc}") from None

    def variables(self):
        out: set[str] = set()
        for a in self.args:
            out |= a.variables()
        return out


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""(?P<num>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>[-+*/^(),])
      | (?P<ws>\s+)
      | (?P<bad>.)""",
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | name | op | end
    text: str
    line: int
    column: int


def _tokenize(text: str) -> Iterator[_Token]:
    line, col_base = 1, 0
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        tok = m.group()
        col = m.start() - col_base + 1
        if kind == "ws":
            nl = tok.count("\n")
            if nl:
                line += nl
                col_base = m.start() + tok.rfind("\n") + 1
            continue
        if kind == "bad":
            raise ExpressionSyntaxError(f"unexpected character {tok!r}", line, col)
        yield _Token(kind, tok, line, col)
    yield _Token("end", "", line, len(text) - col_base + 1)


# ---------------------------------------------------------------------------
# Parser (recursive descent; ^ right-assoc > unary - > * / > + -)

class _Parser:
    def __init__(self, text: str):
        self.tokens = list(_tokenize(text))
        self.pos = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        tok = self.cur
        self.pos += 1
        return tok

    def _expect(self, text: str) -> _Token:
        tok = self.cur
        if tok.kind != "op" or tok.text != text:
            raise ExpressionSyntaxError(
                f"expected {text!r}, found {tok.text or 'end of input'!r}",
                tok.line, tok.column)
        return self._advance()

    def parse(self) -> Expr:
        e = self._sum()
        tok = self.cur
        if tok.kind != "end":
            raise ExpressionSyntaxError(
                f"unexpected trailing input {tok.text!r}", tok.line, tok.column)
        return e

    def _sum(self) -> Expr:
        e = self._term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self._advance().text
            e = BinOp(op, e, self._term())
        return e

    def _term(self) -> Expr:
        e = self._unary()
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self._advance().text
            e = BinOp(op, e, self._unary())
        return e

    def _unary(self) -> Expr:
        if self.cur.kind == "op" and self.cur.text == "-":
            self._advance()
            return Neg(self._unary())
        if self.cur.kind == "op" and self.cur.text == "+":
            self._advance()
            return self._unary()
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        if self.cur.kind == "op" and self.cur.text == "^":
            self._advance()
            # right-assoc; allow a signed exponent like 2^-3
            return BinOp("^", base, self._unary())
        return base

    def _atom(self) -> Expr:
        tok = self.cur
        if tok.kind == "num":
            self._advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            self._advance()
            name = tok.text
            if self.cur.kind == "op" and self.cur.text == "(":
                if name not in _FUNCTIONS:
                    raise UnknownIdentifierError(
                        f"unknown function '{name}'", tok.line, tok.column)
                self._advance()
                args = [self._sum()]
                while self.cur.kind == "op" and self.cur.text == ",":
                    self._advance()
                    args.append(self._sum())
                self._expect(")")
                if len(args) != _FUNCTIONS[name]:
                    raise ArityError(
                        f"{name} takes {_FUNCTIONS[name]} argument(s), got {len(args)}",
                        tok.line, tok.column)
                return Call(name, tuple(args))
            if name in _CONSTANTS:
                return Num(_CONSTANTS[name])
            if name in _FUNCTIONS:
                raise ExpressionSyntaxError(
                    f"function '{name}' used without arguments", tok.line, tok.column)
            if not _VAR_RE.match(name):
                raise UnknownIdentifierError(
                    f"unknown identifier '{name}'", tok.line, tok.column)
            return Var(name)
        if tok.kind == "op" and tok.text == "(":
            self._advance()
            e = self._sum()
            self._expect(")")
            return e
        raise ExpressionSyntaxError(
            f"unexpected {tok.text or 'end of input'!r}", tok.line, tok.column)


def parse(text: str) -> Expr:
    """Parse an expression string into an AST."""
    return _Parser(text).parse()


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` with all free variables bound in ``env``."""
    return e.eval(env)


# ---------------------------------------------------------------------------
# Printing (round-trips through parse)

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_text(e: Expr) -> str:
    """Serialize an AST back to parseable text."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        if _prec(e.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_text(a) for a in e.args)})"
    if isinstance(e, BinOp):
        lp, rp = _prec(e.left), _prec(e.right)
        p = _PREC[e.op]
        left = to_text(e.left)
        right = to_text(e.right)
        # '-' and '/' are left-assoc, '^' right-assoc: parenthesize accordingly
        if lp < p or (e.op == "^" and lp <= p):
            left = f"({left})"
        if rp < p or (e.op in "-/" and rp <= p):
            right = f"({right})"
        return f"{left} {e.op} {right}" if e.op != "^" else f"{left}^{right}"
    raise TypeError(f"not an Expr: {e!r}")


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    if isinstance(e, Num) and e.value < 0:
        return _PREC["neg"]
    return 9


# ---------------------------------------------------------------------------
# Symbolic differentiation with 0/1 folding

def differentiate(e: Expr, var: str) -> Expr:
    """Symbolic d/d``var``; raises NonSmoothPrimitiveError for abs/max/min."""
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0) if e.name == var else Num(0.0)
    if isinstance(e, Neg):
        return _neg(differentiate(e.arg, var))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = None, None
        if e.op in "+-":
            da, db = differentiate(a, var), differentiate(b, var)
            return _add(da, _neg(db) if e.op == "-" else db)
        if e.op == "*":
            da, db = differentiate(a, var), differentiate(b, var)
            return _add(_mul(da, b), _mul(a, db))
        if e.op == "/":
            da, db = differentiate(a, var), differentiate(b, var)
            num = _add(_mul(da, b), _neg(_mul(a, db)))
            return _div(num, BinOp("^", b, Num(2.0)))
        # power
        if var not in b.variables():
            # a^c -> c * a^(c-1) * a'
            da = differentiate(a, var)
            if isinstance(b, Num):
                expo = Num(b.value - 1.0)
            else:
                expo = BinOp("-", b, Num(1.0))
            return _mul(_mul(b, BinOp("^", a, expo)), da)
        # general a^b via a^b * (b' log a + b a'/a)
        da, db = differentiate(a, var), differentiate(b, var)
        inner = _add(_mul(db, Call("log", (a,))), _mul(b, _div(da, a)))
        return _mul(e, inner)
    if isinstance(e, Call):
        if e.func in _NON_SMOOTH:
            raise NonSmoothPrimitiveError(
                f"'{e.func}' is not differentiable; use finite differences")
        (arg,) = e.args
        darg = differentiate(arg, var)
        outer = {
            "sin": lambda a: Call("cos", (a,)),
            "cos": lambda a: _neg(Call("sin", (a,))),
            "tan": lambda a: _div(Num(1.0), BinOp("^", Call("cos", (a,)), Num(2.0))),
            "exp": lambda a: Call("exp", (a,)),
            "log": lambda a: _div(Num(1.0), a),
            "sqrt": lambda a: _div(Num(1.0), _mul(Num(2.0), Call("sqrt", (a,)))),
            "tanh": lambda a: _add(Num(1.0), _neg(BinOp("^", Call("tanh", (a,)), Num(2.0)))),
        }[e.func](arg)
        return _mul(outer, darg)
    raise TypeError(f"not an Expr: {e!r}")


def _is_zero(e: Expr) -> bool:
    return isinstance(e, Num) and e.value == 0.0


def _is_one(e: Expr) -> bool:
    return isinstance(e, Num) and e.value == 1.0


def _add(a: Expr, b: Expr) -> Expr:
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if isinstance(b, Neg):
        return BinOp("-", a, b.arg)
    return BinOp("+", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_zero(a) or _is_zero(b):
        return Num(0.0)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_zero(a):
        return Num(0.0)
    if _is_one(b):
        return a
    return BinOp("/", a, b)


# ---------------------------------------------------------------------------
# Compilation to fast callables

_SCALAR_NS = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp,
    "log": math.log, "sqrt": math.sqrt, "tanh": math.tanh,
    "abs": abs, "max": max, "min": min, "_pow": None,  # placeholder, set below
}


def _scalar_pow(a, b):
    if a < 0.0 and b != round(b):
        raise EvalDomainError("negative base with fractional exponent")
    return a ** b


_SCALAR_NS["_pow"] = _scalar_pow

_VECTOR_NS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "log": np.log, "sqrt": np.sqrt, "tanh": np.tanh,
    "abs": np.abs, "max": np.maximum, "min": np.minimum,
    "_pow": np.power,
}


def _emit(e: Expr) -> str:
    if isinstance(e, Num):
        return f"({e.value!r})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_emit(e.arg)})"
    if isinstance(e, BinOp):
        if e.op == "^":
            return f"_pow({_emit(e.left)}, {_emit(e.right)})"
        return f"({_emit(e.left)} {e.op} {_emit(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(_emit(a) for a in e.args)})"
    raise TypeError(f"not an Expr: {e!r}")


def compile_expr(e: Expr | str, arg_names: tuple[str, ...]) -> Callable[..., float]:
    """Compile ``e`` to a positional callable over ``arg_names``.

    The result takes plain floats (fast ``math`` path) or numpy arrays
    (vectorized path); domain failures on the scalar path raise
    EvalDomainError, while the array path follows numpy nan semantics.
    """
    if isinstance(e, str):
        e = parse(e)
    missing = e.variables() - set(arg_names)
    if missing:
        raise UnboundVariableError(
            f"expression uses {sorted(missing)} not among arguments {list(arg_names)}")
    src = f"lambda {', '.join(arg_names) or '_'}: {_emit(e)}"
    fn_s = eval(src, dict(_SCALAR_NS))  # noqa: S307 - source emitted by _emit only
    fn_v = eval(src, dict(_VECTOR_NS))  # noqa: S307

    def call(*args):
        for a in args:
            if isinstance(a, np.ndarray):
                return fn_v(*args)
        try:
            return fn_s(*args)
        except ValueError as exc:
            raise EvalDomainError(str(exc)) from None
        except ZeroDivisionError:
            raise EvalDomainError("division by zero") from None

    call.expr = e  # type: ignore[attr-defined]
    call.arg_names = arg_names  # type: ignore[attr-defined]
    return call


def is_smooth(e: Expr) -> bool:
    """True when no abs/max/min appears anywhere in the tree."""
    if isinstance(e, Call):
        if e.func in _NON_SMOOTH:
            return False
        return all(is_smooth(a) for a in e.args)
    if isinstance(e, BinOp):
        return is_smooth(e.left) and is_smooth(e.right)
    if isinstance(e, Neg):
        return is_smooth(e.arg)
    return True
