"""Small expression language for chart coefficient functions.

Expressions are immutable ASTs over named coordinates and exact rational
constants, closed under +, -, *, /, integer powers, sin, cos and exp, with
exact symbolic differentiation.  Construction goes through smart constructors
that fold constants; no further simplification is attempted (or needed for
correctness).
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable


class DslError(ValueError):
    """Problem with a DSL source string."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class DslSyntaxError(DslError):
    pass


class UnknownIdentifierError(DslError):
    def __init__(self, name: str, line: int, column: int):
        super().__init__(f"unknown identifier {name!r}", line, column)
        self.name = name


class DegenerateDenominatorError(ArithmeticError):
    """A division (or negative power) hit a near-zero denominator at a point.

    The caller is expected to drop the offending sample point and record the
    diagnostic, not to let this poison a whole verification run.
    """

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


DENOMINATOR_FLOOR = 1e-12


class Expr:
    """Base class for expression nodes."""

    __slots__ = ()

    def diff(self, name: str) -> "Expr":
        raise NotImplementedError

    def evaluate(self, env: dict[str, float], cache: dict[int, float] | None = None) -> float:
        """Value at the point described by ``env`` (coordinate name -> float).

        ``cache`` memoizes shared subtrees for the duration of one point.
        It is keyed by node identity, so only share a cache across
        expressions that all stay alive until the last lookup; a freed
        node's id may be recycled by a new one.
        """
        if cache is None:
            cache = {}
        return self._eval(env, cache)

    def _eval(self, env: dict[str, float], cache: dict[int, float]) -> float:
        raise NotImplementedError

    # Operator sugar so tensor code reads like the formulas it implements.
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, n: int):
        return pow_(self, n)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"{type(self).__name__}({to_text(self)!r})"

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash((type(self).__name__, self._key()))

    def _key(self):
        raise NotImplementedError


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: Fraction):
        object.__setattr__(self, "value", value)

    def __setattr__(self, *args):
        raise AttributeError("expressions are immutable")

    def diff(self, name):
        return ZERO

    def _eval(self, env, cache):
        return float(self.value)

    def _key(self):
        return self.value


class Coord(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)

    __setattr__ = Const.__setattr__

    def diff(self, name):
        return ONE if name == self.name else ZERO

    def _eval(self, env, cache):
        return env[self.name]

    def _key(self):
        return self.name


class _Binary(Expr):
    __slots__ = ("left", "right")

    def __init__(self, left: Expr, right: Expr):
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    __setattr__ = Const.__setattr__

    def _key(self):
        return (self.left, self.right)


class Add(_Binary):
    __slots__ = ()

    def diff(self, name):
        return add(self.left.diff(name), self.right.diff(name))

    def _eval(self, env, cache):
        key = id(self)
        hit = cache.get(key)
        if hit is None:
            hit = cache[key] = self.left._eval(env, cache) + self.right._eval(env, cache)
        return hit


class Sub(_Binary):
    __slots__ = ()

    def diff(self, name):
        return sub(self.left.diff(name), self.right.diff(name))

    def _eval(self, env, cache):
        key = id(self)
        hit = cache.get(key)
        if hit is None:
            hit = cache[key] = self.left._eval(env, cache) - self.right._eval(env, cache)
        return hit


class Mul(_Binary):
    __slots__ = ()

    def diff(self, name):
        return add(mul(self.left.diff(name), self.right), mul(self.left, self.right.diff(name)))

    def _eval(self, env, cache):
        key = id(self)
        hit = cache.get(key)
        if hit is None:
            hit = cache[key] = self.left._eval(env, cache) * self.right._eval(env, cache)
        return hit


class Div(_Binary):
    __slots__ = ()

    def diff(self, name):
        u, v = self.left, self.right
        return div(sub(mul(u.diff(name), v), mul(u, v.diff(name))), mul(v, v))

    def _eval(self, env, cache):
        key = id(self)
        hit = cache.get(key)
        if hit is None:
            den = self.right._eval(env, cache)
            if abs(den) < DENOMINATOR_FLOOR:
                raise DegenerateDenominatorError(
                    f"denominator {to_text(self.right)} = {den!r} below {DENOMINATOR_FLOOR}"
                )
            hit = cache[key] = self.left._eval(env, cache) / den
        return hit


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: int):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", exponent)

    __setattr__ = Const.__setattr__

    def diff(self, name):
        n = self.exponent
        return mul(mul(const(n), pow_(self.base, n - 1)), self.base.diff(name))

    def _eval(self, env, cache):
        key = id(self)
        hit = cache.get(key)
        if hit is None:
            b = self.base._eval(env, cache)
            if self.exponent < 0 and abs(b) < DENOMINATOR_FLOOR:
                raise DegenerateDenominatorError(
                    f"base {to_text(self.base)} = {b!r} below {DENOMINATOR_FLOOR} "
                    f"with negative exponent {self.exponent}"
                )
            hit = cache[key] = b ** self.exponent
        return hit

    def _key(self):
        return (self.base, self.exponent)


class Neg(Expr):
    __slots__ = ("operand",)

    def __init__(self, operand: Expr):
        object.__setattr__(self, "operand", operand)

    __setattr__ = Const.__setattr__

    def diff(self, name):
        return neg(self.operand.diff(name))

    def _eval(self, env, cache):
        return -self.operand._eval(env, cache)

    def _key(self):
        return self.operand


class _Call(Expr):
    __slots__ = ("argument",)
    _fn = None
    _name = ""

    def __init__(self, argument: Expr):
        object.__setattr__(self, "argument", argument)

    __setattr__ = Const.__setattr__

    def _eval(self, env, cache):
        key = id(self)
        hit = cache.get(key)
        if hit is None:
            hit = cache[key] = type(self)._fn(self.argument._eval(env, cache))
        return hit

    def _key(self):
        return self.argument


class Sin(_Call):
    __slots__ = ()
    _fn = math.sin
    _name = "sin"

    def diff(self, name):
        return mul(cos(self.argument), self.argument.diff(name))


class Cos(_Call):
    __slots__ = ()
    _fn = math.cos
    _name = "cos"

    def diff(self, name):
        return neg(mul(sin(self.argument), self.argument.diff(name)))


class Exp(_Call):
    __slots__ = ()
    _fn = math.exp
    _name = "exp"

    def diff(self, name):
        return mul(self, self.argument.diff(name))


# ---------------------------------------------------------------------------
# Smart constructors.  They fold constants so that derived tensors (inverse
# metrics, Christoffel symbols, nested brackets) stay small when the inputs
# are sparse, which they almost always are.

def const(value) -> Const:
    if isinstance(value, Const):
        return value
    return Const(Fraction(value))


ZERO = const(0)
ONE = const(1)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse(value)
    return const(value)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0


def is_one(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 1


def add(a: Expr, b: Expr) -> Expr:
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return const(a.value + b.value)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if is_zero(b):
        return a
    if is_zero(a):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return const(a.value - b.value)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if is_zero(a) or is_zero(b):
        return ZERO
    if is_one(a):
        return b
    if is_one(b):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return const(a.value * b.value)
    if isinstance(b, Const):
        return mul(b, a)
    if isinstance(a, Const) and isinstance(b, Mul) and isinstance(b.left, Const):
        return mul(const(a.value * b.left.value), b.right)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if is_one(b):
        return a
    if is_zero(a):
        return ZERO
    if isinstance(a, Const) and isinstance(b, Const):
        if b.value == 0:
            raise ZeroDivisionError("constant division by zero")
        return const(a.value / b.value)
    return Div(a, b)


def pow_(base: Expr, exponent: int) -> Expr:
    if not isinstance(exponent, int):
        raise TypeError(f"exponent must be an integer, got {exponent!r}")
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        return const(base.value ** exponent)
    return Pow(base, exponent)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return const(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def sin(a: Expr) -> Expr:
    if is_zero(a):
        return ZERO
    return Sin(a)


def cos(a: Expr) -> Expr:
    if is_zero(a):
        return ONE
    return Cos(a)


def exp(a: Expr) -> Expr:
    if is_zero(a):
        return ONE
    return Exp(a)


def constant_fold(e: Expr) -> Expr:
    """Rebuild ``e`` bottom-up through the smart constructors.

    Purely an optimization; evaluation semantics are unchanged.
    """
    if isinstance(e, (Const, Coord)):
        return e
    if isinstance(e, Add):
        return add(constant_fold(e.left), constant_fold(e.right))
    if isinstance(e, Sub):
        return sub(constant_fold(e.left), constant_fold(e.right))
    if isinstance(e, Mul):
        return mul(constant_fold(e.left), constant_fold(e.right))
    if isinstance(e, Div):
        return div(constant_fold(e.left), constant_fold(e.right))
    if isinstance(e, Pow):
        return pow_(constant_fold(e.base), e.exponent)
    if isinstance(e, Neg):
        return neg(constant_fold(e.operand))
    if isinstance(e, Sin):
        return sin(constant_fold(e.argument))
    if isinstance(e, Cos):
        return cos(constant_fold(e.argument))
    if isinstance(e, Exp):
        return exp(constant_fold(e.argument))
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Pretty printing.  The output re-parses to a semantically equal expression.

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_POW = 3
_PREC_ATOM = 4


def to_text(e: Expr) -> str:
    return _render(e, 0)


def _render(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Const):
        v = e.value
        if v.denominator == 1:
            text = str(v.numerator) if v >= 0 else f"(-{-v.numerator})"
        else:
            text = f"{v.numerator}/{v.denominator}" if v >= 0 else f"(-{-v.numerator}/{v.denominator})"
            if parent_prec >= _PREC_MUL and v >= 0:
                text = f"({text})"
        return text
    if isinstance(e, Coord):
        return e.name
    if isinstance(e, Add):
        text = f"{_render(e.left, _PREC_ADD)} + {_render(e.right, _PREC_ADD)}"
        return f"({text})" if parent_prec > _PREC_ADD else text
    if isinstance(e, Sub):
        text = f"{_render(e.left, _PREC_ADD)} - {_render(e.right, _PREC_ADD + 1)}"
        return f"({text})" if parent_prec > _PREC_ADD else text
    if isinstance(e, Mul):
        text = f"{_render(e.left, _PREC_MUL)}*{_render(e.right, _PREC_MUL)}"
        return f"({text})" if parent_prec > _PREC_MUL else text
    if isinstance(e, Div):
        text = f"{_render(e.left, _PREC_MUL)}/{_render(e.right, _PREC_MUL + 1)}"
        return f"({text})" if parent_prec > _PREC_MUL else text
    if isinstance(e, Pow):
        text = f"{_render(e.base, _PREC_ATOM)}^{e.exponent}"
        return f"({text})" if parent_prec > _PREC_POW else text
    if isinstance(e, Neg):
        return f"(-{_render(e.operand, _PREC_ATOM)})"
    if isinstance(e, _Call):
        return f"{type(e)._name}({_render(e.argument, 0)})"
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Parsing: a plain recursive-descent reader for
#   expr   := term (('+'|'-') term)*
#   term   := factor (('*'|'/') factor)*
#   factor := base ('^' integer)?
#   base   := number | ident | '(' expr ')' | ('sin'|'cos'|'exp') '(' expr ')' | '-' base

_FUNCTIONS = {"sin": sin, "cos": cos, "exp": exp}


class _Token:
    __slots__ = ("kind", "text", "line", "column")

    def __init__(self, kind, text, line, column):
        self.kind = kind
        self.text = text
        self.line = line
        self.column = column


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            start = i
            startcol = col
            while i < n and (text[i].isdigit() or text[i] == "."):
                i += 1
                col += 1
            word = text[start:i]
            if word.count(".") > 1:
                raise DslSyntaxError(f"malformed number {word!r}", line, startcol)
            tokens.append(_Token("number", word, line, startcol))
            continue
        if ch.isalpha() or ch == "_":
            start = i
            startcol = col
            while i < n and (text[i].isalnum() or text[i] == "_"):
                i += 1
                col += 1
            tokens.append(_Token("ident", text[start:i], line, startcol))
            continue
        if ch in "+-*/^()":
            tokens.append(_Token(ch, ch, line, col))
            i += 1
            col += 1
            continue
        raise DslSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], names: Iterable[str] | None):
        self.tokens = tokens
        self.pos = 0
        self.names = None if names is None else set(names)

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self, kind: str) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != kind:
            shown = tok.text or "end of input"
            raise DslSyntaxError(f"expected {kind!r}, found {shown!r}", tok.line, tok.column)
        self.pos += 1
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise DslSyntaxError(f"unexpected trailing input {tok.text!r}", tok.line, tok.column)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.take(self.peek().kind).kind
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek().kind in ("*", "/"):
            op = self.take(self.peek().kind).kind
            rhs = self.factor()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def factor(self) -> Expr:
        e = self.base()
        if self.peek().kind == "^":
            self.take("^")
            sign = 1
            if self.peek().kind == "-":
                self.take("-")
                sign = -1
            tok = self.take("number")
            if "." in tok.text:
                raise DslSyntaxError(f"exponent must be an integer, found {tok.text!r}", tok.line, tok.column)
            e = pow_(e, sign * int(tok.text))
        return e

    def base(self) -> Expr:
        tok = self.peek()
        if tok.kind == "number":
            self.take("number")
            return const(Fraction(tok.text))
        if tok.kind == "-":
            self.take("-")
            return neg(self.base())
        if tok.kind == "(":
            self.take("(")
            e = self.expr()
            self.take(")")
            return e
        if tok.kind == "ident":
            self.take("ident")
            fn = _FUNCTIONS.get(tok.text)
            if fn is not None:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return fn(arg)
            if self.names is not None and tok.text not in self.names:
                raise UnknownIdentifierError(tok.text, tok.line, tok.column)
            return Coord(tok.text)
        shown = tok.text or "end of input"
        raise DslSyntaxError(f"expected an expression, found {shown!r}", tok.line, tok.column)


def parse(text: str, names: Iterable[str] | None = None) -> Expr:
    """Parse DSL ``text`` into an expression.

    ``names`` restricts identifiers (typically to the chart coordinates);
    anything else raises :class:`UnknownIdentifierError`.
    """
    return _Parser(_tokenize(text), names).parse()
