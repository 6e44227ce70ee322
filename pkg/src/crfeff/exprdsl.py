"""
Closed-form coordinate expressions: parsing, printing and jet evaluation.

Grammar (lowest to highest precedence)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?          # right associative, real constant exponent
    atom   := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")"

``i`` is the imaginary unit and ``pi`` the usual constant.  Functions are
``conj``, ``exp``, ``log``, ``sqrt``, ``sin`` and ``cos``.  ``**`` is accepted
as a synonym for ``^``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .jets import Jet, JetError, SingularInputError, compose, jet_seed

FUNCTIONS = ("conj", "exp", "log", "sqrt", "sin", "cos")
RESERVED = {"i", "pi", *FUNCTIONS}


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text; ``position`` is a 0-based column."""

    def __init__(self, message: str, source: str, position: int):
        self.source = source
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at column {position}\n  {source}\n  {pointer}")


class UnresolvedNameError(ExprError):
    """A name is neither a coordinate nor a named subexpression."""


class SingularPointError(ExprError):
    """Expression is singular or outside its domain at the requested point."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: complex


@dataclass(frozen=True)
class Name:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or a function name
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # "+", "-", "*", "/"
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: float


Expr = Union[Const, Name, Unary, Binary, Pow]


def names_in(e: Expr) -> set[str]:
    """All names referenced by ``e``."""
    if isinstance(e, Name):
        return {e.name}
    if isinstance(e, Unary):
        return names_in(e.arg)
    if isinstance(e, Binary):
        return names_in(e.left) | names_in(e.right)
    if isinstance(e, Pow):
        return names_in(e.base)
    return set()


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if not m or m.end() == pos:
            col = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[col]!r}", source, col)
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        if text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, t, pos = self.take()
        if t != text:
            found = repr(t) if kind != "end" else "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found}", self.source, pos)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            raise ExprSyntaxError("empty expression", self.source, 0)
        e = self.expr()
        kind, t, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {t!r}", self.source, pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        t = self.peek()[1]
        if t == "-":
            self.take()
            return Unary("neg", self.unary())
        if t == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            _, _, pos = self.take()
            exp_expr = self.unary()
            value = constant_value(exp_expr)
            if value is None or abs(value.imag) > 0:
                raise ExprSyntaxError("exponent must be a real constant", self.source, pos + 1)
            return Pow(base, float(value.real))
        return base

    def atom(self) -> Expr:
        kind, t, pos = self.take()
        if kind == "num":
            return Const(complex(float(t)))
        if kind == "name":
            if t in FUNCTIONS:
                if self.peek()[1] != "(":
                    raise ExprSyntaxError(f"function {t!r} needs an argument", self.source, pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Unary(t, arg)
            if t == "i":
                return Const(1j)
            if t == "pi":
                return Const(complex(math.pi))
            return Name(t)
        if t == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = repr(t) if kind != "end" else "end of input"
        raise ExprSyntaxError(f"unexpected {found}", self.source, pos)


def parse_expr(source: str) -> Expr:
    """Parse expression text into an AST."""
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Printing and constant folding
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _num(x: float) -> str:
    return repr(float(x))


def _const_text(c: complex) -> str:
    if c == 1j:
        return "i"
    if c.imag == 0 and c.real >= 0:
        return _num(c.real)
    if c.imag == 0:
        return f"(-{_num(-c.real)})"
    if c.real == 0:
        return f"({_num(c.imag)}*i)"
    return f"({_num(c.real)}+{_num(c.imag)}*i)"


def to_text(e: Expr) -> str:
    """Render an AST as text that parses back to the same AST."""
    return _render(e)[0]


# binding strength of each rendered form: sum 1, product 2, unary 3, power 4, atom 5
def _wrap(e: Expr, need: int) -> str:
    text, level = _render(e)
    return text if level >= need else f"({text})"


def _render(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        return _const_text(e.value), 5
    if isinstance(e, Name):
        return e.name, 5
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.arg, 3), 3
        return f"{e.op}({to_text(e.arg)})", 5
    if isinstance(e, Pow):
        return f"{_wrap(e.base, 5)}^({_num(e.exponent)})", 4
    level = _PREC[e.op]
    return f"{_wrap(e.left, level)} {e.op} {_wrap(e.right, level + 1)}", level


def constant_value(e: Expr) -> complex | None:
    """Numeric value of a name-free expression, else ``None``."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Name):
        return None
    if isinstance(e, Unary):
        v = constant_value(e.arg)
        if v is None:
            return None
        return _scalar_unary(e.op, v)
    if isinstance(e, Pow):
        v = constant_value(e.base)
        return None if v is None else complex(v) ** e.exponent
    a, b = constant_value(e.left), constant_value(e.right)
    if a is None or b is None:
        return None
    return _scalar_binary(e.op, a, b)


def _scalar_unary(op: str, v: complex) -> complex:
    import cmath

    if op == "neg":
        return -v
    if op == "conj":
        return v.conjugate()
    return complex(getattr(cmath, op)(v))


def _scalar_binary(op: str, a: complex, b: complex) -> complex:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        raise SingularPointError("division by zero")
    return a / b


def evaluate_scalar(e: Expr, values: Mapping[str, complex]) -> complex:
    """Plain floating-point evaluation with names bound in ``values``."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Name):
        try:
            return complex(values[e.name])
        except KeyError:
            raise UnresolvedNameError(f"unresolved name {e.name!r}") from None
    if isinstance(e, Unary):
        return _scalar_unary(e.op, evaluate_scalar(e.arg, values))
    if isinstance(e, Pow):
        return complex(evaluate_scalar(e.base, values)) ** e.exponent
    return _scalar_binary(e.op, evaluate_scalar(e.left, values), evaluate_scalar(e.right, values))


def conjugate_expr(e: Expr) -> Expr:
    return Unary("conj", e)


# ---------------------------------------------------------------------------
# Charts and jet evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChartSpec:
    """Real coordinate chart with complex-coordinate sugar.

    Parameters
    ----------
    coordinates
        Real coordinate names, in chart order.
    complex_pairs
        Complex name mapped to its ``(real, imaginary)`` coordinate names.
    domain
        Optional expression that must be real and positive on the domain.
    box
        Optional sampling box: coordinate name mapped to ``(low, high)``.
    """

    coordinates: tuple[str, ...]
    complex_pairs: Mapping[str, tuple[str, str]] = field(default_factory=dict)
    domain: Expr | None = None
    box: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        coords = tuple(self.coordinates)
        object.__setattr__(self, "coordinates", coords)
        if len(set(coords)) != len(coords):
            raise ExprError("duplicate coordinate names")
        used: set[str] = set()
        for z, (re_, im_) in self.complex_pairs.items():
            if re_ not in coords or im_ not in coords:
                raise ExprError(f"complex coordinate {z!r} pairs unknown real coordinates")
            if {re_, im_} & used or re_ == im_:
                raise ExprError("complex pairings must be disjoint")
            used |= {re_, im_}
            if z in coords:
                raise ExprError(f"complex name {z!r} clashes with a real coordinate")

    @property
    def dim(self) -> int:
        return len(self.coordinates)

    def index(self, name: str) -> int:
        return self.coordinates.index(name)

    def pair_indices(self, z: str) -> tuple[int, int]:
        re_, im_ = self.complex_pairs[z]
        return self.index(re_), self.index(im_)

    def scalar_values(self, point: Sequence[float]) -> dict[str, complex]:
        vals = {n: complex(v) for n, v in zip(self.coordinates, point)}
        for z, (re_, im_) in self.complex_pairs.items():
            vals[z] = vals[re_] + 1j * vals[im_]
        return vals


class Evaluator:
    """Evaluate expressions at one point and order, memoizing shared work.

    Named subexpressions (``bindings``) are evaluated at most once.
    """

    def __init__(
        self,
        chart: ChartSpec,
        point: Sequence[float],
        order: int,
        bindings: Mapping[str, Expr] | None = None,
        extra: Mapping[str, Jet] | None = None,
    ):
        if len(point) != chart.dim:
            raise ExprError(f"point has {len(point)} entries, chart has {chart.dim}")
        self.chart = chart
        self.point = tuple(float(p) for p in point)
        self.order = order
        self.bindings = dict(bindings or {})
        self._memo: dict[str, Jet] = dict(extra or {})
        self._active: set[str] = set()
        self._cache: dict[Expr, Jet] = {}

    def name(self, name: str) -> Jet:
        if name in self._memo:
            return self._memo[name]
        chart = self.chart
        if name in chart.coordinates:
            j = jet_seed(chart.index(name), self.point[chart.index(name)], max(self.order, 1), chart.dim)
            j = j.truncate(self.order) if self.order < 1 else j
        elif name in chart.complex_pairs:
            a, b = chart.pair_indices(name)
            j = self.name(chart.coordinates[a]) + 1j * self.name(chart.coordinates[b])
        elif name in self.bindings:
            if name in self._active:
                raise ExprError(f"cyclic named subexpression {name!r}")
            self._active.add(name)
            try:
                j = self(self.bindings[name])
            finally:
                self._active.discard(name)
        else:
            raise UnresolvedNameError(f"unresolved name {name!r}")
        self._memo[name] = j
        return j

    def __call__(self, e: Expr) -> Jet:
        hit = self._cache.get(e)
        if hit is not None:
            return hit
        j = self._eval(e)
        self._cache[e] = j
        return j

    def _eval(self, e: Expr) -> Jet:
        dim, order = self.chart.dim, self.order
        if isinstance(e, Const):
            return Jet.constant(e.value, dim, order)
        if isinstance(e, Name):
            return self.name(e.name)
        try:
            if isinstance(e, Unary):
                a = self(e.arg)
                if e.op == "neg":
                    return -a
                if e.op == "conj":
                    return a.conj()
                return compose(e.op, a)
            if isinstance(e, Pow):
                return compose("power", self(e.base), e.exponent)
            a, b = self(e.left), self(e.right)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if b.coeffs[0] == 0:
                raise SingularPointError(f"division by zero at {self.point}")
            return a / b
        except SingularInputError as exc:
            raise SingularPointError(f"{exc} at {self.point}") from exc


def eval_expr(
    e: Expr,
    chart: ChartSpec,
    point: Sequence[float],
    order: int,
    bindings: Mapping[str, Expr] | None = None,
) -> Jet:
    """Jet of ``e`` at ``point`` truncated at ``order``."""
    return Evaluator(chart, point, order, bindings)(e)


def in_domain(chart: ChartSpec, point: Sequence[float], bindings: Mapping[str, Expr] | None = None) -> bool:
    """Whether ``point`` satisfies the chart's domain predicate."""
    if chart.domain is None:
        return True
    vals = chart.scalar_values(point)
    env = _ScalarEnv(vals, bindings or {})
    try:
        v = env.eval(chart.domain)
    except (SingularPointError, ZeroDivisionError, ValueError, OverflowError):
        return False
    return abs(v.imag) <= 1e-12 * max(1.0, abs(v.real)) and v.real > 0


class _ScalarEnv:
    def __init__(self, values: dict[str, complex], bindings: Mapping[str, Expr]):
        self.values = dict(values)
        self.bindings = bindings

    def eval(self, e: Expr) -> complex:
        for n in names_in(e):
            if n not in self.values and n in self.bindings:
                self.values[n] = self.eval(self.bindings[n])
        return evaluate_scalar(e, self.values)


def scalar_eval(
    e: Expr, chart: ChartSpec, point: Sequence[float], bindings: Mapping[str, Expr] | None = None
) -> complex:
    """Floating-point value of ``e`` at ``point`` (no derivatives)."""
    return _ScalarEnv(chart.scalar_values(point), bindings or {}).eval(e)


def jet_value_real(j: Jet, tol: float = 1e-10) -> bool:
    """True when every coefficient of ``j`` is real to ``tol``."""
    return bool(np.all(np.abs(j.coeffs.imag) <= tol * np.maximum(1.0, np.abs(j.coeffs.real))))


__all__ = [
    "Binary",
    "ChartSpec",
    "Const",
    "Evaluator",
    "Expr",
    "ExprError",
    "ExprSyntaxError",
    "JetError",
    "Name",
    "Pow",
    "SingularPointError",
    "Unary",
    "UnresolvedNameError",
    "constant_value",
    "eval_expr",
    "evaluate_scalar",
    "in_domain",
    "names_in",
    "parse_expr",
    "scalar_eval",
    "to_text",
]
