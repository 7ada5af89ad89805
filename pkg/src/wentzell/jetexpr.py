"""Smooth expression language evaluated as truncated multivariate Taylor jets.

Expressions are parsed from text (grammar below) into immutable trees and can be
evaluated either as plain numpy values or as jets: the table of all partial
derivatives ``D^alpha f`` with ``|alpha| <= K`` at a batch of points, computed
by truncated-Taylor arithmetic rather than differencing.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | factor
    factor := base ('^' ['-'] int)?
    base   := number | 'x'int | 't' | func '(' expr ')' | '(' expr ')'
    func   := sin | cos | exp | tanh | sqrt
"""

from __future__ import annotations

import functools
import itertools
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Jet",
    "Expr",
    "PiecewiseExpr",
    "ExprSyntaxError",
    "EvaluationError",
    "parse",
    "eval_jet",
    "multi_indices",
]


class ExprSyntaxError(ValueError):
    """Raised for malformed expression text; ``pos`` is a 0-based offset."""

    def __init__(self, message: str, pos: int, source: str = ""):
        self.pos = pos
        self.source = source
        super().__init__(f"{message} at position {pos}")


class EvaluationError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# multi-index tables


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@functools.lru_cache(maxsize=None)
def multi_indices(dim: int, order: int) -> tuple[tuple[int, ...], ...]:
    """All multi-indices with ``|alpha| <= order``, graded then lexicographic."""
    return tuple(a for k in range(order + 1) for a in _compositions(k, dim))


@functools.lru_cache(maxsize=None)
def _index_map(dim: int, order: int) -> dict:
    return {a: i for i, a in enumerate(multi_indices(dim, order))}


@functools.lru_cache(maxsize=None)
def _factorials(dim: int, order: int) -> np.ndarray:
    return np.array(
        [math.prod(math.factorial(k) for k in a) for a in multi_indices(dim, order)],
        dtype=float,
    )


@functools.lru_cache(maxsize=None)
def _product_table(dim: int, order: int):
    idx = multi_indices(dim, order)
    pos = _index_map(dim, order)
    a_pos, b_pos, starts = [], [], []
    for gamma in idx:
        starts.append(len(a_pos))
        for beta in itertools.product(*(range(g + 1) for g in gamma)):
            rest = tuple(g - b for g, b in zip(gamma, beta))
            a_pos.append(pos[beta])
            b_pos.append(pos[rest])
    # summation matrix: row gamma adds the pair products landing on gamma
    ends = starts[1:] + [len(a_pos)]
    summ = np.zeros((len(idx), len(a_pos)))
    for g, (s0, s1) in enumerate(zip(starts, ends)):
        summ[g, s0:s1] = 1.0
    return np.array(a_pos), np.array(b_pos), summ


_LOOP_BATCH = 1024


@functools.lru_cache(maxsize=None)
def _pair_lists(dim: int, order: int):
    a_pos, b_pos, summ = _product_table(dim, order)
    return [list(zip(a_pos[row > 0].tolist(), b_pos[row > 0].tolist())) for row in summ]


@functools.lru_cache(maxsize=None)
def _diff_table(dim: int, order: int, axis: int):
    pos = _index_map(dim, order)
    src, fac = [], []
    for alpha in multi_indices(dim, order - 1):
        up = list(alpha)
        up[axis] += 1
        src.append(pos[tuple(up)])
        fac.append(float(up[axis]))
    return np.array(src), np.array(fac)


@functools.lru_cache(maxsize=None)
def _ncoef(dim: int, order: int) -> int:
    return math.comb(dim + order, order)


# ---------------------------------------------------------------------------
# jets


class Jet:
    """Truncated Taylor expansion of a scalar function on a batch of points.

    ``coeffs[i]`` holds the normalized Taylor coefficient ``D^alpha f / alpha!``
    for the i-th multi-index of :func:`multi_indices`; trailing axes are the
    batch.  Indexing with a multi-index returns the derivative ``D^alpha f``.
    """

    __slots__ = ("dim", "order", "coeffs")
    __array_priority__ = 100

    def __init__(self, dim: int, order: int, coeffs: np.ndarray):
        if coeffs.shape[0] != _ncoef(dim, order):
            raise ValueError("coefficient table has the wrong length")
        self.dim = dim
        self.order = order
        self.coeffs = coeffs

    @classmethod
    def constant(cls, dim, order, value, batch_shape=()):
        c = np.zeros((_ncoef(dim, order),) + tuple(batch_shape))
        c[0] = value
        return cls(dim, order, c)

    @classmethod
    def variable(cls, dim, order, axis, value):
        value = np.asarray(value, dtype=float)
        c = np.zeros((_ncoef(dim, order),) + value.shape)
        c[0] = value
        if order >= 1:
            c[_index_map(dim, order)[tuple(int(i == axis) for i in range(dim))]] = 1.0
        return cls(dim, order, c)

    @property
    def batch_shape(self):
        return self.coeffs.shape[1:]

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    def __len__(self):
        return self.coeffs.shape[0]

    def __getitem__(self, alpha) -> np.ndarray:
        alpha = tuple(alpha)
        i = _index_map(self.dim, self.order)[alpha]
        return self.coeffs[i] * _factorials(self.dim, self.order)[i]

    def derivatives(self) -> np.ndarray:
        """All ``D^alpha f`` in :func:`multi_indices` order."""
        fac = _factorials(self.dim, self.order).reshape((-1,) + (1,) * len(self.batch_shape))
        return self.coeffs * fac

    def gradient(self) -> np.ndarray:
        """First derivatives, shape ``(dim, *batch)``."""
        pos = _index_map(self.dim, self.order)
        rows = [pos[tuple(int(i == j) for i in range(self.dim))] for j in range(self.dim)]
        return self.coeffs[rows]

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise ValueError("cannot raise the order of a jet")
        if order == self.order:
            return self
        return Jet(self.dim, order, self.coeffs[: _ncoef(self.dim, order)])

    def diff(self, axis: int) -> "Jet":
        """Jet of ``D_axis f`` (one order lower)."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        src, fac = _diff_table(self.dim, self.order, axis)
        fac = fac.reshape((-1,) + (1,) * len(self.batch_shape))
        return Jet(self.dim, self.order - 1, self.coeffs[src] * fac)

    # arithmetic ------------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.dim != self.dim:
                raise ValueError("jet dimensions differ")
            order = min(self.order, other.order)
            return self.truncate(order), other.truncate(order)
        return None

    def __add__(self, other):
        pair = self._coerce(other)
        if pair is not None:
            a, b = pair
            return Jet(a.dim, a.order, a.coeffs + b.coeffs)
        c = self.coeffs.copy()
        c[0] = c[0] + other
        return Jet(self.dim, self.order, c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.dim, self.order, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        pair = self._coerce(other)
        if pair is None:
            other = np.asarray(other, dtype=float)
            return Jet(self.dim, self.order, self.coeffs * other)
        a, b = pair
        a_pos, b_pos, summ = _product_table(a.dim, a.order)
        batch = a.coeffs.shape[1:]
        n = math.prod(batch)
        if n >= _LOOP_BATCH:
            # large batches: plain vector products beat fancy-index gathers
            out = np.empty_like(a.coeffs)
            for g, pairs in enumerate(_pair_lists(a.dim, a.order)):
                i, j = pairs[0]
                acc = a.coeffs[i] * b.coeffs[j]
                for i, j in pairs[1:]:
                    acc += a.coeffs[i] * b.coeffs[j]
                out[g] = acc
            return Jet(a.dim, a.order, out)
        prod = (a.coeffs[a_pos] * b.coeffs[b_pos]).reshape(len(a_pos), -1)
        return Jet(a.dim, a.order, (summ @ prod).reshape((summ.shape[0],) + batch))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        other = np.asarray(other, dtype=float)
        if np.any(other == 0):
            raise EvaluationError("division by zero")
        return Jet(self.dim, self.order, self.coeffs / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise TypeError("jets only support integer powers")
        n = int(n)
        if n < 0:
            return self.reciprocal() ** (-n)
        result = Jet.constant(self.dim, self.order, 1.0, self.batch_shape)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def compose(self, taylor: Sequence[np.ndarray]) -> "Jet":
        """Jet of ``g(f)`` given ``taylor[n] = g^(n)(f_0) / n!`` for n <= order."""
        h = self.coeffs.copy()
        h[0] = 0.0
        h = Jet(self.dim, self.order, h)
        out = Jet.constant(self.dim, self.order, 0.0, self.batch_shape)
        out.coeffs[0] = taylor[self.order]
        for n in range(self.order - 1, -1, -1):
            out = out * h if self.order else out
            out.coeffs[0] = out.coeffs[0] + taylor[n]
        return out

    def reciprocal(self) -> "Jet":
        a = self.value
        if np.any(a == 0) or not np.all(np.isfinite(a)):
            raise EvaluationError("division by zero")
        inv = 1.0 / a
        return self.compose([(-1.0) ** n * inv ** (n + 1) for n in range(self.order + 1)])

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self.compose([e / math.factorial(n) for n in range(self.order + 1)])

    def sin(self) -> "Jet":
        s, c = np.sin(self.value), np.cos(self.value)
        cyc = (s, c, -s, -c)
        return self.compose([cyc[n % 4] / math.factorial(n) for n in range(self.order + 1)])

    def cos(self) -> "Jet":
        s, c = np.sin(self.value), np.cos(self.value)
        cyc = (c, -s, -c, s)
        return self.compose([cyc[n % 4] / math.factorial(n) for n in range(self.order + 1)])

    def tanh(self) -> "Jet":
        # power series of y = tanh(a + s) from y' = 1 - y^2
        y = [np.tanh(self.value)]
        for n in range(self.order):
            conv = sum(y[k] * y[n - k] for k in range(n + 1))
            y.append(((1.0 if n == 0 else 0.0) - conv) / (n + 1))
        return self.compose(y)

    def sqrt(self) -> "Jet":
        a = self.value
        if np.any(a <= 0) or not np.all(np.isfinite(a)):
            raise EvaluationError("sqrt of nonpositive value")
        return self.compose(
            [_binom_half(n) * a ** (0.5 - n) for n in range(self.order + 1)]
        )

    def __repr__(self):
        return f"Jet(dim={self.dim}, order={self.order}, batch={self.batch_shape})"


def _binom_half(n: int) -> float:
    out = 1.0
    for k in range(n):
        out *= (0.5 - k) / (k + 1)
    return out


# ---------------------------------------------------------------------------
# expression trees

_FUNCS = ("sin", "cos", "exp", "tanh", "sqrt")


@dataclass(frozen=True)
class _Const:
    value: float

    def value_at(self, x, t):
        return np.full(x.shape[:-1], self.value)

    def jet_at(self, ctx):
        return Jet.constant(ctx.dim, ctx.order, self.value, ctx.batch)

    def has_time(self):
        return False

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class _Var:
    index: int  # 0-based

    def value_at(self, x, t):
        return x[..., self.index].astype(float)

    def jet_at(self, ctx):
        return ctx.coords[self.index]

    def has_time(self):
        return False

    def __str__(self):
        return f"x{self.index + 1}"


@dataclass(frozen=True)
class _Time:
    def value_at(self, x, t):
        return np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1]).copy()

    def jet_at(self, ctx):
        return Jet.constant(ctx.dim, ctx.order, ctx.t, ctx.batch)

    def has_time(self):
        return True

    def __str__(self):
        return "t"


@dataclass(frozen=True)
class _Unary:
    op: str
    arg: object

    def value_at(self, x, t):
        v = self.arg.value_at(x, t)
        if self.op == "neg":
            return -v
        if self.op == "sqrt" and np.any(v <= 0):
            raise EvaluationError("sqrt of nonpositive value")
        return getattr(np, self.op)(v)

    def jet_at(self, ctx):
        j = self.arg.jet_at(ctx)
        if self.op == "neg":
            return -j
        return getattr(j, self.op)()

    def has_time(self):
        return self.arg.has_time()

    def __str__(self):
        if self.op == "neg":
            return f"(-{self.arg})"
        return f"{self.op}({self.arg})"


@dataclass(frozen=True)
class _Binary:
    op: str
    left: object
    right: object

    def value_at(self, x, t):
        a, b = self.left.value_at(x, t), self.right.value_at(x, t)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if np.any(b == 0):
            raise EvaluationError("division by zero")
        return a / b

    def jet_at(self, ctx):
        # constants enter as plain scalars, avoiding full jet products
        if isinstance(self.left, _Const) and self.op in "+*":
            a, b = self.right.jet_at(ctx), self.left.value
        elif isinstance(self.right, _Const) and self.op in "+-*/":
            a, b = self.left.jet_at(ctx), self.right.value
            if self.op == "/" and b == 0:
                raise EvaluationError("division by zero")
        else:
            a, b = self.left.jet_at(ctx), self.right.jet_at(ctx)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b

    def has_time(self):
        return self.left.has_time() or self.right.has_time()

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class _Pow:
    base: object
    exponent: int

    def value_at(self, x, t):
        v = self.base.value_at(x, t)
        if self.exponent < 0 and np.any(v == 0):
            raise EvaluationError("division by zero")
        return v ** float(self.exponent)

    def jet_at(self, ctx):
        return self.base.jet_at(ctx) ** self.exponent

    def has_time(self):
        return self.base.has_time()

    def __str__(self):
        return f"({self.base})^{self.exponent}"


@dataclass
class _Ctx:
    dim: int
    order: int
    t: float
    batch: tuple
    coords: list


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)


class _Parser:
    def __init__(self, source: str, dim: int):
        self.source = source
        self.dim = dim
        self.tokens = self._tokenize(source)
        self.i = 0

    def _tokenize(self, s):
        tokens, pos = [], 0
        while pos < len(s):
            if s[pos].isspace():
                pos += 1
                continue
            m = _TOKEN.match(s, pos)
            if m is None or m.end() == pos:
                raise ExprSyntaxError(f"unexpected character {s[pos]!r}", pos, s)
            kind = m.lastgroup
            start = m.start(kind)
            tokens.append((kind, m.group(kind), start))
            pos = m.end()
        tokens.append(("end", "", len(s)))
        return tokens

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, val, pos = self.take()
        if val != text or kind != "op":
            raise ExprSyntaxError(f"expected {text!r}", pos, self.source)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", pos, self.source)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = _Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = _Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return _Unary("neg", self.unary())
        return self.factor()

    def factor(self):
        node = self.base()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            sign = 1
            if self.peek()[:2] == ("op", "-"):
                self.take()
                sign = -1
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ExprSyntaxError("exponent must be an integer", pos, self.source)
            node = _Pow(node, sign * int(val))
        return node

    def base(self):
        kind, val, pos = self.take()
        if kind == "num":
            return _Const(float(val))
        if kind == "name":
            if val == "t":
                return _Time()
            if val in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _Unary(val, arg)
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                k = int(m.group(1))
                if k < 1 or k > self.dim:
                    raise ExprSyntaxError(
                        f"variable {val} out of range for dimension {self.dim}", pos, self.source
                    )
                return _Var(k - 1)
            raise ExprSyntaxError(f"unknown identifier {val!r}", pos, self.source)
        if (kind, val) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", pos, self.source)
        raise ExprSyntaxError(f"unexpected token {val!r}", pos, self.source)


def _as_points(points, dim):
    x = np.asarray(points, dtype=float)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise ValueError(f"points must have trailing dimension {dim}, got shape {x.shape}")
    return x


class Expr:
    """Immutable parsed expression in ``x1..xd`` and ``t``."""

    __slots__ = ("root", "dim", "source")

    def __init__(self, root, dim: int, source: str = ""):
        self.root = root
        self.dim = dim
        self.source = source or str(root)

    @property
    def time_dependent(self) -> bool:
        return self.root.has_time()

    def __call__(self, points, t: float = 0.0) -> np.ndarray:
        return self.root.value_at(_as_points(points, self.dim), t)

    def jet(self, points, t: float = 0.0, order: int = 0) -> Jet:
        x = _as_points(points, self.dim)
        batch = x.shape[:-1]
        coords = [Jet.variable(self.dim, order, i, x[..., i]) for i in range(self.dim)]
        return self.root.jet_at(_Ctx(self.dim, order, t, batch, coords))

    def __repr__(self):
        return f"Expr({self.source!r}, d={self.dim})"


class PiecewiseExpr:
    """Expression that switches between segments on half-open time intervals.

    Segments are ``(t_start, t_end, Expr)``; the last one is closed on the right.
    """

    def __init__(self, segments: Sequence[tuple[float, float, Expr]]):
        if not segments:
            raise ValueError("at least one segment is required")
        segs = sorted(segments, key=lambda s: s[0])
        for (a0, a1, _), (b0, _, _) in zip(segs, segs[1:]):
            if not math.isclose(a1, b0):
                raise ValueError("time segments must be contiguous")
        dims = {e.dim for _, _, e in segs}
        if len(dims) != 1:
            raise ValueError("segments disagree on dimension")
        self.segments = tuple(segs)
        self.dim = dims.pop()
        self.source = " | ".join(f"[{a},{b}): {e.source}" for a, b, e in segs)

    @property
    def time_dependent(self) -> bool:
        return len(self.segments) > 1 or self.segments[0][2].time_dependent

    def _pick(self, t):
        for a, b, e in self.segments:
            if a <= t < b:
                return e
        a, b, e = self.segments[-1]
        if math.isclose(t, b) or t == b:
            return e
        raise ValueError(f"time {t} outside the segmented range")

    def __call__(self, points, t: float = 0.0):
        return self._pick(t)(points, t)

    def jet(self, points, t: float = 0.0, order: int = 0) -> Jet:
        return self._pick(t).jet(points, t, order)


def parse(source: str, d: int) -> Expr:
    """Parse ``source`` into an :class:`Expr` over ``x1..xd`` and ``t``."""
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0, source)
    return Expr(_Parser(source, d).parse(), d, source)


def eval_jet(expr, point, t: float = 0.0, order: int = 4) -> Jet:
    """Jet of ``expr`` at ``point`` (shape ``(d,)`` or a batch ``(..., d)``)."""
    if order < 0:
        raise ValueError("order must be nonnegative")
    return expr.jet(point, t, order)
