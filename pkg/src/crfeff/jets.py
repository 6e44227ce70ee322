"""
Truncated multivariate Taylor series ("jets") over the complex numbers.

A :class:`Jet` stores the Taylor coefficients of a (tensor-valued) function
of ``dim`` real variables about a point, truncated at total degree ``order``.
Coefficients live densely in graded-lexicographic order along the last array
axis, so a jet with tensor shape ``S`` has a coefficient array of shape
``S + (n_coeffs,)``.  Coefficients are Taylor coefficients, not derivatives:
the coefficient of the multi-index ``a`` is ``D^a f / a!``.

Arithmetic between jets of different orders truncates to the smaller order;
the strict :func:`jet_mul` refuses mixed orders.
"""

from __future__ import annotations

import itertools
import math
import string
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np


class JetError(ValueError):
    """Base class for jet arithmetic errors."""


class OrderError(JetError):
    """A jet of insufficient order was supplied."""


class SingularInputError(JetError):
    """A univariate primitive was applied outside its domain."""


# ---------------------------------------------------------------------------
# Index tables
# ---------------------------------------------------------------------------


class JetSpace:
    """Multi-index bookkeeping for jets of fixed ``(dim, order)``.

    Instances are cached; obtain them through :func:`jet_space`.
    """

    def __init__(self, dim: int, order: int):
        if dim < 1:
            raise JetError("jet dimension must be positive")
        if order < 0:
            raise JetError("jet order must be non-negative")
        self.dim = dim
        self.order = order
        exps = []
        for deg in range(order + 1):
            for combo in itertools.combinations_with_replacement(range(dim), deg):
                e = [0] * dim
                for v in combo:
                    e[v] += 1
                exps.append(tuple(e))
        self.exponents = np.array(exps, dtype=np.int64).reshape(len(exps), dim)
        self.size = len(exps)
        self.degrees = self.exponents.sum(axis=1)
        self.index = {e: i for i, e in enumerate(exps)}
        self._base = order + 1
        self._codes = self._encode(self.exponents)
        self._code_sort = np.argsort(self._codes)
        self._mul = None
        self._sym_mul = None
        self._deriv: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _encode(self, exps: np.ndarray) -> np.ndarray:
        weights = self._base ** np.arange(self.dim, dtype=np.int64)
        return exps @ weights

    def lookup(self, exps: np.ndarray) -> np.ndarray:
        """Positions of the given exponent rows (all assumed present)."""
        codes = self._encode(exps)
        pos = np.searchsorted(self._codes, codes, sorter=self._code_sort)
        return self._code_sort[pos]

    def prefix(self, order: int) -> int:
        """Number of coefficients of total degree at most ``order``."""
        return math.comb(self.dim + order, order)

    @property
    def mul_tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pair tables ``(left, right, starts)`` sorted by product index."""
        if self._mul is None:
            self._mul = self._pair_tables(unordered=False)
        return self._mul

    @property
    def sym_mul_tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """As :attr:`mul_tables` but with each unordered pair once (``left <= right``)."""
        if self._sym_mul is None:
            self._sym_mul = self._pair_tables(unordered=True)
        return self._sym_mul

    def _pair_tables(self, unordered: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        deg = self.degrees
        fits = deg[:, None] + deg[None, :] <= self.order
        if unordered:
            idx = np.arange(self.size)
            fits &= idx[:, None] <= idx[None, :]
        left, right = np.nonzero(fits)
        target = self.lookup(self.exponents[left] + self.exponents[right])
        perm = np.argsort(target, kind="stable")
        left, right, target = left[perm], right[perm], target[perm]
        return left, right, np.searchsorted(target, np.arange(self.size))

    def deriv_table(self, var: int) -> tuple[np.ndarray, np.ndarray]:
        """Source positions and factors mapping coefficients to ``d/dx_var``."""
        if var not in self._deriv:
            n_low = self.prefix(self.order - 1)
            shifted = self.exponents[:n_low].copy()
            shifted[:, var] += 1
            src = self.lookup(shifted)
            fac = shifted[:, var].astype(float)
            self._deriv[var] = (src, fac)
        return self._deriv[var]


@lru_cache(maxsize=None)
def jet_space(dim: int, order: int) -> JetSpace:
    return JetSpace(dim, order)


# ---------------------------------------------------------------------------
# Jet values
# ---------------------------------------------------------------------------


def _reduce_pairs(prod: np.ndarray, starts: np.ndarray) -> np.ndarray:
    return np.add.reduceat(prod, starts, axis=-1)


class Jet:
    """A tensor of truncated Taylor series sharing one expansion point."""

    __array_priority__ = 1000

    def __init__(self, space: JetSpace, coeffs):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape[-1:] != (space.size,):
            raise JetError(
                f"coefficient axis has length {coeffs.shape[-1:]}, expected {space.size}"
            )
        self.space = space
        self.coeffs = coeffs

    # -- construction -----------------------------------------------------

    @classmethod
    def constant(cls, value, dim: int, order: int) -> "Jet":
        space = jet_space(dim, order)
        value = np.asarray(value, dtype=complex)
        coeffs = np.zeros(value.shape + (space.size,), dtype=complex)
        coeffs[..., 0] = value
        return cls(space, coeffs)

    @classmethod
    def zeros(cls, shape: Sequence[int], dim: int, order: int) -> "Jet":
        space = jet_space(dim, order)
        return cls(space, np.zeros(tuple(shape) + (space.size,), dtype=complex))

    def like(self, coeffs) -> "Jet":
        return Jet(self.space, coeffs)

    def const_like(self, value) -> "Jet":
        return Jet.constant(value, self.dim, self.order)

    # -- basic properties -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def order(self) -> int:
        return self.space.order

    @property
    def shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-1]

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def value(self) -> np.ndarray:
        """Constant term (the value at the expansion point)."""
        v = self.coeffs[..., 0]
        return v.copy() if isinstance(v, np.ndarray) else complex(v)

    def coeff(self, multi_index: Sequence[int]):
        """Taylor coefficient for ``multi_index`` (zero above the order)."""
        key = tuple(int(a) for a in multi_index)
        if len(key) != self.dim:
            raise JetError("multi-index length must equal jet dimension")
        if sum(key) > self.order:
            return np.zeros(self.shape, dtype=complex) if self.shape else 0j
        return self.coeffs[..., self.space.index[key]]

    def derivative_value(self, multi_index: Sequence[int]):
        """Partial derivative ``D^a f`` at the expansion point."""
        fact = math.prod(math.factorial(int(a)) for a in multi_index)
        return self.coeff(multi_index) * fact

    def __repr__(self) -> str:
        return f"Jet(shape={self.shape}, dim={self.dim}, order={self.order})"

    # -- tensor manipulation ----------------------------------------------

    def __getitem__(self, item) -> "Jet":
        if not isinstance(item, tuple):
            item = (item,)
        if any(it is Ellipsis for it in item):
            return Jet(self.space, self.coeffs[item + (slice(None),)])
        return Jet(self.space, self.coeffs[item + (Ellipsis, slice(None))])

    def __setitem__(self, item, other) -> None:
        if not isinstance(item, tuple):
            item = (item,)
        if isinstance(other, Jet):
            other = _coerce_order(other, self.order, self.dim).coeffs
            self.coeffs[item + (Ellipsis,)] = other
        else:
            block = np.zeros(np.shape(other) + (self.space.size,), dtype=complex)
            block[..., 0] = other
            self.coeffs[item + (Ellipsis,)] = block

    def transpose(self, *axes) -> "Jet":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return Jet(self.space, np.transpose(self.coeffs, tuple(axes) + (self.ndim,)))

    @property
    def T(self) -> "Jet":
        return self.transpose()

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Jet(self.space, self.coeffs.reshape(tuple(shape) + (self.space.size,)))

    def sum(self, axis=None) -> "Jet":
        if axis is None:
            axis = tuple(range(self.ndim))
        elif isinstance(axis, int):
            axis = (axis if axis >= 0 else axis - 1,)
        else:
            axis = tuple(a if a >= 0 else a - 1 for a in axis)
        return Jet(self.space, self.coeffs.sum(axis=axis))

    def copy(self) -> "Jet":
        return Jet(self.space, self.coeffs.copy())

    # -- truncation and calculus ------------------------------------------

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise OrderError(f"cannot raise jet order {self.order} to {order}")
        if order == self.order:
            return self
        space = jet_space(self.dim, order)
        return Jet(space, self.coeffs[..., : space.size])

    def deriv(self, var: int) -> "Jet":
        """Partial derivative along coordinate ``var``; order drops by one."""
        if not 0 <= var < self.dim:
            raise JetError(f"coordinate index {var} out of range")
        if self.order < 1:
            raise OrderError("cannot differentiate an order-0 jet")
        src, fac = self.space.deriv_table(var)
        space = jet_space(self.dim, self.order - 1)
        return Jet(space, self.coeffs[..., src] * fac)

    def grad(self) -> "Jet":
        """All first partials, stacked on a new trailing tensor axis."""
        parts = [self.deriv(v).coeffs for v in range(self.dim)]
        return Jet(jet_space(self.dim, self.order - 1), np.stack(parts, axis=-2))

    def conj(self) -> "Jet":
        """Complex conjugate; valid because the chart is real."""
        return Jet(self.space, np.conj(self.coeffs))

    conjugate = conj

    @property
    def real(self) -> "Jet":
        return Jet(self.space, self.coeffs.real.astype(complex))

    @property
    def imag(self) -> "Jet":
        return Jet(self.space, self.coeffs.imag.astype(complex))

    def evaluate(self, displacement: Sequence[float]) -> np.ndarray:
        """Sum the truncated series at ``point + displacement``."""
        h = np.asarray(displacement, dtype=complex)
        monomials = np.prod(h[None, :] ** self.space.exponents, axis=1)
        return self.coeffs @ monomials

    # -- arithmetic ---------------------------------------------------------

    def _binary_prep(self, other):
        if isinstance(other, Jet):
            if other.dim != self.dim:
                raise JetError("jet dimension mismatch")
            order = min(self.order, other.order)
            return self.truncate(order), other.truncate(order)
        return self, other

    def __add__(self, other):
        a, b = self._binary_prep(other)
        if isinstance(b, Jet):
            return Jet(a.space, a.coeffs + b.coeffs)
        out = a.coeffs + np.zeros(np.shape(b) + (1,), dtype=complex)
        out[..., 0] = out[..., 0] + b
        return Jet(a.space, out)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        a, b = self._binary_prep(other)
        if isinstance(b, Jet):
            return _mul_jets(a, b)
        return Jet(a.space, a.coeffs * np.asarray(b, dtype=complex)[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=complex))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Jet):
            raise JetError("jet exponents must be constants")
        return compose("power", self, p)

    def reciprocal(self) -> "Jet":
        return compose("power", self, -1)


def _mul_jets(a: Jet, b: Jet) -> Jet:
    # Real arithmetic grouped so that swapping a and b only swaps addends:
    # the product is then bitwise commutative (numpy's complex kernels are not).
    left, right, starts = a.space.sym_mul_tables
    off = left != right
    xl, xr = a.coeffs[..., left], a.coeffs[..., right]
    yl, yr = b.coeffs[..., left], b.coeffs[..., right]
    re = xl.real * yr.real - xl.imag * yr.imag
    im = xl.real * yr.imag + xl.imag * yr.real
    if off.any():
        p, q = xl[..., off], xr[..., off]
        u, v = yl[..., off], yr[..., off]
        re[..., off] = (p.real * v.real + q.real * u.real) - (p.imag * v.imag + q.imag * u.imag)
        im[..., off] = (p.real * v.imag + q.imag * u.real) + (p.imag * v.real + q.real * u.imag)
    prod = np.empty(re.shape, dtype=complex)
    prod.real, prod.imag = re, im
    return Jet(a.space, _reduce_pairs(prod, starts))


def _coerce_order(j: Jet, order: int, dim: int) -> Jet:
    if j.dim != dim:
        raise JetError("jet dimension mismatch")
    return j.truncate(order)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def jet_seed(coord_index: int, point_value, order: int, dim: int) -> Jet:
    """Jet of the coordinate function ``x[coord_index]`` at a point."""
    if not 0 <= coord_index < dim:
        raise JetError(f"coordinate index {coord_index} out of range for dim {dim}")
    if order < 1:
        raise OrderError("seed jets need order >= 1")
    j = Jet.constant(point_value, dim, order)
    e = [0] * dim
    e[coord_index] = 1
    j.coeffs[..., j.space.index[tuple(e)]] = 1.0
    return j


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Truncated Cauchy product of two jets of identical order and dimension."""
    if a.dim != b.dim:
        raise JetError("jet dimension mismatch")
    if a.order != b.order:
        raise OrderError("jet order mismatch")
    return _mul_jets(a, b)


def _series_coefficients(kind: str, a0: np.ndarray, order: int, p=None) -> list[np.ndarray]:
    """Taylor coefficients ``f^(n)(a0)/n!`` for ``n = 0..order``."""
    a0 = np.asarray(a0, dtype=complex)
    out = []
    if kind == "exp":
        e = np.exp(a0)
        out = [e / math.factorial(n) for n in range(order + 1)]
    elif kind == "log":
        if np.any(a0 == 0):
            raise SingularInputError("log of zero")
        out = [np.log(a0)] + [(-1) ** (n + 1) / (n * a0**n) for n in range(1, order + 1)]
    elif kind == "sin" or kind == "cos":
        s, c = np.sin(a0), np.cos(a0)
        cyc = [s, c, -s, -c] if kind == "sin" else [c, -s, -c, s]
        out = [cyc[n % 4] / math.factorial(n) for n in range(order + 1)]
    elif kind in ("power", "sqrt"):
        if kind == "sqrt":
            p = 0.5
        p = float(np.real(p)) if np.isreal(p) else p
        is_int = float(p).is_integer() if isinstance(p, float) else False
        if is_int:
            pi_ = int(p)
            if pi_ < 0 and np.any(a0 == 0):
                raise SingularInputError("negative power of zero")
            for n in range(order + 1):
                binom = _gen_binom(pi_, n)
                if pi_ >= 0 and n > pi_:
                    out.append(np.zeros_like(a0))
                else:
                    out.append(binom * a0 ** (pi_ - n))
        else:
            bad = (np.abs(a0.imag) <= 1e-14 * np.maximum(1.0, np.abs(a0.real))) & (a0.real <= 0)
            if np.any(bad):
                raise SingularInputError(
                    f"fractional power {p} of a non-positive real base"
                )
            for n in range(order + 1):
                out.append(_gen_binom(p, n) * a0 ** (p - n))
    else:
        raise JetError(f"unknown univariate primitive {kind!r}")
    return out


def _gen_binom(p, n: int) -> float:
    num = 1.0
    for k in range(n):
        num *= p - k
    return num / math.factorial(n)


def compose(kind: str, a: Jet, p=None) -> Jet:
    """Apply a univariate analytic primitive elementwise to a jet."""
    coeffs = _series_coefficients(kind, a.coeffs[..., 0], a.order, p)
    tail = a.copy()
    tail.coeffs[..., 0] = 0.0
    result = Jet.constant(coeffs[-1], a.dim, a.order)
    for c in reversed(coeffs[:-1]):
        result = _mul_jets(result, tail) + c
    return result


def jet_compose_univariate(f: str | tuple, a: Jet) -> Jet:
    """Compose ``f`` with ``a``.

    ``f`` is one of ``"exp"``, ``"log"``, ``"sin"``, ``"cos"``, ``"sqrt"`` or a
    tuple ``("power", p)``.
    """
    if isinstance(f, tuple):
        kind, p = f
        return compose(kind, a, p)
    return compose(f, a)


def wirtinger(a: Jet, complex_pair: tuple[int, int]) -> tuple[Jet, Jet]:
    """Wirtinger derivatives ``(d/dz, d/dzbar)`` for ``z = x + i y``."""
    re_i, im_i = complex_pair
    if a.order < 1:
        raise OrderError("Wirtinger derivatives need order >= 1")
    dx, dy = a.deriv(re_i), a.deriv(im_i)
    return 0.5 * (dx - 1j * dy), 0.5 * (dx + 1j * dy)


def stack(jets: Sequence[Jet], axis: int = 0) -> Jet:
    """Stack jets (or constants) along a new tensor axis."""
    proto = next((j for j in jets if isinstance(j, Jet)), None)
    if proto is None:
        raise JetError("stack needs at least one jet")
    order = min(j.order for j in jets if isinstance(j, Jet))
    parts = []
    for j in jets:
        if isinstance(j, Jet):
            parts.append(_coerce_order(j, order, proto.dim).coeffs)
        else:
            parts.append(Jet.constant(j, proto.dim, order).coeffs)
    if axis < 0:
        axis = parts[0].ndim + axis
    return Jet(jet_space(proto.dim, order), np.stack(parts, axis=axis))


def embed(j: Jet, dim: int, axes: Sequence[int] | None = None, order: int | None = None) -> Jet:
    """View a jet as a jet in more variables that it does not depend on.

    ``axes[i]`` is the position of old variable ``i`` among the new ones;
    by default the old variables come first.
    """
    if axes is None:
        axes = list(range(j.dim))
    order = j.order if order is None else order
    j = j.truncate(order)
    space = jet_space(dim, order)
    new_exps = np.zeros((j.space.size, dim), dtype=np.int64)
    new_exps[:, list(axes)] = j.space.exponents
    pos = space.lookup(new_exps)
    coeffs = np.zeros(j.shape + (space.size,), dtype=complex)
    coeffs[..., pos] = j.coeffs
    return Jet(space, coeffs)


# ---------------------------------------------------------------------------
# Contractions and linear algebra
# ---------------------------------------------------------------------------

_LETTERS = string.ascii_letters


def _parse_subscripts(subscripts: str, n_ops: int) -> tuple[list[str], str]:
    lhs, _, rhs = subscripts.replace(" ", "").partition("->")
    ins = lhs.split(",")
    if len(ins) != n_ops:
        raise JetError("operand count does not match subscripts")
    if not _:
        counts: dict[str, int] = {}
        for s in ins:
            for ch in s:
                counts[ch] = counts.get(ch, 0) + 1
        rhs = "".join(sorted(ch for ch, c in counts.items() if c == 1))
    return ins, rhs


def _pair_einsum(sa: str, a, sb: str, b, out: str):
    ja, jb = isinstance(a, Jet), isinstance(b, Jet)
    used = set(sa) | set(sb) | set(out)
    c = next(ch for ch in _LETTERS if ch not in used)
    if ja and jb:
        if a.dim != b.dim:
            raise JetError("jet dimension mismatch")
        order = min(a.order, b.order)
        a, b = a.truncate(order), b.truncate(order)
        left, right, starts = a.space.mul_tables
        prod = np.einsum(
            f"{sa}{c},{sb}{c}->{out}{c}", a.coeffs[..., left], b.coeffs[..., right], optimize=True
        )
        return Jet(a.space, _reduce_pairs(prod, starts))
    if ja:
        return Jet(a.space, np.einsum(f"{sa}{c},{sb}->{out}{c}", a.coeffs, np.asarray(b), optimize=True))
    if jb:
        return Jet(b.space, np.einsum(f"{sa},{sb}{c}->{out}{c}", np.asarray(a), b.coeffs, optimize=True))
    return np.einsum(f"{sa},{sb}->{out}", a, b, optimize=True)


def jeinsum(subscripts: str, *operands):
    """Einstein summation over jets and plain arrays.

    Jets are multiplied with truncated Cauchy products; plain arrays act as
    constants.  Operands are contracted left to right.
    """
    ins, out = _parse_subscripts(subscripts, len(operands))
    if len(operands) == 1:
        (op,) = operands
        if isinstance(op, Jet):
            c = next(ch for ch in _LETTERS if ch not in ins[0] + out)
            return Jet(op.space, np.einsum(f"{ins[0]}{c}->{out}{c}", op.coeffs))
        return np.einsum(f"{ins[0]}->{out}", op)
    cur_s, cur = ins[0], operands[0]
    for k in range(1, len(operands)):
        nxt_s, nxt = ins[k], operands[k]
        later = set(out).union(*[set(s) for s in ins[k + 1 :]])
        keep = []
        for ch in cur_s + nxt_s:
            if ch in later and ch not in keep:
                keep.append(ch)
        target = out if k == len(operands) - 1 else "".join(keep)
        cur = _pair_einsum(cur_s, cur, nxt_s, nxt, target)
        cur_s = target
    return cur


def jmatmul(a, b):
    """Matrix-matrix or matrix-vector product of jets and/or arrays."""
    na = a.ndim if isinstance(a, Jet) else np.ndim(a)
    nb = b.ndim if isinstance(b, Jet) else np.ndim(b)
    if na != 2 or nb not in (1, 2):
        raise JetError("jmatmul supports matrix-matrix and matrix-vector products")
    return jeinsum("ij,jk->ik", a, b) if nb == 2 else jeinsum("ij,j->i", a, b)


def jinv(a: Jet) -> Jet:
    """Inverse of a square jet matrix via Newton iteration."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise JetError("jinv needs a square matrix jet")
    a0 = a.value
    if np.linalg.cond(a0) > 1e14:
        raise SingularInputError("matrix is singular at the expansion point")
    n = a.shape[0]
    x = Jet.constant(np.linalg.inv(a0), a.dim, a.order)
    eye = np.eye(n)
    correct = 0
    while correct < a.order:
        ax = jeinsum("ij,jk->ik", a, x)
        x = jeinsum("ij,jk->ik", x, 2 * eye - ax)
        correct = 2 * correct + 1
    return x


def jdet(a: Jet) -> Jet:
    """Determinant of a small square jet matrix by cofactor expansion."""
    n = a.shape[0]
    if n == 1:
        return a[0, 0]
    total = None
    for j in range(n):
        rows = list(range(1, n))
        cols = [c for c in range(n) if c != j]
        minor = Jet(a.space, a.coeffs[np.ix_(rows, cols)])
        term = a[0, j] * jdet(minor) * (-1) ** j
        total = term if total is None else total + term
    return total


def max_abs(j) -> float:
    """Largest absolute constant term (plain arrays pass through)."""
    v = j.value if isinstance(j, Jet) else np.asarray(j)
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def iter_multi_indices(dim: int, order: int) -> Iterable[tuple[int, ...]]:
    """Multi-indices of total degree at most ``order`` in storage order."""
    space = jet_space(dim, order)
    return (tuple(int(x) for x in row) for row in space.exponents)
