"""
Pointwise exterior calculus on coordinate charts.

A :class:`FormValue` holds the components of a ``p``-form as a fully
antisymmetric jet array of shape ``(dim,) * p``.  The conventions are

* evaluation: ``w(X1, ..., Xp) = w[i1..ip] X1^i1 ... Xp^ip``;
* exterior derivative: ``(dw)[i0..ip] = sum_k (-1)^k d_ik w[i0..^ik..ip]``;
* wedge: ``(a^b)(X, Y) = a(X) b(Y) - a(Y) b(X)`` for one-forms.

Coframe-basis components are obtained on demand by evaluating on the dual
frame.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .exprdsl import ChartSpec, Evaluator, Expr
from .jets import Jet, jeinsum, jinv, stack

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


class FormError(ValueError):
    """Invalid form operation (degree overflow, singular coframe, ...)."""


def _perm_sign(perm: Sequence[int]) -> int:
    sign = 1
    seen = list(perm)
    for i in range(len(seen)):
        while seen[i] != i:
            j = seen[i]
            seen[i], seen[j] = seen[j], seen[i]
            sign = -sign
    return sign


def antisymmetrize(t: Jet, naxes: int | None = None) -> Jet:
    """Average of signed permutations over the leading ``naxes`` axes."""
    p = t.ndim if naxes is None else naxes
    if p <= 1:
        return t
    rest = tuple(range(p, t.ndim))
    total = None
    for perm in itertools.permutations(range(p)):
        term = t.transpose(tuple(perm) + rest)
        if _perm_sign(perm) < 0:
            term = -term
        total = term if total is None else total + term
    return total * (1.0 / math.factorial(p))


def _as_jet(x, dim: int) -> Jet:
    if isinstance(x, Jet):
        return x
    return Jet.constant(np.asarray(x, dtype=complex), dim, 0)


@dataclass(frozen=True)
class FormValue:
    """A differential form at a point, with jet-valued components."""

    degree: int
    components: Jet

    def __post_init__(self):
        if self.components.ndim != self.degree:
            raise FormError("component array rank must equal the form degree")

    @property
    def dim(self) -> int:
        return self.components.dim

    @property
    def chart_dim(self) -> int:
        return self.components.shape[0] if self.degree else self.components.dim

    @property
    def order(self) -> int:
        return self.components.order

    @classmethod
    def from_array(cls, arr, jet_dim: int | None = None) -> "FormValue":
        """Form with constant components (antisymmetry is the caller's job)."""
        arr = np.asarray(arr, dtype=complex)
        return cls(arr.ndim, _as_jet(arr, jet_dim or max(arr.shape[:1] or (1,))))

    def __add__(self, other: "FormValue") -> "FormValue":
        if other.degree != self.degree:
            raise FormError("cannot add forms of different degree")
        return FormValue(self.degree, self.components + other.components)

    def __sub__(self, other: "FormValue") -> "FormValue":
        return self + other * -1.0

    def __mul__(self, scalar) -> "FormValue":
        if isinstance(scalar, Jet) and scalar.ndim:
            raise FormError("forms scale by scalars only")
        return FormValue(self.degree, self.components * scalar)

    __rmul__ = __mul__

    def conj(self) -> "FormValue":
        return FormValue(self.degree, self.components.conj())

    def value(self) -> np.ndarray:
        return np.asarray(self.components.value)

    def truncate(self, order: int) -> "FormValue":
        return FormValue(self.degree, self.components.truncate(order))


def zero_form(scalar: Jet) -> FormValue:
    return FormValue(0, scalar)


def one_form(components: Sequence) -> FormValue:
    return FormValue(1, stack(list(components)))


def exterior_derivative_value(form: FormValue) -> FormValue:
    """Coordinate exterior derivative of a jet-backed form (order drops by one)."""
    if form.order < 1:
        raise FormError("exterior derivative needs jet order >= 1")
    p = form.degree
    if p + 1 > form.dim:
        raise FormError("degree overflow")
    grad = form.components.grad()  # new axis last
    moved = grad.transpose((p,) + tuple(range(p)))
    return FormValue(p + 1, antisymmetrize(moved) * float(p + 1))


def _outer(a: Jet, b: Jet) -> Jet:
    la, lb = _LETTERS[: a.ndim], _LETTERS[a.ndim : a.ndim + b.ndim]
    return jeinsum(f"{la},{lb}->{la}{lb}", a, b)


def wedge(a: FormValue, b: FormValue) -> FormValue:
    """Exterior product."""
    p, q = a.degree, b.degree
    dim = a.chart_dim if p else b.chart_dim
    if p + q > dim:
        raise FormError(f"degree overflow: {p} + {q} > {dim}")
    if p == 0 or q == 0:
        return FormValue(p + q, _outer(a.components, b.components))
    coef = math.factorial(p + q) / (math.factorial(p) * math.factorial(q))
    return FormValue(p + q, antisymmetrize(_outer(a.components, b.components)) * coef)


def interior(vector, form: FormValue) -> FormValue:
    """Insert ``vector`` into the first slot of ``form``."""
    if form.degree == 0:
        raise FormError("cannot contract a 0-form")
    rest = _LETTERS[1 : form.degree]
    return FormValue(form.degree - 1, jeinsum(f"a,a{rest}->{rest}", vector, form.components))


def evaluate_form(form: FormValue, *vectors):
    """``form(v1, ..., vp)``; vectors may be jets or plain arrays."""
    if len(vectors) != form.degree:
        raise FormError("number of vectors must equal the form degree")
    out = form
    for v in vectors:
        out = interior(v, out)
    return out.components


# ---------------------------------------------------------------------------
# Expression-backed fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OneFormField:
    """One-form with expression components along coordinate differentials."""

    components: tuple[Expr, ...]

    def at(self, ev: Evaluator) -> FormValue:
        return one_form([ev(c) for c in self.components])


def exterior_derivative(
    form_field,
    chart: ChartSpec | None = None,
    point: Sequence[float] | None = None,
    order: int | None = None,
    bindings: Mapping[str, Expr] | None = None,
) -> FormValue:
    """Exterior derivative of a form.

    ``form_field`` is either a jet-backed :class:`FormValue` or an
    expression-backed field with an ``at(evaluator)`` method, in which case
    ``chart``, ``point`` and ``order`` select where and how deep to expand.
    The result has jet order ``order - 1``.
    """
    if isinstance(form_field, FormValue):
        return exterior_derivative_value(form_field)
    if chart is None or point is None or order is None:
        raise FormError("expression-backed forms need chart, point and order")
    ev = Evaluator(chart, point, order, bindings)
    return exterior_derivative_value(form_field.at(ev))


# ---------------------------------------------------------------------------
# Coframes and frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoframeValue:
    """Adapted coframe ``(theta, theta^alpha)``; conjugates are derived.

    ``theta`` has shape ``(dim,)`` and ``theta_alpha`` shape ``(m, dim)``.
    """

    theta: Jet
    theta_alpha: Jet

    @property
    def m(self) -> int:
        return self.theta_alpha.shape[0]

    @property
    def size(self) -> int:
        return 2 * self.m + 1

    def matrix(self) -> Jet:
        """Rows ``theta, theta^1..m, conj(theta^1..m)`` in coordinate components."""
        rows = [self.theta] + [self.theta_alpha[a] for a in range(self.m)]
        rows += [self.theta_alpha[a].conj() for a in range(self.m)]
        return stack(rows)

    def forms(self) -> list[FormValue]:
        mat = self.matrix()
        return [FormValue(1, mat[k]) for k in range(self.size)]


@dataclass(frozen=True)
class FrameValue:
    """Dual frame ``(ell, e_alpha, conj(e_alpha))`` as rows of coordinate components."""

    vectors: Jet

    @property
    def m(self) -> int:
        return (self.vectors.shape[0] - 1) // 2

    @property
    def reeb(self) -> Jet:
        return self.vectors[0]

    def e(self, alpha: int) -> Jet:
        return self.vectors[1 + alpha]

    def ebar(self, alpha: int) -> Jet:
        return self.vectors[1 + self.m + alpha]


def conj_index(m: int) -> np.ndarray:
    """Permutation of the full frame index set swapping ``alpha`` and ``bar alpha``."""
    return np.concatenate([[0], np.arange(m + 1, 2 * m + 1), np.arange(1, m + 1)])


def dual_frame(cof: CoframeValue, check_reeb: bool = False, tol: float = 1e-9) -> FrameValue:
    """Frame dual to the coframe: the inverse transpose of its matrix.

    With ``check_reeb`` the adaptedness conditions ``theta(ell) = 1`` and
    ``dtheta(ell, .) = 0`` are asserted at the base point.
    """
    mat = cof.matrix()
    n, dim = mat.shape
    if n != dim:
        raise FormError(f"coframe has {n} forms on a {dim}-dimensional chart")
    sv = np.linalg.svd(np.asarray(mat.value), compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise FormError("coframe matrix is singular")
    frame = FrameValue(jinv(mat).T)
    if check_reeb:
        pairing = np.asarray(mat.value) @ np.asarray(frame.vectors.value).T
        if np.max(np.abs(pairing - np.eye(n))) > tol:
            raise FormError("coframe/frame pairing is not the identity")
        if cof.theta.order >= 1:
            dtheta = exterior_derivative_value(FormValue(1, cof.theta))
            stray = interior(frame.reeb.truncate(dtheta.order), dtheta).value()
            if np.max(np.abs(stray)) > tol:
                raise FormError("ell is not the Reeb field of theta: dtheta(ell, .) != 0")
    return frame


def frame_components(form: FormValue, frame: FrameValue) -> Jet:
    """Components ``form(e_A, e_B, ...)`` over the full frame index set."""
    vecs = frame.vectors
    comps = form.components
    order = min(comps.order, vecs.order)
    vecs, comps = vecs.truncate(order), comps.truncate(order)
    out = comps
    for k in range(form.degree):
        # contract the leading coordinate axis, append a frame axis at the end
        rest = _LETTERS[1 : out.ndim]
        out = jeinsum(f"a{rest},Za->{rest}Z", out, vecs)
    return out


@dataclass(frozen=True)
class TwoFormExpansion:
    """Coefficients of a 2-form in the adapted basis.

    Basis: ``theta^theta^b``, ``theta^bar theta^b``, ``theta^b^theta^c`` (b<c),
    ``theta^b^bar theta^c``, ``bar theta^b^bar theta^c`` (b<c).  The square
    blocks below store the full antisymmetric arrays; only ``b < c`` entries
    are independent.
    """

    c_0b: np.ndarray
    c_0bbar: np.ndarray
    c_bc: np.ndarray
    c_bcbar: np.ndarray
    c_bbarcbar: np.ndarray
    reconstruction_error: float

    def max_abs_except_mixed(self) -> float:
        blocks = [self.c_0b, self.c_0bbar, self.c_bc, self.c_bbarcbar]
        return max(float(np.max(np.abs(b))) if b.size else 0.0 for b in blocks)


def expand_in_coframe(v: FormValue, cof: CoframeValue, tol: float = 1e-9) -> TwoFormExpansion:
    """Expand a 2-form in the adapted coframe basis at the base point."""
    if v.degree != 2:
        raise FormError("expand_in_coframe expects a 2-form")
    mat = np.asarray(cof.matrix().value)
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > 1e12:
        raise FormError("singular expansion system")
    frame = np.linalg.inv(mat).T
    comps = np.asarray(v.components.value)
    full = frame @ comps @ frame.T
    m = cof.m
    one, two = slice(1, m + 1), slice(m + 1, 2 * m + 1)
    recon = mat.T @ full @ mat
    err = float(np.max(np.abs(recon - comps))) if comps.size else 0.0
    if err > tol * max(1.0, float(np.max(np.abs(comps))) if comps.size else 1.0):
        raise FormError(f"expansion does not reproduce the form (error {err:.2e})")
    return TwoFormExpansion(
        c_0b=full[0, one],
        c_0bbar=full[0, two],
        c_bc=full[one, one],
        c_bcbar=full[one, two],
        c_bbarcbar=full[two, two],
        reconstruction_error=err,
    )


def top_form_coefficient(form: FormValue) -> complex:
    """Coefficient of ``dx^0 ^ ... ^ dx^(n-1)`` for a top-degree form."""
    if form.degree != form.chart_dim:
        raise FormError("not a top-degree form")
    idx = tuple(range(form.degree))
    return complex(np.asarray(form.components.value)[idx])


__all__ = [
    "CoframeValue",
    "FormError",
    "FormValue",
    "FrameValue",
    "OneFormField",
    "TwoFormExpansion",
    "antisymmetrize",
    "conj_index",
    "dual_frame",
    "evaluate_form",
    "expand_in_coframe",
    "exterior_derivative",
    "exterior_derivative_value",
    "frame_components",
    "interior",
    "one_form",
    "top_form_coefficient",
    "wedge",
    "zero_form",
]
