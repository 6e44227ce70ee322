"""Fefferman metrics and their perturbations on the bundle chart.

The bundle chart is the product of the base chart with a fibre coordinate
``phi`` appended last.  Metric components are returned as real jets in all
``2m + 2`` coordinates, so the Lorentzian curvature engine can differentiate
them directly.  Base quantities (Webster connection, Rho, ``||N||^2``) come
from the jet-valued Webster solve; a metric jet of order ``r`` costs a
coframe of order ``r + 3``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exprdsl import Binary, ChartSpec, Const, Expr, Name, Unary, conjugate_expr, names_in
from .jets import Jet, compose, embed, jeinsum, jet_seed
from .webster import (
    CRGeometry,
    WebsterData,
    frame_to_coordinates,
    reeb_gauge,
    solve_webster,
    webster_curvature,
)

FIBRE = "phi"


class FeffermanError(ValueError):
    pass


class RealityError(FeffermanError):
    pass


# ---------------------------------------------------------------------------
# CR data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CRData:
    """Fourier coefficients of a semi-basic perturbation one-form.

    ``xi_alpha[k]`` holds the ``m`` coefficients of ``theta^a`` at
    ``exp(i k phi)``; the ``conj(theta^a)`` coefficients follow by reality.
    ``xi_0[k]`` holds the ``theta`` coefficient; missing ``-k`` entries are
    filled with conjugates.
    """

    m: int
    xi_alpha: Mapping[int, tuple[Expr, ...]] = field(default_factory=dict)
    xi_0: Mapping[int, Expr] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.xi_alpha.items():
            if len(v) != self.m:
                raise FeffermanError(f"xi_alpha[{k}] needs {self.m} entries")

    @property
    def empty(self) -> bool:
        return not self.xi_alpha and not self.xi_0

    def reeb_coefficients(self) -> dict[int, Expr]:
        out = dict(self.xi_0)
        for k, e in self.xi_0.items():
            if -k not in out:
                out[-k] = conjugate_expr(e)
        return out

    def check_reality(self, base, point: Sequence[float], tol: float = 1e-12) -> None:
        """Check the declared coefficients against the reality conditions at a point."""
        for k, e in self.xi_0.items():
            v = complex(base.scalar_jet(e, point, 0).value)
            if k == 0 and abs(v.imag) > tol * max(1.0, abs(v)):
                raise RealityError(f"xi_0[0] must be real, got {v}")
            if k != 0 and -k in self.xi_0:
                w = complex(base.scalar_jet(self.xi_0[-k], point, 0).value)
                if abs(w - v.conjugate()) > tol * max(1.0, abs(v)):
                    raise RealityError(f"xi_0[{-k}] must be the conjugate of xi_0[{k}]")


def cr_data_from_spec(pert, m: int) -> CRData:
    if pert is None:
        return CRData(m)
    return CRData(m, dict(pert.xi_alpha), dict(pert.xi_0))


def _rotate(e: Expr, k: int, phase) -> Expr:
    if isinstance(phase, (int, float)):
        factor = cmath.exp(1j * k * phase)
        if abs(factor - 1) < 1e-15:
            return e
        return Binary("*", Const(factor), e)
    return Binary("*", Unary("exp", Binary("*", Const(1j * k), phase)), e)


def cr_data_transform(data: CRData, phase) -> CRData:
    """Coefficients after the fibre coordinate shift ``phi' = phi - phase``.

    ``phase`` is a float or a real expression on the base.  The assembled
    one-form is unchanged.
    """
    xa = {k: tuple(_rotate(e, k, phase) for e in v) for k, v in data.xi_alpha.items()}
    x0 = {k: _rotate(e, k, phase) for k, e in data.reeb_coefficients().items()}
    return CRData(data.m, xa, x0)


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbedFeffermanSpec:
    """Base geometry, parameter ``alpha``, perturbation data and fibre density.

    ``density`` is the weight-(1, 0) density fixing ``phi``, as a function
    relative to the volume-normalized density of the contact form.
    """

    base: CRGeometry
    alpha: float = 1.0
    data: CRData | None = None
    density: Expr = Const(1.0)

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def dim(self) -> int:
        return 2 * self.m + 2

    @property
    def coordinates(self) -> tuple[str, ...]:
        return tuple(self.base.chart.coordinates) + (FIBRE,)

    @property
    def chart(self) -> ChartSpec:
        """Bundle chart: base coordinates followed by the fibre coordinate."""
        bc = self.base.chart
        if FIBRE in bc.coordinates:
            raise FeffermanError(f"base chart already uses the name {FIBRE!r}")
        box = dict(bc.box)
        box[FIBRE] = (-math.pi, math.pi)
        return ChartSpec(self.coordinates, dict(bc.complex_pairs), bc.domain, box)

    @property
    def lets(self):
        return getattr(self.base, "lets", {})

    @property
    def outside_definition(self) -> bool:
        """True for ``alpha != 1`` combined with a nonzero perturbation."""
        return self.alpha != 1.0 and self.data is not None and not self.data.empty

    def with_alpha(self, alpha: float) -> "PerturbedFeffermanSpec":
        return PerturbedFeffermanSpec(self.base, alpha, self.data, self.density)

    def with_base(self, base: CRGeometry) -> "PerturbedFeffermanSpec":
        return PerturbedFeffermanSpec(base, self.alpha, self.data, self.density)

    def unperturbed(self) -> "PerturbedFeffermanSpec":
        return PerturbedFeffermanSpec(self.base, self.alpha, None, self.density)

    def metric_at(self, point: Sequence[float], order: int) -> Jet:
        return assemble(self, point, order).metric

    def split(self, point: Sequence[float]) -> tuple[tuple[float, ...], float]:
        if len(point) != self.dim:
            raise FeffermanError(f"bundle points have {self.dim} coordinates")
        return tuple(float(x) for x in point[:-1]), float(point[-1])


def spec_from_geometry(geom, alpha: float | None = None) -> PerturbedFeffermanSpec:
    """Fefferman spec from a geometry file's ``[perturbation]`` and scales."""
    pert = getattr(geom, "perturbation", None)
    a = alpha if alpha is not None else (pert.alpha if pert is not None else 1.0)
    density: Expr = Const(1.0)
    name = pert.density if pert is not None else None
    if name is None and "sigma" in geom.scales and geom.scales["sigma"].kind == "density":
        name = "sigma"
    if name is not None:
        density = geom.scales[name].value
    return PerturbedFeffermanSpec(geom, a, cr_data_from_spec(pert, geom.m), density)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


@dataclass
class FeffermanAssembly:
    """Metric jet plus the pieces it was built from (coordinate components)."""

    metric: Jet
    theta: Jet
    coframe: Jet  # rows theta^a
    levi: Jet  # h_{a bar b}
    lam: Jet  # lambda-tilde, including the perturbation
    perturbation: Jet
    connection_term: Jet  # (i/2)(sigma^-1 nabla sigma - conj)
    reeb_coefficient: Jet  # Rho/(m+2) + alpha ||N||^2 / (2m(m+1))
    webster: WebsterData
    Rho: Jet
    N_sq: Jet


def _fibre_exponential(k: int, phi: float, dim: int, order: int) -> Jet:
    if k == 0:
        return Jet.constant(1.0, dim, order)
    if order == 0:
        return Jet.constant(cmath.exp(1j * k * phi), dim, order)
    t = jet_seed(dim - 1, phi, order, dim)
    return compose("exp", t * (1j * k))


def _lift(j: Jet, dim: int, order: int) -> Jet:
    return embed(j, dim, order=order)


def _one_form_lift(comps: Jet, dim: int, order: int) -> Jet:
    """Base one-form coordinate components as bundle components (no ``dphi``)."""
    out = Jet.zeros(comps.shape[:-1] + (dim,), dim, order)
    out.coeffs[..., : dim - 1, :] = _lift(comps, dim, order).coeffs
    return out


def _perturbation_components(spec_data: CRData, base, base_point, phi, theta, rows, dim, order) -> Jet:
    m = spec_data.m
    total = Jet.zeros((dim,), dim, order)
    if spec_data.empty:
        return total
    xa = spec_data.xi_alpha
    conj_rows = rows.conj()
    ks = set(xa) | {-k for k in xa}
    for k in sorted(ks):
        ex = _fibre_exponential(k, phi, dim, order)
        if k in xa:
            coef = [_lift(base.scalar_jet(e, base_point, order), dim, order) for e in xa[k]]
            for a in range(m):
                total = total + rows[a] * coef[a] * ex
        if -k in xa:
            coef = [_lift(base.scalar_jet(e, base_point, order), dim, order).conj() for e in xa[-k]]
            for a in range(m):
                total = total + conj_rows[a] * coef[a] * ex
    for k, e in sorted(spec_data.reeb_coefficients().items()):
        ex = _fibre_exponential(k, phi, dim, order)
        total = total + theta * _lift(base.scalar_jet(e, base_point, order), dim, order) * ex
    return total


def _check_real(j: Jet, what: str, tol: float = 1e-10) -> Jet:
    im = float(np.max(np.abs(j.coeffs.imag))) if j.coeffs.size else 0.0
    scale = max(1.0, float(np.max(np.abs(j.coeffs.real))) if j.coeffs.size else 1.0)
    if im > tol * scale:
        raise RealityError(f"{what} has an imaginary part of size {im:.3e}")
    return j.real


def assemble(spec: PerturbedFeffermanSpec, point: Sequence[float], order: int) -> FeffermanAssembly:
    """Assemble the (perturbed) alpha-Fefferman metric as a jet of ``order``."""
    if order < 0:
        raise FeffermanError("metric order must be >= 0")
    base = spec.base
    m = spec.m
    dim = spec.dim
    base_point, phi = spec.split(point)
    wd = solve_webster(base, base_point, order + 3)
    cv = webster_curvature(wd)
    Rho, nsq = cv.Rho.truncate(order), cv.N_sq.truncate(order)
    cof = wd.coframe.truncate(order)
    theta = _one_form_lift(cof[0], dim, order)
    rows = _one_form_lift(cof[1 : m + 1], dim, order)
    h = _lift(wd.h.truncate(order), dim, order)

    # (i/2)(sigma^-1 nabla sigma - conj) = -d arg F - xi_gauge
    F = base.scalar_jet(spec.density, base_point, order + 1)
    if abs(complex(F.value)) == 0.0:
        raise FeffermanError("fibre density vanishes at the point")
    dlog = F.grad() / F.truncate(order)
    gauge = frame_to_coordinates(wd, reeb_gauge(wd).truncate(order))
    conn = _check_real(dlog.imag * -1.0 - gauge, "connection term")
    conn = _one_form_lift(conn, dim, order)

    c = Rho * (1.0 / (m + 2)) + nsq * (spec.alpha / (2 * m * (m + 1)))
    c = _lift(_check_real(c, "Reeb coefficient"), dim, order)

    data = spec.data if spec.data is not None else CRData(m)
    xi = _perturbation_components(data, base, base_point, phi, theta, rows, dim, order)
    xi = _check_real(xi, "perturbation one-form")

    dphi = Jet.zeros((dim,), dim, order)
    dphi.coeffs[dim - 1, 0] = 1.0
    lam = dphi + conn - theta * c + xi
    g = jeinsum("i,j->ij", theta, lam) * 2.0
    g = g + g.transpose(1, 0)
    hh = jeinsum("ab,ai,bj->ij", h, rows, rows.conj())
    g = g + hh + hh.transpose(1, 0)
    g = _check_real(g, "metric")
    return FeffermanAssembly(g, theta, rows, h, lam, xi, conn, c, wd, Rho, nsq)


def build_alpha_fefferman(spec: PerturbedFeffermanSpec, point: Sequence[float], order: int = 0) -> Jet:
    """Metric of the alpha-Fefferman space (any perturbation is ignored)."""
    return assemble(spec.unperturbed(), point, order).metric


def build_perturbed(spec: PerturbedFeffermanSpec, point: Sequence[float], order: int = 0) -> Jet:
    """Metric ``g_theta + 4 theta . xi`` (symmetrized product)."""
    return assemble(spec, point, order).metric


def perturbation_one_form(data: CRData, base, point: Sequence[float], order: int = 0) -> Jet:
    """Coordinate components of the assembled perturbation one-form on the bundle chart."""
    m = data.m
    dim = 2 * m + 2
    base_point = tuple(float(x) for x in point[:-1])
    phi = float(point[-1])
    data.check_reality(base, base_point)
    cof = base.coframe_at(base_point, order)
    theta = _one_form_lift(cof.theta, dim, order)
    rows = _one_form_lift(cof.theta_alpha, dim, order)
    xi = _perturbation_components(data, base, base_point, phi, theta, rows, dim, order)
    return _check_real(xi, "perturbation one-form", tol=1e-12)


def alpha_perturbation_coefficient(m: int, alpha: float) -> float:
    """Coefficient ``c`` with ``g^(alpha) = g^(1) + 4 theta . (c ||N||^2 theta)``."""
    return (1.0 - alpha) / (2 * m * (m + 1))


def alpha_as_perturbation(spec: PerturbedFeffermanSpec, coefficient: float | None = None) -> PerturbedFeffermanSpec:
    """The alpha-Fefferman metric rewritten as a perturbed 1-Fefferman metric.

    The Reeb coefficient is ``coefficient * ||N||^2``; ``||N||^2`` enters as a
    named quantity ``nsq`` resolved by :class:`NormBindingGeometry`.
    """
    m = spec.m
    c = alpha_perturbation_coefficient(m, spec.alpha) if coefficient is None else coefficient
    base = NormBindingGeometry(spec.base)
    data = CRData(m, {}, {0: Binary("*", Const(c), _NSQ)})
    return PerturbedFeffermanSpec(base, 1.0, data, spec.density)


_NSQ = Name("nsq")


class NormBindingGeometry:
    """Geometry wrapper that resolves the name ``nsq`` to the solved ``||N||^2``."""

    def __init__(self, base):
        self._base = base

    def __getattr__(self, name):
        return getattr(self._base, name)

    @property
    def m(self) -> int:
        return self._base.m

    def coframe_at(self, point, order):
        return self._base.coframe_at(point, order)

    def scalar_jet(self, expr: Expr, point, order: int) -> Jet:
        if _NSQ.name not in names_in(expr):
            return self._base.scalar_jet(expr, point, order)
        wd = solve_webster(self._base, point, order + 2)
        ev = self._base.evaluator(point, order)
        ev._memo[_NSQ.name] = wd.N_sq.truncate(order)
        return ev(expr)


# ---------------------------------------------------------------------------
# Einstein CR data
# ---------------------------------------------------------------------------


def einstein_reeb_coefficients(m: int, Lam: float, Lam_t: float, mu: complex) -> dict[int, complex]:
    """Trivialized ``xi_0^(2k)`` for ``1 <= |k| <= m+1`` of the Einstein CR data.

    Values are relative to the density factors ``sigma^(k-1) conj(sigma)^(-k-1)``.
    """
    top = math.factorial(m) * math.factorial(m + 1) / (2 * math.factorial(2 * m + 2)) * (
        (2 * m + 1) * Lam - (2 * m + 2) * Lam_t
    ) + mu
    out = {m + 1: top}
    for k in range(1, m + 1):
        out[k] = 2 * k * math.factorial(2 * m + 1) / (math.factorial(m + 1 - k) * math.factorial(m + 1 + k)) * top
    full = dict(out)
    for k, v in out.items():
        full[-k] = complex(v).conjugate()
    return {2 * k: v for k, v in full.items()}


@dataclass
class EinsteinData:
    """Pointwise Einstein CR data derived from a density (values)."""

    xi_alpha: np.ndarray  # -i sigma^-1 nabla_a sigma
    xi_0: float  # (i/m)(nabla_a xi^a - nabla^a xi_a)


def einstein_cr_data(wd: WebsterData, F: Jet) -> EinsteinData:
    """Evaluate ``xi_alpha^(0)`` and ``xi_0^(0)`` from a weight-(1,0) density.

    ``F`` is the density relative to the volume-normalized one and needs
    jets of order 2.
    """
    m = wd.m
    hol, ahol = slice(1, m + 1), slice(m + 1, 2 * m + 1)
    wdt = wd.truncate(max(1, min(wd.order, F.order - 1)))
    F = F.truncate(wdt.order + 1)
    xi = reeb_gauge(wdt)
    logder = wdt.e(F) / F.truncate(F.order - 1) + xi * 1j  # sigma^-1 nabla_C sigma
    comp = logder * -1j  # -i sigma^-1 nabla sigma, full frame
    # the one-form with hol part comp[hol] and antihol part its conjugate
    n = 2 * m + 1
    one = Jet.zeros((n,), comp.dim, comp.order)
    one.coeffs[hol] = comp.coeffs[hol]
    conj_hol = comp[hol].conj()
    one.coeffs[ahol] = conj_hol.coeffs
    d = wdt.covariant(one, "d")  # [B, C] = nabla_C xi_B
    hr = np.asarray(wdt.h_raise.value)
    dv = np.asarray(d.value)
    # nabla_a xi^a = h^{a bar b} nabla_a xi_{bar b};  nabla^a xi_a = h^{a bar b} nabla_{bar b} xi_a
    t1 = np.einsum("ab,ba->", hr, dv[ahol, hol])
    t2 = np.einsum("ab,ab->", hr, dv[hol, ahol])
    x0 = 1j / m * (t1 - t2)
    return EinsteinData(np.asarray(comp.value)[hol], float(x0.real))


__all__ = [
    "CRData",
    "EinsteinData",
    "FIBRE",
    "FeffermanAssembly",
    "FeffermanError",
    "NormBindingGeometry",
    "PerturbedFeffermanSpec",
    "RealityError",
    "alpha_as_perturbation",
    "alpha_perturbation_coefficient",
    "assemble",
    "build_alpha_fefferman",
    "build_perturbed",
    "cr_data_from_spec",
    "cr_data_transform",
    "einstein_cr_data",
    "einstein_reeb_coefficients",
    "perturbation_one_form",
    "spec_from_geometry",
]
