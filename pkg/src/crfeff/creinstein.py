"""CR-Einstein residuals: tensor form, CR-scale form and density form.

Every residual is reported as a Hermitian norm of frame components, with
all indices contracted against the solved Levi form.  Scale and density
inputs are functions trivialized against the volume-normalized density of
the solved contact form (see :func:`crfeff.webster.density_derivative`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .jets import Jet, jeinsum
from .webster import (
    WebsterCurvature,
    WebsterData,
    covariant_derivative_N,
    reeb_gauge,
    solve_webster,
    webster_curvature,
)

# Curvature needs coframe jets of order 3; one more for derivatives of Rho.
DEFAULT_ORDER = 3


class CREinsteinError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Norms and tensor helpers (point values)
# ---------------------------------------------------------------------------


def hermitian_norm(block: np.ndarray, kinds: str, h_raise: np.ndarray) -> float:
    """Norm of an ``m``-index frame block.

    ``kinds`` holds ``h`` for a holomorphic lower index and ``a`` for an
    antiholomorphic one.  Each index is contracted with the matching index of
    the complex conjugate through ``h^{a bar b}``.
    """
    t = np.asarray(block)
    if len(kinds) != t.ndim:
        raise ValueError("kinds must match the tensor rank")
    total = t
    other = np.conj(t)
    letters = "abcdefgh"
    src = letters[: t.ndim]
    dst = letters[t.ndim : 2 * t.ndim]
    mats = []
    subs = []
    for k, kind in enumerate(kinds):
        if kind == "h":
            mats.append(h_raise)
            subs.append(src[k] + dst[k])
        elif kind == "a":
            mats.append(h_raise)
            subs.append(dst[k] + src[k])
        else:
            raise ValueError("kinds must contain only 'h' and 'a'")
    spec = ",".join([src, dst] + subs) + "->"
    val = np.einsum(spec, total, other, *mats)
    return float(np.sqrt(max(val.real, 0.0)))


def trace_free(t: np.ndarray, h: np.ndarray, h_raise: np.ndarray) -> np.ndarray:
    """Trace-free part of a ``(1,1)`` block ``T_{a bar b}``."""
    m = h.shape[0]
    tr = np.einsum("ab,ab->", t, h_raise)
    return t - tr / m * h


def symmetrize(t: np.ndarray) -> np.ndarray:
    return 0.5 * (t + np.swapaxes(t, 0, 1))


def nn_contractions(wd: WebsterData) -> tuple[Jet, Jet]:
    """``N_{a g d} N_{bar b}^{g d}`` and ``N_{g d a} N^{g d}_{bar b}``."""
    N = wd.N_low
    hr = wd.h_raise.truncate(N.order)
    Nbar = N.conj()
    first = jeinsum("agd,gm,dn,bmn->ab", N, hr, hr, Nbar)
    second = jeinsum("gda,gm,dn,mnb->ab", N, hr, hr, Nbar)
    return first, second


# ---------------------------------------------------------------------------
# Tensor form
# ---------------------------------------------------------------------------


@dataclass
class CREinsteinResiduals:
    r_A: float
    r_DN: float
    r_Rho: float
    Lambda: float
    r_Ric: float  # || Ric - N.N - Lambda h ||
    Lambda_fit: float  # trace of (Ric - N.N) divided by m
    scale: "ScaleResiduals | None" = None
    density: "DensityResiduals | None" = None

    def max(self) -> float:
        return max(self.r_A, self.r_DN, self.r_Rho)


def _as_solved(source, point, order) -> tuple[WebsterData, WebsterCurvature]:
    if isinstance(source, WebsterData):
        wd = source
    else:
        if point is None:
            raise ValueError("geometry input needs a point")
        wd = solve_webster(source, point, order if order is not None else DEFAULT_ORDER)
    return wd, webster_curvature(wd)


def cr_einstein_tensor_residuals(source, point: Sequence[float] | None = None, order: int | None = None) -> CREinsteinResiduals:
    """Residuals of the three CR-Einstein tensor equations and the constant ``Lambda``."""
    wd, cv = _as_solved(source, point, order)
    m = wd.m
    h = np.asarray(wd.h.value)
    hr = np.asarray(wd.h_raise.value)
    r_A = hermitian_norm(np.asarray(wd.A_low.value), "hh", hr)
    div = np.asarray(covariant_derivative_N(wd).div_N.value)
    r_DN = hermitian_norm(symmetrize(div), "hh", hr)
    nn = np.asarray(nn_contractions(wd)[0].value)
    rho = np.asarray(cv.Rho_ab.value)
    r_Rho = hermitian_norm(trace_free(rho - nn / (m + 2), h, hr), "ha", hr)
    sc = float(np.real(cv.Sc.value))
    nsq = float(np.real(cv.N_sq.value))
    lam = (sc - nsq) / m
    ric_nn = np.asarray(cv.Ric.value) - nn
    lam_fit = float(np.real(np.einsum("ab,ab->", ric_nn, hr))) / m
    r_Ric = hermitian_norm(ric_nn - lam * h, "ha", hr)
    return CREinsteinResiduals(r_A, r_DN, r_Rho, lam, r_Ric, lam_fit)


# ---------------------------------------------------------------------------
# CR-scale form
# ---------------------------------------------------------------------------


@dataclass
class ScaleResiduals:
    """Residuals of the invariant CR-scale system, normalized by powers of ``s``.

    ``torsion`` and ``nijenhuis`` are divided by ``s``, ``schouten`` by ``s**2``;
    with ``s`` constant they coincide with ``r_A``, ``r_DN`` and ``r_Rho``.
    In general ``s`` times each entry equals the tensor residual of the
    contact form ``theta / s``.
    """

    torsion: float
    nijenhuis: float
    schouten: float

    def max(self) -> float:
        return max(self.torsion, self.nijenhuis, self.schouten)


def cr_scale_residuals(wd: WebsterData, s: Jet, curvature: WebsterCurvature | None = None) -> ScaleResiduals:
    """Evaluate the CR-scale equations for a weight-(1,1) scale ``s``.

    ``s`` is the scale divided by the scale of the solved contact form; it
    needs jets of order 2 and must be positive at the point.
    """
    s0 = complex(s.value)
    if abs(s0.imag) > 1e-12 * max(1.0, abs(s0)) or s0.real <= 0:
        raise CREinsteinError("a CR scale must be real and positive")
    if s.order < 2:
        raise CREinsteinError("CR-scale residuals need jets of order >= 2")
    cv = curvature if curvature is not None else webster_curvature(wd)
    m = wd.m
    hol, ahol = slice(1, m + 1), slice(m + 1, 2 * m + 1)
    wdt = wd.truncate(max(1, min(wd.order, s.order - 1)))
    s = s.truncate(wdt.order + 1)
    grad = np.asarray(wdt.gradient(s).value)
    hess = np.asarray(wdt.hessian(s).value)
    sv = s0.real
    h = np.asarray(wd.h.value)
    hr = np.asarray(wd.h_raise.value)
    A = np.asarray(wd.A_low.value)
    N = np.asarray(wd.N_low.value)
    div = symmetrize(np.asarray(covariant_derivative_N(wd).div_N.value))
    grad_up = np.einsum("gd,d->g", hr, grad[ahol])  # nabla^g s
    N_sym = 0.5 * (N + np.swapaxes(N, 1, 2))  # N_{g(ab)}
    eq_torsion = symmetrize(hess[hol, hol]) + 1j * A * sv + np.einsum("gab,g->ab", N_sym, grad_up)
    eq_nij = div * sv - m * np.einsum("g,gab->ab", grad_up, N_sym)
    nn = np.asarray(nn_contractions(wd)[0].value)
    rho = np.asarray(cv.Rho_ab.value)
    mixed = hess[ahol, hol].T  # [a, b] = nabla_{bar b} nabla_a s
    eq_rho = sv * mixed - np.outer(grad[hol], grad[ahol]) + (rho - nn / (m + 2)) * sv**2
    eq_rho = trace_free(eq_rho, h, hr)
    return ScaleResiduals(
        hermitian_norm(eq_torsion, "hh", hr) / sv,
        hermitian_norm(eq_nij, "hh", hr) / sv,
        hermitian_norm(eq_rho, "ha", hr) / sv**2,
    )


# ---------------------------------------------------------------------------
# Density form
# ---------------------------------------------------------------------------


@dataclass
class DensityResiduals:
    """Residuals of the weight-(1,0) density system.

    Norms of ``antiholomorphic`` (the barred derivative), ``soliton``,
    ``nijenhuis`` and ``obstruction`` are divided by ``|sigma|`` (the last one
    is pure curvature and needs no normalization).  ``obstruction_tensor``
    keeps the trace-free ``2 N.N - N.N`` block itself.
    """

    antiholomorphic: float
    soliton: float
    nijenhuis: float
    obstruction: float
    obstruction_tensor: np.ndarray = field(repr=False)
    dbar_components: np.ndarray = field(repr=False)

    def max(self) -> float:
        return max(self.antiholomorphic, self.soliton, self.nijenhuis, self.obstruction)


def density_residuals(wd: WebsterData, sigma: Jet) -> DensityResiduals:
    """Evaluate the density system for ``sigma = F sigma_theta`` of weight (1, 0)."""
    F0 = complex(sigma.value)
    if abs(F0) == 0.0:
        raise CREinsteinError("density vanishes at the point")
    if sigma.order < 2:
        raise CREinsteinError("density residuals need jets of order >= 2")
    m = wd.m
    hol, ahol = slice(1, m + 1), slice(m + 1, 2 * m + 1)
    wdt = wd.truncate(max(1, min(wd.order, sigma.order - 1)))
    F = sigma.truncate(wdt.order + 1)
    xi = reeb_gauge(wdt)
    # first derivative as a density-valued one-form, divided by sigma_theta
    first = wdt.e(F) + xi.truncate(F.order - 1) * F.truncate(F.order - 1) * 1j
    second = wdt.covariant(first, "d") + jeinsum("B,C->BC", first.truncate(first.order - 1), xi.truncate(first.order - 1)) * 1j
    second = second.transpose(1, 0)  # [C, B] = nabla_C nabla_B sigma
    g1 = np.asarray(first.value)
    g2 = np.asarray(second.value)
    h = np.asarray(wd.h.value)
    hr = np.asarray(wd.h_raise.value)
    A = np.asarray(wd.A_low.value)
    N = np.asarray(wd.N_low.value)
    div = symmetrize(np.asarray(covariant_derivative_N(wd).div_N.value))
    dbar = g1[ahol]
    soliton = symmetrize(g2[hol, hol]) + 1j * A * F0 + div * F0 / m
    # N^g_{bar a bar b} = h^{g bar d} conj(N_{d a b})
    N_up_bar = np.einsum("gd,dab->gab", hr, np.conj(N))
    N_up_bar = 0.5 * (N_up_bar + np.swapaxes(N_up_bar, 1, 2))
    nij = np.einsum("g,gab->ab", g1[hol], N_up_bar) - np.conj(div) * F0 / m
    first_nn, second_nn = nn_contractions(wd)
    obstruction = trace_free(2 * np.asarray(first_nn.value) - np.asarray(second_nn.value), h, hr)
    a = abs(F0)
    return DensityResiduals(
        hermitian_norm(dbar, "a", hr) / a,
        hermitian_norm(soliton, "hh", hr) / a,
        hermitian_norm(nij, "aa", hr) / a,
        hermitian_norm(obstruction, "ha", hr),
        obstruction,
        dbar / F0,
    )


def scale_from_density(sigma: Jet) -> Jet:
    """``s = sigma conj(sigma)`` relative to the scale of the contact form."""
    return sigma * sigma.conj()


def einstein_scale_spread(wd_list: Sequence[WebsterData], s_values: Sequence[float]) -> float:
    """Relative spread of ``s ||N||^2`` across points (constant under the density system)."""
    prods = np.array([float(np.real(w.N_sq.value)) * s for w, s in zip(wd_list, s_values)])
    if prods.size == 0 or np.max(np.abs(prods)) == 0.0:
        return 0.0
    return float((prods.max() - prods.min()) / np.max(np.abs(prods)))


__all__ = [
    "CREinsteinError",
    "CREinsteinResiduals",
    "DensityResiduals",
    "ScaleResiduals",
    "cr_einstein_tensor_residuals",
    "cr_scale_residuals",
    "density_residuals",
    "einstein_scale_spread",
    "hermitian_norm",
    "nn_contractions",
    "scale_from_density",
    "trace_free",
]
