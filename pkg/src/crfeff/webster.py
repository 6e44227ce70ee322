"""
Tanaka-Webster calculus for almost CR geometries given by adapted coframes.

Frame-index convention
----------------------
Tensors are stored over the full frame index set of size ``n = 2m + 1``:
index ``0`` is the Reeb field ``ell``, ``1..m`` are ``e_alpha`` and
``m+1..2m`` are ``conj(e_alpha)``.  All arrays are jets, so derivatives of
solved quantities come for free from the jet arithmetic.

* ``D[A, B, C] = dtheta^A(e_B, e_C)`` (structure functions);
* ``gamma[b, a, C] = Gamma_b^a(e_C)`` (Webster connection one-forms);
* ``omega[A, B, C] = omega^A_B(e_C)``, the connection on the full frame, so
  that ``nabla_C v^A = e_C(v^A) + omega[A, B, C] v^B``;
* ``A_up[a, b] = A^a_{bar b}`` and ``N_up[b, c, a] = N_{bar b bar c}^a`` as
  they appear in ``dtheta^a``;
* lowered tensors ``A_{ab}`` and ``N_{abc}`` use the Levi form ``h``.

Jet-order budget: a coframe of order ``K`` gives ``D`` and ``h`` at ``K-1``,
``gamma`` at ``K-2`` and curvature at ``K-3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol, Sequence

import numpy as np

from .exprdsl import ChartSpec, Expr
from .exterior import (
    CoframeValue,
    FormError,
    FormValue,
    conj_index,
    exterior_derivative_value,
    top_form_coefficient,
    wedge,
)
from .jets import Jet, compose, jeinsum, jinv, stack


class WebsterError(ValueError):
    """The input does not define a valid pseudo-Hermitian structure."""


class NotAdaptedError(WebsterError):
    """``dtheta`` has components outside the Levi block."""


class NonContactError(WebsterError):
    """The Levi form is degenerate."""


class RankDeficiencyError(WebsterError):
    """The structure-equation system does not determine the connection."""


class OrderBudgetError(WebsterError):
    """The requested quantity needs a deeper jet than was supplied."""


class CRGeometry(Protocol):
    """Anything that yields adapted coframe jets at a point."""

    chart: ChartSpec

    @property
    def m(self) -> int: ...

    def coframe_at(self, point: Sequence[float], order: int) -> CoframeValue: ...


# ---------------------------------------------------------------------------
# Frame-index helpers
# ---------------------------------------------------------------------------


def _hol(m: int) -> slice:
    return slice(1, m + 1)


def _ahol(m: int) -> slice:
    return slice(m + 1, 2 * m + 1)


def frame_derivative(t: Jet, frame: Jet) -> Jet:
    """``e_C(t)`` for every frame vector, as a new trailing axis."""
    g = t.grad()
    lead = "abcdefgh"[: t.ndim]
    return jeinsum(f"{lead}i,Ci->{lead}C", g, frame.truncate(g.order))


def conj_tensor(t: Jet, m: int) -> Jet:
    """Complex conjugate of a full-index tensor (indices are swapped too)."""
    perm = conj_index(m)
    c = t.conj()
    idx = np.ix_(*([perm] * t.ndim))
    return Jet(c.space, c.coeffs[idx])


def _embed_block(block: Jet, n: int, slices: Sequence[slice]) -> Jet:
    out = Jet.zeros((n,) * block.ndim, block.dim, block.order)
    out.coeffs[tuple(slices)] = block.coeffs
    return out


# ---------------------------------------------------------------------------
# Webster data
# ---------------------------------------------------------------------------


@dataclass
class WebsterData:
    """Solved Webster connection and torsion at a point (as jets)."""

    m: int
    frame: Jet
    coframe: Jet
    D: Jet
    h: Jet
    gamma: Jet
    A_up: Jet
    N_up: Jet
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return 2 * self.m + 1

    @property
    def order(self) -> int:
        return self.gamma.order

    # -- metric ---------------------------------------------------------------

    @cached_property
    def G(self) -> Jet:
        """Full-index symmetric metric: ``G(ell, ell) = 1``, ``G(e_a, conj e_b) = h``."""
        m, n = self.m, self.n
        h = self.h
        G = Jet.zeros((n, n), h.dim, h.order)
        G.coeffs[0, 0, 0] = 1.0
        G.coeffs[_hol(m), _ahol(m)] = h.coeffs
        G.coeffs[_ahol(m), _hol(m)] = np.swapaxes(h.coeffs, 0, 1)
        return G

    @cached_property
    def Ginv(self) -> Jet:
        m, n = self.m, self.n
        hinv = jinv(self.h)
        G = Jet.zeros((n, n), hinv.dim, hinv.order)
        G.coeffs[0, 0, 0] = 1.0
        G.coeffs[_hol(m), _ahol(m)] = np.swapaxes(hinv.coeffs, 0, 1)
        G.coeffs[_ahol(m), _hol(m)] = hinv.coeffs
        return G

    @cached_property
    def h_raise(self) -> Jet:
        """``h^{a bar b}`` with ``h^{a bar c} h_{b bar c} = delta^a_b``."""
        return self.Ginv[_hol(self.m), _ahol(self.m)]

    # -- connection -----------------------------------------------------------

    @cached_property
    def omega(self) -> Jet:
        m, n = self.m, self.n
        g = self.gamma
        om = Jet.zeros((n, n, n), g.dim, g.order)
        om.coeffs[_hol(m), _hol(m)] = np.swapaxes(g.coeffs, 0, 1)
        gbar = g.conj().coeffs[:, :, conj_index(m)]
        om.coeffs[_ahol(m), _ahol(m)] = np.swapaxes(gbar, 0, 1)
        return om

    def e(self, t: Jet) -> Jet:
        return frame_derivative(t, self.frame)

    def covariant(self, t: Jet, kinds: str) -> Jet:
        """``nabla_C t`` for a full-index tensor; ``kinds`` lists ``u``/``d`` per axis."""
        out = self.e(t)
        om = self.omega
        letters = "abcdefgh"
        for k, kind in enumerate(kinds):
            src = letters[: t.ndim]
            tgt = src[:k] + "Z" + src[k + 1 :]
            if kind == "u":
                out = out + jeinsum(f"{src[k]}ZC,{tgt}->{src}C", om, t)
            elif kind == "d":
                out = out - jeinsum(f"Z{src[k]}C,{tgt}->{src}C", om, t)
            else:
                raise ValueError("kinds must contain only 'u' and 'd'")
        return out

    def gradient(self, f: Jet) -> Jet:
        """``nabla_C f`` of a weight-zero function."""
        return self.e(f)

    def hessian(self, f: Jet) -> Jet:
        """``H[C, B] = nabla_C nabla_B f`` (weight zero)."""
        return self.covariant(self.e(f), "d").transpose(1, 0)

    # -- torsion tensors ------------------------------------------------------

    @cached_property
    def A_low(self) -> Jet:
        """``A_{ab} = h_{a bar c} conj(A^c_{bar b})``."""
        return jeinsum("ac,cb->ab", self.h, self.A_up.conj())

    @cached_property
    def N_low(self) -> Jet:
        """``N_{abc} = h_{c bar d} conj(N_{bar a bar b}^d)``."""
        return jeinsum("abd,cd->abc", self.N_up.conj(), self.h)

    @cached_property
    def N_mixed(self) -> Jet:
        """``N_{ab}^{bar c} = conj(N_{bar a bar b}^c)``."""
        return self.N_up.conj()

    def full(self, block: Jet, kinds: str) -> Jet:
        """Embed an ``m``-index block into the full index set (``h``=hol, ``a``=antihol)."""
        m = self.m
        slices = [_hol(m) if k == "h" else _ahol(m) for k in kinds]
        return _embed_block(block, self.n, slices)

    @cached_property
    def N_full(self) -> Jet:
        return self.full(self.N_low, "hhh")

    @cached_property
    def N_sq(self) -> Jet:
        """``||N||^2 = N_{abc} N^{abc}``."""
        Nbar = conj_tensor(self.N_full, self.m)
        Gi = self.Ginv
        return jeinsum("abc,ad,be,cf,def->", self.N_full, Gi, Gi, Gi, Nbar)

    def truncate(self, order: int) -> "WebsterData":
        return WebsterData(
            self.m,
            self.frame.truncate(order + 2),
            self.coframe.truncate(order + 2),
            self.D.truncate(order + 1),
            self.h.truncate(order + 1),
            self.gamma.truncate(order),
            self.A_up.truncate(order),
            self.N_up.truncate(order),
            dict(self.diagnostics),
        )


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------


def structure_functions(cof: CoframeValue) -> tuple[Jet, Jet, Jet]:
    """``(frame, coframe matrix, D)`` with ``D[A,B,C] = dtheta^A(e_B, e_C)``."""
    mat = cof.matrix()
    if mat.order < 1:
        raise OrderBudgetError("structure functions need coframe order >= 1")
    n, dim = mat.shape
    if n != dim:
        raise FormError(f"coframe has {n} forms on a {dim}-dimensional chart")
    sv = np.linalg.svd(np.asarray(mat.value), compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise FormError("coframe matrix is singular")
    frame = jinv(mat).T
    g = mat.grad()  # g[A, j, i] = d_i theta^A_j
    dtheta = g.transpose(0, 2, 1) - g  # [A, i, j] = d_i th_j - d_j th_i
    D = jeinsum("Aij,Bi,Cj->ABC", dtheta, frame, frame)
    return frame, mat, D


def levi_form(D: Jet, m: int, tol: float = 1e-9) -> Jet:
    """Extract ``h`` from ``dtheta = i h theta^a ^ conj(theta^b)`` and validate it."""
    d0 = D[0]
    h = d0[_hol(m), _ahol(m)] * (-1j)
    v = np.asarray(d0.value)
    scale = max(1.0, float(np.max(np.abs(v))))
    stray = max(
        float(np.max(np.abs(v[0, :]))),
        float(np.max(np.abs(v[_hol(m), _hol(m)]))),
        float(np.max(np.abs(v[_ahol(m), _ahol(m)]))),
    )
    hv = np.asarray(h.value)
    if not np.all(np.isfinite(hv)) or np.max(np.abs(hv)) <= tol * scale:
        raise NonContactError("dtheta vanishes on H: theta is not a contact form")
    if stray > tol * scale:
        raise NotAdaptedError(f"dtheta has stray components of size {stray:.3e}")
    herm = float(np.max(np.abs(hv - hv.conj().T)))
    if herm > tol * scale:
        raise NotAdaptedError(f"Levi form is not Hermitian (defect {herm:.3e})")
    eig = np.linalg.eigvalsh(0.5 * (hv + hv.conj().T))
    if np.min(np.abs(eig)) <= tol * scale:
        raise NonContactError("Levi form is degenerate: theta is not a contact form")
    if np.min(eig) <= 0:
        raise NonContactError("Levi form is not positive definite")
    return h


def validate_adapted(geom: CRGeometry, point: Sequence[float], tol: float = 1e-9) -> np.ndarray:
    """Check adaptedness at ``point`` and return the Levi form values."""
    cof = geom.coframe_at(point, 1)
    _, _, D = structure_functions(cof)
    return np.asarray(levi_form(D.truncate(0), geom.m, tol).value)


def webster_from_coframe(cof: CoframeValue, check: bool = True, tol: float = 1e-9) -> WebsterData:
    """Solve the structure equations for a coframe given as jets.

    The connection comes out in closed form from the structure functions and
    the frame derivatives of ``h``; with ``check`` the full constraint system
    is also assembled at the base point and solved by least squares to
    confirm uniqueness and consistency.
    """
    m = cof.m
    if cof.matrix().order < 2:
        raise OrderBudgetError("the Webster solve needs coframe order >= 2")
    frame, mat, D = structure_functions(cof)
    h = levi_form(D, m, tol)
    hol, ahol = _hol(m), _ahol(m)

    # Gamma_b^a on ell and on conj(e_c) are read off dtheta^a directly.
    Da = D[hol]  # [a, B, C]
    gam_ell = Da[:, hol, 0].transpose(1, 0)  # [b, a]
    gam_bar = Da[:, hol, ahol].transpose(1, 0, 2)  # [b, a, c]
    A_up = Da[:, 0, ahol]
    N_up = -Da[:, ahol, ahol].transpose(1, 2, 0)

    # Holomorphic part from compatibility with h.
    eh = frame_derivative(h, frame.truncate(h.order))  # [a, b, C]
    eh_hol = eh[:, :, hol]  # e_d(h_{a bar b})
    comp = eh_hol - jeinsum("ag,bgd->abd", h, gam_bar.conj())
    hinv_T = jinv(h).T  # P[a, b] with h_{c bar b} P^{a bar b} = delta
    gam_hol = jeinsum("gb,abd->agd", hinv_T, comp)  # Gamma_a^g(e_d) -> [a, g, d]

    n = 2 * m + 1
    order = gam_hol.order
    gamma = Jet.zeros((m, m, n), gam_hol.dim, order)
    gamma.coeffs[:, :, 0] = gam_ell.truncate(order).coeffs
    gamma.coeffs[:, :, hol] = gam_hol.coeffs
    gamma.coeffs[:, :, ahol] = gam_bar.truncate(order).coeffs
    wd = WebsterData(m, frame, mat, D, h, gamma, A_up.truncate(order), N_up.truncate(order))
    if check:
        wd.diagnostics.update(_constraint_check(wd, tol))
    return wd


def solve_webster(geom: CRGeometry, point: Sequence[float], order: int, check: bool = True) -> WebsterData:
    """Webster data at ``point`` from a coframe expanded to jet order ``order``."""
    return webster_from_coframe(geom.coframe_at(point, order), check=check)


def _structure_residual(m: int, D, h, eh, gamma, A_up, N_up) -> np.ndarray:
    """All constraint residuals (complex, flattened) for given unknowns."""
    n = 2 * m + 1
    res = []
    # dtheta^a evaluated on (e_B, e_C): theta^b ^ Gamma_b^a + A theta^bar + N term
    model = np.zeros((m, n, n), dtype=complex)
    for a in range(m):
        for B in range(n):
            for C in range(n):
                v = 0j
                if 1 <= B <= m:
                    v += gamma[B - 1, a, C]
                if 1 <= C <= m:
                    v -= gamma[C - 1, a, B]
                if B == 0 and C > m:
                    v += A_up[a, C - m - 1]
                if C == 0 and B > m:
                    v -= A_up[a, B - m - 1]
                if B > m and C > m:
                    v -= N_up[B - m - 1, C - m - 1, a]
                model[a, B, C] = v
    iu = np.triu_indices(n, 1)
    res.append((D[1 : m + 1] - model)[:, iu[0], iu[1]].ravel())
    # compatibility dh = Gamma_{a bar b} + Gamma_{bar b a} on every frame vector
    cperm = conj_index(m)
    gbar_on = np.conj(gamma[:, :, cperm])  # conj(Gamma_b^g)(e_C)
    comp = eh - np.einsum("gb,agC->abC", h, gamma) - np.einsum("ag,bgC->abC", h, gbar_on)
    res.append(comp.ravel())
    # A_{ab} symmetric
    A_low = h @ np.conj(A_up)
    res.append((A_low - A_low.T).ravel())
    # N_{bar b bar c}^a antisymmetric and N_[abc] = 0
    res.append((N_up + N_up.transpose(1, 0, 2)).ravel())
    N_low = np.einsum("abd,cd->abc", np.conj(N_up), h)
    cyc = N_low + N_low.transpose(1, 2, 0) + N_low.transpose(2, 0, 1)
    res.append(cyc.ravel())
    return np.concatenate(res)


def _constraint_check(wd: WebsterData, tol: float) -> dict:
    m, n = wd.m, wd.n
    D = np.asarray(wd.D.value)
    h = np.asarray(wd.h.value)
    eh = np.asarray(wd.e(wd.h).value)
    shapes = [(m, m, n), (m, m), (m, m, m)]
    sizes = [int(np.prod(s)) for s in shapes]
    total = sum(sizes)

    def unpack(x):
        z = x[:total] + 1j * x[total:]
        out, k = [], 0
        for s, sz in zip(shapes, sizes):
            out.append(z[k : k + sz].reshape(s))
            k += sz
        return out

    def residual(x):
        g, a, nn = unpack(x)
        r = _structure_residual(m, D, h, eh, g, a, nn)
        return np.concatenate([r.real, r.imag])

    r0 = residual(np.zeros(2 * total))
    cols = []
    for k in range(2 * total):
        e = np.zeros(2 * total)
        e[k] = 1.0
        cols.append(residual(e) - r0)
    M = np.stack(cols, axis=1)
    x, *_ = np.linalg.lstsq(M, -r0, rcond=None)
    sv = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(sv > 1e-8 * sv[0]))
    if rank < 2 * total:
        raise RankDeficiencyError(f"constraint system has rank {rank} < {2 * total}")
    resid = float(np.max(np.abs(M @ x + r0)))
    scale = max(1.0, float(np.max(np.abs(D))))
    if resid > tol * scale:
        raise WebsterError(f"structure equations inconsistent: residual {resid:.3e}")
    g, a, nn = unpack(x)
    closed = [np.asarray(wd.gamma.value), np.asarray(wd.A_up.value), np.asarray(wd.N_up.value)]
    mismatch = max(float(np.max(np.abs(u - v))) for u, v in zip([g, a, nn], closed))
    if mismatch > 1e3 * tol * scale:
        raise WebsterError(f"closed-form connection disagrees with least squares by {mismatch:.3e}")
    return {"ls_residual": resid, "rank": rank, "unknowns": 2 * total, "ls_mismatch": mismatch}


def structure_residual(wd: WebsterData) -> float:
    """Max residual of the structure equations, compatibility and symmetries."""
    r = _structure_residual(
        wd.m,
        np.asarray(wd.D.value),
        np.asarray(wd.h.value),
        np.asarray(wd.e(wd.h).value),
        np.asarray(wd.gamma.value),
        np.asarray(wd.A_up.value),
        np.asarray(wd.N_up.value),
    )
    return float(np.max(np.abs(r)))


# ---------------------------------------------------------------------------
# Curvature
# ---------------------------------------------------------------------------


@dataclass
class WebsterCurvature:
    """Webster curvature record (jets; ``.value`` gives point values)."""

    m: int
    Omega: Jet  # Omega[A, B, C, E] = Omega^A_B(e_C, e_E)
    Riem: Jet  # Riem[a, b, d, g] = Riem_{a bar b d}^g
    Riem_0: Jet  # Riem[a, d, g] = Riem_{a 0 d}^g
    Riem_hol: Jet  # Riem[a, b, d, g] = Riem_{a b d}^g
    Ric: Jet  # Ric_{a bar b}
    Ric_mixed: Jet  # Ric_g^d
    Sc: Jet
    Rho_ab: Jet
    Rho: Jet
    chern_moser: Jet | None  # S_{a bar b c bar d}
    T: Jet | None  # T_a, needs one extra jet order
    N_sq: Jet


def curvature_form(wd: WebsterData) -> Jet:
    """``Omega^A_B(e_C, e_E)`` of the full-frame connection."""
    om = wd.omega
    D = wd.D.truncate(om.order)
    dom = wd.e(om)  # [A, B, E, C] = e_C(omega^A_B(e_E))
    term = dom.transpose(0, 1, 3, 2) - dom
    term = term + jeinsum("ABF,FCE->ABCE", om, D)
    term = term + jeinsum("AFC,FBE->ABCE", om, om) - jeinsum("AFE,FBC->ABCE", om, om)
    return term


def webster_curvature(source, point: Sequence[float] | None = None, order: int | None = None) -> WebsterCurvature:
    """Full Webster curvature record.

    ``source`` is either solved :class:`WebsterData` or a geometry (then
    ``point`` and ``order`` are required; ``order >= 3``).
    """
    if isinstance(source, WebsterData):
        wd = source
    else:
        if order is None or point is None:
            raise ValueError("geometry input needs point and order")
        if order < 3:
            raise OrderBudgetError("Webster curvature needs coframe order >= 3")
        wd = solve_webster(source, point, order)
    if wd.order < 1:
        raise OrderBudgetError("Webster curvature needs connection jets of order >= 1")
    m = wd.m
    hol, ahol = _hol(m), _ahol(m)
    Om = curvature_form(wd)
    # Riem_{a bar b d}^g = Omega^g_d(e_a, conj e_b)
    Riem = Om[hol, hol][:, :, hol, ahol].transpose(2, 3, 1, 0)
    Riem_0 = Om[hol, hol][:, :, hol, 0].transpose(2, 1, 0)
    Riem_hol = Om[hol, hol][:, :, hol, hol].transpose(2, 3, 1, 0)
    hr = wd.h_raise.truncate(Riem.order)
    h = wd.h.truncate(Riem.order)
    Ric_mixed = jeinsum("ab,abdg->dg", hr, Riem)
    Ric = jeinsum("ag,gb->ab", Ric_mixed, h)
    Sc = jeinsum("gg->", Ric_mixed)
    Rho_ab = (Ric - h * Sc * (1.0 / (2 * m + 2))) * (1.0 / (m + 2))
    Rho = jeinsum("ab,ab->", Rho_ab, hr)
    cm = chern_moser(Riem, h, hr, m) if m > 1 else None
    T = t_tensor(wd, Rho) if Rho.order >= 1 else None
    return WebsterCurvature(
        m, Om, Riem, Riem_0, Riem_hol, Ric, Ric_mixed, Sc, Rho_ab, Rho, cm, T, wd.N_sq.truncate(Riem.order)
    )


def chern_moser(Riem: Jet, h: Jet, hr: Jet, m: int) -> Jet:
    """Trace-free part of the symmetrized ``R_{a bar b c bar d}``."""
    R = jeinsum("abdg,gc->abdc", Riem, h)  # R_{a bar b d bar c}
    R = R.transpose(0, 1, 2, 3)
    # symmetrize in (a, d) and (bar b, bar c)
    R = (R + R.transpose(2, 1, 0, 3) + R.transpose(0, 3, 2, 1) + R.transpose(2, 3, 0, 1)) * 0.25
    # indices: [a, b, c, d] = R_{a bar b c bar d}
    Q = jeinsum("abcd,cd->ab", R, hr)
    q = jeinsum("ab,ab->", Q, hr)
    hh1 = jeinsum("ab,cd->abcd", h, h)
    term_q = (
        jeinsum("ab,cd->abcd", Q, h)
        + jeinsum("cb,ad->abcd", Q, h)
        + jeinsum("ad,cb->abcd", Q, h)
        + jeinsum("cd,ab->abcd", Q, h)
    )
    hh = hh1 + hh1.transpose(2, 1, 0, 3)
    return R - term_q * (1.0 / (m + 2)) + hh * q * (1.0 / ((m + 1) * (m + 2)))


def t_tensor(wd: WebsterData, Rho: Jet) -> Jet:
    """``T_a = (nabla_a Rho - i nabla^g A_{g a} + i A^{bg} N_{a b g}) / (m + 2)``."""
    m = wd.m
    hol, ahol = _hol(m), _ahol(m)
    order = Rho.order - 1
    wdt = wd.truncate(max(order, 0) + 1) if order >= 0 else wd
    dRho = wdt.e(Rho)[hol]
    A_full = wdt.full(wdt.A_low, "hh")
    dA = wdt.covariant(A_full, "dd")  # [g, a, C]
    hr = wdt.h_raise
    div_A = jeinsum("gd,gad->a", hr.truncate(order), dA[hol, hol][:, :, ahol])
    Abar = wdt.A_low.conj()  # A_{bar b bar g}
    A_up2 = jeinsum("bm,gn,mn->bg", hr, hr, Abar)
    AN = jeinsum("bg,abg->a", A_up2, wdt.N_low)
    return (dRho - 1j * div_A + 1j * AN) * (1.0 / (m + 2))


# ---------------------------------------------------------------------------
# Derived tensors and identities
# ---------------------------------------------------------------------------


@dataclass
class NijenhuisDerivatives:
    dbar_N: Jet  # [d, g, a, b] = nabla_{bar d} N_{g a b}
    div_N: Jet  # [a, b] = nabla^g N_{g a b}
    full: Jet  # nabla_C N_{g a b} -> [g, a, b, C]


def covariant_derivative_N(source, point=None, order=None) -> NijenhuisDerivatives:
    """``nabla_{bar d} N_{g a b}`` and ``nabla^g N_{g a b}``."""
    wd = source if isinstance(source, WebsterData) else solve_webster(source, point, order)
    m = wd.m
    hol, ahol = _hol(m), _ahol(m)
    dN = wd.covariant(wd.N_full, "ddd")
    blk = dN[hol, hol, hol]  # [g, a, b, C]
    dbar = blk[:, :, :, ahol].transpose(3, 0, 1, 2)
    div = jeinsum("gd,dgab->ab", wd.h_raise.truncate(dbar.order), dbar)
    return NijenhuisDerivatives(dbar, div, blk)


def reeb_gauge(wd: WebsterData) -> Jet:
    """Frame components of ``Im(Gamma_a^a) / (m + 2)``.

    This is the one-form ``xi`` with ``nabla sigma = i xi sigma`` for the
    volume-normalized weight-(1, 0) density of the contact form.
    """
    m = wd.m
    tr = jeinsum("aaC->C", wd.gamma)
    tr_bar = tr.conj()
    perm = conj_index(m)
    tr_bar = Jet(tr_bar.space, tr_bar.coeffs[perm])
    return (tr - tr_bar) * (1.0 / (2j * (m + 2)))


def density_derivative(wd: WebsterData, F: Jet, weights: tuple[float, float]) -> Jet:
    """``nabla_C`` of a weight-``(w, w')`` density, divided by the reference.

    The density is ``F * sigma^w * conj(sigma)^w'`` with ``sigma`` the
    volume-normalized density of the contact form.
    """
    w, wp = weights
    xi = reeb_gauge(wd)
    dF = wd.e(F)
    if w == wp:
        return dF
    k = min(dF.order, xi.order)
    return dF.truncate(k) + F.truncate(k) * xi.truncate(k) * (1j * (w - wp))


def gauged_derivative(
    grad_f,
    f,
    weights: tuple[float, float],
    xi,
    reference_gauge=None,
):
    """Gauged Webster derivative ``nabla f - i (w - w') xi f``.

    ``grad_f`` holds the frame components of ``nabla f`` computed in the
    declared trivialization, ``f`` its value and ``xi`` the gauge one-form in
    frame components.  ``reference_gauge`` adds ``i (w - w') xi_ref f`` when the
    trivialization itself is not parallel.
    """
    w, wp = weights
    out = grad_f
    if reference_gauge is not None:
        out = out + reference_gauge * f * (1j * (w - wp))
    if w == wp:
        return out
    return out - xi * f * (1j * (w - wp))


@dataclass
class ClosednessResidual:
    hol: np.ndarray  # nabla_[a xi_b] - 1/2 N_{ab}^{bar g} xi_{bar g}
    mixed: np.ndarray  # nabla_a xi_{bar b} - nabla_{bar b} xi_a + i h xi_0
    reeb: np.ndarray  # nabla_a xi_0 - nabla_0 xi_a + A_a^{bar b} xi_{bar b}

    def max(self) -> float:
        return max(float(np.max(np.abs(x))) if x.size else 0.0 for x in (self.hol, self.mixed, self.reeb))


def closedness_residual(wd: WebsterData, xi: Jet) -> ClosednessResidual:
    """Components of ``d xi`` written through the Webster calculus.

    ``xi`` is the real one-form in full frame components.  The three blocks
    vanish exactly when ``xi`` is closed.
    """
    m = wd.m
    hol, ahol = _hol(m), _ahol(m)
    dxi = wd.covariant(xi, "d")  # [B, C] = nabla_C xi_B
    xi_t = xi.truncate(dxi.order)
    h = wd.h.truncate(dxi.order)
    Nm = wd.N_mixed.truncate(dxi.order)
    A_low = wd.A_low.truncate(dxi.order)
    hr = wd.h_raise.truncate(dxi.order)
    nab = dxi.transpose(1, 0)  # [C, B] = nabla_C xi_B
    hol_part = (nab[hol, hol] - nab[hol, hol].transpose(1, 0)) * 0.5 - jeinsum(
        "abg,g->ab", Nm, xi_t[ahol]
    ) * 0.5
    mixed = nab[hol, ahol] - nab[ahol, hol].transpose(1, 0) + h * xi_t[0] * 1j
    # A_a^{bar b} = h^{c bar b} A_{a c}
    A_mixed = jeinsum("ac,cb->ab", A_low, hr)
    reeb = nab[hol, 0] - nab[0, hol] + jeinsum("ab,b->a", A_mixed, xi_t[ahol])
    return ClosednessResidual(
        np.asarray(hol_part.value), np.asarray(mixed.value), np.asarray(reeb.value)
    )


def two_form_frame_components(wd: WebsterData, comps: Jet) -> Jet:
    """Frame components of a coordinate 2-form: ``w(e_B, e_C)``."""
    fr = wd.frame.truncate(comps.order)
    return jeinsum("ij,Bi,Cj->BC", comps, fr, fr)


def one_form_frame_components(wd: WebsterData, comps: Jet) -> Jet:
    fr = wd.frame.truncate(comps.order)
    return jeinsum("i,Bi->B", comps, fr)


def frame_to_coordinates(wd: WebsterData, comps: Jet) -> Jet:
    """Coordinate components of a one-form given on the frame."""
    cm = wd.coframe.truncate(comps.order)
    return jeinsum("B,Bi->i", comps, cm)


def commutator_residuals(wd: WebsterData, f: Jet) -> dict:
    """Commutators of second derivatives of a weight-(0, 0) function.

    Blocks ``mixed``, ``reeb`` and ``hol`` are the differences between
    ``[nabla_a, nabla_{bar b}] f``, ``[nabla_a, nabla_0] f``,
    ``[nabla_a, nabla_b] f`` and their torsion expressions.
    """
    if f.order < 2:
        raise OrderBudgetError("commutators need function jets of order >= 2")
    m = wd.m
    hol, ahol = _hol(m), _ahol(m)
    H = np.asarray(wd.hessian(f).value)
    df = np.asarray(wd.e(f).value)
    h = np.asarray(wd.h.value)
    hr = np.asarray(wd.h_raise.value)
    A_mixed = np.asarray(wd.A_low.value) @ hr  # A_a^{bar b}
    Nm = np.asarray(wd.N_mixed.value)  # N_{ab}^{bar c}
    mixed = H[hol, ahol] - H[ahol, hol].T + 1j * h * df[0]
    reeb = H[hol, 0] - H[0, hol] - A_mixed @ df[ahol]
    hol_part = H[hol, hol] - H[hol, hol].T - np.einsum("abc,c->ab", Nm, df[ahol])
    return {"mixed": mixed, "reeb": reeb, "hol": hol_part}


def volume_normalization_residual(geom: CRGeometry, point: Sequence[float]) -> float:
    """Relative residual of the volume normalization for ``zeta = sqrt(det h) theta ^ theta^1 ^ ... ^ theta^m``.

    Compares ``theta ^ (dtheta)^m`` with ``i^(m^2) m! (-1)^q theta ^ (ell -| zeta) ^ (ell -| conj zeta)``,
    ``q`` being the number of negative eigenvalues of the Levi form.
    """
    cof = geom.coframe_at(point, 1)
    m = cof.m
    theta = FormValue(1, cof.theta.truncate(0))
    dtheta = exterior_derivative_value(FormValue(1, cof.theta))
    lhs = theta
    for _ in range(m):
        lhs = wedge(lhs, dtheta)
    wd = solve_webster(geom, point, 2, check=False)
    h = np.asarray(wd.h.value)
    eig = np.linalg.eigvalsh(0.5 * (h + h.conj().T))
    q = int(np.sum(eig < 0))
    scale = np.sqrt(complex(np.linalg.det(h)))
    rows = [FormValue(1, cof.theta_alpha[a].truncate(0)) for a in range(m)]
    ell_zeta = rows[0]
    for r in rows[1:]:
        ell_zeta = wedge(ell_zeta, r)
    rhs = wedge(wedge(theta, ell_zeta * scale), ell_zeta.conj() * np.conj(scale))
    factor = (1j ** (m * m)) * math.factorial(m) * (-1) ** q
    lv, rv = top_form_coefficient(lhs), factor * top_form_coefficient(rhs)
    return abs(lv - rv) / max(abs(lv), 1e-300)


# ---------------------------------------------------------------------------
# Contact rescaling
# ---------------------------------------------------------------------------


class RescaledGeometry:
    """Geometry with ``theta' = exp(U) theta``.

    The admissible coframe is completed as
    ``theta'^a = exp(c U) (theta^a + i U^a theta)`` with ``U^a = h^{a bar b} U_{bar b}``;
    ``completion = c`` (default 1/2 keeps the Levi form unchanged, 0 gives
    ``h' = exp(U) h``).
    """

    def __init__(self, base: CRGeometry, upsilon: Expr, completion: float = 0.5):
        self.base = base
        self.upsilon = upsilon
        self.completion = completion
        self.chart = base.chart

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def name(self) -> str:
        return f"{getattr(self.base, 'name', 'geometry')}-rescaled"

    @property
    def lets(self):
        return getattr(self.base, "lets", {})

    @property
    def scales(self):
        return getattr(self.base, "scales", {})

    @property
    def perturbation(self):
        return getattr(self.base, "perturbation", None)

    def evaluator(self, point, order):
        return self.base.evaluator(point, order)

    def scalar_jet(self, expr: Expr, point: Sequence[float], order: int) -> Jet:
        return self.base.scalar_jet(expr, point, order)

    def upsilon_jet(self, point: Sequence[float], order: int) -> Jet:
        return self.base.evaluator(point, order)(self.upsilon)

    def coframe_at(self, point: Sequence[float], order: int) -> CoframeValue:
        m = self.m
        cof = self.base.coframe_at(point, order + 1)
        frame, mat, D = structure_functions(cof)
        h = levi_form(D, m)
        U = self.upsilon_jet(point, order + 1)
        dU = frame_derivative(U, frame)  # order K
        hinv_T = jinv(h).T
        U_up = jeinsum("ab,b->a", hinv_T, dU[_ahol(m)])
        theta = cof.theta.truncate(order)
        scale = compose("exp", U.truncate(order))
        rows = []
        for a in range(m):
            rows.append((cof.theta_alpha[a].truncate(order) + theta * U_up[a] * 1j) * compose(
                "exp", U.truncate(order) * self.completion
            ))
        return CoframeValue(theta * scale, stack(rows))


def rescale_contact(geom: CRGeometry, upsilon: Expr, completion: float = 0.5) -> RescaledGeometry:
    return RescaledGeometry(geom, upsilon, completion)


@dataclass
class ContactTransform:
    """Webster data before and after ``theta' = exp(U) theta`` plus predictions."""

    before: WebsterData
    after: WebsterData
    upsilon: Jet
    completion: float
    predicted: dict
    observed: dict

    def residuals(self) -> dict:
        out = {}
        for k in self.predicted:
            p, o = np.asarray(self.predicted[k]), np.asarray(self.observed[k])
            out[k] = float(np.max(np.abs(p - o))) if p.size else 0.0
        return out


def transform_contact(
    geom: CRGeometry, upsilon: Expr, point: Sequence[float], order: int = 4, completion: float = 0.5
) -> ContactTransform:
    """Compare re-solved Webster tensors with the change-of-contact-form laws.

    Observed tensors of the rescaled structure are evaluated on the original
    frame vectors (``e'_a = exp(-c U) e_a``) and multiplied by the weight
    factor of each tensor so both sides refer to the same trivialization.
    """
    m = geom.m
    hol, ahol = _hol(m), _ahol(m)
    c = completion
    wd = solve_webster(geom, point, order)
    resc = RescaledGeometry(geom, upsilon, completion)
    wd2 = solve_webster(resc, point, order - 1)
    cv0 = webster_curvature(wd)
    cv1 = webster_curvature(wd2)
    U = geom.evaluator(point, order)(upsilon) if hasattr(geom, "evaluator") else resc.upsilon_jet(point, order)
    eU = np.exp(float(np.real(U.value)))

    # Weighted quantities: Upsilon_a = nabla_a U etc. in the old frame.
    dU = wd.e(U)
    ddU = wd.covariant(dU, "d").transpose(1, 0)  # [C, B] = nabla_C U_B
    dUv = np.asarray(dU.value)
    hv = np.asarray(wd.h.value)
    hr = np.asarray(wd.h_raise.value)
    Ua = dUv[hol]
    Uab = dUv[ahol]
    U_up = hr @ Uab  # U^g
    U_sq = float(np.real(U_up @ Ua))  # U^g U_g
    ddUv = np.asarray(ddU.value)
    A0 = np.asarray(wd.A_low.value)
    N0 = np.asarray(wd.N_low.value)
    Nsym = 0.5 * (N0 + N0.transpose(0, 2, 1))
    sym_dd = 0.5 * (ddUv[hol, hol] + ddUv[hol, hol].T)
    pred_A = A0 + 1j * sym_dd - 1j * np.outer(Ua, Ua) + 1j * np.einsum("g,gab->ab", U_up, Nsym)
    Rho0 = np.asarray(cv0.Rho_ab.value)
    pred_Rho_ab = Rho0 - 0.5 * (ddUv[hol, ahol] + ddUv[ahol, hol].T) - 0.5 * U_sq * hv
    div1 = np.einsum("ab,ab->", hr, ddUv[ahol, hol].T)  # nabla^a U_a
    pred_Rho = complex(cv0.Rho.value) - div1.real * 1.0 - 0.5 * m * U_sq
    # nabla^a U_a + nabla_a U^a = 2 Re(nabla^a U_a) for real U
    nd0 = covariant_derivative_N(wd)
    divN0 = np.asarray(nd0.div_N.value)
    sym = lambda t: 0.5 * (t + t.T)
    skew = lambda t: 0.5 * (t - t.T)
    UN = np.einsum("g,gab->ab", U_up, N0)
    pred_divN_sym = sym(divN0) + m * sym(UN)
    pred_divN_skew = skew(divN0) + (m + 2) * skew(UN)

    # Observed tensors of theta' taken on the old frame: e'_a = exp(-cU) e_a,
    # so a tensor with p lower frame indices picks up exp(p c U).  The scalar
    # Rho has CR weight (-1, -1) and is compared after multiplying by exp(U).
    u0 = float(np.real(U.value))
    two = np.exp(2 * c * u0)
    obs_A = np.asarray(wd2.A_low.value) * two
    obs_Rho_ab = np.asarray(cv1.Rho_ab.value) * two
    obs_Rho = complex(cv1.Rho.value) * eU
    obs_divN = np.asarray(covariant_derivative_N(wd2).div_N.value) * two
    predicted = {
        "A": pred_A,
        "Rho_ab": pred_Rho_ab,
        "Rho": np.array(pred_Rho),
        "divN_sym": pred_divN_sym,
        "divN_skew": pred_divN_skew,
    }
    observed = {
        "A": obs_A,
        "Rho_ab": obs_Rho_ab,
        "Rho": np.array(obs_Rho),
        "divN_sym": sym(obs_divN),
        "divN_skew": skew(obs_divN),
    }
    return ContactTransform(wd, wd2, U, completion, predicted, observed)


__all__ = [
    "CRGeometry",
    "ClosednessResidual",
    "ContactTransform",
    "NijenhuisDerivatives",
    "NonContactError",
    "NotAdaptedError",
    "OrderBudgetError",
    "RankDeficiencyError",
    "RescaledGeometry",
    "WebsterCurvature",
    "WebsterData",
    "WebsterError",
    "chern_moser",
    "closedness_residual",
    "commutator_residuals",
    "conj_tensor",
    "covariant_derivative_N",
    "curvature_form",
    "density_derivative",
    "frame_derivative",
    "gauged_derivative",
    "levi_form",
    "reeb_gauge",
    "rescale_contact",
    "solve_webster",
    "structure_functions",
    "structure_residual",
    "transform_contact",
    "validate_adapted",
    "volume_normalization_residual",
    "webster_curvature",
    "webster_from_coframe",
]
