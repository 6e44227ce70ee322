"""Conformally invariant conditions on metrics carrying a null conformal Killing field.

Everything here is evaluated pointwise from metric jets through
:mod:`crfeff.lorentz`.  Tensor norms are Euclidean norms of components in an
orthonormal frame adapted to ``k`` (see :func:`crfeff.lorentz.orthonormal_frame`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exprdsl import Binary, Const, Expr, Name, Unary
from .fefferman import FIBRE, PerturbedFeffermanSpec, assemble
from .jets import Jet, jeinsum
from .lorentz import (
    LorentzError,
    RescaledMetric,
    covariant,
    frame_norm,
    full_curvature,
    levi_civita,
    norm_frame,
    null_partner,
    orthonormal_frame,
    scalar_field_jet,
    screen_basis,
    vector_field_jet,
)

INDETERMINATE_WNORM = 1e-6
ZERO_SET_MARGIN = 0.05


class ZeroSetError(LorentzError):
    """The sample point is too close to the zero set of a scale."""


def fibre_field(dim: int) -> np.ndarray:
    """The vector field ``d/dphi`` on a bundle chart with the fibre last."""
    k = np.zeros(dim)
    k[-1] = 1.0
    return k


def _values(j: Jet) -> np.ndarray:
    return np.asarray(j.value)


def _sym(t: np.ndarray) -> np.ndarray:
    return 0.5 * (t + t.T)


def _trace_free(t: np.ndarray, g: np.ndarray, gi: np.ndarray) -> np.ndarray:
    return t - np.einsum("ab,ab->", gi, t) / g.shape[0] * g


# ---------------------------------------------------------------------------
# Conformal Killing and integrability conditions
# ---------------------------------------------------------------------------


def conformal_killing_residual(metric, k, point: Sequence[float], order: int = 1) -> float:
    """Norm of the trace-free symmetric part of ``nabla kappa``."""
    g = metric.metric_at(point, max(order, 1))
    ch = levi_civita(g)
    kj = vector_field_jet(metric, k, point, g.order)
    kap = jeinsum("ab,b->a", g, kj)
    nab = _values(covariant(kap, ch.Gamma, "d")).T.real
    gv, gi = _values(g).real, _values(ch.ginv).real
    tf = _trace_free(_sym(nab), gv, gi)
    return frame_norm(tf, norm_frame(gv, _values(kj).real))


@dataclass
class IntegrabilityReport:
    rho_sc: float
    wkk_residual: float
    alpha: float | None  # inferred; None when ||W(k)||^2 is too small
    ykk_residual: float
    intcond_residual: float
    ckf_residual: float
    wnorm: float
    alpha_used: float
    wkk_slope: float

    @property
    def indeterminate(self) -> bool:
        return self.alpha is None

    def entries(self) -> dict:
        return {
            "rho_sc": self.rho_sc,
            "wkk": self.wkk_residual,
            "ykk": self.ykk_residual,
            "int_cond": self.intcond_residual,
            "ckf": self.ckf_residual,
            "wnorm": self.wnorm,
            "alpha": self.alpha,
        }


def _antisym(t: np.ndarray) -> np.ndarray:
    return 0.5 * (t - t.T)


def integrability_report(
    metric, k, point: Sequence[float], order: int = 3, alpha: float | None = None
) -> IntegrabilityReport:
    """The four conditions characterizing alpha-Fefferman spaces.

    ``alpha`` fixes the parameter used in the Cotton and integrability
    residuals; by default the value inferred from the Weyl condition is used
    (1 when it is indeterminate).
    """
    if order < 3:
        raise LorentzError("integrability conditions need metric jets of order >= 3")
    c = full_curvature(metric, point, order)
    dim = c.g.shape[0]
    n = c.n
    m = n // 2
    G = c.Gamma
    kj = vector_field_jet(metric, k, point, c.g.order)
    kap = jeinsum("ab,b->a", c.g, kj)
    gv = _values(c.g).real
    gi = _values(c.ginv).real
    kv = _values(kj).real
    kapv = gv @ kv
    frame = orthonormal_frame(gv, kv)

    # divergence and its derivative
    dk = covariant(kj, G, "u")  # [a, b] = nabla_b k^a
    div = jeinsum("aa->", dk)
    divv = complex(div.value).real
    ddiv = _values(div.grad()).real
    P = _values(c.Rho).real
    # normalized by the full dimension: the only choice invariant under rescalings that vary along k
    rho_sc = divv**2 / dim**2 - kv @ P @ kv - (kv @ ddiv) / dim

    nab = _values(covariant(kap, G, "d")).T.real  # [a, b] = nabla_a kappa_b
    tau = _antisym(nab)
    ckf = frame_norm(_trace_free(_sym(nab), gv, gi), frame)

    # ||W(k)||^2 as a jet of order 1
    W = c.Weyl
    Wk = jeinsum("a,abcd->bcd", kj.truncate(W.order), W)
    giW = c.ginv.truncate(W.order)
    Wk_up = jeinsum("eb,fc,gd,bcd->efg", giW, giW, giW, Wk)
    wjet = jeinsum("bcd,bcd->", Wk, Wk_up)
    wv = complex(wjet.value).real
    dw = _values(wjet.grad()).real

    Wv = _values(W).real
    lhs_w = np.einsum("a,abcd,d->bc", kv, Wv, kv)
    kk = np.outer(kapv, kapv)
    fr_l, fr_k = _frame_components(lhs_w, frame), _frame_components(kk, frame)
    slope = float(np.sum(fr_l * fr_k) / np.sum(fr_k * fr_k))
    inferred = None
    if abs(wv) > INDETERMINATE_WNORM:
        inferred = 1.0 + 8 * (2 * m + 1) * slope / wv
    a_used = alpha if alpha is not None else (inferred if inferred is not None else 1.0)
    wkk = frame_norm(lhs_w - (a_used - 1) / (8 * (2 * m + 1)) * wv * kk, frame)

    C = _values(c.Cotton).real  # [c, a, b]
    lhs_y = np.einsum("a,abc,c->b", kv, C, kv)
    rhs_y = (a_used - 1) / (16 * (2 * m + 1)) * kapv * (kv @ dw)
    ykk = frame_norm(lhs_y - rhs_y, frame)

    W_mixed = np.einsum("abef,ec,fd->abcd", Wv, gi, gi)  # W_ab^cd
    t1 = np.einsum("abcd,cd->ab", W_mixed, tau)
    t2 = -2 * np.einsum("c,cab->ab", kv, C)
    W_up_last = np.einsum("efgh,hc->efgc", Wv, gi)  # W_efg^c
    # X_b^c = k^d W_bd^ef W_efg^c k^g
    X = np.einsum("d,bdef,efgc,g->bc", kv, W_mixed, W_up_last, kv)
    q1 = np.einsum("ca,bc->ab", tau, X)
    # Y_b = k^c W_bc^de C_fde k^f
    Y = np.einsum("c,bcde,fde,f->b", kv, W_mixed, C, kv)
    q2 = np.outer(kapv, Y)
    lhs_i = t1 + t2 - 0.5 * (_antisym(q1) + _antisym(q2))
    # nabla_[a (kappa_b] w)
    kw = kap.truncate(wjet.order) * wjet
    dkw = _values(kw.grad()).real  # [b, a] = d_a (kappa_b w)
    rhs_i = (1 / (4 * m)) * (1 + 2 * m * (m + 1) / (2 * m + 1) * (a_used - 1)) * _antisym(dkw.T)
    intc = frame_norm(lhs_i - rhs_i, frame)
    return IntegrabilityReport(float(rho_sc), wkk, inferred, ykk, intc, ckf, float(wv), float(a_used), slope)


def _frame_components(t: np.ndarray, frame: np.ndarray) -> np.ndarray:
    out = np.asarray(t)
    for _ in range(out.ndim):
        out = np.tensordot(out, frame, axes=([0], [1]))
    return out


# ---------------------------------------------------------------------------
# Petrov-type conditions
# ---------------------------------------------------------------------------


@dataclass
class PetrovResiduals:
    petrov_iia: float
    petrov_iib: float
    petrov_iiia: float
    petrov_iiib: float
    wkvkv: float

    def entries(self) -> dict:
        return {
            "petrov_iia": self.petrov_iia,
            "petrov_iib": self.petrov_iib,
            "petrov_iiia": self.petrov_iiia,
            "petrov_iiib": self.petrov_iiib,
            "wkvkv": self.wkvkv,
        }


def petrov_conditions(metric, k, point: Sequence[float], order: int = 2) -> PetrovResiduals:
    """Weyl contractions with ``k`` and vectors of ``k^perp`` (maxima over a basis)."""
    c = full_curvature(metric, point, max(order, 2))
    gv = _values(c.g).real
    gi = _values(c.ginv).real
    kj = vector_field_jet(metric, k, point, c.g.order)
    kv = _values(kj).real
    frame = orthonormal_frame(gv, kv)
    W = _values(c.Weyl).real
    dk = _values(covariant(kj, c.Gamma, "u")).real  # [a, b] = nabla_b k^a
    nabla_up = gi @ dk.T  # [c, d] = nabla^c k^d
    perp = np.vstack([kv, screen_basis(gv, kv)])
    wk_k = np.einsum("a,abcd,c->bd", kv, W, kv)
    iia = iib = wkvkv = 0.0
    for v in perp:
        iia = max(iia, frame_norm(v @ wk_k, frame))
        iib = max(iib, abs(float(np.einsum("a,b,abcd,cd->", kv, v, W, nabla_up))))
        wkvkv = max(wkvkv, abs(float(v @ wk_k @ v)))
    iiia = frame_norm(wk_k, frame)
    return PetrovResiduals(iia, iib, iiia, iib, wkvkv)


# ---------------------------------------------------------------------------
# Scale equations
# ---------------------------------------------------------------------------


@dataclass
class ScaleResiduals:
    einstein: float
    weakly_half_einstein: float
    half_einstein: float
    pure_radiation: float
    Phi: np.ndarray
    Lambda_tilde: float
    Ricci_residual: float  # max |Ric - Lambda_tilde g| of the rescaled metric

    def entries(self) -> dict:
        return {
            "einstein": self.einstein,
            "weakly_half_einstein": self.weakly_half_einstein,
            "half_einstein": self.half_einstein,
            "pure_radiation": self.pure_radiation,
            "lambda_tilde": self.Lambda_tilde,
        }


def cos_profile(phase: float | Expr = 0.0, scale: Expr | None = None) -> Expr:
    """The expression ``scale * cos(phi - phase)`` on a bundle chart."""
    ph = phase if isinstance(phase, Expr.__args__) else Const(float(phase))
    e: Expr = Unary("cos", Binary("-", Name(FIBRE), ph))
    return e if scale is None else Binary("*", scale, e)


def _screen_complex_structure(gv, kv, tau, scr) -> np.ndarray:
    """``J`` on the screen from the polar part of the twist (rows: screen basis)."""
    A = scr @ tau @ scr.T
    sq = -A @ A
    w, V = np.linalg.eigh(0.5 * (sq + sq.T))
    if w.min() <= 1e-14:
        raise LorentzError("twist is degenerate on the screen")
    inv_sqrt = V @ np.diag(w**-0.5) @ V.T
    return A @ inv_sqrt


def scale_residuals(
    metric,
    point: Sequence[float],
    profile: Expr | None = None,
    k=None,
    order: int = 3,
) -> ScaleResiduals:
    """Scale equations for ``sigma = profile`` (a function in the metric's trivialization).

    The default profile is ``cos(phi)``.  Points where ``|profile|`` drops below
    5% of its amplitude are rejected.
    """
    profile = cos_profile() if profile is None else profile
    dim = metric.dim
    k = fibre_field(dim) if k is None else k
    c = full_curvature(metric, point, order)
    s = scalar_field_jet(metric, profile, point, order + 1)
    sv = complex(s.value).real
    amp = abs(complex(scalar_field_jet(metric, _amplitude(profile), point, 0).value)) if _amplitude(profile) else 1.0
    if abs(sv) < ZERO_SET_MARGIN * amp:
        raise ZeroSetError(f"scale {sv:.3g} is within the zero-set margin")
    n = c.n
    G = c.Gamma
    ds = covariant(s.grad(), G, "d")  # [b, a] = nabla_a nabla_b s
    o = min(ds.order, c.Rho.order)
    E = ds.truncate(o) + c.Rho.truncate(o) * s.truncate(o)  # symmetric
    g = c.g.truncate(E.order)
    gi = c.ginv.truncate(E.order)
    tr = jeinsum("ab,ab->", gi, E)
    Etf = E - g * tr * (1.0 / (n + 2))
    gv, giv = _values(c.g).real, _values(c.ginv).real
    kv = np.asarray(vector_field_jet(metric, k, point, 0).value).real
    frame = orthonormal_frame(gv, kv)
    einstein = frame_norm(_values(Etf).real, frame)

    Phi = Etf * (s.truncate(Etf.order).reciprocal() * float(n))
    Phiv = _values(Phi).real

    # weakly half-Einstein: Phi(v, v) = 0 for v in span(k, (1,0) screen)
    kap = gv @ kv
    nab = _values(covariant(jeinsum("ab,b->a", c.g, vector_field_jet(metric, k, point, c.g.order)), G, "d")).T.real
    tau = _antisym(nab)
    scr = screen_basis(gv, kv)
    J = _screen_complex_structure(gv, kv, tau, scr)
    hol = [scr[i] - 1j * (J[i] @ scr) for i in range(len(scr))]
    vecs = [kv.astype(complex)] + hol
    wk = 0.0
    for a in vecs:
        for b in vecs:
            wk = max(wk, abs(a @ Phiv @ b))

    # half-Einstein divergence: Phi_a^b nabla_b s - (1/n) s nabla_b Phi_a^b
    dPhi = covariant(Phi, G, "dd")  # [a, b, c] = nabla_c Phi_ab
    divPhi = np.einsum("bc,abc->a", giv, _values(dPhi).real)
    dsv = _values(s.grad()).real
    half = frame_norm(Phiv @ giv @ dsv - sv / n * divPhi, frame)

    l = null_partner(gv, kv)
    pure = frame_norm(Phiv - (l @ Phiv @ l) * np.outer(kap, kap), frame)

    resc = full_curvature(RescaledMetric(metric, Binary("/", Const(1.0), profile)), point, 2)
    Sc = complex(resc.Sc.value).real
    lam_t = Sc / (n + 2)
    ric = float(np.abs(_values(resc.Ric).real - lam_t * _values(resc.g).real).max())
    return ScaleResiduals(einstein, wk, half, pure, Phiv, lam_t, ric)


def _amplitude(profile: Expr) -> Expr | None:
    if isinstance(profile, Binary) and profile.op == "*" and isinstance(profile.right, Unary):
        return profile.left
    return None


# ---------------------------------------------------------------------------
# The lambda_0 series
# ---------------------------------------------------------------------------


def lambda0_coefficients(m: int, Lam: float, Lam_t: float, mu: complex) -> dict[int, complex]:
    """Fourier coefficients keyed by ``2k`` for ``|k| <= m+1``; negative modes are conjugates."""
    mu = complex(mu)
    top = math.factorial(m) * math.factorial(m + 1) / (2 * math.factorial(2 * m + 2)) * (
        (2 * m + 1) * Lam - (2 * m + 2) * Lam_t
    ) + mu
    out = {2 * (m + 1): top}
    for k in range(1, m + 1):
        out[2 * k] = (
            2 * math.factorial(2 * m + 1) / (math.factorial(m + 1 - k) * math.factorial(m + 1 + k))
            * (k * top + (m + 1 - k) * mu.real)
        )
    out[0] = Lam / (2 * m + 2) + 2 * math.factorial(2 * m + 1) / (math.factorial(m) * math.factorial(m + 1)) * mu.real
    for k in range(1, m + 2):
        out[-2 * k] = out[2 * k].conjugate()
    return out


def lambda0_closed_form(m: int, Lam: float, Lam_t: float, mu: complex, phi, derivative: int = 0):
    """``lambda_0(phi)`` (or its derivative) from the Fourier series."""
    phi = np.asarray(phi, dtype=float)
    out = np.zeros(phi.shape, dtype=complex)
    for two_k, v in lambda0_coefficients(m, Lam, Lam_t, mu).items():
        out = out + v * (1j * two_k) ** derivative * np.exp(1j * two_k * phi)
    return out if out.ndim else complex(out)


def ode1_residual(m: int, Lam: float, Lam_t: float, mu: complex, phi) -> np.ndarray:
    """Constant-scalar-curvature equation for ``lambda_0`` (away from ``cos phi = 0``)."""
    l0, l1, l2 = (lambda0_closed_form(m, Lam, Lam_t, mu, phi, d) for d in range(3))
    t, sec2 = np.tan(phi), 1 / np.cos(phi) ** 2
    return np.abs(
        l2 + 2 * (2 * m + 1) * t * l1 + (-4 * m * (m + 1) + 2 * (m + 1) * (2 * m + 1) * sec2) * l0
        - 2 * (m + 1) * Lam_t * sec2 + 2 * m * Lam
    )


def ode2_residual(m: int, Lam: float, Lam_t: float, mu: complex, phi) -> np.ndarray:
    """First-order Einstein condition on ``lambda_0``."""
    l0, l1 = (lambda0_closed_form(m, Lam, Lam_t, mu, phi, d) for d in range(2))
    t, sec2 = np.tan(phi), 1 / np.cos(phi) ** 2
    return np.abs(t * l1 - (2 * (m + 1) - (2 * m + 1) * sec2) * l0 - Lam_t * sec2 + Lam)


# ---------------------------------------------------------------------------
# Zero set
# ---------------------------------------------------------------------------


@dataclass
class ZeroSetDiagnostics:
    det: float
    causal_class: str
    weyl_norm: float
    theta_coefficient: float
    block: np.ndarray = field(repr=False)


def _classify(det: float, tol: float) -> str:
    if abs(det) <= tol:
        return "null"
    return "spacelike" if det > 0 else "timelike"


def zero_set_diagnostics(
    spec: PerturbedFeffermanSpec, base_point: Sequence[float], order: int = 2, tol: float = 1e-8
) -> ZeroSetDiagnostics:
    """Restricted metric and Weyl tensor on the slice ``phi = pi/2``.

    The determinant is taken in the adapted frame ``(theta, e_i)`` where the
    ``e_i`` are real and orthonormal for the Levi form, so the spatial block
    contributes 1 and the determinant is the frame's ``theta theta`` entry
    after eliminating the mixed terms.
    """
    point = tuple(base_point) + (math.pi / 2,)
    a = assemble(spec, point, 0)
    nb = spec.dim - 1
    gb = np.asarray(a.metric.value).real[:nb, :nb]
    theta = np.asarray(a.theta.value).real[:nb]
    hol = np.asarray(a.coframe.value)[:, :nb]
    real_rows = np.vstack([theta[None, :], hol.real, hol.imag])
    # metric components in the dual frame of (theta, Re theta^a, Im theta^a)
    inv = np.linalg.inv(real_rows)
    block = inv.T @ gb @ inv
    # normalize the Levi-form block to the identity
    H = block[1:, 1:]
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    if w.min() <= 0:
        raise LorentzError("Levi form block is not positive definite")
    S = np.eye(nb)
    S[1:, 1:] = V @ np.diag(w**-0.5) @ V.T
    block = S.T @ block @ S
    det = float(np.linalg.det(block))
    c = full_curvature(spec, point, order)
    gv = np.asarray(c.g.value).real
    frame = orthonormal_frame(gv, fibre_field(spec.dim))
    wn = frame_norm(np.asarray(c.Weyl.value).real, frame)
    return ZeroSetDiagnostics(det, _classify(det, tol), wn, float(block[0, 0]), block)


__all__ = [
    "INDETERMINATE_WNORM",
    "IntegrabilityReport",
    "PetrovResiduals",
    "ScaleResiduals",
    "ZeroSetDiagnostics",
    "ZeroSetError",
    "conformal_killing_residual",
    "cos_profile",
    "fibre_field",
    "integrability_report",
    "lambda0_closed_form",
    "lambda0_coefficients",
    "ode1_residual",
    "ode2_residual",
    "petrov_conditions",
    "scale_residuals",
    "zero_set_diagnostics",
]
