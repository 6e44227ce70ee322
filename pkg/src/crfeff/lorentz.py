"""Pseudo-Riemannian curvature from metric jets.

Conventions (``n + 2`` is the dimension):

* ``Gamma[a, b, c]`` is the Christoffel symbol ``Gamma^a_{bc}``.
* ``Riem[a, b, c, d] = R_{abcd}`` with ``2 nabla_[a nabla_b] w_c = -R_{ab}^d_c w_d``;
  this agrees with the usual sign where round spheres have positive Ricci.
* ``Ric[b, d] = R_{ab}^a_d``; Schouten ``P = (Ric - Sc g / (2(n+1))) / n``.
* ``Riem = Weyl + 4 g_[a|[c P_d]|b]``.
* ``Cotton[c, a, b] = nabla_a P_bc - nabla_b P_ac`` and
  ``(n - 1) Cotton_cab = nabla^d Weyl_dcab``.

Every tensor is a :class:`~crfeff.jets.Jet`; each differentiation costs one
order, so Weyl needs metric jets of order 2 and Cotton order 3.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence, Union

import numpy as np

from .exprdsl import ChartSpec, Evaluator, Expr
from .jets import Jet, SingularInputError, compose, jeinsum, jinv

_LETTERS = "abcdefgh"


class LorentzError(ValueError):
    pass


class OrderBudgetError(LorentzError):
    pass


class SingularMetricError(LorentzError):
    pass


class MetricField(Protocol):
    chart: ChartSpec

    @property
    def dim(self) -> int: ...

    def metric_at(self, point: Sequence[float], order: int) -> Jet: ...


ScalarInput = Union[Expr, Callable[[Sequence[float], int], Jet], float]


def scalar_field_jet(metric: MetricField, f: ScalarInput, point: Sequence[float], order: int) -> Jet:
    """Jet of a scalar given as an expression on the metric's chart, a callable or a constant."""
    if isinstance(f, (int, float, complex)):
        return Jet.constant(f, metric.dim, order)
    if isinstance(f, Expr.__args__):
        return Evaluator(metric.chart, point, order, getattr(metric, "lets", {}))(f)
    return f(point, order)


def vector_field_jet(metric: MetricField, k, point: Sequence[float], order: int) -> Jet:
    """Jet of a vector field given by constant components or a callable."""
    if callable(k):
        return k(point, order)
    arr = np.asarray(k, dtype=complex)
    if arr.shape != (metric.dim,):
        raise LorentzError(f"vector needs {metric.dim} components")
    j = Jet.zeros((metric.dim,), metric.dim, order)
    j.coeffs[:, 0] = arr
    return j


# ---------------------------------------------------------------------------
# Metric fields
# ---------------------------------------------------------------------------


class ExpressionMetric:
    """Metric whose components are expressions on a chart."""

    def __init__(self, chart: ChartSpec, components: Sequence[Sequence[Expr]], lets: Mapping[str, Expr] | None = None):
        n = chart.dim
        if len(components) != n or any(len(r) != n for r in components):
            raise LorentzError(f"metric needs {n}x{n} components")
        self.chart = chart
        self.components = [list(r) for r in components]
        self.lets = dict(lets or {})

    @property
    def dim(self) -> int:
        return self.chart.dim

    def metric_at(self, point: Sequence[float], order: int) -> Jet:
        ev = Evaluator(self.chart, point, order, self.lets)
        n = self.dim
        g = Jet.zeros((n, n), n, order)
        for a in range(n):
            for b in range(a, n):
                v = ev(self.components[a][b]).coeffs
                g.coeffs[a, b] = v
                g.coeffs[b, a] = v
        return g


class RescaledMetric:
    """The metric ``Omega^2 g`` for a positive scalar ``Omega``."""

    def __init__(self, metric: MetricField, omega: ScalarInput):
        self.metric = metric
        self.omega = omega
        self.chart = metric.chart
        self.lets = getattr(metric, "lets", {})

    @property
    def dim(self) -> int:
        return self.metric.dim

    def omega_jet(self, point, order) -> Jet:
        return scalar_field_jet(self.metric, self.omega, point, order)

    def metric_at(self, point: Sequence[float], order: int) -> Jet:
        om = self.omega_jet(point, order)
        if complex(om.value).real <= 0:
            raise LorentzError("conformal factor must be positive")
        return self.metric.metric_at(point, order) * (om * om)


# ---------------------------------------------------------------------------
# Connection and curvature
# ---------------------------------------------------------------------------


@dataclass
class Christoffel:
    g: Jet
    ginv: Jet
    Gamma: Jet
    metricity: float

    @property
    def order(self) -> int:
        return self.Gamma.order


def _metric_jets(metric, point, order) -> Jet:
    return metric if isinstance(metric, Jet) else metric.metric_at(point, order)


def levi_civita(metric, point: Sequence[float] | None = None, order: int = 1) -> Christoffel:
    """Christoffel symbols from metric jets (``metric`` may be a field or a metric jet)."""
    g = _metric_jets(metric, point, order)
    if g.order < 1:
        raise OrderBudgetError("Christoffel symbols need metric jets of order >= 1")
    if abs(np.linalg.det(np.asarray(g.value))) < 1e-14:
        raise SingularMetricError("metric is singular at the point")
    try:
        ginv = jinv(g)
    except SingularInputError as exc:
        raise SingularMetricError(str(exc)) from exc
    dg = g.grad()  # [a, b, i] = d_i g_ab
    # low[d, b, c] = (d_b g_dc + d_c g_db - d_d g_bc) / 2
    low = (jeinsum("dcb->dbc", dg) + dg - jeinsum("bcd->dbc", dg)) * 0.5
    Gamma = jeinsum("ad,dbc->abc", ginv, low)
    res = covariant(g, Gamma, "dd")
    return Christoffel(g, ginv, Gamma, float(np.max(np.abs(res.value))))


def covariant(t: Jet, Gamma: Jet, kinds: str) -> Jet:
    """``nabla_e t`` with the derivative index appended last; ``kinds`` marks ``u``/``d`` per index."""
    order = min(t.order - 1, Gamma.order)
    if order < 0:
        raise OrderBudgetError("not enough jet order to differentiate")
    G = Gamma.truncate(order)
    tt = t.truncate(order)
    out = t.grad().truncate(order)
    src = _LETTERS[: t.ndim]
    for k, kind in enumerate(kinds):
        tgt = src[:k] + "Z" + src[k + 1 :]
        if kind == "u":
            out = out + jeinsum(f"{src[k]}YZ,{tgt}->{src}Y", G, tt)
        elif kind == "d":
            out = out - jeinsum(f"ZY{src[k]},{tgt}->{src}Y", G, tt)
        else:
            raise ValueError("kinds must contain only 'u' and 'd'")
    return out


@dataclass
class LorentzCurvature:
    n: int
    g: Jet
    ginv: Jet
    Gamma: Jet
    Riem: Jet  # R_{abcd}
    Ric: Jet
    Sc: Jet
    Rho: Jet  # Schouten tensor P_ab
    Rho_trace: Jet
    Weyl: Jet
    Cotton: Jet | None  # [c, a, b]

    def raise_first(self, t: Jet) -> Jet:
        gi = self.ginv.truncate(t.order)
        src = _LETTERS[: t.ndim]
        return jeinsum(f"Z{src[0]},{src}->Z{src[1:]}", gi, t)


def full_curvature(metric, point: Sequence[float] | None = None, order: int = 3) -> LorentzCurvature:
    """Riemann, Ricci, Schouten, Weyl and (with ``order >= 3``) Cotton."""
    g = _metric_jets(metric, point, order)
    if g.order < 2:
        raise OrderBudgetError("curvature needs metric jets of order >= 2")
    ch = levi_civita(g)
    G = ch.Gamma
    dG = G.grad()  # [a, b, c, e] = d_e Gamma^a_bc
    r = dG.order
    Gt = G.truncate(r)
    # R^a_{bcd} = d_c Gamma^a_db - d_d Gamma^a_cb + Gamma^a_ce Gamma^e_db - Gamma^a_de Gamma^e_cb
    Rup = jeinsum("adbc->abcd", dG) - jeinsum("acbd->abcd", dG)
    Rup = Rup + jeinsum("ace,edb->abcd", Gt, Gt) - jeinsum("ade,ecb->abcd", Gt, Gt)
    gt = g.truncate(r)
    Riem = jeinsum("ae,ebcd->abcd", gt, Rup)
    Ric = jeinsum("abad->bd", Rup)
    gi = ch.ginv.truncate(r)
    Sc = jeinsum("ab,ab->", gi, Ric)
    dim = g.shape[0]
    n = dim - 2
    P = (Ric - gt * Sc * (1.0 / (2 * (n + 1)))) * (1.0 / n)
    Ptr = Sc * (1.0 / (2 * (n + 1)))
    gP = (
        jeinsum("ac,bd->abcd", gt, P)
        - jeinsum("ad,bc->abcd", gt, P)
        - jeinsum("bc,ad->abcd", gt, P)
        + jeinsum("bd,ac->abcd", gt, P)
    )
    W = Riem - gP
    Cot = None
    if r >= 1:
        dP = covariant(P, G, "dd")  # [b, c, a] = nabla_a P_bc
        Cot = jeinsum("bca->cab", dP) - jeinsum("acb->cab", dP)
    return LorentzCurvature(n, g, ch.ginv, G, Riem, Ric, Sc, P, Ptr, W, Cot)


# ---------------------------------------------------------------------------
# Identities
# ---------------------------------------------------------------------------


def riemann_symmetry_residual(c: LorentzCurvature) -> float:
    R = np.asarray(c.Riem.value)
    anti1 = R + R.transpose(1, 0, 2, 3)
    anti2 = R + R.transpose(0, 1, 3, 2)
    pair = R - R.transpose(2, 3, 0, 1)
    bianchi = R + R.transpose(0, 2, 3, 1) + R.transpose(0, 3, 1, 2)
    return float(max(np.abs(x).max() for x in (anti1, anti2, pair, bianchi)))


def weyl_trace_residual(c: LorentzCurvature) -> float:
    W = np.asarray(c.Weyl.value)
    gi = np.asarray(c.ginv.value)
    return float(np.abs(np.einsum("ac,abcd->bd", gi, W)).max())


def bianchi_residual(c: LorentzCurvature) -> float:
    """Max of ``(n - 1) Cotton_cab - nabla^d Weyl_dcab``."""
    if c.Cotton is None:
        raise OrderBudgetError("contracted Bianchi check needs metric jets of order >= 3")
    dW = covariant(c.Weyl, c.Gamma, "dddd")  # [d, c, a, b, e]
    gi = np.asarray(c.ginv.value)
    div = np.einsum("de,dcabe->cab", gi, np.asarray(dW.value))
    return float(np.abs((c.n - 1) * np.asarray(c.Cotton.value) - div).max())


# ---------------------------------------------------------------------------
# Conformal rescaling
# ---------------------------------------------------------------------------


@dataclass
class ConformalPair:
    before: LorentzCurvature
    after: LorentzCurvature
    omega: float
    Rho_predicted: np.ndarray
    Rho_trace_predicted: complex
    Cotton_predicted: np.ndarray | None
    Weyl_predicted: np.ndarray

    def residuals(self) -> dict:
        out = {
            "schouten": float(np.abs(np.asarray(self.after.Rho.value) - self.Rho_predicted).max()),
            "schouten_trace": abs(complex(self.after.Rho_trace.value) - self.Rho_trace_predicted),
            "weyl": float(np.abs(np.asarray(self.after.Weyl.value) - self.Weyl_predicted).max()),
        }
        if self.Cotton_predicted is not None and self.after.Cotton is not None:
            out["cotton"] = float(np.abs(np.asarray(self.after.Cotton.value) - self.Cotton_predicted).max())
        return out


def conformal_rescale(metric: MetricField, omega: ScalarInput, point: Sequence[float], order: int = 3) -> ConformalPair:
    """Curvature of ``g`` and ``Omega^2 g`` plus the transformation-law predictions."""
    om = scalar_field_jet(metric, omega, point, order + 1)
    if complex(om.value).real <= 0:
        raise LorentzError("conformal factor must be positive")
    before = full_curvature(metric, point, order)
    after = full_curvature(RescaledMetric(metric, omega), point, order)
    ups = compose("log", om).grad()  # Upsilon_a
    dU = covariant(ups, before.Gamma, "d")  # [b, a] = nabla_a U_b
    U = np.asarray(ups.value)
    gi = np.asarray(before.ginv.value)
    g = np.asarray(before.g.value)
    U_up = gi @ U
    UU = U @ U_up
    nabla_U = np.asarray(dU.value).T  # [a, b]
    Rho_pred = np.asarray(before.Rho.value) - nabla_U + np.outer(U, U) - 0.5 * UU * g
    n = before.n
    trace_pred = complex(before.Rho_trace.value) - np.einsum("ab,ab->", gi, nabla_U) - 0.5 * n * UU
    # the Schouten trace is taken with the new metric
    trace_pred = trace_pred / complex(om.value) ** 2
    W = np.asarray(before.Weyl.value)
    Cot_pred = None
    if before.Cotton is not None:
        Cot_pred = np.asarray(before.Cotton.value) + np.einsum("d,dcab->cab", U_up, W)
    w2 = complex(om.value).real ** 2
    return ConformalPair(before, after, w2 ** 0.5, Rho_pred, trace_pred, Cot_pred, W * w2)


# ---------------------------------------------------------------------------
# Optical diagnostics
# ---------------------------------------------------------------------------


def null_partner(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    """A null vector ``l`` with ``g(k, l) = 1``."""
    gk = g @ k
    best = int(np.argmax(np.abs(gk)))
    v = np.zeros_like(k)
    v[best] = 1.0
    gkv = gk @ v
    if abs(gkv) < 1e-14:
        raise LorentzError("no vector pairs with k")
    return (v - 0.5 * (v @ g @ v) / gkv * k) / gkv


def screen_basis(g: np.ndarray, k: np.ndarray, order: Sequence[int] | None = None) -> np.ndarray:
    """Orthonormal basis (rows) of a complement to ``k, l`` inside ``k^perp``."""
    dim = g.shape[0]
    l = null_partner(g, k)
    gk, gl = g @ k, g @ l
    idx = list(order) if order is not None else list(range(dim))
    basis: list[np.ndarray] = []
    for i in idx:
        v = np.zeros(dim)
        v[i] = 1.0
        v = v - (gl @ v) * k - (gk @ v) * l
        for e in basis:
            v = v - (e @ g @ v) * e
        nv = v @ g @ v
        if nv > 1e-10:
            basis.append(v / np.sqrt(nv))
        if len(basis) == dim - 2:
            break
    if len(basis) != dim - 2:
        raise LorentzError("could not build a screen basis")
    return np.array(basis)


def orthonormal_frame(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Rows: timelike, spacelike along ``k``, then the screen."""
    l = null_partner(g, k)
    scr = screen_basis(g, k)
    return np.vstack([(k - l) / np.sqrt(2), (k + l) / np.sqrt(2), scr])


def eigen_frame(g: np.ndarray) -> np.ndarray:
    """Rows: an orthonormal basis from the eigenvectors of the metric components."""
    w, V = np.linalg.eigh(0.5 * (g + g.T))
    return (V / np.sqrt(np.abs(w))).T


def norm_frame(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    """The frame adapted to ``k`` when ``k`` is null, otherwise :func:`eigen_frame`."""
    k = np.asarray(k, dtype=float)
    if abs(k @ g @ k) <= 1e-10 * max(1.0, float(np.abs(g).max())) * float(k @ k):
        try:
            return orthonormal_frame(g, k)
        except LorentzError:
            pass
    return eigen_frame(g)


def frame_norm(t: np.ndarray, frame: np.ndarray) -> float:
    """Frobenius norm of frame components of a covariant tensor."""
    out = np.asarray(t)
    for _ in range(out.ndim):
        out = np.tensordot(out, frame, axes=([0], [1]))
    return float(np.sqrt(np.sum(np.abs(out) ** 2)))


@dataclass
class OpticalDiagnostics:
    kappa: np.ndarray
    tau: np.ndarray
    epsilon: float  # (1/(n+2)) div k
    geodesic_residual: float
    shear: float
    twist: float
    expansion: float  # trace part of the screen projection of sym(nabla kappa)
    epsilon_fit: float  # best-fit factor in L_k g = eps g on the screen
    nonshear_residual: float

    def geodesic(self, tol: float = 1e-8) -> bool:
        return self.geodesic_residual < tol

    def non_shearing(self, tol: float = 1e-8) -> bool:
        return self.shear < tol

    def twisting(self, tol: float = 1e-8) -> bool:
        return self.twist > tol

    def non_expanding(self, tol: float = 1e-8) -> bool:
        return abs(self.expansion) < tol


def kappa_derivatives(metric, k, point, order: int = 2):
    """``(g, Gamma, k jet, kappa jet, nabla kappa [b, a])`` at a point."""
    g = _metric_jets(metric, point, order)
    ch = levi_civita(g)
    kj = vector_field_jet(metric, k, point, g.order)
    kap = jeinsum("ab,b->a", g, kj)
    dk = covariant(kap, ch.Gamma, "d")
    return g, ch, kj, kap, dk


def optical_diagnostics(metric, k, point: Sequence[float], order: int = 1, screen_order=None) -> OpticalDiagnostics:
    g, ch, kj, kap, dk = kappa_derivatives(metric, k, point, order)
    gv = np.asarray(g.value).real
    kv = np.asarray(kj.value).real
    if np.abs(kv).max() == 0:
        raise LorentzError("k vanishes at the point")
    nab = np.asarray(dk.value).T  # [a, b] = nabla_a kappa_b
    tau = 0.5 * (nab - nab.T)
    dkup = covariant(kj, ch.Gamma, "u")  # [a, b] = nabla_b k^a
    div = float(np.trace(np.asarray(dkup.value)).real)
    dim = gv.shape[0]
    acc = np.asarray(dkup.value) @ kv  # k^b nabla_b k^a
    wedge = np.outer(acc, kv) - np.outer(kv, acc)
    geo = float(np.abs(wedge).max() / max(np.abs(kv).max() ** 2, 1e-300))
    scr = screen_basis(gv, kv, screen_order)
    S = scr @ (0.5 * (nab + nab.T)).real @ scr.T
    A = scr @ tau.real @ scr.T
    n = dim - 2
    trS = np.trace(S) / n
    shear = float(np.linalg.norm(S - trS * np.eye(n)))
    return OpticalDiagnostics(
        np.asarray(kap.value).real,
        tau.real,
        div / dim,
        geo,
        shear,
        float(np.linalg.norm(A)),
        float(trS),
        float(2 * trS),
        float(2 * shear),
    )


__all__ = [
    "Christoffel",
    "ConformalPair",
    "ExpressionMetric",
    "LorentzCurvature",
    "LorentzError",
    "MetricField",
    "OpticalDiagnostics",
    "OrderBudgetError",
    "RescaledMetric",
    "SingularMetricError",
    "bianchi_residual",
    "conformal_rescale",
    "covariant",
    "eigen_frame",
    "frame_norm",
    "norm_frame",
    "full_curvature",
    "kappa_derivatives",
    "levi_civita",
    "null_partner",
    "optical_diagnostics",
    "orthonormal_frame",
    "riemann_symmetry_residual",
    "scalar_field_jet",
    "screen_basis",
    "vector_field_jet",
    "weyl_trace_residual",
]
