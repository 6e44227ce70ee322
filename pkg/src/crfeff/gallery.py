"""Built-in geometries with closed-form oracle values.

Each entry carries a geometry (and for the Einstein entry a Fefferman
spec) together with sparse oracle tables.  An oracle table maps an index
tuple to an expression in the chart coordinates and lets; components not
listed are zero.  :func:`oracle_residuals` compares the tables against
the engine at a point.

Frame index conventions follow :mod:`crfeff.webster`: full indices are
``(ell, e_1..e_m, conj e_1..conj e_m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cache
from importlib import resources
from typing import Callable, Mapping, Sequence

import numpy as np

from .exprdsl import Evaluator, Expr, parse_expr
from .fefferman import PerturbedFeffermanSpec, spec_from_geometry
from .geomfile import GeometrySpec, PerturbationSpec, dump_geometry, load_geometry
from .lorentz import RescaledMetric, full_curvature
from .webster import covariant_derivative_N, density_derivative, reeb_gauge, solve_webster, webster_curvature


class GalleryError(KeyError):
    pass


OracleTable = Mapping[tuple[int, ...], Expr]


@dataclass(frozen=True)
class GalleryEntry:
    """A named geometry with oracle tables and a sampling box."""

    name: str
    geometry: GeometrySpec
    oracles: Mapping[str, OracleTable]
    spec: PerturbedFeffermanSpec | None = None
    fibre_range: tuple[float, float] | None = None
    notes: Mapping[str, str] = field(default_factory=dict)

    @property
    def chart(self):
        return self.spec.chart if self.spec is not None else self.geometry.chart

    @property
    def box(self) -> dict[str, tuple[float, float]]:
        box = dict(self.chart.box)
        if self.spec is not None and self.fibre_range is not None:
            box[self.spec.coordinates[-1]] = self.fibre_range
        return box

    @property
    def lets(self):
        return self.geometry.lets

    def evaluator(self, point: Sequence[float], order: int = 0) -> Evaluator:
        return Evaluator(self.chart, point, order, self.lets)

    def oracle_values(self, point: Sequence[float], shapes: Mapping[str, tuple[int, ...]]) -> dict[str, np.ndarray]:
        ev = self.evaluator(point, 0)
        out = {}
        for key, table in self.oracles.items():
            arr = np.zeros(shapes[key], dtype=complex)
            for idx, expr in table.items():
                arr[idx] = complex(ev(expr).value)
            out[key] = arr
        return out


def _table(entries: Mapping[tuple[int, ...], str]) -> dict[tuple[int, ...], Expr]:
    return {idx: parse_expr(text) for idx, text in entries.items()}


def _geometry_text(name: str) -> str:
    return resources.files("crfeff").joinpath("geometries", f"{name}.ini").read_text(encoding="utf-8")


def _shipped(name: str) -> GeometrySpec:
    return load_geometry(_geometry_text(name), name=name)


# ---------------------------------------------------------------------------
# Entries
# ---------------------------------------------------------------------------


def _np_oracles() -> dict[str, dict]:
    # Frame slots: 0 = ell, 1, 2 = e_1, e_2, 3, 4 = conj e_1, conj e_2.
    half = "f^(-3/4)/2"
    quarter = "f^(-3/4)/4"
    gamma = {}
    for a in (0, 1):
        gamma.update({(a, a, 1): half, (a, a, 2): f"-{half}", (a, a, 3): f"-{half}", (a, a, 4): half})
    riem = {}
    for d in (0, 1):
        riem.update({(0, 0, d, d): "f^(-3/2)", (1, 1, d, d): "f^(-3/2)"})
        riem.update({(0, 1, d, d): "-f^(-3/2)", (1, 0, d, d): "-f^(-3/2)"})
    return {
        "gamma": _table(gamma),
        "A": {},
        "N": _table({(0, 1, 0): "-f^(-3/4)", (0, 1, 1): "-f^(-3/4)", (1, 0, 0): "f^(-3/4)", (1, 0, 1): "f^(-3/4)"}),
        "N_dbar": {},
        "N_div": {},
        "Riem": _table(riem),
        "Ric": _table({(0, 0): "2*f^(-3/2)", (1, 1): "2*f^(-3/2)"}),
        "Sc": _table({(): "4*f^(-3/2)"}),
        "N_sq": _table({(): "4*f^(-3/2)"}),
        "Lambda": {},
        "xi": _table({(1,): f"-i*{quarter}", (2,): f"i*{quarter}", (3,): f"i*{quarter}", (4,): f"-i*{quarter}"}),
        "dlog_sigma": _table({(1,): quarter, (2,): f"-{quarter}", (3,): f"-{quarter}", (4,): quarter}),
        "dlog_sigma_hat": _table({(1,): half, (2,): f"-{half}"}),
        "s": _table({(): "f^(-1/4)*f^(1/8)*conj(f^(1/8))"}),
    }


@cache
def nurowski_przanowski() -> GalleryEntry:
    """The strictly almost CR five-manifold with CR-Einstein structure and ``Lambda = 0``."""
    return GalleryEntry("nurowski-przanowski", _shipped("nurowski-przanowski"), _np_oracles())


@cache
def heisenberg(m: int) -> GalleryEntry:
    """Flat Heisenberg model of CR dimension ``m`` (1 or 2); all curvature oracles vanish."""
    if m not in (1, 2):
        raise GalleryError(f"heisenberg model shipped for m = 1, 2 only, got {m!r}")
    keys = ["gamma", "A", "N", "N_dbar", "N_div", "Riem", "Ric", "Sc", "N_sq", "Lambda", "xi", "dlog_sigma"]
    if m == 2:
        keys.append("chern_moser")
    name = f"heisenberg-m{m}"
    return GalleryEntry(name, _shipped(name), {k: {} for k in keys})


# Perturbation data giving a Ricci-flat metric in the conformal class over
# the strictly almost CR entry: only the k = 0 Fourier modes survive.
_NP_EINSTEIN_DATA = PerturbationSpec(
    alpha=1.0,
    xi_alpha={0: (parse_expr("-i/4*f^(-3/4)"), parse_expr("i/4*f^(-3/4)"))},
    xi_0={0: parse_expr("f^(-3/2)/2")},
    density="sigma",
)

EINSTEIN_FIBRE_RANGE = (-1.2, 1.2)


@cache
def np_einstein_fefferman() -> GalleryEntry:
    """Perturbed Fefferman space whose ``sec(phi)^2`` rescaling is Ricci flat."""
    base = _shipped("nurowski-przanowski")
    geom = GeometrySpec(
        "np-einstein-fefferman",
        base.chart,
        base.lets,
        base.contact_form,
        base.coframe,
        base.scales,
        _NP_EINSTEIN_DATA,
    )
    spec = spec_from_geometry(geom)
    return GalleryEntry(
        "np-einstein-fefferman",
        geom,
        {"einstein_ricci": {}, "Lambda": {}},
        spec=spec,
        fibre_range=EINSTEIN_FIBRE_RANGE,
    )


_ENTRIES: dict[str, Callable[[], GalleryEntry]] = {
    "nurowski-przanowski": nurowski_przanowski,
    "heisenberg-m1": lambda: heisenberg(1),
    "heisenberg-m2": lambda: heisenberg(2),
    "np-einstein-fefferman": np_einstein_fefferman,
}


def names() -> list[str]:
    return list(_ENTRIES)


def get_entry(name: str) -> GalleryEntry:
    try:
        return _ENTRIES[name]()
    except KeyError:
        raise GalleryError(f"unknown gallery entry {name!r}; known: {', '.join(_ENTRIES)}") from None


def export_spec(name: str) -> str:
    """Geometry file text for a gallery entry (re-parses to the same geometry)."""
    return dump_geometry(get_entry(name).geometry)


# ---------------------------------------------------------------------------
# Engine comparison
# ---------------------------------------------------------------------------


def einstein_metric(entry: GalleryEntry) -> RescaledMetric:
    """``sec(phi)^2`` times the entry's Fefferman metric."""
    if entry.spec is None:
        raise GalleryError(f"{entry.name} has no Fefferman spec")
    phi = entry.spec.coordinates[-1]
    return RescaledMetric(entry.spec, parse_expr(f"1/cos({phi})"))


def engine_values(entry: GalleryEntry, point: Sequence[float], order: int = 3) -> dict[str, np.ndarray]:
    """Engine values for every oracle key of ``entry`` at ``point``."""
    keys = set(entry.oracles)
    out: dict[str, np.ndarray] = {}
    if entry.spec is not None:
        if "einstein_ricci" in keys:
            out["einstein_ricci"] = np.asarray(full_curvature(einstein_metric(entry), point, 2).Ric.value)
        base_point, _ = entry.spec.split(point)
        if "Lambda" in keys:
            cv = webster_curvature(entry.geometry, base_point, max(order, 3))
            out["Lambda"] = np.asarray((cv.Sc.value - cv.N_sq.value) / entry.geometry.m)
        return out

    geom = entry.geometry
    wd = solve_webster(geom, point, max(order, 3))
    cv = webster_curvature(wd)
    simple = {
        "gamma": lambda: wd.gamma.value,
        "A": lambda: wd.A_low.value,
        "N": lambda: wd.N_low.value,
        "Riem": lambda: cv.Riem.value,
        "Ric": lambda: cv.Ric.value,
        "Sc": lambda: cv.Sc.value,
        "N_sq": lambda: cv.N_sq.value,
        "Lambda": lambda: (cv.Sc.value - cv.N_sq.value) / wd.m,
        "chern_moser": lambda: cv.chern_moser.value,
        "xi": lambda: reeb_gauge(wd).value,
    }
    for key in keys & simple.keys():
        out[key] = np.asarray(simple[key]())
    if keys & {"N_dbar", "N_div"}:
        nd = covariant_derivative_N(wd)
        out["N_dbar"] = np.asarray(nd.dbar_N.value)
        out["N_div"] = np.asarray(nd.div_N.value)
    for key in keys:
        if key.startswith("dlog_"):
            scale = geom.scales[key[len("dlog_"):]]
            F = geom.scalar_jet(scale.value, point, wd.order + 1)
            out[key] = np.asarray(density_derivative(wd, F, scale.weight).value / F.value)
    if "s" in keys:
        out["s"] = np.asarray(geom.scalar_jet(geom.scales["s"].value, point, 0).value)
    return out


def oracle_residuals(entry: GalleryEntry, point: Sequence[float], order: int = 3) -> dict[str, tuple[float, float]]:
    """Per key ``(absolute, relative)`` max-norm deviation of engine from oracle."""
    engine = engine_values(entry, point, order)
    oracle = entry.oracle_values(point, {k: v.shape for k, v in engine.items()})
    out = {}
    for key in sorted(engine):
        diff = float(np.max(np.abs(engine[key] - oracle[key]), initial=0.0))
        scale = float(np.max(np.abs(oracle[key]), initial=0.0))
        out[key] = (diff, diff / scale if scale > 0 else diff)
    return out


def base_point(entry: GalleryEntry) -> tuple[float, ...]:
    """Center of the entry's sampling box."""
    return tuple(0.5 * (lo + hi) for lo, hi in entry.box.values())


__all__ = [
    "EINSTEIN_FIBRE_RANGE",
    "GalleryEntry",
    "GalleryError",
    "base_point",
    "einstein_metric",
    "engine_values",
    "export_spec",
    "get_entry",
    "heisenberg",
    "names",
    "np_einstein_fefferman",
    "nurowski_przanowski",
    "oracle_residuals",
]
