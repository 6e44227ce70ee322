"""
Geometry description files.

A geometry file is INI text read with :mod:`configparser`::

    [chart]
    coordinates = u, x1, y1, x2, y2
    domain = f
    box.u = -1, 1

    [complex]
    z1 = x1, y1

    [let]
    f = 4*(z1 + conj(z1) - 2*z2*conj(z2))

    [contact_form]
    du = 1
    dz2 = i*z1

    [coframe.1]
    dz1 = f^(-1/4)
    conj(dz2) = f^(1/4)

    [scales.sigma_hat]
    kind = density
    weight = 1, 0
    value = f^(1/8)

    [perturbation]
    alpha = 1
    density = sigma
    xi_alpha[0] = -i/4*f^(-3/4), i/4*f^(-3/4)
    xi_0[0] = f^(-3/2)/2

Keys of the one-form sections are differentials: ``d<x>`` for a real
coordinate, ``d<z>`` and ``conj(d<z>)`` for a complex one (``dz = dx + i dy``).
``[coframe.k]`` sections are numbered from 1.  ``[let]`` bindings may refer to
each other (no cycles) and to coordinates.

Densities of weight ``(w, w')`` are given by their ratio to the
volume-normalized density of the contact form; CR scales (weight ``(1, 1)``)
by their ratio to the scale of the contact form.  Perturbation coefficients
are trivialized the same way; ``density`` names the declared weight-(1, 0)
scale that fixes the fibre coordinate of the Fefferman bundle.
"""

from __future__ import annotations

import configparser
import io
import os
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .exprdsl import (
    ChartSpec,
    Evaluator,
    Expr,
    ExprError,
    names_in,
    parse_expr,
    to_text,
)
from .exterior import CoframeValue
from .jets import Jet, stack


class GeometryFileError(ValueError):
    """Malformed geometry file."""


_DIFF = re.compile(r"^(?:d([A-Za-z_][A-Za-z_0-9]*)|conj\(\s*d([A-Za-z_][A-Za-z_0-9]*)\s*\))$")


@dataclass(frozen=True)
class OneFormSpec:
    """One-form written as ``sum coefficient * differential``."""

    terms: tuple[tuple[str, Expr], ...]

    def check(self, chart: ChartSpec) -> None:
        for key, _ in self.terms:
            _differential_target(key, chart)

    def jets(self, ev: Evaluator) -> Jet:
        """Coordinate components at the evaluator's point and order."""
        chart = ev.chart
        comps: list = [0.0] * chart.dim
        for key, expr in self.terms:
            value = ev(expr)
            for idx, factor in _differential_target(key, chart):
                comps[idx] = comps[idx] + factor * value
        if not any(isinstance(c, Jet) for c in comps):
            return Jet.constant([complex(c) for c in comps], chart.dim, ev.order)
        comps = [c if isinstance(c, Jet) else Jet.constant(c, chart.dim, ev.order) for c in comps]
        return stack(comps)

    def to_lines(self) -> list[tuple[str, str]]:
        return [(k, to_text(e)) for k, e in self.terms]


def _differential_target(key: str, chart: ChartSpec) -> list[tuple[int, complex]]:
    m = _DIFF.match(key.strip())
    if not m:
        raise GeometryFileError(f"not a differential: {key!r}")
    name, conj_name = m.group(1), m.group(2)
    if name is not None:
        if name in chart.coordinates:
            return [(chart.index(name), 1.0)]
        if name in chart.complex_pairs:
            a, b = chart.pair_indices(name)
            return [(a, 1.0), (b, 1j)]
        raise GeometryFileError(f"unknown coordinate in differential {key!r}")
    if conj_name in chart.complex_pairs:
        a, b = chart.pair_indices(conj_name)
        return [(a, 1.0), (b, -1j)]
    raise GeometryFileError(f"conj() differential needs a complex coordinate: {key!r}")


@dataclass(frozen=True)
class ScaleSpec:
    """A declared density (weight ``(w, w')``) or CR scale, trivialized."""

    name: str
    kind: str
    weight: tuple[float, float]
    value: Expr


@dataclass(frozen=True)
class PerturbationSpec:
    """Fourier coefficients of a perturbation one-form plus the parameter alpha."""

    alpha: float = 1.0
    xi_alpha: Mapping[int, tuple[Expr, ...]] = field(default_factory=dict)
    xi_0: Mapping[int, Expr] = field(default_factory=dict)
    density: str | None = None  # declared weight-(1,0) scale fixing the fibre coordinate


@dataclass(frozen=True)
class GeometrySpec:
    """Almost CR geometry given by a contact form and admissible coframe."""

    name: str
    chart: ChartSpec
    lets: Mapping[str, Expr]
    contact_form: OneFormSpec
    coframe: tuple[OneFormSpec, ...]
    scales: Mapping[str, ScaleSpec] = field(default_factory=dict)
    perturbation: PerturbationSpec | None = None

    @property
    def m(self) -> int:
        return len(self.coframe)

    @property
    def dim(self) -> int:
        return self.chart.dim

    def evaluator(self, point: Sequence[float], order: int) -> Evaluator:
        return Evaluator(self.chart, point, order, self.lets)

    def coframe_at(self, point: Sequence[float], order: int) -> CoframeValue:
        ev = self.evaluator(point, order)
        theta = self.contact_form.jets(ev)
        rows = stack([cf.jets(ev) for cf in self.coframe])
        return CoframeValue(theta, rows)

    def scalar_jet(self, expr: Expr, point: Sequence[float], order: int) -> Jet:
        return self.evaluator(point, order)(expr)

    def with_alpha(self, alpha: float) -> "GeometrySpec":
        pert = self.perturbation or PerturbationSpec()
        return GeometrySpec(
            self.name,
            self.chart,
            self.lets,
            self.contact_form,
            self.coframe,
            self.scales,
            PerturbationSpec(alpha, pert.xi_alpha, pert.xi_0, pert.density),
        )


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse(text: str, where: str) -> Expr:
    try:
        return parse_expr(text)
    except ExprError as exc:
        raise GeometryFileError(f"{where}: {exc}") from exc


def load_geometry(text: str, name: str = "geometry") -> GeometrySpec:
    """Parse geometry file text."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise GeometryFileError(str(exc)) from exc
    if "chart" not in cp:
        raise GeometryFileError("missing [chart] section")
    chart_sec = cp["chart"]
    coords = tuple(_split_list(chart_sec.get("coordinates", "")))
    if not coords:
        raise GeometryFileError("[chart] needs coordinates")
    pairs = {}
    if "complex" in cp:
        for z, val in cp["complex"].items():
            parts = _split_list(val)
            if len(parts) != 2:
                raise GeometryFileError(f"complex coordinate {z!r} needs two real coordinates")
            pairs[z] = (parts[0], parts[1])
    box = {}
    for key, val in chart_sec.items():
        if key.startswith("box."):
            lo, hi = (float(v) for v in _split_list(val))
            box[key[4:]] = (lo, hi)
    domain = _parse(chart_sec["domain"], "[chart] domain") if "domain" in chart_sec else None
    try:
        chart = ChartSpec(coords, pairs, domain, box)
    except ExprError as exc:
        raise GeometryFileError(str(exc)) from exc
    name = chart_sec.get("name", name)

    lets = {}
    if "let" in cp:
        for k, v in cp["let"].items():
            lets[k] = _parse(v, f"[let] {k}")
    _check_lets(lets, chart)

    if "contact_form" not in cp:
        raise GeometryFileError("missing [contact_form] section")
    contact = _one_form(cp["contact_form"], chart, "[contact_form]")
    coframe = []
    k = 1
    while f"coframe.{k}" in cp:
        coframe.append(_one_form(cp[f"coframe.{k}"], chart, f"[coframe.{k}]"))
        k += 1
    if not coframe:
        raise GeometryFileError("missing [coframe.1] section")
    if chart.dim != 2 * len(coframe) + 1:
        raise GeometryFileError(
            f"{len(coframe)} coframe forms need a {2 * len(coframe) + 1}-dimensional chart"
        )

    scales = {}
    for sec in cp.sections():
        if sec.startswith("scales."):
            sname = sec[len("scales.") :]
            s = cp[sec]
            kind = s.get("kind", "density")
            if kind not in ("density", "cr_scale"):
                raise GeometryFileError(f"[{sec}] kind must be density or cr_scale")
            default_w = "1, 0" if kind == "density" else "1, 1"
            w = tuple(float(x) for x in _split_list(s.get("weight", default_w)))
            if len(w) != 2:
                raise GeometryFileError(f"[{sec}] weight needs two numbers")
            if "value" not in s:
                raise GeometryFileError(f"[{sec}] needs a value")
            scales[sname] = ScaleSpec(sname, kind, w, _parse(s["value"], f"[{sec}] value"))

    pert = None
    if "perturbation" in cp:
        pert = _perturbation(cp["perturbation"], len(coframe))
        if pert.density is not None and pert.density not in scales:
            raise GeometryFileError(f"[perturbation] density {pert.density!r} is not a declared scale")
    return GeometrySpec(name, chart, lets, contact, tuple(coframe), scales, pert)


def _check_lets(lets: Mapping[str, Expr], chart: ChartSpec) -> None:
    known = set(chart.coordinates) | set(chart.complex_pairs)
    for k in lets:
        if k in known:
            raise GeometryFileError(f"[let] name {k!r} shadows a coordinate")
    state: dict[str, int] = {}

    def visit(n: str) -> None:
        if state.get(n) == 1:
            raise GeometryFileError(f"cyclic [let] binding involving {n!r}")
        if state.get(n) == 2:
            return
        state[n] = 1
        for dep in names_in(lets[n]):
            if dep in lets:
                visit(dep)
        state[n] = 2

    for k in lets:
        visit(k)


def _one_form(section, chart: ChartSpec, where: str) -> OneFormSpec:
    terms = tuple((k.strip(), _parse(v, f"{where} {k}")) for k, v in section.items())
    spec = OneFormSpec(terms)
    spec.check(chart)
    return spec


_FOURIER_KEY = re.compile(r"^(xi_alpha|xi_0)\[\s*(-?\d+)\s*\]$")


def _perturbation(sec, m: int) -> PerturbationSpec:
    alpha = float(sec.get("alpha", "1"))
    density = sec.get("density")
    xa: dict[int, tuple[Expr, ...]] = {}
    x0: dict[int, Expr] = {}
    for key, val in sec.items():
        if key in ("alpha", "density"):
            continue
        mt = _FOURIER_KEY.match(key.strip())
        if not mt:
            raise GeometryFileError(f"[perturbation] unknown key {key!r}")
        kind, k = mt.group(1), int(mt.group(2))
        if kind == "xi_alpha":
            parts = _split_list(val)
            if len(parts) != m:
                raise GeometryFileError(f"[perturbation] {key} needs {m} comma-separated entries")
            xa[k] = tuple(_parse(p, f"[perturbation] {key}") for p in parts)
        else:
            x0[k] = _parse(val, f"[perturbation] {key}")
    return PerturbationSpec(alpha, xa, x0, density.strip() if density else None)


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def dump_geometry(geom: GeometrySpec) -> str:
    """Render a geometry as file text that :func:`load_geometry` reads back."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    chart = geom.chart
    cp["chart"] = {"name": geom.name, "coordinates": ", ".join(chart.coordinates)}
    if chart.domain is not None:
        cp["chart"]["domain"] = to_text(chart.domain)
    for c, (lo, hi) in chart.box.items():
        cp["chart"][f"box.{c}"] = f"{lo!r}, {hi!r}"
    if chart.complex_pairs:
        cp["complex"] = {z: f"{a}, {b}" for z, (a, b) in chart.complex_pairs.items()}
    if geom.lets:
        cp["let"] = {k: to_text(v) for k, v in geom.lets.items()}
    cp["contact_form"] = dict(geom.contact_form.to_lines())
    for k, cf in enumerate(geom.coframe, start=1):
        cp[f"coframe.{k}"] = dict(cf.to_lines())
    for sname, s in geom.scales.items():
        cp[f"scales.{sname}"] = {
            "kind": s.kind,
            "weight": f"{s.weight[0]!r}, {s.weight[1]!r}",
            "value": to_text(s.value),
        }
    if geom.perturbation is not None:
        p = geom.perturbation
        sec = {"alpha": repr(float(p.alpha))}
        if p.density is not None:
            sec["density"] = p.density
        for k, exprs in sorted(p.xi_alpha.items()):
            sec[f"xi_alpha[{k}]"] = ", ".join(to_text(e) for e in exprs)
        for k, e in sorted(p.xi_0.items()):
            sec[f"xi_0[{k}]"] = to_text(e)
        cp["perturbation"] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def read_geometry_file(path) -> GeometrySpec:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return load_geometry(text, name=os.path.splitext(os.path.basename(str(path)))[0])


__all__ = [
    "GeometryFileError",
    "GeometrySpec",
    "OneFormSpec",
    "PerturbationSpec",
    "ScaleSpec",
    "dump_geometry",
    "load_geometry",
    "read_geometry_file",
]
