"""Command-line verification runner.

Usage::

    crfeff --gallery nurowski-przanowski --suite cr-einstein --points 100
    crfeff --spec my.ini --suite all --format jsonl --tol.fefferman=1e-5
    crfeff --export heisenberg-m1

Structured output (``--format jsonl``) is one JSON object per line with
sorted keys: a ``meta`` record, one ``entry`` record per condition and a
closing ``verdict`` record.  ``CRFEFF_WORKERS`` sets the worker count.

Exit codes: 0 pass, 1 fail, 2 input error, 3 numeric error, 4 no sample
point found inside the domain.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from . import __version__
from .characterize import (
    ZeroSetError,
    conformal_killing_residual,
    fibre_field,
    integrability_report,
    petrov_conditions,
    scale_residuals,
)
from .creinstein import CREinsteinError, cr_einstein_tensor_residuals, cr_scale_residuals, density_residuals
from .exprdsl import ExprError, SingularPointError, in_domain
from .fefferman import FeffermanError, PerturbedFeffermanSpec, RealityError, spec_from_geometry
from .gallery import EINSTEIN_FIBRE_RANGE, GalleryError, engine_values, get_entry, export_spec
from .geomfile import GeometryFileError, GeometrySpec, read_geometry_file
from .jets import JetError
from .lorentz import (
    LorentzError,
    bianchi_residual,
    full_curvature,
    riemann_symmetry_residual,
    weyl_trace_residual,
)
from .webster import WebsterError, solve_webster, structure_residual, webster_curvature

SUITES = ("webster", "cr-einstein", "fefferman", "characterize", "scales")

DEFAULT_TOLERANCES = {
    "webster": 1e-8,
    "cr-einstein": 1e-7,
    "fefferman": 1e-6,
    "characterize": 1e-5,
    "scales": 1e-6,
}

# Oracle keys that sit one differentiation layer above the Webster connection.
CURVATURE_KEYS = {"Riem", "Ric", "Sc", "N_sq", "Lambda", "chern_moser", "N_dbar", "N_div"}

RHO_SC_BOUND = -0.1
WORKERS_ENV = "CRFEFF_WORKERS"

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC, EXIT_DOMAIN = 0, 1, 2, 3, 4


class InputError(ValueError):
    pass


class DomainEmptyError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Config and report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    spec: str | None = None
    gallery: str | None = None
    suite: str = "all"
    points: int = 20
    seed: int = 0
    order: int | None = None
    tolerances: dict = field(default_factory=dict)
    format: str = "human"

    def __post_init__(self):
        if (self.spec is None) == (self.gallery is None):
            raise InputError("give exactly one of --spec and --gallery")
        if self.suite != "all" and self.suite not in SUITES:
            raise InputError(f"unknown suite {self.suite!r}")
        if self.points < 1:
            raise InputError("point count must be at least 1")
        if self.order is not None and self.order < 3:
            raise InputError("jet order must be at least 3")
        for name, tol in self.tolerances.items():
            if name not in SUITES:
                raise InputError(f"tolerance override for unknown suite {name!r}")
            if not tol > 0:
                raise InputError(f"tolerance for {name} must be positive")
        if self.format not in ("human", "jsonl"):
            raise InputError(f"unknown format {self.format!r}")

    @property
    def suites(self) -> tuple[str, ...]:
        return SUITES if self.suite == "all" else (self.suite,)

    def tolerance(self, suite: str) -> float:
        return float(self.tolerances.get(suite, DEFAULT_TOLERANCES[suite]))


@dataclass
class ReportEntry:
    """Aggregated condition over all sample points.

    ``kind`` is ``residual`` (pass iff ``value <= tolerance``), ``bound``
    (pass iff ``value < tolerance``, value being the maximum over points) or
    ``info`` (always passes; ``value`` is the maximum, ``spread`` the range).
    """

    suite: str
    condition: str
    kind: str
    value: float
    tolerance: float | None
    passed: bool
    worst_point: list[float]
    spread: float = 0.0


@dataclass
class VerificationReport:
    entries: list[ReportEntry]
    metadata: dict

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def records(self) -> list[dict]:
        out = [{"record": "meta", **self.metadata}]
        out += [{"record": "entry", **asdict(e)} for e in self.entries]
        out.append({"record": "verdict", "passed": self.passed})
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    @classmethod
    def from_jsonl(cls, text: str) -> "VerificationReport":
        meta: dict = {}
        entries = []
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("record")
            if kind == "meta":
                meta = rec
            elif kind == "entry":
                entries.append(ReportEntry(**rec))
        return cls(entries, meta)

    def to_table(self) -> str:
        rows = [("suite", "condition", "value", "tolerance", "result")]
        for e in self.entries:
            tol = "-" if e.tolerance is None else f"{e.tolerance:.1e}"
            res = "info" if e.kind == "info" else ("pass" if e.passed else "FAIL")
            rows.append((e.suite, e.condition, f"{e.value:.3e}", tol, res))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        md = self.metadata
        head = (
            f"{md['source']}: {md['points']} points, seed {md['seed']}, order {md['order']}, "
            f"{md['rejected']} rejected"
        )
        verdict = "PASS" if self.passed else "FAIL"
        return "\n".join([head, *lines, f"overall: {verdict}"]) + "\n"


# ---------------------------------------------------------------------------
# Problem setup
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    source: str
    geometry: GeometrySpec
    spec: PerturbedFeffermanSpec
    fibre_range: tuple[float, float]
    gallery_entry: str | None = None

    @property
    def base_dim(self) -> int:
        return self.geometry.dim


def load_problem(config: RunConfig) -> Problem:
    if config.gallery is not None:
        entry = get_entry(config.gallery)
        spec = entry.spec if entry.spec is not None else spec_from_geometry(entry.geometry)
        fibre = entry.fibre_range or EINSTEIN_FIBRE_RANGE
        return Problem(f"gallery:{entry.name}", entry.geometry, spec, fibre, entry.name)
    try:
        geom = read_geometry_file(config.spec)
    except OSError as exc:
        raise InputError(f"cannot read {config.spec}: {exc.strerror}") from exc
    return Problem(f"spec:{os.path.basename(config.spec)}", geom, spec_from_geometry(geom), EINSTEIN_FIBRE_RANGE)


def sample_points(problem: Problem, count: int, seed: int, max_draws: int | None = None) -> tuple[np.ndarray, int]:
    """Scrambled Sobol points in the box (base coordinates plus fibre), domain-filtered."""
    chart = problem.geometry.chart
    missing = [c for c in chart.coordinates if c not in chart.box]
    if missing:
        raise InputError(f"no sampling box for {', '.join(missing)}")
    lo = np.array([chart.box[c][0] for c in chart.coordinates] + [problem.fibre_range[0]], dtype=float)
    hi = np.array([chart.box[c][1] for c in chart.coordinates] + [problem.fibre_range[1]], dtype=float)
    sob = qmc.Sobol(len(lo), scramble=True, seed=seed)
    max_draws = max_draws or 64 * count + 256
    kept: list[np.ndarray] = []
    rejected = drawn = 0
    while len(kept) < count and drawn < max_draws:
        batch = 1 << max(4, math.ceil(math.log2(count - len(kept))))
        for p in qmc.scale(sob.random(batch), lo, hi):
            drawn += 1
            if in_domain(chart, p[:-1], problem.geometry.lets):
                kept.append(p)
                if len(kept) == count:
                    break
            else:
                rejected += 1
    if len(kept) < count:
        raise DomainEmptyError(f"only {len(kept)} of {count} points found inside the domain after {drawn} draws")
    return np.array(kept), rejected


# ---------------------------------------------------------------------------
# Per-point suites
# ---------------------------------------------------------------------------

# A suite evaluates to {condition: (kind, value)} at a single bundle point.
SuiteFn = Callable[[Problem, np.ndarray, int], dict]


def _webster_suite(problem: Problem, point: np.ndarray, order: int) -> dict:
    base = point[:-1]
    wd = solve_webster(problem.geometry, base, order)
    out = {"structure": ("residual", structure_residual(wd))}
    if problem.gallery_entry is not None:
        entry = get_entry(problem.gallery_entry)
        if entry.spec is None:
            engine = engine_values(entry, base, order)
            oracle = entry.oracle_values(base, {k: v.shape for k, v in engine.items()})
            for key in sorted(engine):
                diff = float(np.max(np.abs(engine[key] - oracle[key]), initial=0.0))
                scale = max(1.0, float(np.max(np.abs(oracle[key]), initial=0.0)))
                layer = "curvature_residual" if key in CURVATURE_KEYS else "residual"
                out[f"oracle.{key}"] = (layer, diff / scale)
    return out


def _cr_einstein_suite(problem: Problem, point: np.ndarray, order: int) -> dict:
    geom = problem.geometry
    base = point[:-1]
    wd = solve_webster(geom, base, order)
    cv = webster_curvature(wd)
    r = cr_einstein_tensor_residuals(wd)
    out = {
        "torsion": ("residual", r.r_A),
        "nijenhuis_divergence": ("residual", r.r_DN),
        "schouten": ("residual", r.r_Rho),
        "lambda": ("info", r.Lambda),
    }
    for name, sc in sorted(geom.scales.items()):
        jet = geom.scalar_jet(sc.value, base, order)
        if sc.kind == "cr_scale":
            sr = cr_scale_residuals(wd, jet, cv)
            out[f"scale.{name}.torsion"] = ("residual", sr.torsion)
            out[f"scale.{name}.nijenhuis"] = ("residual", sr.nijenhuis)
            out[f"scale.{name}.schouten"] = ("residual", sr.schouten)
        elif sc.kind == "density" and tuple(sc.weight) == (1.0, 0.0):
            dr = density_residuals(wd, jet)
            out[f"density.{name}.antiholomorphic"] = ("info", dr.antiholomorphic)
            out[f"density.{name}.soliton"] = ("info", dr.soliton)
            out[f"density.{name}.nijenhuis"] = ("info", dr.nijenhuis)
            out[f"density.{name}.obstruction"] = ("info", dr.obstruction)
    return out


def _fibre_derivative(g, dim: int) -> float:
    idx = [0] * dim
    idx[-1] = 1
    return float(np.max(np.abs(g.derivative_value(idx))))


def _fefferman_suite(problem: Problem, point: np.ndarray, order: int) -> dict:
    spec = problem.spec
    c = full_curvature(spec, point, order)
    out = {
        "killing": ("residual", _fibre_derivative(spec.metric_at(point, 1), spec.dim)),
        "riemann_symmetry": ("residual", riemann_symmetry_residual(c)),
        "weyl_trace": ("residual", weyl_trace_residual(c)),
        "bianchi": ("residual", bianchi_residual(c)),
    }
    if spec.alpha == 1.0 and (spec.data is None or spec.data.empty):
        k = fibre_field(spec.dim)
        W = np.asarray(c.Weyl.value).real
        gi = np.asarray(c.ginv.value).real
        wk = np.einsum("abcd,d->abc", W, k)
        wnorm = float(np.einsum("abc,ad,be,cf,def->", wk, gi, gi, gi, wk))
        wd = solve_webster(problem.geometry, point[:-1], 3)
        nsq = float(np.real(wd.N_sq.value))
        out["weyl_k_norm"] = ("residual", abs(wnorm - 8 * nsq) / max(1.0, abs(8 * nsq)))
    return out


def _characterize_suite(problem: Problem, point: np.ndarray, order: int) -> dict:
    spec = problem.spec
    k = fibre_field(spec.dim)
    rep = integrability_report(spec, k, point, order)
    pet = petrov_conditions(spec, k, point, order)
    out = {
        "rho_sc": ("bound", rep.rho_sc),
        "wkk": ("residual", rep.wkk_residual),
        "ykk": ("residual", rep.ykk_residual),
        "int_cond": ("residual", rep.intcond_residual),
        "ckf": ("residual", conformal_killing_residual(spec, k, point)),
        "wnorm": ("info", rep.wnorm),
    }
    if rep.alpha is not None:
        out["alpha"] = ("info", rep.alpha)
    # The Weyl conditions characterize perturbed Fefferman spaces, which have alpha = 1.
    pet_kind = "residual" if spec.alpha == 1.0 else "info"
    out.update({name: (pet_kind, v) for name, v in pet.entries().items()})
    return out


def _scales_suite(problem: Problem, point: np.ndarray, order: int) -> dict:
    r = scale_residuals(problem.spec, point, order=order)
    out = {name: ("residual", float(v)) for name, v in r.entries().items() if name != "lambda_tilde"}
    out["lambda_tilde"] = ("info", r.Lambda_tilde)
    return out


SUITE_FUNCTIONS: dict[str, SuiteFn] = {
    "webster": _webster_suite,
    "cr-einstein": _cr_einstein_suite,
    "fefferman": _fefferman_suite,
    "characterize": _characterize_suite,
    "scales": _scales_suite,
}


def _evaluate_point(args) -> dict:
    problem, point, order, suites = args
    return {s: SUITE_FUNCTIONS[s](problem, point, order) for s in suites}


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def _aggregate(config: RunConfig, points: np.ndarray, results: list[dict]) -> list[ReportEntry]:
    entries = []
    for suite in config.suites:
        tol = config.tolerance(suite)
        conditions: dict[str, list] = {}
        for i, res in enumerate(results):
            for cond, (kind, value) in res[suite].items():
                conditions.setdefault(cond, [kind, []])[1].append((float(value), i))
        for cond, (kind, vals) in conditions.items():
            values = np.array([v for v, _ in vals])
            worst = int(np.argmax(values))
            vmax = float(values[worst])
            spread = float(values.max() - values.min())
            point = [float(x) for x in points[vals[worst][1]]]
            if kind == "info":
                entries.append(ReportEntry(suite, cond, kind, vmax, None, True, point, spread))
            elif kind == "bound":
                entries.append(ReportEntry(suite, cond, kind, vmax, RHO_SC_BOUND, vmax < RHO_SC_BOUND, point, spread))
            else:
                t = 10 * tol if kind == "curvature_residual" else tol
                ok = bool(np.isfinite(vmax) and vmax <= t)
                entries.append(ReportEntry(suite, cond, "residual", vmax, t, ok, point, spread))
        if suite == "cr-einstein" and "lambda" in conditions:
            lam = np.array([v for v, _ in conditions["lambda"][1]])
            spread = float(lam.max() - lam.min())
            i = conditions["lambda"][1][int(np.argmax(np.abs(lam - lam.mean())))][1]
            entries.append(
                ReportEntry(suite, "lambda_constancy", "residual", spread, tol, spread <= tol, [float(x) for x in points[i]])
            )
    return entries


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def run(config: RunConfig) -> VerificationReport:
    """Sample, evaluate every selected suite and aggregate (deterministic in the config)."""
    problem = load_problem(config)
    order = config.order or 3
    points, rejected = sample_points(problem, config.points, config.seed)
    tasks = [(problem, p, order, config.suites) for p in points]
    workers = min(_workers(), len(tasks))
    try:
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = list(pool.map(_evaluate_point, tasks))
        else:
            results = [_evaluate_point(t) for t in tasks]
    except (JetError, WebsterError, LorentzError, CREinsteinError, SingularPointError, ZeroDivisionError) as exc:
        raise NumericError(str(exc)) from exc
    meta = {
        "source": problem.source,
        "suites": list(config.suites),
        "points": config.points,
        "rejected": rejected,
        "seed": config.seed,
        "order": order,
        "tolerances": {s: config.tolerance(s) for s in config.suites},
        "version": __version__,
    }
    return VerificationReport(_aggregate(config, points, results), meta)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crfeff", description="Verify CR and Fefferman-space identities on sampled points.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="geometry file")
    src.add_argument("--gallery", help="built-in geometry name")
    src.add_argument("--export", metavar="NAME", help="print a built-in geometry as a geometry file and exit")
    p.add_argument("--suite", default="all", choices=(*SUITES, "all"))
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--order", type=int, default=None, help="jet order (default 3)")
    p.add_argument("--format", default="human", choices=("human", "jsonl"))
    return p


def _split_tolerances(argv: Sequence[str]) -> tuple[list[str], dict[str, float]]:
    rest, tols = [], {}
    it = iter(argv)
    for arg in it:
        if arg.startswith("--tol."):
            key, sep, val = arg[len("--tol."):].partition("=")
            if not sep:
                val = next(it, "")
            try:
                tols[key] = float(val)
            except ValueError:
                raise InputError(f"bad tolerance value {val!r} for {key}") from None
        else:
            rest.append(arg)
    return rest, tols


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, tols = _split_tolerances(argv)
        args = _parser().parse_args(rest)
        if args.export:
            sys.stdout.write(export_spec(args.export))
            return EXIT_PASS
        config = RunConfig(args.spec, args.gallery, args.suite, args.points, args.seed, args.order, tols, args.format)
        report = run(config)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_PASS
    except (InputError, GalleryError, GeometryFileError, RealityError, FeffermanError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ExprError as exc:
        if isinstance(exc, SingularPointError):
            print(f"numeric error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DomainEmptyError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (NumericError, ZeroSetError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = report.to_jsonl() if config.format == "jsonl" else report.to_table()
    sys.stdout.write(out)
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
