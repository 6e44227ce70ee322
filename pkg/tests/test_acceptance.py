"""Acceptance criteria at their stated tolerances, one summary line each.

Run with ``pytest tests/test_acceptance.py -v``; the per-criterion lines are
repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from conftest import P0, box_points, heisenberg_einstein
from crfeff.characterize import (
    fibre_field,
    integrability_report,
    lambda0_coefficients,
    ode1_residual,
    ode2_residual,
    zero_set_diagnostics,
)
from crfeff.creinstein import cr_einstein_tensor_residuals, density_residuals
from crfeff.exprdsl import parse_expr
from crfeff.exterior import FormValue, exterior_derivative_value, wedge
from crfeff.fefferman import spec_from_geometry
from crfeff.gallery import einstein_metric, get_entry, names, oracle_residuals
from crfeff.lorentz import (
    RescaledMetric,
    bianchi_residual,
    conformal_rescale,
    full_curvature,
    riemann_symmetry_residual,
    weyl_trace_residual,
)
from crfeff.webster import (
    commutator_residuals,
    rescale_contact,
    solve_webster,
    transform_contact,
    volume_normalization_residual,
)

RESULTS: dict[str, str] = {}
K6 = fibre_field(6)


class Criterion:
    """Collects labelled checks and emits one pass/fail line."""

    def __init__(self, number, title, key=None):
        self.number, self.title = number, title
        self.key = key or str(number)
        self.failures = []
        self.worst = {}

    def below(self, label, value, tol):
        value = float(value)
        self.worst[label] = max(self.worst.get(label, -math.inf), value)
        if not value < tol:
            self.failures.append(f"{label} = {value:.3e} >= {tol:g}")

    def above(self, label, value, bound):
        value = float(value)
        self.worst[label] = min(self.worst.get(label, math.inf), value)
        if not value > bound:
            self.failures.append(f"{label} = {value:.3e} <= {bound:g}")

    def finish(self):
        status = "FAIL" if self.failures else "PASS"
        line = f"criterion {self.number:2d} {status}: {self.title}"
        if self.failures:
            distinct = list(dict.fromkeys(self.failures))
            line += " | " + "; ".join(distinct[:3])
            if len(distinct) > 3:
                line += f" (+{len(distinct) - 3} more)"
        RESULTS[self.key] = line
        print(line)
        assert not self.failures, line


def _f(entry, point):
    return complex(entry.evaluator(point)(parse_expr("f")).value).real


def _coords(geom):
    return geom.chart.coordinates


def _test_function(geom):
    c = _coords(geom)
    return parse_expr(f"sin({c[1]})*{c[2]}^2 + exp({c[0]}*{c[1]}) + {c[2]}*{c[1]}^3")


def test_criterion_01_webster_solve(np_entry):
    crit = Criterion(1, "Webster connection, torsion and Nijenhuis tensor at 100 points")
    start = time.perf_counter()
    for point in box_points(np_entry, 100, seed=101):
        res = oracle_residuals(np_entry, point)
        crit.below("|A|", res["A"][0], 1e-8)
        crit.below("N rel", res["N"][1], 1e-7)
        crit.below("Gamma rel", res["gamma"][1], 1e-7)
    crit.below("runtime s", time.perf_counter() - start, 10.0)
    crit.finish()


def test_criterion_02_webster_curvature(np_entry):
    crit = Criterion(2, "Ricci, scalar curvature, |N|^2 and N derivatives at 100 points")
    for point in box_points(np_entry, 100, seed=102):
        res = oracle_residuals(np_entry, point)
        for key in ("Ric", "Sc", "N_sq"):
            crit.below(f"{key} rel", res[key][1], 1e-6)
        for key in ("N_dbar", "N_div"):
            crit.below(f"{key} abs", res[key][0], 1e-6)
    crit.finish()


def test_criterion_03_cr_einstein(np_entry, heis1, heis2):
    crit = Criterion(3, "CR-Einstein residuals, Lambda = 0, holomorphic density and obstruction")
    for point in box_points(np_entry, 100, seed=103):
        res = cr_einstein_tensor_residuals(np_entry.geometry, point)
        crit.below("max residual", res.max(), 1e-7)
        crit.below("|Lambda|", abs(res.Lambda), 1e-8)
    for entry in (heis1, heis2):
        for point in box_points(entry, 20, seed=103):
            res = cr_einstein_tensor_residuals(entry.geometry, point)
            crit.below(f"{entry.name} residual", res.max(), 1e-7)
            crit.below(f"{entry.name} |Lambda|", abs(res.Lambda), 1e-8)
    hat = np_entry.geometry.scales["sigma_hat"].value
    for point in box_points(np_entry, 20, seed=113):
        wd = solve_webster(np_entry.geometry, point, 4)
        dens = density_residuals(wd, np_entry.geometry.scalar_jet(hat, point, 3))
        crit.below("dbar sigma_hat", dens.antiholomorphic, 1e-7)
        expected = 2 * _f(np_entry, point) ** -1.5
        off = abs(dens.obstruction_tensor[0, 1])
        crit.below("obstruction rel", abs(off - expected) / expected, 1e-5)
    crit.finish()


def test_criterion_04_fefferman_killing_and_covariance(np_entry, heis1, heis2):
    crit = Criterion(4, "Fefferman metric Killing along the fibre and conformally covariant")
    rng = np.random.default_rng(104)
    for entry in (np_entry, heis1, heis2):
        for alpha in (0.0, 1.0, 2.0):
            spec = spec_from_geometry(entry.geometry, alpha=alpha)
            for point in box_points(entry, 10, seed=104, extra=[(-3, 3)]):
                g = spec.metric_at(point, 1)
                crit.below("Lie_k g", np.max(np.abs(np.asarray(g.grad().value)[..., -1])), 1e-8)
    for entry in (np_entry, heis1, heis2):
        spec = spec_from_geometry(entry.geometry)
        c = _coords(entry.geometry)
        for _ in range(3):
            a, b, d = rng.normal(size=3) * 0.3
            upsilon = parse_expr(f"{a}*{c[1]} + {b}*{c[0]}*{c[2]} + {d}*{c[1]}^2")
            rescaled = spec.with_base(rescale_contact(entry.geometry, upsilon))
            for point in box_points(entry, 3, seed=int(rng.integers(1 << 16)), extra=[(-3, 3)]):
                factor = math.exp(complex(entry.geometry.scalar_jet(upsilon, point[:-1], 0).value).real)
                g = np.asarray(spec.metric_at(point, 0).value).real
                gh = np.asarray(rescaled.metric_at(point, 0).value).real
                crit.below("covariance rel", np.max(np.abs(gh - factor * g)) / np.max(np.abs(g)), 1e-6)
    crit.finish()


def test_criterion_05_weyl_fibre_norm(np_entry):
    crit = Criterion(5, "|W(k)|^2 = 8 |N|^2 at 50 bundle points")
    spec = spec_from_geometry(np_entry.geometry)

    def weyl_k_norm(point):
        c = full_curvature(spec, point, 2)
        W = np.asarray(c.Weyl.value).real
        gi = np.asarray(c.ginv.value).real
        wk = np.einsum("abcd,d->abc", W, K6)
        return float(np.einsum("abc,ad,be,cf,def->", wk, gi, gi, gi, wk))

    for point in box_points(np_entry, 50, seed=105, extra=[(-3, 3)]):
        nsq = float(np.real(solve_webster(np_entry.geometry, point[:-1], 3).N_sq.value))
        crit.below("rel", abs(weyl_k_norm(point) - 8 * nsq) / (8 * nsq), 1e-5)
    crit.below("value at base point", abs(weyl_k_norm(P0 + (0.0,)) - 1.4142136), 1e-6)
    crit.finish()


def test_criterion_06_alpha_characterization(np_entry):
    crit = Criterion(6, "alpha-Fefferman integrability conditions, inferred alpha, conformal invariance")
    rng = np.random.default_rng(106)
    start = time.perf_counter()
    for alpha in (0.0, 1.0, 2.0):
        spec = spec_from_geometry(np_entry.geometry, alpha=alpha)
        for point in box_points(np_entry, 3, seed=106, extra=[(-3, 3)]):
            rep = integrability_report(spec, K6, point, order=5)
            crit.below("rho_sc", rep.rho_sc, -0.1)
            crit.below("Wkk", rep.wkk_residual, 1e-5)
            crit.below("Ykk", rep.ykk_residual, 1e-5)
            crit.below("int_cond", rep.intcond_residual, 1e-5)
            crit.below(f"|inferred alpha - {alpha:g}|", abs(rep.alpha - alpha), 1e-3)
            a, b, d = rng.normal(size=3) * 0.2
            omega = parse_expr(f"exp({a}*x1 + {b}*u*y2 + {d}*sin(phi))")
            after = integrability_report(RescaledMetric(spec, omega), K6, point, order=5)
            for name in ("wkk_residual", "ykk_residual", "intcond_residual"):
                crit.below(f"{name} change", abs(getattr(after, name) - getattr(rep, name)), 1e-5)
            for name in ("rho_sc", "alpha"):
                before = getattr(rep, name)
                crit.below(f"{name} change rel", abs(getattr(after, name) - before) / abs(before), 1e-5)
    crit.below("runtime s", time.perf_counter() - start, 300.0)
    crit.finish()


def test_criterion_07_einstein_reproduction(einstein_entry):
    crit = Criterion(7, "sec^2(phi) perturbed Fefferman metric is Ricci-flat; alpha = 2 is not")
    metric = einstein_metric(einstein_entry)
    phi = einstein_entry.spec.coordinates[-1]
    wrong = RescaledMetric(einstein_entry.spec.with_alpha(2.0), parse_expr(f"1/cos({phi})"))
    points = box_points(einstein_entry, 50, seed=107, extra=[einstein_entry.fibre_range])
    for point in points:
        crit.above("|cos phi|", abs(math.cos(point[-1])), 0.3)
        crit.below("Ric", np.max(np.abs(full_curvature(metric, point, 2).Ric.value)), 1e-5)
    for point in points[:5]:
        crit.above("alpha = 2 Ric", np.max(np.abs(full_curvature(wrong, point, 2).Ric.value)), 1e-3)
    crit.finish()


def test_criterion_08_lambda0_series():
    crit = Criterion(8, "lambda_0 series solves both fibre ODEs; top coefficient Lambda/24")
    rng = np.random.default_rng(108)
    grid = np.linspace(-1.5, 1.5, 61)
    for _ in range(20):
        lam, lam_t = rng.normal(size=2)
        mu = complex(*rng.normal(size=2))
        crit.below("ode1", np.max(ode1_residual(2, lam, lam_t, mu, grid)), 1e-8)
        pure = complex(0.0, mu.imag)
        crit.below("ode1 (Re mu = 0)", np.max(ode1_residual(2, lam, lam_t, pure, grid)), 1e-8)
        crit.below("ode2 (Re mu = 0)", np.max(ode2_residual(2, lam, lam_t, pure, grid)), 1e-8)
    for lam in (1.0, -2.5, 0.3):
        top = lambda0_coefficients(2, lam, 0.0, 0.0)[6]
        crit.below("lambda_0^(6) - Lambda/24", abs(top - lam / 24), 1e-14)
    crit.finish()


def test_criterion_09_zero_set(heis2, einstein_entry):
    crit = Criterion(9, "zero-set determinant -(4/(2m+1)) Lambda~ and Weyl tensor on the zero set")
    base = (0.1, 0.2, -0.3, 0.4, 0.5)
    for lam_t in (-1.0, 0.0, 1.0):
        z = zero_set_diagnostics(heisenberg_einstein(heis2, lam_t), base)
        crit.below(f"det error at Lambda~ = {lam_t:g}", abs(z.det - (-0.8 * lam_t)), 1e-6)
    crit.below("Heisenberg Weyl on Z", zero_set_diagnostics(heisenberg_einstein(heis2, 0.0), base).weyl_norm, 1e-6)
    z = zero_set_diagnostics(einstein_entry.spec, (0.1, 1.2, 0.1, 0.05, -0.1))
    crit.above("nearly-Kaehler base Weyl on Z", z.weyl_norm, 0.01)
    crit.finish()


def _coframe_form_checks(crit, geom, point):
    cof = geom.coframe_at(point, 3)
    theta = FormValue(1, cof.theta)
    forms = [theta] + [FormValue(1, cof.theta_alpha[a]) for a in range(geom.m)]
    for form in forms:
        dd = exterior_derivative_value(exterior_derivative_value(form))
        crit.below("d d", np.max(np.abs(dd.value())), 1e-8)
    other = forms[1]
    lhs = exterior_derivative_value(wedge(theta, other))
    rhs = wedge(exterior_derivative_value(theta), other.truncate(2)) - wedge(theta.truncate(2), exterior_derivative_value(other))
    crit.below("Leibniz", np.max(np.abs((lhs - rhs).value())), 1e-7)


def _webster_checks(crit, geom, point, rng):
    c = _coords(geom)
    a, b, d = rng.normal(size=3) * 0.3
    t = transform_contact(geom, parse_expr(f"{a}*{c[1]} + {b}*{c[0]}*{c[2]} + {d}*{c[1]}^2"), point)
    for key, value in t.residuals().items():
        crit.below(f"transform {key}", value, 1e-7 if key == "A" else 1e-6)
    wd = solve_webster(geom, point, 3)
    res = commutator_residuals(wd, geom.scalar_jet(_test_function(geom), point, 3))
    crit.below("commutators", max(float(np.max(np.abs(v))) for v in res.values()), 1e-7)
    crit.below("volume normalization", volume_normalization_residual(geom, point), 1e-8)


def _lorentz_checks(crit, metric, coords, point, rng):
    a, b, d = rng.normal(size=3) * 0.2
    omega = parse_expr(f"exp({a}*{coords[1]} - {b}*{coords[0]}*{coords[2]} + {d}*sin({coords[-1]}))")
    pair = conformal_rescale(metric, omega, point, 3)
    c = pair.before
    crit.below("Riemann symmetries", riemann_symmetry_residual(c), 1e-6)
    crit.below("Weyl trace", weyl_trace_residual(c), 1e-6)
    crit.below("Weyl trace (rescaled)", weyl_trace_residual(pair.after), 1e-6)
    crit.below("contracted Bianchi", bianchi_residual(c), 1e-5)
    res = pair.residuals()
    weyl_scale = max(1.0, float(np.max(np.abs(c.Weyl.value))))
    crit.below("Schouten law", res["schouten"], 1e-6)
    crit.below("Schouten trace law", res["schouten_trace"], 1e-6)
    crit.below("Weyl invariance", res["weyl"] / weyl_scale, 1e-6)
    crit.below("Cotton law", res["cotton"], 1e-5)


@pytest.mark.parametrize("name", names())
def test_criterion_10_property_suites(name):
    entry = get_entry(name)
    geom = entry.geometry
    rng = np.random.default_rng(110)
    if entry.spec is None:
        metric = spec_from_geometry(geom)
        fibre = (-3.0, 3.0)
    else:
        metric = einstein_metric(entry)
        fibre = entry.fibre_range
    coords = (entry.spec or metric).coordinates
    crit = Criterion(10, f"property suites on {name} (50 points)", key=f"10 {name}")
    for point in box_points(entry, 50, seed=110, extra=[fibre]):
        base = tuple(point[:-1])
        _coframe_form_checks(crit, geom, base)
        _webster_checks(crit, geom, base, rng)
        _lorentz_checks(crit, metric, coords, point, rng)
    crit.finish()
