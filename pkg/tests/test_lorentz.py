import numpy as np
import pytest

from conftest import box_points
from crfeff.exprdsl import ChartSpec, parse_expr
from crfeff.fefferman import spec_from_geometry
from crfeff.gallery import einstein_metric
from crfeff.lorentz import (
    ExpressionMetric,
    LorentzError,
    OrderBudgetError,
    SingularMetricError,
    bianchi_residual,
    conformal_rescale,
    full_curvature,
    levi_civita,
    optical_diagnostics,
    riemann_symmetry_residual,
    weyl_trace_residual,
)

CHART = ChartSpec(("t", "x", "y", "z"))
ETA = [["-1", "0", "0", "0"], ["0", "1", "0", "0"], ["0", "0", "1", "0"], ["0", "0", "0", "1"]]


def _metric(rows):
    return ExpressionMetric(CHART, [[parse_expr(c) for c in r] for r in rows])


def _conformal_eta(factor):
    return _metric([[c if c == "0" else f"({c})*{factor}" for c in r] for r in ETA])


@pytest.fixture(scope="module")
def heis_fefferman(heis2):
    return spec_from_geometry(heis2.geometry)


@pytest.fixture(scope="module")
def np_fefferman(np_entry):
    return spec_from_geometry(np_entry.geometry)


def _bundle_points(entry, count, seed):
    rng = np.random.default_rng(seed)
    return [tuple(p) + (float(rng.uniform(-3, 3)),) for p in box_points(entry, count, seed=seed)]


def test_minkowski_is_flat():
    c = full_curvature(_metric(ETA), (0.1, 0.2, 0.3, 0.4), 3)
    for arr in (c.Gamma, c.Riem, c.Ric, c.Sc, c.Weyl, c.Cotton):
        assert np.max(np.abs(arr.value)) == 0.0


def test_conformally_flat_christoffels():
    point = (0.3, 0.1, -0.2, 0.5)
    ch = levi_civita(_conformal_eta("exp(2*t)"), point, 1)
    eta = np.diag([-1.0, 1, 1, 1])
    grad = np.array([1.0, 0, 0, 0])  # d(log Omega) for Omega = exp(t)
    expected = (
        np.einsum("ab,c->abc", np.eye(4), grad)
        + np.einsum("ac,b->abc", np.eye(4), grad)
        - np.einsum("bc,ad,d->abc", eta, np.linalg.inv(eta), grad)
    )
    assert np.allclose(ch.Gamma.value, expected, atol=1e-13)
    assert ch.metricity < 1e-12
    c = full_curvature(_conformal_eta("exp(2*t)"), point, 3)
    assert np.max(np.abs(c.Weyl.value)) < 1e-12
    assert np.max(np.abs(c.Cotton.value)) < 1e-12


def test_heisenberg_fefferman_metricity(heis2, heis_fefferman):
    for point in _bundle_points(heis2, 20, seed=1):
        assert levi_civita(heis_fefferman, point, 1).metricity < 1e-9


def test_heisenberg_fefferman_conformally_flat(heis2, heis_fefferman):
    for phi in (np.pi / 2, 0.3):
        c = full_curvature(heis_fefferman, (0.1, 0.2, -0.3, 0.4, 0.5, phi), 2)
        assert np.max(np.abs(c.Weyl.value)) < 1e-10


def test_weyl_fibre_norm_on_np(np_fefferman):
    for phi in (0.0, 1.3):
        c = full_curvature(np_fefferman, (0.0, 1.0, 0.0, 0.0, 0.0, phi), 2)
        W = np.asarray(c.Weyl.value).real
        gi = np.asarray(c.ginv.value).real
        k = np.zeros(6)
        k[-1] = 1.0
        Wk = np.einsum("a,abcd->bcd", k, W)
        norm = np.einsum("bcd,be,cf,dg,efg->", Wk, gi, gi, gi, Wk)
        assert norm == pytest.approx(8 * 0.1767767, abs=1e-6)
        assert norm == pytest.approx(1.4142136, abs=1e-6)


def test_curvature_identities_on_gallery(np_entry, np_fefferman, heis_fefferman, heis2, einstein_entry):
    cases = [(np_fefferman, _bundle_points(np_entry, 3, seed=2)), (heis_fefferman, _bundle_points(heis2, 2, seed=2))]
    cases.append((einstein_metric(einstein_entry), box_points(einstein_entry, 2, seed=2, extra=[einstein_entry.fibre_range])))
    for metric, points in cases:
        for point in points:
            c = full_curvature(metric, point, 3)
            assert riemann_symmetry_residual(c) < 1e-7
            assert weyl_trace_residual(c) < 1e-7
            assert bianchi_residual(c) < 1e-6
            assert complex(c.Rho_trace.value) == pytest.approx(complex(c.Sc.value) / (2 * (c.n + 1)), abs=1e-12)


def test_fefferman_killing(np_entry, np_fefferman):
    for point in _bundle_points(np_entry, 4, seed=3):
        g = np_fefferman.metric_at(point, 1)
        assert np.max(np.abs(np.asarray(g.grad().value)[..., -1])) < 1e-8


def test_conformal_rescale_constant():
    m = _conformal_eta("exp(t*x)")
    point = (0.3, 0.2, 0.1, 0.4)
    one = conformal_rescale(m, 1.0, point)
    assert max(one.residuals().values()) < 1e-12
    assert np.allclose(one.after.Riem.value, one.before.Riem.value, atol=1e-14)
    two = conformal_rescale(m, 2.0, point)
    assert max(two.residuals().values()) < 1e-12
    assert np.allclose(two.after.Weyl.value, 4 * np.asarray(two.before.Weyl.value), atol=1e-12)


def test_conformal_rescale_random_on_fefferman(heis2, heis_fefferman, np_fefferman, np_entry):
    omega = parse_expr("exp(0.2*x1 - 0.1*u*y2 + 0.05*sin(phi))")
    for spec, entry in ((heis_fefferman, heis2), (np_fefferman, np_entry)):
        for point in _bundle_points(entry, 2, seed=4):
            pair = conformal_rescale(spec, omega, point, 3)
            res = pair.residuals()
            scale = max(1.0, float(np.max(np.abs(pair.before.Weyl.value))))
            assert res["schouten"] < 1e-6 and res["schouten_trace"] < 1e-6
            assert res["cotton"] < 1e-6
            assert res["weyl"] < 1e-6 * scale


def test_conformal_rescale_rejects_nonpositive():
    with pytest.raises(LorentzError):
        conformal_rescale(_metric(ETA), -1.0, (0.0, 0.0, 0.0, 0.0))


def test_order_and_singularity_errors():
    with pytest.raises(OrderBudgetError):
        full_curvature(_metric(ETA), (0.0, 0.0, 0.0, 0.0), 1)
    singular = _metric([["0"] * 4] * 4)
    with pytest.raises(SingularMetricError):
        levi_civita(singular, (0.0, 0.0, 0.0, 0.0), 1)


def test_optical_minkowski():
    od = optical_diagnostics(_metric(ETA), [1.0, 1.0, 0.0, 0.0], (0.1, 0.2, 0.3, 0.4))
    assert od.geodesic() and od.non_shearing() and not od.twisting()
    with pytest.raises(LorentzError):
        optical_diagnostics(_metric(ETA), [0.0, 0.0, 0.0, 0.0], (0.1, 0.2, 0.3, 0.4))


def test_optical_heisenberg_fefferman(heis2, heis_fefferman):
    k = [0, 0, 0, 0, 0, 1.0]
    for point in _bundle_points(heis2, 5, seed=5):
        od = optical_diagnostics(heis_fefferman, k, point)
        assert od.geodesic() and od.non_shearing() and od.non_expanding()
        assert od.twist > 0.1
        permuted = optical_diagnostics(heis_fefferman, k, point, screen_order=[5, 4, 3, 2, 1, 0])
        assert permuted.shear == pytest.approx(od.shear, abs=1e-12)
        assert permuted.twist == pytest.approx(od.twist, rel=1e-10)


def test_optical_np_einstein_data(einstein_entry):
    k = [0, 0, 0, 0, 0, 1.0]
    for point in box_points(einstein_entry, 10, seed=6, extra=[einstein_entry.fibre_range]):
        od = optical_diagnostics(einstein_entry.spec, k, point)
        assert od.shear < 1e-7
        assert od.geodesic(1e-7)
