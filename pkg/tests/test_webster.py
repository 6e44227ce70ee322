import numpy as np
import pytest

from conftest import P0, box_points
from crfeff.exprdsl import parse_expr
from crfeff.exterior import FormValue, exterior_derivative_value
from crfeff.geomfile import load_geometry
from crfeff.jets import jeinsum
from crfeff.webster import (
    NonContactError,
    OrderBudgetError,
    closedness_residual,
    commutator_residuals,
    covariant_derivative_N,
    density_derivative,
    gauged_derivative,
    reeb_gauge,
    rescale_contact,
    solve_webster,
    structure_residual,
    transform_contact,
    validate_adapted,
    volume_normalization_residual,
    webster_curvature,
)

C = 8.0**-0.75  # f^(-3/4) at P0, where f = 8


def test_levi_form_np_identity(np_entry):
    h = validate_adapted(np_entry.geometry, P0)
    assert np.allclose(h, np.eye(2), atol=1e-12)


def test_levi_form_heisenberg_positive(heis1):
    h = validate_adapted(heis1.geometry, (0.0, 0.5, 0.25))
    assert h.shape == (1, 1)
    assert h[0, 0].real == pytest.approx(2.0, abs=1e-12)


def test_degenerate_contact_form_rejected():
    text = """
[chart]
name = flat
coordinates = u, x1, y1
[complex]
z1 = x1, y1
[contact_form]
du = 1
[coframe.1]
dz1 = 1
"""
    geom = load_geometry(text)
    with pytest.raises(NonContactError):
        solve_webster(geom, (0.0, 0.1, 0.2), 2)


def test_order_budget(np_entry):
    with pytest.raises(OrderBudgetError):
        solve_webster(np_entry.geometry, P0, 1)


@pytest.mark.parametrize("point", [P0, (1.0, 2.0, 0.0, 1.0, 0.0)])
def test_np_connection_and_torsion(np_entry, point):
    wd = solve_webster(np_entry.geometry, point, 2)
    f = 8.0  # both points have f = 8
    c = f**-0.75
    assert c == pytest.approx(0.2102241, abs=1e-7)
    N = np.asarray(wd.N_low.value)
    assert N[0, 1, 0] == pytest.approx(-c, abs=1e-12)
    assert N[1, 0, 1] == pytest.approx(c, abs=1e-12)
    assert np.allclose(wd.A_low.value, 0.0, atol=1e-12)
    g = np.asarray(wd.gamma.value)
    assert np.allclose(g[0, 0, 1:], [c / 2, -c / 2, -c / 2, c / 2], atol=1e-12)
    assert np.allclose(g[0, 1], 0.0, atol=1e-12)
    assert structure_residual(wd) < 1e-12


def test_np_curvature_at_base_point(np_entry):
    cv = webster_curvature(np_entry.geometry, P0, 3)
    assert cv.Ric.value[0, 0].real == pytest.approx(0.0883883, abs=1e-7)
    assert cv.Sc.value.real == pytest.approx(0.1767767, abs=1e-7)
    assert cv.N_sq.value.real == pytest.approx(0.1767767, abs=1e-7)
    assert cv.Rho.value == pytest.approx(cv.Sc.value / 6, abs=1e-14)


def test_np_nijenhuis_parallel(np_entry):
    for point in box_points(np_entry, 8, seed=3):
        nd = covariant_derivative_N(np_entry.geometry, point, 3)
        assert np.max(np.abs(nd.dbar_N.value)) < 1e-10
        assert np.max(np.abs(nd.div_N.value)) < 1e-10


def test_heisenberg_flat(heis2):
    cv = webster_curvature(heis2.geometry, (0.1, 0.2, -0.3, 0.4, 0.5), 3)
    for arr in (cv.Riem, cv.Ric, cv.Sc, cv.chern_moser, cv.N_sq):
        assert np.max(np.abs(arr.value)) < 1e-12


def test_chern_moser_trace_free(np_entry):
    rg = rescale_contact(np_entry.geometry, parse_expr("0.3*x1 + 0.1*y2^2"))
    cv = webster_curvature(rg, (0.1, 1.2, 0.2, 0.1, -0.1), 3)
    wd = solve_webster(rg, (0.1, 1.2, 0.2, 0.1, -0.1), 2)
    S = np.asarray(cv.chern_moser.value)  # [a, b, c, d]
    hr = np.asarray(wd.h_raise.value)
    trace = np.einsum("abcd,cb->ad", S, hr)
    assert np.max(np.abs(trace)) < 1e-10


def test_gauge_and_density_derivatives(np_entry):
    wd = solve_webster(np_entry.geometry, P0, 2)
    xi = np.asarray(reeb_gauge(wd).value)
    q = C / 4
    assert np.allclose(xi, [0, -1j * q, 1j * q, 1j * q, -1j * q], atol=1e-12)
    one = np_entry.geometry.scalar_jet(parse_expr("1"), P0, 2)
    d = np.asarray(density_derivative(wd, one, (1, 0)).value)
    assert np.allclose(d, 1j * xi, atol=1e-14)
    assert np.allclose(density_derivative(wd, one, (1, 1)).value, 0.0)


def test_gauged_derivative_rules():
    xi = np.array([0.0, 1.0, 2.0])
    grad = np.array([1.0, 1.0, 1.0])
    assert np.allclose(gauged_derivative(grad, 2.0, (1, 1), xi), grad)
    assert np.allclose(gauged_derivative(grad, 2.0, (1, 0), xi), grad - 2j * xi)
    assert np.allclose(gauged_derivative(grad, 2.0, (1, 0), xi, reference_gauge=xi), grad)


def test_closedness_residual(np_entry):
    wd = solve_webster(np_entry.geometry, P0, 3)
    zero = reeb_gauge(wd) * 0.0
    assert closedness_residual(wd, zero).max() == 0.0
    xi = reeb_gauge(wd)
    res = closedness_residual(wd, xi)
    assert res.mixed[0, 0] == pytest.approx(-0.5j * 8.0**-1.5, abs=1e-12)

    # same blocks from the coordinate exterior derivative
    k = min(xi.order, wd.coframe.order)
    coords = jeinsum("A,Ai->i", xi.truncate(k), wd.coframe.truncate(k))
    dxi = exterior_derivative_value(FormValue(1, coords)).value()
    frame = np.asarray(wd.frame.value)
    on_frame = np.einsum("ij,Ai,Bj->AB", dxi, frame, frame)
    assert np.allclose(res.mixed, on_frame[1:3, 3:5], atol=1e-12)
    assert np.allclose(res.hol, on_frame[1:3, 1:3] / 2, atol=1e-12)
    assert np.allclose(res.reeb, on_frame[1:3, 0], atol=1e-12)


@pytest.mark.parametrize("upsilon", ["0", "0.7", "0.3*x1 + 0.1*y2^2", "sin(u)*x2"])
def test_contact_transform_laws(np_entry, upsilon):
    t = transform_contact(np_entry.geometry, parse_expr(upsilon), (0.2, 1.1, 0.1, 0.05, -0.1))
    for key, value in t.residuals().items():
        assert value < 1e-10, key


def test_contact_transform_heisenberg(heis1):
    t = transform_contact(heis1.geometry, parse_expr("x1"), (0.1, 0.2, 0.3))
    assert max(t.residuals().values()) < 1e-10
    assert np.max(np.abs(t.after.A_low.value)) > 1e-3


def test_contact_transform_random(np_entry):
    rng = np.random.default_rng(11)
    for point in box_points(np_entry, 4, seed=5):
        a, b, c = rng.normal(size=3) * 0.3
        t = transform_contact(np_entry.geometry, parse_expr(f"{a}*x1 + {b}*u*y1 + {c}*x2^2"), point)
        assert max(t.residuals().values()) < 1e-9


def _test_function(geom, point):
    return geom.scalar_jet(parse_expr("sin(x1)*y1^2 + exp(u*x2) + y2*x1^3"), point, 3)


def test_commutation_relations(np_entry):
    for point in box_points(np_entry, 6, seed=2):
        wd = solve_webster(np_entry.geometry, point, 3)
        res = commutator_residuals(wd, _test_function(np_entry.geometry, point))
        assert max(float(np.max(np.abs(v))) for v in res.values()) < 1e-10


def test_commutation_relations_with_torsion(np_entry):
    rg = rescale_contact(np_entry.geometry, parse_expr("0.3*x1 + 0.1*y2^2"))
    point = (0.1, 1.0, 0.2, 0.1, 0.0)
    wd = solve_webster(rg, point, 3)
    assert np.max(np.abs(wd.A_low.value)) > 1e-2
    res = commutator_residuals(wd, _test_function(rg, point))
    assert max(float(np.max(np.abs(v))) for v in res.values()) < 1e-10


def test_volume_normalization(np_entry, heis1, heis2):
    assert volume_normalization_residual(np_entry.geometry, P0) < 1e-12
    assert volume_normalization_residual(heis1.geometry, (0.1, 0.2, 0.3)) < 1e-12
    assert volume_normalization_residual(heis2.geometry, (0.1, 0.2, 0.3, 0.4, 0.5)) < 1e-12
    rg = rescale_contact(np_entry.geometry, parse_expr("0.3*x1 + 0.1*y2^2"), completion=0.0)
    assert volume_normalization_residual(rg, (0.1, 1.0, 0.2, 0.1, 0.0)) < 1e-12
