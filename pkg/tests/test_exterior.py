import numpy as np
import pytest

from crfeff.exprdsl import ChartSpec, parse_expr
from crfeff.exterior import (
    CoframeValue,
    FormError,
    FormValue,
    OneFormField,
    dual_frame,
    expand_in_coframe,
    exterior_derivative,
    exterior_derivative_value,
    top_form_coefficient,
    wedge,
)
from crfeff.jets import Jet

from conftest import P0, box_points

C = 8 ** -0.75  # f^(-3/4) at the base point


def _d(form):
    return exterior_derivative_value(form)


def test_d_of_x_dy():
    chart = ChartSpec(("x", "y"))
    field = OneFormField((parse_expr("0"), parse_expr("x")))
    d = exterior_derivative(field, chart, (0.3, -0.7), 2)
    v = d.value()
    assert v[0, 1] == 1 and v[1, 0] == -1 and v[0, 0] == 0


def test_wedge_antisymmetry():
    dx = FormValue.from_array([1.0, 0.0])
    dy = FormValue.from_array([0.0, 1.0])
    assert np.all(wedge(dx, dx).value() == 0)
    np.testing.assert_array_equal(wedge(dx, dy).value(), -wedge(dy, dx).value())


def test_dd_vanishes_on_contact_form(np_entry):
    for p in box_points(np_entry, 10, seed=1):
        cof = np_entry.geometry.coframe_at(p, 3)
        dd = _d(_d(FormValue(1, cof.theta)))
        assert np.max(np.abs(dd.value())) < 1e-10
        for a in range(2):
            ddc = _d(_d(FormValue(1, cof.theta_alpha[a])))
            assert np.max(np.abs(ddc.value())) < 1e-10


def test_leibniz_rule(np_entry):
    for p in box_points(np_entry, 10, seed=2):
        cof = np_entry.geometry.coframe_at(p, 3)
        a = FormValue(1, cof.theta)
        b = FormValue(1, cof.theta_alpha[0])
        lhs = _d(wedge(a, b))
        a1, b1 = a.truncate(2), b.truncate(2)
        rhs = wedge(_d(a), b1) - wedge(a1, _d(b))
        assert np.max(np.abs((lhs - rhs).value())) < 1e-8


def test_dtheta_expansion(np_entry):
    cof = np_entry.geometry.coframe_at(P0, 2)
    ex = expand_in_coframe(_d(FormValue(1, cof.theta)), cof)
    np.testing.assert_allclose(ex.c_bcbar, 1j * np.eye(2), atol=1e-12)
    assert ex.max_abs_except_mixed() < 1e-12
    assert ex.reconstruction_error < 1e-12


def test_dtheta1_expansion(np_entry):
    cof = np_entry.geometry.coframe_at(P0, 2)
    ex = expand_in_coframe(_d(FormValue(1, cof.theta_alpha[0])), cof)
    assert abs(ex.c_bc[0, 1] + 0.5 * C) < 1e-12
    np.testing.assert_allclose(ex.c_bcbar, [[-0.5 * C, 0.5 * C], [0, 0]], atol=1e-12)
    assert abs(ex.c_bbarcbar[0, 1] - C) < 1e-12
    assert np.max(np.abs(ex.c_0b)) < 1e-12 and np.max(np.abs(ex.c_0bbar)) < 1e-12


def test_zero_form_expansion(np_entry):
    cof = np_entry.geometry.coframe_at(P0, 1)
    zero = FormValue(2, Jet.zeros((5, 5), 5, 0))
    ex = expand_in_coframe(zero, cof)
    assert ex.max_abs_except_mixed() == 0 and np.all(ex.c_bcbar == 0)


def test_expand_rejects_wrong_degree(np_entry):
    cof = np_entry.geometry.coframe_at(P0, 1)
    with pytest.raises(FormError):
        expand_in_coframe(FormValue(1, cof.theta), cof)


def test_contact_condition(np_entry, heis1):
    cof = np_entry.geometry.coframe_at(P0, 1)
    th = FormValue(1, cof.theta.truncate(0))
    dth = _d(FormValue(1, cof.theta))
    vol = wedge(wedge(th, dth), dth)
    assert abs(top_form_coefficient(vol)) > 1e-3
    for p in box_points(heis1, 5):
        c1 = heis1.geometry.coframe_at(p, 1)
        v1 = wedge(FormValue(1, c1.theta.truncate(0)), _d(FormValue(1, c1.theta)))
        assert abs(top_form_coefficient(v1)) > 1e-3


def test_dual_frame_flat_and_heisenberg(heis1):
    flat = CoframeValue(Jet.constant([1.0, 0, 0], 3, 0), Jet.constant([[0, 1.0, 1j]], 3, 0))
    fr = dual_frame(flat)
    np.testing.assert_allclose(fr.reeb.value, [1, 0, 0])
    cof = heis1.geometry.coframe_at((0.2, 0.5, -0.3), 2)
    fr = dual_frame(cof, check_reeb=True)
    np.testing.assert_allclose(fr.reeb.value, [1, 0, 0], atol=1e-14)


def test_dual_frame_pairing(np_entry):
    for p in [P0, *box_points(np_entry, 5, seed=3)]:
        cof = np_entry.geometry.coframe_at(p, 2)
        fr = dual_frame(cof, check_reeb=True)
        pairing = np.asarray(cof.matrix().value) @ np.asarray(fr.vectors.value).T
        assert np.max(np.abs(pairing - np.eye(5))) < 1e-10


def test_singular_coframe():
    bad = CoframeValue(Jet.constant([1.0, 0, 0], 3, 0), Jet.constant([[1.0, 0, 0]], 3, 0))
    with pytest.raises(FormError):
        dual_frame(bad)
