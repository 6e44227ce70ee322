import numpy as np
import pytest

from conftest import P0, box_points
from crfeff.creinstein import (
    CREinsteinError,
    cr_einstein_tensor_residuals,
    cr_scale_residuals,
    density_residuals,
    einstein_scale_spread,
    scale_from_density,
)
from crfeff.exprdsl import parse_expr
from crfeff.webster import rescale_contact, solve_webster

C = 8.0**-0.75
F32 = 8.0**-1.5  # f^(-3/2) at P0


def _jet(geom, text, point, order=3):
    return geom.scalar_jet(parse_expr(text), point, order)


def test_np_is_cr_einstein(np_entry):
    for point in box_points(np_entry, 10, seed=1):
        res = cr_einstein_tensor_residuals(np_entry.geometry, point)
        assert res.max() < 1e-8
        assert abs(res.Lambda) < 1e-8
        assert res.r_Ric < 1e-8


def test_heisenberg_is_cr_einstein(heis2):
    res = cr_einstein_tensor_residuals(heis2.geometry, (0.1, 0.2, -0.3, 0.4, 0.5))
    assert res.max() == 0.0 and res.Lambda == 0.0


def test_rescaled_np_is_not(np_entry):
    rg = rescale_contact(np_entry.geometry, parse_expr("x2"))
    res = cr_einstein_tensor_residuals(rg, P0)
    assert res.r_A > 1e-3 and res.r_DN > 1e-3


def test_lambda_matches_ricci_factor(np_entry):
    # rescaling by exp(x2) keeps the Schouten equation but moves Lambda off zero
    rg = rescale_contact(np_entry.geometry, parse_expr("x2"))
    res = cr_einstein_tensor_residuals(rg, P0)
    assert res.r_Rho < 1e-10
    assert abs(res.Lambda) > 1e-2
    assert res.Lambda_fit == pytest.approx(res.Lambda, rel=1e-6)


def test_scale_one_reduces_to_tensor_form(np_entry):
    wd = solve_webster(np_entry.geometry, P0, 4)
    tensor = cr_einstein_tensor_residuals(wd)
    for text in ("1", "2"):
        sr = cr_scale_residuals(wd, _jet(np_entry.geometry, text, P0))
        assert sr.torsion == pytest.approx(tensor.r_A, abs=1e-9)
        assert sr.nijenhuis == pytest.approx(tensor.r_DN, abs=1e-9)
        assert sr.schouten == pytest.approx(tensor.r_Rho, abs=1e-9)
        assert sr.max() < 1e-8


def test_nonconstant_scale_fails(np_entry):
    wd = solve_webster(np_entry.geometry, P0, 4)
    sr = cr_scale_residuals(wd, _jet(np_entry.geometry, "exp(x2)", P0))
    assert sr.torsion > 1e-3 and sr.nijenhuis > 1e-3


def test_scale_form_matches_rescaled_contact_form(np_entry):
    upsilon = "0.3*x1 + 0.2*y1*u + 0.1*x2^2"
    for point in box_points(np_entry, 4, seed=9):
        wd = solve_webster(np_entry.geometry, point, 4)
        s = _jet(np_entry.geometry, f"exp({upsilon})", point)
        sr = cr_scale_residuals(wd, s)
        sv = float(s.value.real)
        tensor = cr_einstein_tensor_residuals(rescale_contact(np_entry.geometry, parse_expr(f"-({upsilon})")), point, 4)
        assert sv * sr.torsion == pytest.approx(tensor.r_A, rel=1e-6)
        assert sv * sr.nijenhuis == pytest.approx(tensor.r_DN, rel=1e-6)
        assert sv * sr.schouten == pytest.approx(tensor.r_Rho, rel=1e-6)


def test_scale_must_be_positive(np_entry):
    wd = solve_webster(np_entry.geometry, P0, 4)
    for text in ("-1", "0", "x2"):
        with pytest.raises(CREinsteinError):
            cr_scale_residuals(wd, _jet(np_entry.geometry, text, P0))


def test_holomorphic_density_on_np(np_entry):
    wd = solve_webster(np_entry.geometry, P0, 4)
    res = density_residuals(wd, _jet(np_entry.geometry, "f^(1/8)", P0))
    assert res.antiholomorphic < 1e-8
    # the obstruction tensor has -2 f^(-3/2) in its off-diagonal slots
    assert res.obstruction_tensor[0, 1] == pytest.approx(-2 * F32, abs=1e-12)
    assert res.obstruction_tensor[1, 0] == pytest.approx(-2 * F32, abs=1e-12)
    assert abs(res.obstruction_tensor[0, 0]) < 1e-12
    assert 2 * F32 == pytest.approx(0.0883883, abs=1e-7)
    assert res.obstruction == pytest.approx(np.sqrt(2) * 2 * F32, rel=1e-10)


def test_volume_density_on_np_is_not_holomorphic(np_entry):
    wd = solve_webster(np_entry.geometry, P0, 4)
    res = density_residuals(wd, _jet(np_entry.geometry, "1", P0))
    assert np.allclose(np.abs(res.dbar_components), C / 4, atol=1e-12)
    assert res.antiholomorphic > 1e-3


def test_heisenberg_density_and_scale(heis2):
    for point in box_points(heis2, 5, seed=4):
        wd = solve_webster(heis2.geometry, point, 4)
        sigma = _jet(heis2.geometry, "1", point)
        assert density_residuals(wd, sigma).max() < 1e-12
        assert cr_scale_residuals(wd, scale_from_density(sigma)).max() < 1e-11


def test_zero_density_rejected(np_entry):
    wd = solve_webster(np_entry.geometry, P0, 4)
    with pytest.raises(CREinsteinError):
        density_residuals(wd, _jet(np_entry.geometry, "x2", P0))


def test_scale_spread_diagnostic(np_entry):
    points = box_points(np_entry, 6, seed=8)
    wds = [solve_webster(np_entry.geometry, p, 3) for p in points]
    flat = einstein_scale_spread(wds, [1.0] * len(wds))
    assert flat > 1e-3
    inverse = [1.0 / float(np.real(w.N_sq.value)) for w in wds]
    assert einstein_scale_spread(wds, inverse) < 1e-12
    assert einstein_scale_spread([], []) == 0.0
