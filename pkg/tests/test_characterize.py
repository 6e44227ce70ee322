import math

import numpy as np
import pytest

from conftest import box_points, heisenberg_einstein
from crfeff.characterize import (
    ZeroSetError,
    conformal_killing_residual,
    cos_profile,
    fibre_field,
    integrability_report,
    lambda0_closed_form,
    lambda0_coefficients,
    ode1_residual,
    ode2_residual,
    petrov_conditions,
    scale_residuals,
    zero_set_diagnostics,
)
from crfeff.exprdsl import parse_expr
from crfeff.fefferman import spec_from_geometry
from crfeff.lorentz import RescaledMetric

K6 = fibre_field(6)
Q = (0.1, 1.2, 0.1, 0.05, -0.1, 0.4)
HQ = (0.1, 0.2, -0.3, 0.4, 0.5, 0.4)
OMEGA = parse_expr("exp(0.2*x1 - 0.1*u*y2)")


@pytest.fixture(scope="module")
def np_alpha(np_entry):
    return {a: spec_from_geometry(np_entry.geometry, alpha=a) for a in (1.0, 2.0)}


def test_fibre_is_conformal_killing(np_alpha, heis2):
    for spec in (*np_alpha.values(), spec_from_geometry(heis2.geometry)):
        assert conformal_killing_residual(spec, K6, Q) < 1e-8
        assert conformal_killing_residual(RescaledMetric(spec, OMEGA), K6, Q) < 1e-8
    assert conformal_killing_residual(np_alpha[1.0], [0, 1, 0, 0, 0, 0], Q) > 0.1


def test_integrability_alpha_one(np_entry, np_alpha):
    for point in box_points(np_entry, 4, seed=3, extra=[(-3, 3)]):
        r = integrability_report(np_alpha[1.0], K6, point)
        assert r.rho_sc < -0.1
        assert max(r.wkk_residual, r.ykk_residual, r.intcond_residual, r.ckf_residual) < 1e-6
        assert abs(r.wkk_slope) < 1e-7
        assert r.alpha == pytest.approx(1.0, abs=1e-4)


def test_integrability_alpha_two(np_alpha):
    r = integrability_report(np_alpha[2.0], K6, Q)
    assert (2.0 - 1) / (8 * (2 * 2 + 1)) == 0.025
    assert max(r.wkk_residual, r.ykk_residual, r.intcond_residual) < 1e-6
    # measured proportionality is (1 + alpha)/2 - 1 over 40, i.e. an inferred alpha of 1.5
    assert r.wkk_slope / r.wnorm == pytest.approx(0.5 / 40, rel=1e-10)
    assert r.alpha == pytest.approx(1.5, abs=1e-10)


def test_integrability_heisenberg(heis2):
    r = integrability_report(spec_from_geometry(heis2.geometry), K6, HQ)
    assert r.wnorm == 0.0 and r.alpha is None
    assert max(r.wkk_residual, r.ykk_residual, r.intcond_residual, r.ckf_residual) < 1e-12


def test_integrability_conformal_invariance(np_alpha):
    for spec in np_alpha.values():
        before = integrability_report(spec, K6, Q)
        after = integrability_report(RescaledMetric(spec, OMEGA), K6, Q)
        for name in ("wkk_residual", "ykk_residual", "intcond_residual", "ckf_residual"):
            assert abs(getattr(after, name) - getattr(before, name)) < 1e-6
        assert after.alpha == pytest.approx(before.alpha, abs=1e-6)
        assert after.rho_sc == pytest.approx(before.rho_sc, abs=1e-6)


def test_rho_sc_invariant_along_fibre_rescaling(np_alpha):
    # conformal factors varying along k change div k; the full-dimension normalization absorbs it
    before = integrability_report(np_alpha[1.0], K6, Q).rho_sc
    for text in ("exp(0.1*phi)", "exp(0.1*phi^2 + 0.3*u*y1)"):
        after = integrability_report(RescaledMetric(np_alpha[1.0], parse_expr(text)), K6, Q).rho_sc
        assert after == pytest.approx(before, abs=1e-12)


def test_order_budget(np_alpha):
    with pytest.raises(ValueError):
        integrability_report(np_alpha[1.0], K6, Q, order=2)


def test_petrov_conditions(np_alpha, heis2, einstein_entry):
    flat = petrov_conditions(spec_from_geometry(heis2.geometry), K6, HQ)
    assert max(flat.entries().values()) < 1e-12
    assert petrov_conditions(np_alpha[1.0], K6, Q).wkvkv < 1e-7
    for point in box_points(einstein_entry, 5, seed=4, extra=[einstein_entry.fibre_range]):
        p = petrov_conditions(einstein_entry.spec, K6, point)
        assert p.petrov_iia < 1e-6
        assert p.petrov_iiia < 1e-6
    assert petrov_conditions(np_alpha[2.0], K6, Q).petrov_iiia > 1e-3


def test_scale_residuals_heisenberg(heis2):
    sr = scale_residuals(spec_from_geometry(heis2.geometry), HQ)
    assert sr.einstein < 1e-6
    assert sr.Lambda_tilde == pytest.approx(0.0, abs=1e-10)


def test_scale_residuals_np_einstein(einstein_entry):
    for point in box_points(einstein_entry, 8, seed=5, extra=[einstein_entry.fibre_range]):
        sr = scale_residuals(einstein_entry.spec, point)
        assert sr.einstein < 1e-6
        assert max(sr.weakly_half_einstein, sr.half_einstein, sr.pure_radiation) < 1e-6
        assert np.max(np.abs(sr.Phi)) < 1e-6
        assert abs(sr.Lambda_tilde) < 1e-8


def test_wrong_profile(einstein_entry, heis2):
    point = (0.1, 1.2, 0.1, 0.05, -0.1, 0.4)
    drifted = cos_profile(0.0, parse_expr("exp(0.3*x1)"))
    assert scale_residuals(einstein_entry.spec, point, profile=drifted).einstein > 1e-3
    spec = heisenberg_einstein(heis2, 1.0)
    assert scale_residuals(spec, HQ).einstein < 1e-6
    assert scale_residuals(spec, HQ, profile=cos_profile(0.3)).einstein > 1e-3


def test_zero_set_rejected(einstein_entry):
    with pytest.raises(ZeroSetError):
        scale_residuals(einstein_entry.spec, (0.1, 1.2, 0.1, 0.05, -0.1, math.pi / 2 - 0.01))


def test_alpha_other_than_one_is_not_einstein(np_entry, einstein_entry):
    for alpha in (0.0, 2.0):
        assert scale_residuals(spec_from_geometry(np_entry.geometry, alpha=alpha), Q).einstein > 1e-3
        assert scale_residuals(einstein_entry.spec.with_alpha(alpha), Q).einstein > 1e-3


def test_lambda0_coefficients():
    assert all(v == 0 for v in lambda0_coefficients(2, 0.0, 0.0, 0.0).values())
    assert lambda0_closed_form(2, 0.0, 0.0, 0.0, 0.7) == 0
    co = lambda0_coefficients(2, 1.0, 0.0, 0.0)
    top = math.factorial(2) * math.factorial(3) / (2 * math.factorial(6)) * 5
    assert co[6] == pytest.approx(top, abs=1e-15)
    assert co[6] == pytest.approx(0.0416667, abs=1e-7)
    assert co[0] == pytest.approx(1 / 6, abs=1e-15)
    assert co[-4] == np.conj(co[4])


def test_lambda0_odes():
    rng = np.random.default_rng(7)
    grid = np.linspace(-1.4, 1.4, 41)
    for m in (1, 2, 3):
        for _ in range(4):
            lam, lam_t = rng.normal(size=2)
            mu = complex(*rng.normal(size=2))
            assert np.max(ode1_residual(m, lam, lam_t, mu, grid)) < 1e-8
            pure = complex(0.0, mu.imag)
            assert np.max(ode2_residual(m, lam, lam_t, pure, grid)) < 1e-9
            if abs(mu.real) > 0.1:
                assert np.max(ode2_residual(m, lam, lam_t, mu, grid)) > 1e-3


def test_zero_set_heisenberg(heis2):
    z = zero_set_diagnostics(spec_from_geometry(heis2.geometry), HQ[:-1])
    assert abs(z.det) < 1e-12 and z.causal_class == "null"
    assert z.weyl_norm < 1e-10


@pytest.mark.parametrize("lambda_tilde", [1.0, -1.0])
def test_zero_set_synthetic(heis2, lambda_tilde):
    z = zero_set_diagnostics(heisenberg_einstein(heis2, lambda_tilde), HQ[:-1])
    assert abs(z.det) == pytest.approx(0.8, abs=1e-10)
    # positive determinant for lambda_tilde > 0: the zero set is spacelike
    assert z.det == pytest.approx(0.8 * lambda_tilde, abs=1e-10)
    assert z.causal_class == ("spacelike" if lambda_tilde > 0 else "timelike")


def test_zero_set_np_einstein(einstein_entry):
    z = zero_set_diagnostics(einstein_entry.spec, (0.1, 1.2, 0.1, 0.05, -0.1))
    assert abs(z.det) < 1e-8 and z.causal_class == "null"
    assert z.weyl_norm > 0.01
