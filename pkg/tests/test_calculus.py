import numpy as np
import pytest

from carleman_lab.calculus import (DegeneratePointError, D_f_value, apply_L, apply_L0,
                                   check_lemma31, check_prop32, diff_objects,
                                   f_tilde_residual, geometry, sample_annulus_points)
from carleman_lab.params import LowerOrderTerms, ProblemParams, make_affine_field
from carleman_lab.testfunctions import make_bump
from carleman_lab.weight import WeightFunction

from conftest import AFFINE_G2, admissible_params, field_set, philox, smooth_field


def _params(field, rho=1.0):
    return admissible_params(field, rho)


def _flux_fd(field, u, X, h=1e-4):
    """-div(A grad u) by five-point differences of the flux A grad u."""
    out = np.zeros(X.shape[0], dtype=complex)
    for i in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[i] = h

        def flux(Y):
            return np.einsum("nj,nj->n", field.A(Y)[:, i, :], u.grad(Y))
        out -= (-flux(X + 2 * e) + 8 * flux(X + e) - 8 * flux(X - e)
                + flux(X - 2 * e)) / (12 * h)
    return out


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("name", ["identity", "affine_diag", "affine_full"])
def test_L0_against_flux_differences(d, name, rng):
    f = field_set(d)[name]
    u = make_bump(0.25, 0.75, "plane_wave", [3.0, -2.0, 1.0][:d])
    X = sample_annulus_points(rng, 40, d, 0.3, 0.7)
    ref = _flux_fd(f, u, X)
    assert np.max(np.abs(apply_L0(f, u, X) - ref)) < 1e-8 * np.max(np.abs(ref))


def test_apply_L_adds_lower_order_terms(rng):
    lo = LowerOrderTerms("rotating", 1.0, None, "cosine", 1.0)
    f = make_affine_field(np.eye(2), lower=lo)
    u = make_bump(0.3, 0.7, "cos", [1.0, 2.0])
    X = sample_annulus_points(rng, 20, 2, 0.35, 0.65)
    expected = (apply_L0(f, u, X) + np.einsum("ni,ni->n", lo.b(X), u.grad(X))
                + lo.c(X) * u.value(X))
    np.testing.assert_allclose(apply_L(f, u, X), expected, rtol=1e-15)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_laplacian_F_closed_forms(d, rng):
    f = make_affine_field(np.eye(d))
    mu = 1.3
    w = WeightFunction(f, 1.0, mu)
    X = sample_annulus_points(rng, 50, d)
    s = np.linalg.norm(X, axis=1)
    sig = geometry(f, w, X, "sigma")
    np.testing.assert_allclose(sig.F, d - 2, atol=1e-12)
    wg = geometry(f, w, X, "w")
    psi = np.exp(mu * s)
    np.testing.assert_allclose(wg.F, psi * (d - 2) - s * mu * psi, rtol=1e-12, atol=1e-12)
    assert np.max(np.abs(sig.M)) < 1e-13


@pytest.mark.parametrize("g", ["sigma", "w"])
@pytest.mark.parametrize("field", [make_affine_field(np.array([[1.5, 0.2], [0.2, 1.0]]),
                                                     np.array(AFFINE_G2) * 50),
                                   smooth_field(2)], ids=["affine", "smooth"])
def test_Dh_analytic_matches_richardson(field, g, rng):
    w = WeightFunction(field, 1.0, 2.0)
    X = sample_annulus_points(rng, 50, 2, 0.1, 0.9)
    a = geometry(field, w, X, g, "analytic")
    b = geometry(field, w, X, g, "fd")
    scale = np.max(np.abs(a.Dh), axis=(1, 2))[:, None, None]
    assert np.max(np.abs(a.Dh - b.Dh) / scale) < 1e-8


def test_degenerate_point_raises():
    f = make_affine_field(np.eye(2))
    w = WeightFunction(f, 1.0, 1.0)
    with pytest.raises(DegeneratePointError), np.errstate(all="ignore"):
        geometry(f, w, np.zeros((1, 2)))


def test_unknown_method():
    f = make_affine_field(np.eye(2))
    with pytest.raises(ValueError):
        geometry(f, WeightFunction(f, 1.0, 1.0), np.array([[0.5, 0.1]]), method="x")


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("name", ["identity", "affine_diag", "affine_offdiag", "affine_full"])
def test_lemma31(d, name):
    f = field_set(d)[name]
    w = WeightFunction(f, 1.0, _params(f).mu)
    X = sample_annulus_points(philox(31), 200, d)
    rep = check_lemma31(f, w, X)
    assert rep.passed, rep.residuals
    assert rep.symmetry_residual < 1e-12


def test_lemma31_detects_wrong_psi():
    f = field_set(2)["affine_full"]
    w = WeightFunction(f, 1.0, 3.0)
    X = sample_annulus_points(philox(31), 200, 2)
    rep = check_lemma31(f, w, X, psi_scale=1.01)
    assert not rep.passed
    assert "M_w" in rep.failures() and "F_w" in rep.failures()


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("name", ["identity", "affine_diag", "affine_offdiag", "affine_full"])
def test_prop32_zero_violations(d, name):
    f = field_set(d)[name]
    p = _params(f)
    rng = philox(32)
    X = sample_annulus_points(rng, 2000, d)
    rep = check_prop32(f, p, X, n_directions=16, rng=rng)
    assert rep.passed, rep.violations
    assert rep.worst_eigen_ratio <= 1.0


def test_prop32_with_radius():
    G = np.array(AFFINE_G2) * 10
    f = make_affine_field(np.eye(2), G, rho=2.0)
    p = _params(f, rho=2.0)
    X = sample_annulus_points(philox(5), 2000, 2)
    assert check_prop32(f, p, X, rng=philox(6)).passed


def test_prop32_understated_theta2_is_caught():
    # with theta2 claimed far below the field's Lipschitz constant the
    # F_sigma difference bound s C'_F is too small
    G = np.array([np.diag([0.3, 0.0]), np.diag([0.0, 0.3])])
    f = make_affine_field(np.eye(2), G)
    p = ProblemParams(2, 1.0, f.certified_theta1, 1e-4, 100.0)
    X = sample_annulus_points(philox(7), 2000, 2)
    rep = check_prop32(f, p, X, rng=philox(8))
    assert not rep.passed


def test_diff_objects_and_D_f(rng):
    f = field_set(2)["affine_offdiag"]
    w = WeightFunction(f, 1.0, 2.0)
    X = sample_annulus_points(rng, 30, 2, 0.3, 0.7)
    obj = diff_objects(f, w, X, "w")
    np.testing.assert_allclose(obj.B_sigma, obj.F_sigma - obj.F_sigma_0)
    u = make_bump(0.25, 0.75)
    geo = geometry(f, w, X, "w")
    expected = np.einsum("ni,ni->n", geo.h, u.grad(X)) + 0.5 * u.value(X) * geo.F
    np.testing.assert_allclose(D_f_value(f, w, u, X), expected, rtol=1e-12, atol=1e-300)


def test_f_tilde_decomposition(rng):
    f = field_set(3)["affine_full"]
    w = WeightFunction(f, 1.0, 2.0)
    X = sample_annulus_points(rng, 100, 3)
    grad = rng.standard_normal((100, 3))
    assert np.max(f_tilde_residual(f, w, X, grad)) < 1e-12
