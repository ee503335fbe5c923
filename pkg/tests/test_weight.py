import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from carleman_lab.params import make_affine_field, uniform_ball
from carleman_lab.weight import (WeightFunction, check_sandwich, ein, log_phi, mu1,
                                 phi, phi_prime, phi_second, psi)

from conftest import philox


def phi_by_quadrature(r, mu):
    val, _ = quad(lambda t: -np.expm1(-mu * t) / t, 0.0, r, epsabs=0, epsrel=1e-13,
                  limit=200)
    return r * np.exp(-val)


@pytest.mark.parametrize("mu", [0.3, 1.0, 2.0, 12.0])
@pytest.mark.parametrize("r", [1e-6, 0.1, 0.49, 0.5, 0.51, 1.0, 1.7])
def test_phi_matches_quadrature(r, mu):
    assert phi(r, mu) == pytest.approx(phi_by_quadrature(r, mu), rel=1e-13)


def test_ein_branches_meet():
    from scipy.special import exp1
    closed = exp1(0.5) + np.log(0.5) + np.euler_gamma
    assert ein(0.5) == pytest.approx(closed, rel=1e-15)
    # slope at the switch is (1 - e^{-1/2}) / (1/2)
    step = ein(0.5 + 1e-9) - ein(0.5)
    assert step == pytest.approx(2 * -np.expm1(-0.5) * 1e-9, rel=1e-5)


def test_phi_prime_and_second_by_differences():
    r = np.linspace(0.05, 1.5, 30)
    h = 1e-5
    for mu in (0.3, 1.0, 4.0):
        fd1 = (phi(r + h, mu) - phi(r - h, mu)) / (2 * h)
        fd2 = (phi_prime(r + h, mu) - phi_prime(r - h, mu)) / (2 * h)
        np.testing.assert_allclose(phi_prime(r, mu), fd1, rtol=1e-7)
        np.testing.assert_allclose(phi_second(r, mu), fd2, rtol=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 2.0), st.floats(0.01, 20.0))
def test_psi_is_phi_over_r_phi_prime(r, mu):
    assert phi(r, mu) / (r * phi_prime(r, mu)) == pytest.approx(psi(r, mu), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 2.0), st.floats(0.01, 20.0))
def test_log_phi_consistent(r, mu):
    assert log_phi(r, mu) == pytest.approx(np.log(phi(r, mu)), rel=1e-13, abs=1e-13)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 4.0), st.floats(0.05, 5.0), st.floats(0.0, 1.0))
def test_phi_bounds_on_sqrt_theta1(theta1, mu, t):
    r = t * np.sqrt(theta1)
    assert phi(r, mu) <= r
    assert phi(r, mu) >= r / mu1(theta1, mu) * (1 - 1e-14)


def test_mu1_cases():
    assert mu1(1.0, 0.5) == pytest.approx(np.exp(0.5))
    assert mu1(4.0, 1.0) == pytest.approx(np.e * 2.0)


def test_sigma_is_norm_for_identity(rng):
    w = WeightFunction(make_affine_field(np.eye(3)), 2.0, 1.0)
    X = uniform_ball(rng, 100, 3, 2.0)
    np.testing.assert_allclose(w.s(X), np.linalg.norm(X / 2.0, axis=1), rtol=1e-15)


def test_sigma_uses_inverse_A0(rng):
    A0 = np.array([[2.0, 0.3], [0.3, 1.0]])
    w = WeightFunction(make_affine_field(A0), 1.0, 1.0)
    X = uniform_ball(rng, 50, 2, 1.0)
    expected = np.sqrt(np.einsum("ni,ij,nj->n", X, np.linalg.inv(A0), X))
    np.testing.assert_allclose(w.sigma(X), expected, rtol=1e-14)


@pytest.mark.parametrize("A0", [np.eye(2), np.array([[2.0, 0.3], [0.3, 1.0]])])
def test_weight_derivatives_by_differences(A0, rng):
    w = WeightFunction(make_affine_field(A0), 1.3, 2.0)
    X = uniform_ball(rng, 40, 2, 1.3, 0.1, 0.9)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        np.testing.assert_allclose((w.w(X + e) - w.w(X - e)) / (2 * h),
                                   w.grad_w(X)[:, k], rtol=1e-7, atol=1e-10)
        np.testing.assert_allclose((w.grad_w(X + e) - w.grad_w(X - e)) / (2 * h),
                                   w.hess_w(X)[:, k], rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(
            (w.log_w(X + e) - w.log_w(X - e)) / (2 * h), w.grad_log_w(X)[:, k],
            rtol=1e-7, atol=1e-9)


def test_hess_log_w_consistent(rng):
    w = WeightFunction(make_affine_field(np.array([[2.0, 0.3], [0.3, 1.0]])), 1.0, 1.5)
    X = uniform_ball(rng, 30, 2, 1.0, 0.1, 0.9)
    g = w.grad_w(X) / w.w(X)[:, None]
    expected = w.hess_w(X) / w.w(X)[:, None, None] - np.einsum("ni,nj->nij", g, g)
    np.testing.assert_allclose(w.hess_log_w(X), expected, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("theta1", [1.0, 2.0, 4.0])
@pytest.mark.parametrize("mu", [0.3, 1.0, 2.0])
def test_sandwich_zero_violations(theta1, mu):
    A0 = np.diag([theta1, 1.0])
    w = WeightFunction(make_affine_field(A0), 1.0, mu)
    rep = check_sandwich(w, 10000, theta1, rng=philox(7))
    assert rep.passed, rep.failures


def test_sandwich_detects_tightened_lower_bound():
    # mu1 is attained near |x| = sqrt(theta1) only when sqrt(theta1) mu <= 1
    w = WeightFunction(make_affine_field(np.eye(2)), 1.0, 2.0)
    rep = check_sandwich(w, 10000, 1.0, mu1_scale=0.5, rng=philox(7))
    assert not rep.passed
