import math

import numpy as np
import pytest

from carleman_lab.constants import carleman_constants
from carleman_lab.harness import (GridSpec, alpha_sweep, carleman_sides, check_conjugation_identity,
                                  check_green, check_lemma41, check_rellich, geometric_alphas,
                                  support_points, sweep_csv, sweep_rows)
from carleman_lab.params import LowerOrderTerms, ProblemParams, make_affine_field
from carleman_lab.quadrature import QuadratureError
from carleman_lab.testfunctions import make_bump
from carleman_lab.weight import WeightFunction

from conftest import AFFINE_G2, philox


def _setup(kind="laplace", d=2, lower=None):
    if kind == "laplace":
        f = make_affine_field(np.eye(d), lower=lower)
    else:
        f = make_affine_field(np.eye(2), np.array(AFFINE_G2), lower=lower)
    lo = lower or LowerOrderTerms()
    p = ProblemParams(d, 1.0, f.certified_theta1, f.certified_theta2, 1.0,
                      lo.b_inf, lo.c_inf)
    return f, p


RADIAL = make_bump(0.3, 0.7)
WAVE = make_bump(0.25, 0.75, "plane_wave", [3.0, -2.0])
POLY = make_bump(0.35, 0.8, "polynomial", [1.0, 0.5])


def test_zero_function_is_vacuous():
    f, p = _setup()
    s = carleman_sides(f, p, make_bump(0.3, 0.7, amplitude=0.0), 100.0)
    assert s.lhs_grad.mantissa == 0 and s.lhs_u.mantissa == 0 and s.rhs.mantissa == 0
    assert s.vacuous and s.ratio is None and s.passed


def test_theorem_at_alpha0_laplacian():
    f, p = _setup()
    a0 = carleman_constants(p).alpha0_used
    s = carleman_sides(f, p, RADIAL, a0)
    assert s.in_hypothesis and s.certified and s.passed
    assert s.ratio > 1
    for v in (s.lhs_grad, s.lhs_u, s.rhs):
        assert v.mantissa > 0


def test_complex_bump_at_alpha0():
    f, p = _setup()
    a0 = carleman_constants(p).alpha0_used
    s = carleman_sides(f, p, WAVE, a0, complex_arithmetic=True)
    assert s.certified and s.passed


def test_real_and_complex_pipelines_agree_bitwise():
    f, p = _setup("affine")
    a = carleman_sides(f, p, RADIAL, 50.0)
    b = carleman_sides(f, p, RADIAL, 50.0, complex_arithmetic=True)
    for x, y in ((a.lhs_grad, b.lhs_grad), (a.lhs_u, b.lhs_u), (a.rhs, b.rhs)):
        assert x.log_norm == y.log_norm and x.mantissa == y.mantissa


def test_complex_sides_are_sums_of_parts():
    f, p = _setup("affine")
    alpha = 50.0

    def vals(u, cplx):
        s = carleman_sides(f, p, u, alpha, complex_arithmetic=cplx)
        return [v.value() for v in (s.lhs_grad, s.lhs_u, s.rhs)]
    whole = vals(WAVE, True)
    re = vals(WAVE.real_part(), False)
    im = vals(WAVE.imag_part(), False)
    for w, r, i in zip(whole, re, im):
        assert w == pytest.approx(r + i, rel=1e-8)


def test_lhs_u_over_alpha_cubed_is_the_integral():
    f, p = _setup()
    for s in alpha_sweep(f, p, RADIAL, [20.0, 40.0, 80.0]):
        ratio = s.lhs_u.log_abs - s.log_integral_u.log_abs
        assert ratio == pytest.approx(3 * math.log(s.alpha), rel=1e-14)


def test_below_alpha0_no_claim():
    f, p = _setup()
    s = carleman_sides(f, p, RADIAL, 10.0)
    assert not s.in_hypothesis


def test_lower_order_terms_at_alpha0():
    lo = LowerOrderTerms("rotating", 1.0, None, "cosine", 1.0)
    f, p = _setup(lower=lo)
    rep = carleman_constants(p)
    s = carleman_sides(f, p, RADIAL, rep.alpha0_used)
    assert s.C == rep.C_final and s.passed and s.certified


def test_unconverged_grid_raises():
    f, p = _setup()
    with pytest.raises(QuadratureError):
        carleman_sides(f, p, RADIAL, 10.0, GridSpec(n_radial=4, n_angular=4),
                       tol=1e-15)


def test_support_outside_ball_rejected():
    f, p = _setup()
    with pytest.raises(ValueError):
        carleman_sides(f, p, make_bump(0.3, 1.2), 10.0)


def test_geometric_alphas():
    a = geometric_alphas(10.0, 8.0, 8)
    assert a[0] == 10.0 and a[-1] == pytest.approx(80.0)
    assert np.allclose(np.diff(np.log(a)), math.log(8) / 7)
    assert geometric_alphas(3.0, 8.0, 1) == [3.0]


def test_sweep_csv_columns():
    f, p = _setup()
    sides = alpha_sweep(f, p, RADIAL, [10.0, 20.0])
    text = sweep_csv(sides)
    header = text.splitlines()[0]
    assert header == "alpha,lhs_grad,lhs_u,rhs,ratio,log_scale"
    assert len(text.splitlines()) == 3
    row = sweep_rows(sides)[0]
    assert row["ratio"] == pytest.approx(row["rhs"] / (row["lhs_grad"] + row["lhs_u"]))


@pytest.mark.parametrize("kind", ["laplace", "affine"])
@pytest.mark.parametrize("u", [RADIAL, WAVE], ids=["real", "complex"])
def test_conjugation_identity(kind, u):
    f, p = _setup(kind)
    a0 = carleman_constants(p).alpha0_used
    X = support_points(u, 100, 2, philox(4))
    for alpha in (0.0, 10.0, a0):
        rep = check_conjugation_identity(f, p, u, alpha, X)
        assert rep.passed, (alpha, rep.max_residual)


@pytest.mark.parametrize("kind", ["laplace", "affine"])
def test_green(kind):
    f, _ = _setup(kind)
    for u, v in ((RADIAL, RADIAL), (RADIAL, POLY)):
        g = check_green(f, u, v)
        assert g.passed, (g.residual, g.max_change)


def test_green_zero():
    f, _ = _setup()
    g = check_green(f, RADIAL, make_bump(0.3, 0.7, amplitude=0.0))
    assert g.lhs == 0 and g.rhs == 0 and g.passed


@pytest.mark.parametrize("kind", ["laplace", "affine"])
def test_rellich(kind):
    f, p = _setup(kind)
    w = WeightFunction(f, 1.0, p.mu)
    for u in (RADIAL, POLY):
        r = check_rellich(f, w, u)
        assert r.passed, (r.residual, r.max_change)


def test_lemma41_zero_function():
    f, p = _setup()
    r = check_lemma41(f, p, make_bump(0.3, 0.7, amplitude=0.0), 10.0)
    assert r.I1 == 0 and r.rhs == 0 and r.passed


def test_lemma41_paths_agree_at_moderate_alpha():
    f, p = _setup("affine")
    r = check_lemma41(f, p, RADIAL, 10.0, path="both")
    assert r.passed
    assert r.T_F_alternative == pytest.approx(r.T_F, rel=1e-6, abs=1e-9 * abs(r.I1))
    # slack is the square integral plus 4 alpha^3 Z, and Z integrates to zero
    assert r.slack == pytest.approx(r.P, rel=1e-6)
    assert abs(4 * 10.0**3 * r.Z) < 1e-8 * abs(r.I1)


def test_lemma41_rejects_complex():
    f, p = _setup()
    with pytest.raises(ValueError, match="real"):
        check_lemma41(f, p, WAVE, 10.0)
