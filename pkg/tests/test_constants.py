import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from mpmath import mp, mpf, sqrt as msqrt

from carleman_lab.constants import (InadmissibleMuError, carleman_constants, epsilon1,
                                    prop_constants, remark_upper_bounds, unit_chain,
                                    unit_chain_enclosure)
from carleman_lab.params import ProblemParams

# Laplacian, mu = 1: mu1 = e, C_F = e (1 + |d - 2|), C_psi = d e, C_mu = 1,
# K = max(d^2 e, 6 e^2), hence C~ = 2 e^4 (K / 2 + e^4) = 6 e^6 + 2 e^8.
LAPLACE_C = 8382.4887350398672851
LAPLACE_ALPHA0 = {1: 1467224.6207195941446, 2: 1467219.1475854229157,
                  3: 1467224.6207195941446}


def laplace_oracle(d):
    """Hand-reduced constant chain for A = I, mu = 1 in 40-digit arithmetic."""
    mp.dps = 40
    e = mp.e
    K = max(d * d * e, 6 * e**2)
    t1 = K * e**4 / 8
    a1 = K * e**4
    p = e**-4
    CF = e * (1 + abs(d - 2))
    q = CF * e**-4 + K * (t1 + mpf(1) / 2)
    r = K * (1 + CF**2 / 2)
    a2 = q / p + msqrt(q**2 / p**2 + 2 * r / p)
    return (K / 2 + e**4) / (p / 2), max(a1, a2)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_laplacian_constants_match_oracle(d):
    rep = carleman_constants(ProblemParams(d, 1.0, 1.0, 0.0, 1.0))
    C, a0 = laplace_oracle(d)
    assert rep.tildeC == pytest.approx(float(C), rel=1e-14)
    assert rep.tilde_alpha0 == pytest.approx(float(a0), rel=1e-14)
    assert rep.tildeC == pytest.approx(LAPLACE_C, rel=1e-14)
    assert rep.tilde_alpha0 == pytest.approx(LAPLACE_ALPHA0[d], rel=1e-14)
    assert rep.tildeC == pytest.approx(6 * math.e**6 + 2 * math.e**8, rel=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_laplacian_remark_bounds(d):
    rep = carleman_constants(ProblemParams(d, 1.0, 1.0, 0.0, 1.0))
    assert rep.hatC <= 8 * math.e**8 * d**2
    assert rep.hat_alpha0 <= 18 * math.e**12 * d**4


def test_prop_constants_laplacian():
    c = prop_constants(3, 1.0, 0.0, 1.0)
    assert c["C_F_prime"] == 0 and c["C_M"] == 0
    assert c["C_F"] == pytest.approx(2 * math.e)
    assert c["C_psi"] == pytest.approx(3 * math.e)
    assert c["C_mu"] == 1.0


def test_prop_constants_general():
    d, t1, t2, mu = 2, 2.0, 0.01, 3.0
    c = prop_constants(d, t1, t2, mu)
    s = math.sqrt(t1)
    cfp = 3 * d * t1**3 * s * t2
    assert c["C_F_prime"] == pytest.approx(cfp)
    assert c["C_M"] == pytest.approx(11 * d * t1**5 * s * t2)
    assert c["C_F"] == pytest.approx(math.exp(mu * s) * (s * (cfp + mu) + abs(d - 2)))
    assert c["C_mu"] == pytest.approx(mu - 33 * d * t1**5 * s * t2)


def test_inadmissible_raises_with_margin():
    p = ProblemParams(2, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(InadmissibleMuError, match="margin"):
        carleman_constants(p)
    rep = carleman_constants(p, strict=False)
    assert rep.hatC is None and rep.admissibility_margin < 0


def test_lower_order_terms_final_constants():
    p = ProblemParams(2, 1.0, 1.0, 0.0, 1.0, b_inf=1.0, c_inf=1.0)
    rep = carleman_constants(p)
    assert rep.C_final == 6 * rep.tildeC
    assert rep.C_used == rep.C_final
    assert rep.alpha0_final == pytest.approx(max(rep.tilde_alpha0, rep.C_final,
                                                 rep.C_final ** (1 / 3)))
    plain = carleman_constants(ProblemParams(2, 1.0, 1.0, 0.0, 1.0))
    assert plain.C_used == plain.tildeC


def test_radius_enters_through_rho_theta2():
    a = carleman_constants(ProblemParams(2, rho=2.0, theta1=1.0, theta2=1e-3, mu=2.0))
    b = carleman_constants(ProblemParams(2, rho=1.0, theta1=1.0, theta2=2e-3, mu=2.0))
    assert a.tildeC == b.tildeC and a.tilde_alpha0 == b.tilde_alpha0


def _admissible(d, th1, frac, mu, rho):
    th2 = frac * mu / (33 * d * th1**5.5 * rho)
    return ProblemParams(d, rho, th1, th2, mu)


params_strategy = st.builds(_admissible, st.integers(1, 3), st.floats(1.0, 4.0),
                            st.floats(0.0, 0.99), st.floats(0.1, 5.0),
                            st.floats(0.2, 3.0))


@settings(max_examples=100, deadline=None)
@given(params_strategy)
def test_remark_upper_bounds_hold(p):
    rep = carleman_constants(p)
    ub = remark_upper_bounds(p)
    assert rep.tildeC <= ub["tildeC_upper"]
    assert rep.tilde_alpha0 <= ub["tilde_alpha0_upper"]


@settings(max_examples=100, deadline=None)
@given(params_strategy)
def test_alpha_order_and_K_estimate(p):
    rep = carleman_constants(p)
    assert rep.alpha1 <= rep.alpha2
    assert rep.K <= rep.K_estimate


@settings(max_examples=50, deadline=None)
@given(params_strategy)
def test_alpha2_is_where_K2_dominates_K5(p):
    # alpha2 is the largest root of K2(a) - K5 a^3 = (p / 2) a^3 - q a^2 - r a
    rep = carleman_constants(p)
    a2 = rep.alpha2
    scale = rep.p * a2**3
    assert abs(rep.K2(a2) - rep.K5 * a2**3) <= 1e-9 * scale
    assert rep.K2(1.5 * a2) > rep.K5 * (1.5 * a2) ** 3
    assert rep.K2(0.5 * a2) < rep.K5 * (0.5 * a2) ** 3


@settings(max_examples=30, deadline=None)
@given(params_strategy)
def test_interval_enclosure_contains_float_chain(p):
    fl = unit_chain(p.d, p.theta1, p.rho * p.theta2, p.mu)
    iv = unit_chain_enclosure(p.d, p.theta1, p.rho * p.theta2, p.mu)
    for key in ("hatC", "hat_alpha0", "K", "alpha1", "alpha2"):
        lo, hi = float(iv[key].a), float(iv[key].b)
        x = fl[key]
        assert lo * (1 - 1e-13) <= x <= hi * (1 + 1e-13), key
        assert (hi - lo) <= 1e-20 * abs(x) + 1e-300


def test_epsilon1():
    assert epsilon1(2, 1.0, 0.0) == 1.0
    d, t1, t2 = 3, 1.5, 1e-4
    expected = 1 - 33 * d * (math.sqrt(d) + 2) * t1**5.5 * (math.e * t1**1.5 + 1) * t2
    assert epsilon1(d, t1, t2) == pytest.approx(expected)


def test_report_record_and_text():
    rep = carleman_constants(ProblemParams(2, 1.0, 1.0, 0.0, 1.0))
    rec = rep.record()
    assert rec["param_d"] == 2 and rec["C_used"] == rep.tildeC
    assert "tildeC" in rep.text()
