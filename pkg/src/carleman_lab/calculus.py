"""Differential objects of the weighted calculus and their pointwise checks.

For ``g`` in ``{sigma, w}`` with ``q = grad g^T A grad g``:

* ``F_g = -g L0 g / q - 1``
* ``h_g = g A grad g / q``
* ``M_g = -F_g A / 2 + div(h_g o A) / 2 - (A Dh + (A Dh)^T) / 2``

where ``L0 u = -div(A grad u)``, ``Dh[i, j] = d_i (h_g)_j`` and
``div(h_g o A)`` is the entrywise divergence of ``(h_g)_k a^{ij}``.
All functions are vectorised over points ``X`` of shape ``(N, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constants import prop_constants
from .weight import WeightFunction

DEGENERATE_Q = 1e-14
FD_STEP = 1e-6
ROUNDING_ULPS = 64  # allowance for exact-zero bounds, in units of eps * term scale


class DegeneratePointError(ValueError):
    """``grad sigma^T A grad sigma`` vanishes (only at the origin)."""


def flux_divergence(A, dA, grad, hess):
    """``-div(A grad u)`` from ``grad u`` and ``Hess u`` (complex allowed)."""
    return (-np.einsum("niij,nj->n", dA, grad)
            - np.einsum("nij,nij->n", A, hess))


def apply_L0(field, u, X):
    """``L0 u = -div(A grad u)`` at the points ``X``."""
    X = np.atleast_2d(np.asarray(X, float))
    return flux_divergence(field.A(X), field.dA(X), u.grad(X), u.hess(X))


def apply_L(field, u, X):
    """``L u = L0 u + b^T grad u + c u``."""
    X = np.atleast_2d(np.asarray(X, float))
    return (apply_L0(field, u, X) + np.einsum("ni,ni->n", field.b(X), u.grad(X))
            + field.c(X) * u.value(X))


def apply_L_jet(field, X, jet, lower=True):
    """``L`` applied to a log-scaled jet; returns the mantissa (same scale)."""
    out = flux_divergence(field.A(X), field.dA(X), jet.grad, jet.hess)
    if lower:
        out = out + np.einsum("ni,ni->n", field.b(X), jet.grad) + field.c(X) * jet.value
    return out


class _ConstantView:
    """The frozen field ``A = A0`` (used for ``F_sigma^{A0}``, ``M_sigma^{A0}``)."""

    def __init__(self, A0):
        self.A0 = A0
        self.d = A0.shape[0]

    def A(self, X):
        return np.broadcast_to(self.A0, (X.shape[0],) + self.A0.shape)

    def dA(self, X):
        d = self.d
        return np.zeros((X.shape[0], d, d, d))


def g_jet(weight: WeightFunction, X, g: str):
    """Value, gradient and Hessian of ``g`` (``sigma`` means ``sigma(x / rho)``)."""
    if g == "sigma":
        r = weight.rho
        return weight.s(X), weight.grad_sigma(X) / r, weight.hess_sigma(X) / r
    if g == "w":
        return weight.w(X), weight.grad_w(X), weight.hess_w(X)
    raise ValueError(f"g must be 'sigma' or 'w', got {g!r}")


@dataclass
class Geometry:
    """Objects attached to one ``g`` and one field at each point."""

    g: np.ndarray
    grad: np.ndarray
    q: np.ndarray
    F: np.ndarray
    h: np.ndarray
    Dh: np.ndarray
    div_hA: np.ndarray
    M: np.ndarray
    B: np.ndarray        # div(h o A) - A Dh - Dh^T A
    L0g: np.ndarray
    M_scale: np.ndarray  # largest Frobenius norm among the terms of M


def _h_of(field, X, g, G):
    A = field.A(X)
    v = np.einsum("nij,nj->ni", A, G)
    q = np.einsum("ni,ni->n", G, v)
    return g[:, None] * v / q[:, None]


def richardson_jacobian(fun, X, step):
    """``J[n, i, j] = d_i fun_j`` by two-level Richardson-extrapolated central
    differences (error ``O(step^4)``)."""
    n, d = X.shape

    def central(hh):
        cols = []
        for i in range(d):
            e = np.zeros(d)
            e[i] = hh
            cols.append((fun(X + e) - fun(X - e)) / (2 * hh))
        return np.stack(cols, axis=1)

    D1 = central(step)
    D2 = central(step / 2)
    return (4 * D2 - D1) / 3


def geometry(field, weight: WeightFunction, X, g: str = "sigma",
             method: str = "analytic") -> Geometry:
    """Evaluate ``F_g, h_g, D h_g, M_g`` and the Rellich matrix at ``X``.

    Raises
    ------
    DegeneratePointError
        If ``grad sigma^T A grad sigma < 1e-14`` at some point.
    """
    X = np.atleast_2d(np.asarray(X, float))
    gv, G, H = g_jet(weight, X, g)
    A = field.A(X)
    dA = field.dA(X)
    v = np.einsum("nij,nj->ni", A, G)
    q = np.einsum("ni,ni->n", G, v)
    # grad w = phi'(s) grad s, and phi'(s) is tiny for large mu s without
    # anything being degenerate, so the test is made on the sigma factor
    Gs = G if g == "sigma" else g_jet(weight, X, "sigma")[1]
    qs = np.einsum("ni,nij,nj->n", Gs, A, Gs)
    bad = ~(qs >= DEGENERATE_Q)
    if np.any(bad):
        raise DegeneratePointError(
            f"grad sigma^T A grad sigma < {DEGENERATE_Q:g} at {int(bad.sum())} point(s)")
    L0g = flux_divergence(A, dA, G, H)
    F = -gv * L0g / q - 1.0
    h = gv[:, None] * v / q[:, None]
    if method == "analytic":
        AH = np.einsum("nij,njk->nik", A, H)
        dv = np.einsum("nijl,nl->nij", dA, G) + np.swapaxes(AH, 1, 2)  # d_i v_j
        dq = 2 * np.einsum("nij,nj->ni", H, v) + np.einsum("ni,nkij,nj->nk", G, dA, G)
        Dh = (G[:, :, None] * v[:, None, :] / q[:, None, None]
              + gv[:, None, None] * dv / q[:, None, None]
              - (gv / q**2)[:, None, None] * dq[:, :, None] * v[:, None, :])
    elif method == "fd":
        def hfun(Y):
            gy, Gy, _ = g_jet(weight, Y, g)
            return _h_of(field, Y, gy, Gy)
        Dh = richardson_jacobian(hfun, X, FD_STEP * weight.rho)
    else:
        raise ValueError(f"method must be 'analytic' or 'fd', got {method!r}")
    trDh = np.einsum("nii->n", Dh)
    div_hA = trDh[:, None, None] * A + np.einsum("nk,nkij->nij", h, dA)
    ADh = np.einsum("nik,nkj->nij", A, Dh)
    sym = ADh + np.swapaxes(ADh, 1, 2)
    M = -0.5 * F[:, None, None] * A + 0.5 * div_hA - 0.5 * sym
    B = div_hA - sym
    scale = np.max(np.stack([
        0.5 * np.abs(F) * np.linalg.norm(A, axis=(1, 2)),
        0.5 * np.linalg.norm(div_hA, axis=(1, 2)),
        np.linalg.norm(ADh, axis=(1, 2))]), axis=0)
    return Geometry(gv, G, q, F, h, Dh, div_hA, M, B, L0g, scale)


@dataclass
class DiffObjects:
    """Pointwise objects at ``X``; ``h_g``, ``Dh_g`` and ``M_g`` belong to the
    requested ``g``."""

    F_sigma: np.ndarray
    F_sigma_0: np.ndarray
    F_w: np.ndarray
    h_g: np.ndarray
    Dh_g: np.ndarray
    M_g: np.ndarray
    B_sigma: np.ndarray      # F_sigma^A - F_sigma^{A0}
    L0_psi_sigma: np.ndarray
    g: str = "sigma"


def L0_psi_sigma(field, weight: WeightFunction, X):
    """``L0`` applied to ``psi(sigma(x / rho)) = exp(mu sigma(x / rho))``."""
    s, G, H = g_jet(weight, X, "sigma")
    mu = weight.mu
    p = np.exp(mu * s)
    grad = (mu * p)[:, None] * G
    hess = (mu * p)[:, None, None] * (H + mu * np.einsum("ni,nj->nij", G, G))
    return flux_divergence(field.A(X), field.dA(X), grad, hess)


def diff_objects(field, weight: WeightFunction, X, g: str = "sigma",
                 method: str = "analytic") -> DiffObjects:
    X = np.atleast_2d(np.asarray(X, float))
    sig = geometry(field, weight, X, "sigma", method)
    sig0 = geometry(_ConstantView(field.A0), weight, X, "sigma", method)
    wg = geometry(field, weight, X, "w", method)
    chosen = sig if g == "sigma" else wg
    return DiffObjects(sig.F, sig0.F, wg.F, chosen.h, chosen.Dh, chosen.M,
                       sig.F - sig0.F, L0_psi_sigma(field, weight, X), g)


def D_f_value(field, weight: WeightFunction, f, X):
    """``D_f = w grad f^T A grad w / (grad w^T A grad w) + f F_w / 2``."""
    X = np.atleast_2d(np.asarray(X, float))
    wg = geometry(field, weight, X, "w")
    Agw = np.einsum("nij,nj->ni", field.A(X), wg.grad)
    return wg.g * np.einsum("ni,ni->n", f.grad(X), Agw) / wg.q + 0.5 * f.value(X) * wg.F


def tilde_grad(field, weight: WeightFunction, X, grad_f):
    """``grad f - grad w grad w^T A grad f / (grad w^T A grad w)``."""
    _, G, _ = g_jet(weight, X, "sigma")
    A = field.A(X)
    AG = np.einsum("nij,nj->ni", A, G)
    q = np.einsum("ni,ni->n", G, AG)
    coef = np.einsum("ni,ni->n", AG, grad_f) / q
    return grad_f - coef[:, None] * G


def f_tilde_residual(field, weight: WeightFunction, X, grad_f):
    """Relative residual of ``grad f^T A grad f = tilde^T A tilde + (grad w^T A grad f)^2 / q_w``."""
    X = np.atleast_2d(np.asarray(X, float))
    A = field.A(X)
    tg = tilde_grad(field, weight, X, grad_f)
    gw = weight.grad_w(X)
    Agw = np.einsum("nij,nj->ni", A, gw)
    lhs = np.einsum("ni,nij,nj->n", grad_f, A, grad_f)
    t1 = np.einsum("ni,nij,nj->n", tg, A, tg)
    t2 = np.einsum("ni,ni->n", Agw, grad_f) ** 2 / np.einsum("ni,ni->n", gw, Agw)
    scale = np.maximum(np.abs(lhs), np.maximum(np.abs(t1), np.abs(t2)))
    return np.abs(lhs - t1 - t2) / np.where(scale > 0, scale, 1.0)


# ---------------------------------------------------------------- reports


@dataclass
class IdentityReport:
    """Worst relative residual of each identity; passes below ``tolerance``."""

    residuals: dict
    tolerance: float
    n_points: int
    symmetry_residual: float = 0.0

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    @property
    def passed(self) -> bool:
        return self.max_residual < self.tolerance

    def failures(self) -> list:
        return [k for k, v in self.residuals.items() if not v < self.tolerance]


def _fro(M):
    return np.linalg.norm(M, axis=(1, 2))


def check_lemma31(field, weight: WeightFunction, X, tolerance: float = 1e-7,
                  psi_scale: float = 1.0) -> IdentityReport:
    """Residuals of the five pointwise relations between the ``sigma`` and
    ``w`` objects.

    ``psi_scale`` multiplies ``psi`` and ``psi'`` (fault injection).
    """
    X = np.atleast_2d(np.asarray(X, float))
    sig = geometry(field, weight, X, "sigma")
    sig0 = geometry(_ConstantView(field.A0), weight, X, "sigma")
    wg = geometry(field, weight, X, "w")
    A = field.A(X)
    s = sig.g
    mu = weight.mu
    p = psi_scale * np.exp(mu * s)
    sp = s * mu * p
    G = sig.grad
    AG = np.einsum("nij,nj->ni", A, G)
    proj = A - np.einsum("ni,nj->nij", AG, AG) / sig.q[:, None, None]
    t1 = p[:, None, None] * sig.M
    t2 = sp[:, None, None] * proj
    r_Mw = _fro(wg.M - t1 - t2) / np.max(np.stack([wg.M_scale, _fro(t1), _fro(t2)]), axis=0)
    r_M0 = _fro(sig0.M) / sig0.M_scale
    Gn = np.linalg.norm(G, axis=1)
    r_MG = np.linalg.norm(np.einsum("nij,nj->ni", sig.M, G), axis=1) / (sig.M_scale * Gn)
    r_Fw = np.abs(wg.F - (p * sig.F - sp)) / np.max(
        np.stack([np.abs(wg.F), np.abs(p * sig.F), np.abs(sp)]), axis=0)
    d = X.shape[1]
    r_F0 = np.abs(sig0.F - (d - 2)) / np.maximum(1.0, np.abs(sig0.F + 1.0))
    sym = max(float(np.max(_fro(M - np.swapaxes(M, 1, 2)) / sc))
              for M, sc in ((sig.M, sig.M_scale), (wg.M, wg.M_scale)))
    res = {"M_w": float(r_Mw.max()), "M_sigma_A0": float(r_M0.max()),
           "M_sigma_grad_sigma": float(r_MG.max()), "F_w": float(r_Fw.max()),
           "F_sigma_A0": float(r_F0.max())}
    return IdentityReport(res, tolerance, X.shape[0], sym)


@dataclass
class BoundReport:
    """Worst slack ``bound - |value|`` per inequality and the violation count."""

    worst_slack: dict
    violations: dict
    constants: dict
    n_points: int
    n_directions: int
    allowance: float
    worst_eigen_ratio: float = 0.0   # max |lambda(M_sigma, A)| / (sigma C_M)

    @property
    def passed(self) -> bool:
        return not any(self.violations.values())


def check_prop32(field, params, X, xis: Optional[np.ndarray] = None,
                 n_directions: int = 16, rng: Optional[np.random.Generator] = None,
                 eigen: bool = True) -> BoundReport:
    """Check the four quantitative bounds at unit-ball points ``X``.

    The field is rescaled to ``x -> A(rho x)`` and the constants are taken at
    ``(d, theta1, rho theta2, mu)``.  ``xis`` has shape ``(N, K, d)``; if
    omitted, ``n_directions`` unit vectors per point are drawn from ``rng``.
    A bound that is exactly zero is judged with an allowance of
    ``64 eps`` times the scale of the computed terms.
    """
    X = np.atleast_2d(np.asarray(X, float))
    n, d = X.shape
    unit = field.scaled(params.rho) if params.rho != 1.0 else field
    weight = WeightFunction(unit, 1.0, params.mu)
    consts = prop_constants(d, params.theta1, params.rho * params.theta2, params.mu)
    if xis is None:
        rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
        xis = rng.standard_normal((n, n_directions, d))
        xis /= np.linalg.norm(xis, axis=2, keepdims=True)
    sig = geometry(unit, weight, X, "sigma")
    sig0 = geometry(_ConstantView(unit.A0), weight, X, "sigma")
    wg = geometry(unit, weight, X, "w")
    A = unit.A(X)
    s = sig.g
    eps = np.finfo(float).eps
    tol = ROUNDING_ULPS * eps

    slack, viol = {}, {}

    def judge(name, value, bound, scale):
        sl = bound - np.abs(value)
        slack[name] = float(sl.min())
        viol[name] = int(np.count_nonzero(sl < -tol * scale))

    judge("F_sigma_difference", sig.F - sig0.F, s * consts["C_F_prime"],
          np.maximum(np.abs(sig.F), np.abs(sig0.F)) + 1.0)
    quad_M = np.einsum("nki,nij,nkj->nk", xis, sig.M, xis)
    quad_A = np.einsum("nki,nij,nkj->nk", xis, A, xis)
    judge("xi_M_sigma_xi", quad_M, s[:, None] * consts["C_M"] * quad_A,
          sig.M_scale[:, None] * np.ones_like(quad_A))
    judge("F_w", wg.F, np.full(n, consts["C_F"]), np.abs(wg.F) + 1.0)
    L0p = L0_psi_sigma(unit, weight, X)
    judge("L0_psi_sigma", L0p, consts["C_psi"] / s, np.abs(L0p) + 1.0)
    worst_eig = 0.0
    if eigen:
        # generalised eigenvalues of (M, A): extremal directions of the quotient
        Linv = np.linalg.inv(np.linalg.cholesky(A))
        S = Linv @ sig.M @ np.swapaxes(Linv, 1, 2)
        lam = np.abs(np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, 1, 2)))).max(axis=1)
        judge("eigen_M_sigma", lam, s * consts["C_M"], sig.M_scale)
        if consts["C_M"] > 0:
            worst_eig = float(np.max(lam / (s * consts["C_M"])))
    return BoundReport(slack, viol, consts, n, xis.shape[1], tol, worst_eig)


def sample_annulus_points(rng: np.random.Generator, n: int, d: int,
                          r_min: float = 0.05, r_max: float = 0.95):
    """Uniform points with ``r_min <= |x| <= r_max`` in the unit ball."""
    from .params import uniform_ball
    return uniform_ball(rng, n, d, 1.0, r_min, r_max)
