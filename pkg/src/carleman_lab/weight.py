"""The Carleman weight ``w(x) = phi(sigma(x / rho))`` and its pieces.

``phi(r) = r * exp(-Ein(mu r))`` with the entire exponential integral
``Ein(z) = int_0^z (1 - e^{-t}) / t dt``.  Everything that may under- or
overflow for large exponents is also available in log form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import exp1

EULER_GAMMA = 0.57721566490153286061
_SERIES_CUTOFF = 0.5
_SERIES_TERMS = 30  # 0.5^30 / (30 * 30!) is far below 1e-16


def ein(z):
    """``Ein(z) = int_0^z (1 - e^{-t}) / t dt`` for ``z >= 0``.

    Alternating series below ``z = 1/2``; above, the closed form
    ``E1(z) + log z + gamma`` has no cancellation left to speak of.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("Ein is only evaluated for z >= 0")
    out = np.empty_like(z)
    small = z <= _SERIES_CUTOFF
    zs = z[small]
    term = np.ones_like(zs)
    acc = np.zeros_like(zs)
    for k in range(1, _SERIES_TERMS + 1):
        term = term * zs / k            # z^k / k!
        acc += (-1) ** (k + 1) * term / k
    out[small] = acc
    zl = z[~small]
    out[~small] = exp1(zl) + np.log(zl) + EULER_GAMMA
    return out if out.ndim else float(out)


def phi(r, mu: float):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("phi is defined for r >= 0")
    return r * np.exp(-ein(mu * r))


def log_phi(r, mu: float):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(r) - ein(mu * r)


def phi_prime(r, mu: float):
    """``phi'(r) = phi(r) e^{-mu r} / r``, written without the division so the
    limit ``phi'(0) = 1`` is exact."""
    r = np.asarray(r, dtype=float)
    return np.exp(-ein(mu * r) - mu * r)


def phi_second(r, mu: float):
    """``phi''(r) = phi'(r) * (e^{-mu r} - 1 - mu r) / r``."""
    r = np.asarray(r, dtype=float)
    return phi_prime(r, mu) * (np.expm1(-mu * r) - mu * r) / r


def psi(r, mu: float):
    return np.exp(mu * np.asarray(r, dtype=float))


def psi_prime(r, mu: float):
    return mu * np.exp(mu * np.asarray(r, dtype=float))


def mu1(theta1: float, mu: float) -> float:
    """Lower-bound factor: ``phi(r) >= r / mu1`` on ``[0, sqrt(theta1)]``."""
    s = np.sqrt(theta1) * mu
    return float(np.exp(s)) if s <= 1 else float(np.e * s)


class WeightFunction:
    """``w_{rho,mu}`` bound to a coefficient field (which supplies ``A0``).

    Point arguments are ``(N, d)`` arrays; a single point may be passed as a
    1-d array.
    """

    def __init__(self, field, rho: float, mu: float):
        self.field = field
        self.rho = float(rho)
        self.mu = float(mu)
        self.A0_inv = np.linalg.inv(field.A0)
        self.d = field.A0.shape[0]

    def _pts(self, X):
        return np.atleast_2d(np.asarray(X, dtype=float))

    def sigma(self, X):
        X = self._pts(X)
        return np.sqrt(np.einsum("ni,ij,nj->n", X, self.A0_inv, X))

    def s(self, X):
        """Scaled radius ``sigma(x / rho) = sigma(x) / rho``."""
        return self.sigma(X) / self.rho

    def w(self, X):
        return phi(self.s(X), self.mu)

    def log_w(self, X):
        return log_phi(self.s(X), self.mu)

    def grad_sigma(self, X):
        X = self._pts(X)
        y = X @ self.A0_inv
        return y / self.sigma(X)[:, None]

    def hess_sigma(self, X):
        X = self._pts(X)
        y = X @ self.A0_inv
        sg = self.sigma(X)
        return (self.A0_inv[None] / sg[:, None, None]
                - np.einsum("ni,nj->nij", y, y) / sg[:, None, None] ** 3)

    def grad_w(self, X):
        s = self.s(X)
        return (phi_prime(s, self.mu) / self.rho)[:, None] * self.grad_sigma(X)

    def hess_w(self, X):
        s = self.s(X)
        gs = self.grad_sigma(X)
        return ((phi_second(s, self.mu) / self.rho**2)[:, None, None]
                * np.einsum("ni,nj->nij", gs, gs)
                + (phi_prime(s, self.mu) / self.rho)[:, None, None] * self.hess_sigma(X))

    def grad_log_w(self, X):
        """``grad w / w = e^{-mu s} / (s rho) * grad sigma``, underflow-free."""
        s = self.s(X)
        return (np.exp(-self.mu * s) / (s * self.rho))[:, None] * self.grad_sigma(X)

    def hess_log_w(self, X):
        s = self.s(X)
        gs = self.grad_sigma(X)
        ratio = np.exp(-self.mu * s) / s  # phi'(s) / phi(s)
        # d/ds (phi'/phi) = phi''/phi - (phi'/phi)^2
        dratio = ratio * (np.expm1(-self.mu * s) - self.mu * s) / s - ratio**2
        return ((dratio / self.rho**2)[:, None, None] * np.einsum("ni,nj->nij", gs, gs)
                + (ratio / self.rho)[:, None, None] * self.hess_sigma(X))


@dataclass
class SandwichReport:
    theta1: float
    mu1: float
    n_samples: int
    worst_lower_margin: float   # min of w - sigma / (rho mu1)
    worst_outer_lower: float    # min of sigma / (rho mu1) - |x| / (sqrt(theta1) rho mu1)
    worst_upper_margin: float   # min of sigma / rho - w
    worst_outer_upper: float    # min of sqrt(theta1) |x| / rho - sigma / rho
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def check_sandwich(weight: WeightFunction, n_samples: int,
                   theta1: Optional[float] = None, mu1_scale: float = 1.0,
                   rng: Optional[np.random.Generator] = None) -> SandwichReport:
    """Sample ``|x| / (sqrt(theta1) rho mu1) <= sigma / (rho mu1) <= w <= sigma / rho
    <= sqrt(theta1) |x| / rho`` on ``B_rho``.

    ``mu1_scale`` multiplies ``mu1``; values below one claim a tighter lower
    bound than the one proven and are expected to fail.
    """
    from .params import uniform_ball

    if theta1 is None:
        theta1 = weight.field.certified_theta1
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(1))
    X = uniform_ball(rng, n_samples, weight.d, weight.rho)
    m1 = mu1(theta1, weight.mu) * mu1_scale
    # same rounding path as sigma so that A0 = I gives sigma == |x| exactly
    r = np.sqrt(np.einsum("ni,ni->n", X, X))
    sg = weight.sigma(X)
    w = weight.w(X)
    rho = weight.rho
    lower = w - sg / (rho * m1)
    outer_lower = sg / (rho * m1) - r / (np.sqrt(theta1) * rho * m1)
    upper = sg / rho - w
    outer_upper = np.sqrt(theta1) * r / rho - sg / rho
    rep = SandwichReport(theta1, m1, n_samples, float(lower.min()),
                         float(outer_lower.min()), float(upper.min()),
                         float(outer_upper.min()))
    for name, margin in (("w >= sigma/(rho mu1)", lower),
                         ("sigma >= |x|/sqrt(theta1)", outer_lower),
                         ("w <= sigma/rho", upper),
                         ("sigma <= sqrt(theta1)|x|", outer_upper)):
        bad = int(np.count_nonzero(margin < 0))
        if bad:
            rep.failures.append(f"{name}: {bad} violations, worst {margin.min():.3e}")
    return rep
