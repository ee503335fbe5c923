"""Smooth annulus-supported test functions with closed-form derivatives.

Values are carried as *jets* in log-scaled form: a jet stores
``log_scale``, ``value``, ``grad`` and ``hess`` such that the actual
function is ``exp(log_scale) * value`` (and likewise for the derivatives).
This keeps ``w^{-alpha} u`` representable for ``alpha`` in the millions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class Jet:
    log_scale: np.ndarray   # (N,)
    value: np.ndarray       # (N,)
    grad: np.ndarray        # (N, d)
    hess: np.ndarray        # (N, d, d)

    def times_exp(self, ell, grad_ell, hess_ell) -> "Jet":
        """Jet of ``exp(ell) * self`` given ``ell`` and its derivatives."""
        v, g, H = self.value, self.grad, self.hess
        outer = np.einsum("ni,nj->nij", g, grad_ell)
        vv = v[:, None, None]
        return Jet(self.log_scale + ell, v, g + v[:, None] * grad_ell,
                   H + outer + np.swapaxes(outer, 1, 2)
                   + vv * (hess_ell + np.einsum("ni,nj->nij", grad_ell, grad_ell)))

    def times(self, other: "Jet") -> "Jet":
        """Product rule; log scales add."""
        v, g, H = self.value, self.grad, self.hess
        w, h, K = other.value, other.grad, other.hess
        outer = np.einsum("ni,nj->nij", g, h)
        return Jet(self.log_scale + other.log_scale, v * w,
                   g * w[:, None] + v[:, None] * h,
                   H * w[:, None, None] + outer + np.swapaxes(outer, 1, 2)
                   + v[:, None, None] * K)

    def _scale(self):
        with np.errstate(under="ignore"):
            return np.exp(self.log_scale)

    def actual_value(self):
        return self._scale() * self.value

    def actual_grad(self):
        return self._scale()[:, None] * self.grad

    def actual_hess(self):
        return self._scale()[:, None, None] * self.hess

    def renormalised(self) -> "Jet":
        """Same jet with ``log_scale`` folded into the values (for tests)."""
        s = self._scale()
        return Jet(np.zeros_like(self.log_scale), s * self.value,
                   s[:, None] * self.grad, s[:, None, None] * self.hess)


_MODULATIONS = ("none", "plane_wave", "cos", "sin", "polynomial")


class TestFunction:
    """``u(x) = amplitude * exp(-1 / (1 - s^2)) * m(x)`` where
    ``s = (2|x| - r0 - r1) / (r1 - r0)``, supported in ``r0 < |x| < r1``.

    Modulations ``m``: ``none``; ``plane_wave`` ``exp(i k.x)`` (complex);
    ``cos`` / ``sin`` of ``k.x``; ``polynomial`` ``1 + k.x``.
    """

    __test__ = False  # not a pytest class

    def __init__(self, r0: float, r1: float, modulation: str = "none",
                 k: Optional[Sequence[float]] = None, amplitude: float = 1.0):
        if not 0 < r0 < r1:
            raise ValueError(f"need 0 < r0 < r1, got r0={r0!r}, r1={r1!r}")
        if modulation not in _MODULATIONS:
            raise ValueError(f"unknown modulation {modulation!r}")
        if modulation != "none" and k is None:
            raise ValueError(f"modulation {modulation!r} needs a vector k")
        self.r0 = float(r0)
        self.r1 = float(r1)
        self.modulation = modulation
        self.k = None if k is None else np.asarray(k, dtype=float)
        self.amplitude = float(amplitude)

    @property
    def is_real(self) -> bool:
        return self.modulation != "plane_wave"

    def real_part(self) -> "TestFunction":
        if self.modulation != "plane_wave":
            return self
        return TestFunction(self.r0, self.r1, "cos", self.k, self.amplitude)

    def imag_part(self) -> "TestFunction":
        if self.modulation != "plane_wave":
            return TestFunction(self.r0, self.r1, self.modulation, self.k, 0.0)
        return TestFunction(self.r0, self.r1, "sin", self.k, self.amplitude)

    def log_profile(self, r):
        """``log`` of the radial bump; ``-inf`` off the open support."""
        r = np.asarray(r, dtype=float)
        s = (2 * r - self.r0 - self.r1) / (self.r1 - self.r0)
        inside = np.abs(s) < 1
        out = np.full(r.shape, -np.inf)
        out[inside] = -1.0 / (1.0 - s[inside] ** 2) + np.log(abs(self.amplitude) or 1.0)
        return out

    def _radial_jet(self, X):
        n, d = X.shape
        r = np.sqrt(np.einsum("ni,ni->n", X, X))
        a = 2.0 / (self.r1 - self.r0)
        s = a * r - (self.r0 + self.r1) / (self.r1 - self.r0)
        inside = np.abs(s) < 1
        lam = np.full(n, -np.inf)
        lam_r = np.zeros(n)
        lam_rr = np.zeros(n)
        si = s[inside]
        om = 1.0 - si**2
        lam[inside] = -1.0 / om
        lam_r[inside] = -2.0 * a * si / om**2
        lam_rr[inside] = -(a**2) * (2.0 + 6.0 * si**2) / om**3
        xhat = np.zeros_like(X)
        xhat[inside] = X[inside] / r[inside, None]
        P = np.einsum("ni,nj->nij", xhat, xhat)
        eye = np.eye(d)[None]
        rr = np.where(inside, r, 1.0)
        g = lam_r[:, None] * xhat
        Hl = lam_rr[:, None, None] * P + (lam_r / rr)[:, None, None] * (eye - P)
        H = Hl + np.einsum("ni,nj->nij", g, g)
        H[~inside] = 0.0
        amp = self.amplitude
        ls = lam + (np.log(abs(amp)) if amp != 0 else 0.0)
        val = np.full(n, np.sign(amp) if amp != 0 else 0.0)
        val[~inside] = 0.0
        return Jet(ls, val, g * val[:, None], H * val[:, None, None])

    def _modulation_jet(self, X):
        n, d = X.shape
        zeros_g = np.zeros((n, d))
        zeros_h = np.zeros((n, d, d))
        ls = np.zeros(n)
        if self.modulation == "none":
            return None
        k = self.k
        kx = X @ k
        kk = np.outer(k, k)[None]
        if self.modulation == "plane_wave":
            e = np.exp(1j * kx)
            return Jet(ls, e, 1j * k[None] * e[:, None], -kk * e[:, None, None])
        if self.modulation == "cos":
            c, s = np.cos(kx), np.sin(kx)
            return Jet(ls, c, -k[None] * s[:, None], -kk * c[:, None, None])
        if self.modulation == "sin":
            c, s = np.cos(kx), np.sin(kx)
            return Jet(ls, s, k[None] * c[:, None], -kk * s[:, None, None])
        return Jet(ls, 1.0 + kx, np.broadcast_to(k, (n, d)).copy(), zeros_h)

    def jet(self, X) -> Jet:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        base = self._radial_jet(X)
        m = self._modulation_jet(X)
        return base if m is None else base.times(m)

    def value(self, X):
        return self.jet(X).actual_value()

    def grad(self, X):
        return self.jet(X).actual_grad()

    def hess(self, X):
        return self.jet(X).actual_hess()

    def spec(self) -> dict:
        return {"r0": self.r0, "r1": self.r1, "modulation": self.modulation,
                "k": None if self.k is None else [float(v) for v in self.k],
                "amplitude": self.amplitude}


def make_bump(r0: float, r1: float, modulation: str = "none", k=None,
              rho: Optional[float] = None, amplitude: float = 1.0) -> TestFunction:
    """Bump on the annulus ``r0 < |x| < r1``; ``r1 < rho`` is enforced when
    ``rho`` is given."""
    if rho is not None and not r1 < rho:
        raise ValueError(f"support radius r1={r1!r} must be below rho={rho!r}")
    return TestFunction(r0, r1, modulation, k, amplitude)
