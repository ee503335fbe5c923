"""Problem parameters and coefficient fields with certified constants.

A coefficient field supplies the symmetric matrix ``A(x)``, its partial
derivatives ``dA[k] = d/dx_k A`` in closed form, and the bounded lower
order coefficients ``b`` and ``c``.  All evaluations are vectorised over
an ``(N, d)`` array of points.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

OUTWARD = 1.001  # rounding factor applied to sampled certificates


class FieldError(ValueError):
    """A coefficient field violates its construction preconditions."""


@dataclass(frozen=True)
class ProblemParams:
    d: int
    rho: float
    theta1: float
    theta2: float
    mu: float
    b_inf: float = 0.0
    c_inf: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho!r}")
        if not self.theta1 > 0:
            raise ValueError(f"theta1 must be positive, got {self.theta1!r}")
        if not self.theta2 >= 0:
            raise ValueError(f"theta2 must be >= 0, got {self.theta2!r}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu!r}")
        if self.b_inf < 0 or self.c_inf < 0:
            raise ValueError("sup norms of b and c must be non-negative")

    @property
    def mu_threshold(self) -> float:
        """Smallest excluded value of mu: 33 d theta1^(11/2) theta2 rho."""
        return 33.0 * self.d * self.theta1**5.5 * self.theta2 * self.rho

    @property
    def admissible(self) -> bool:
        return self.theta1 >= 1 and self.mu > self.mu_threshold

    @property
    def admissibility_margin(self) -> float:
        return self.mu - self.mu_threshold

    def replace(self, **changes) -> "ProblemParams":
        values = dict(self.__dict__)
        values.update(changes)
        return ProblemParams(**values)


@dataclass(frozen=True)
class LowerOrderTerms:
    """Analytic lower order coefficients with sup-norm certificates.

    ``b`` kinds: ``zero``, ``constant`` (the vector ``b_vector``) and
    ``rotating`` (``b_scale * (cos x_1, sin x_1, 0, ...)``; for d = 1 it is
    ``b_scale * cos x_1``).  ``c`` kinds: ``zero``, ``constant`` and
    ``cosine`` (``c_scale * cos(x_1 + ... + x_d)``).
    """

    b_kind: str = "zero"
    b_scale: float = 0.0
    b_vector: Optional[tuple] = None
    c_kind: str = "zero"
    c_scale: float = 0.0

    def __post_init__(self):
        if self.b_kind not in ("zero", "constant", "rotating"):
            raise ValueError(f"unknown b kind {self.b_kind!r}")
        if self.c_kind not in ("zero", "constant", "cosine"):
            raise ValueError(f"unknown c kind {self.c_kind!r}")
        if self.b_kind == "constant" and self.b_vector is None:
            raise ValueError("constant b needs b_vector")

    @property
    def b_inf(self) -> float:
        if self.b_kind == "zero":
            return 0.0
        if self.b_kind == "constant":
            return float(np.linalg.norm(np.asarray(self.b_vector, float)))
        return abs(self.b_scale)

    @property
    def c_inf(self) -> float:
        return 0.0 if self.c_kind == "zero" else abs(self.c_scale)

    def b(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        n, d = X.shape
        if self.b_kind == "zero":
            return np.zeros((n, d))
        if self.b_kind == "constant":
            return np.broadcast_to(np.asarray(self.b_vector, float), (n, d)).copy()
        out = np.zeros((n, d))
        out[:, 0] = self.b_scale * np.cos(X[:, 0])
        if d > 1:
            out[:, 1] = self.b_scale * np.sin(X[:, 0])
        return out

    def c(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.c_kind == "zero":
            return np.zeros(X.shape[0])
        if self.c_kind == "constant":
            return np.full(X.shape[0], float(self.c_scale))
        return self.c_scale * np.cos(X.sum(axis=1))


class CoefficientField:
    """Symmetric matrix field ``A(x) = A0 + sum_k s(x_k) G_k``.

    ``s`` is the identity for the affine family and ``sin`` for the smooth
    family; both give closed-form ``d/dx_k A``.  A constant field is the
    affine family with all ``G_k = 0``.
    """

    def __init__(self, A0, G=None, rho=1.0, kind="affine",
                 lower: Optional[LowerOrderTerms] = None,
                 certified_theta1: Optional[float] = None,
                 certified_theta2: Optional[float] = None):
        A0 = np.array(A0, dtype=float)
        if A0.ndim != 2 or A0.shape[0] != A0.shape[1]:
            raise FieldError("A0 must be a square matrix")
        d = A0.shape[0]
        if G is None or len(G) == 0:
            G = np.zeros((d, d, d))
        G = np.array(G, dtype=float)
        if G.shape != (d, d, d):
            raise FieldError(f"G must hold {d} matrices of shape {d}x{d}")
        if kind not in ("affine", "smooth"):
            raise FieldError(f"unknown field kind {kind!r}")
        self.A0 = A0
        self.G = G
        self.d = d
        self.rho = float(rho)
        self.kind = kind
        self.lower = lower if lower is not None else LowerOrderTerms()
        self.certified_theta1 = certified_theta1
        self.certified_theta2 = certified_theta2

    @property
    def is_constant(self) -> bool:
        return not np.any(self.G)

    def _profile(self, X):
        return X if self.kind == "affine" else np.sin(X)

    def _profile_prime(self, X):
        return np.ones_like(X) if self.kind == "affine" else np.cos(X)

    def A(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return self.A0 + np.einsum("nk,kij->nij", self._profile(X), self.G)

    def dA(self, X: np.ndarray) -> np.ndarray:
        """Derivatives ``out[n, k, i, j] = d/dx_k a^{ij}(x_n)``."""
        X = np.atleast_2d(np.asarray(X, float))
        return np.einsum("nk,kij->nkij", self._profile_prime(X), self.G)

    def b(self, X):
        return self.lower.b(X)

    def c(self, X):
        return self.lower.c(X)

    def scaled(self, rho: float) -> "ScaledField":
        """The field ``x -> A(rho x)`` on the unit ball."""
        return ScaledField(self, rho)

    def lipschitz_bound(self) -> float:
        """Exact ``max_{|v| <= 1} || sum_k v_k G_k ||_inf``.

        The row-sum norm of ``sum_k v_k G_k`` equals
        ``max_{i, t} sum_k v_k (sum_j t_j G_k[i, j])`` over sign vectors
        ``t``, so the maximum over unit ``v`` is the largest Euclidean norm
        of the vectors ``(sum_j t_j G_k[i, j])_k``.  The same number bounds
        the smooth family because ``|sin a - sin b| <= |a - b|``.
        """
        best = 0.0
        for t in itertools.product((-1.0, 1.0), repeat=self.d):
            vecs = np.einsum("kij,j->ik", self.G, np.array(t))
            best = max(best, float(np.linalg.norm(vecs, axis=1).max()))
        return best


class ScaledField:
    """``A~(x) = A(rho x)``; the Lipschitz constant scales by ``rho``."""

    def __init__(self, base: CoefficientField, rho: float):
        self.base = base
        self.s = float(rho)
        self.A0 = base.A0
        self.d = base.d
        self.rho = 1.0
        self.kind = base.kind
        self.lower = base.lower
        self.certified_theta1 = base.certified_theta1
        self.certified_theta2 = (None if base.certified_theta2 is None
                                 else base.certified_theta2 * self.s)

    @property
    def is_constant(self):
        return self.base.is_constant

    def A(self, X):
        return self.base.A(self.s * np.atleast_2d(X))

    def dA(self, X):
        return self.s * self.base.dA(self.s * np.atleast_2d(X))

    def b(self, X):
        return self.base.b(self.s * np.atleast_2d(X))

    def c(self, X):
        return self.base.c(self.s * np.atleast_2d(X))

    def scaled(self, rho):
        return ScaledField(self.base, self.s * rho)


def ball_grid(d: int, rho: float, per_axis: int = 32) -> np.ndarray:
    """Tensor grid points of ``[-rho, rho]^d`` that fall in the closed ball,
    together with a dense sample of the bounding sphere."""
    ax = np.linspace(-rho, rho, per_axis)
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)
    pts = pts[np.linalg.norm(pts, axis=1) <= rho]
    return np.vstack([pts, rho * sphere_points(d, per_axis)])


def sphere_points(d: int, n: int) -> np.ndarray:
    """Deterministic covering of the unit sphere in R^d."""
    if d == 1:
        return np.array([[-1.0], [1.0]])
    if d == 2:
        th = np.linspace(0, 2 * np.pi, 32 * n, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], -1)
    # generic: normalised tensor grid on the cube surface
    ax = np.linspace(-1, 1, n)
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)
    pts = pts[np.abs(pts).max(axis=1) == 1.0]
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _certify(field: CoefficientField) -> CoefficientField:
    pts = ball_grid(field.d, field.rho)
    eig = np.linalg.eigvalsh(field.A(pts))
    lo, hi = eig.min(), eig.max()
    if lo <= 0:
        raise FieldError(
            f"A(x) is not positive definite on B_rho (smallest eigenvalue {lo:.3g})")
    if field.is_constant:
        A0 = field.A0
        # diagonal A0: eigenvalues are exact; otherwise guard against rounding
        guard = 1.0 if np.array_equal(A0, np.diag(np.diag(A0))) else 1.0 + 1e-13
        field.certified_theta1 = max(1.0, hi * guard, guard / lo)
        field.certified_theta2 = 0.0
    else:
        field.certified_theta1 = max(1.0, hi * OUTWARD, OUTWARD / lo)
        field.certified_theta2 = field.lipschitz_bound() * OUTWARD
    return field


def _check_symmetric(name, M):
    M = np.asarray(M, float)
    if not np.array_equal(M, M.T):
        raise FieldError(f"{name} must be symmetric")


def make_affine_field(A0, G=None, rho: float = 1.0,
                      lower: Optional[LowerOrderTerms] = None) -> CoefficientField:
    """Build ``A(x) = A0 + sum_k x_k G_k`` and certify its constants on ``B_rho``.

    ``certified_theta1`` comes from eigenvalue extrema of ``A`` over a dense
    grid of the ball and its boundary sphere, rounded outward.  For affine
    fields the extrema sit on the sphere (``lambda_max`` is convex and
    ``lambda_min`` concave in ``x``).  ``certified_theta2`` is the exact
    Lipschitz constant in the row-sum norm, rounded outward.

    Raises
    ------
    FieldError
        If ``A0`` or some ``G_k`` is not symmetric, or ``A(x)`` loses
        positive definiteness on the sample.
    """
    _check_symmetric("A0", A0)
    if G is not None:
        for k, Gk in enumerate(G):
            _check_symmetric(f"G[{k}]", Gk)
    if np.linalg.eigvalsh(np.asarray(A0, float)).min() <= 0:
        raise FieldError("A0 must be positive definite")
    return _certify(CoefficientField(A0, G, rho, "affine", lower))


def make_smooth_field(A0, G, rho: float = 1.0,
                      lower: Optional[LowerOrderTerms] = None) -> CoefficientField:
    """``A(x) = A0 + sum_k sin(x_k) G_k`` with certified constants."""
    _check_symmetric("A0", A0)
    for k, Gk in enumerate(G):
        _check_symmetric(f"G[{k}]", Gk)
    if np.linalg.eigvalsh(np.asarray(A0, float)).min() <= 0:
        raise FieldError("A0 must be positive definite")
    return _certify(CoefficientField(A0, G, rho, "smooth", lower))


def row_sum_norm(M: np.ndarray) -> np.ndarray:
    return np.abs(M).sum(axis=-1).max(axis=-1)


@dataclass
class AssumptionReport:
    theta1: float
    theta2: float
    worst_ellipticity: float  # max over samples of max(q, 1/q), q = xi^T A xi / |xi|^2
    worst_lipschitz: float    # max over pairs of ||A(x) - A(y)||_inf / |x - y|
    n_samples: int
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def uniform_ball(rng: np.random.Generator, n: int, d: int, rho: float,
                 r_min: float = 0.0, r_max: float = 1.0) -> np.ndarray:
    """``n`` points uniform in the shell ``r_min*rho <= |x| <= r_max*rho``."""
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    u = rng.random(n)
    r = (r_min**d + u * (r_max**d - r_min**d)) ** (1.0 / d)
    return rho * r[:, None] * dirs


def verify_assumption(field, params: ProblemParams, n_samples: int,
                      rng: Optional[np.random.Generator] = None) -> AssumptionReport:
    """Sample the ellipticity and Lipschitz conditions with zero tolerance."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    d, rho = field.d, params.rho
    X = uniform_ball(rng, n_samples, d, rho)
    xi = rng.standard_normal((n_samples, d))
    q = np.einsum("ni,nij,nj->n", xi, field.A(X), xi) / np.einsum("ni,ni->n", xi, xi)
    worst_ell = float(np.max(np.maximum(q, 1.0 / q)))

    Y = uniform_ball(rng, n_samples, d, rho)
    dist = np.linalg.norm(X - Y, axis=1)
    keep = dist > 0
    quot = row_sum_norm(field.A(X[keep]) - field.A(Y[keep])) / dist[keep]
    worst_lip = float(quot.max()) if quot.size else 0.0

    report = AssumptionReport(params.theta1, params.theta2, worst_ell, worst_lip,
                              n_samples)
    if params.theta1 < 1:
        report.failures.append("theta1 < 1")
    if np.any(q < 1.0 / params.theta1) or np.any(q > params.theta1):
        report.failures.append(
            f"ellipticity: worst ratio {worst_ell:.6g} exceeds theta1 = {params.theta1:.6g}")
    if worst_lip > params.theta2:
        report.failures.append(
            f"Lipschitz: worst quotient {worst_lip:.6g} exceeds theta2 = {params.theta2:.6g}")
    return report
