"""Integral statements of the Carleman estimate, checked by quadrature.

Every weighted integral is evaluated in log-scaled form (see
``quadrature.integrate_log``): the integrand is ``exp(E) * m`` with the
exponent ``E`` kept separately, so ``w^{-2 alpha}`` with ``alpha`` in the
millions never overflows.  Each integral is certified by the doubling gate:
the result at doubled radial and angular orders must agree to ``1e-6``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import calculus
from .calculus import flux_divergence, geometry, richardson_jacobian
from .quadrature import (LogValue, QuadratureError, annulus_grid, fsum_complex,
                         integrate_log, map_chunks)
from .testfunctions import Jet, TestFunction
from .weight import WeightFunction

CONVERGENCE_TOL = 1e-6
MAX_LEVEL = 3   # at most three doublings of the requested orders


@dataclass(frozen=True)
class GridSpec:
    """Quadrature orders; ``n_angular=None`` takes the per-dimension default.

    ``level`` doubles both orders that many times (used by the gate).
    """

    n_radial: int = 64
    n_angular: Optional[int] = None
    jobs: int = 1
    level: int = 0

    def doubled(self) -> "GridSpec":
        return GridSpec(self.n_radial, self.n_angular, self.jobs, self.level + 1)

    def radial(self) -> int:
        return self.n_radial * 2**self.level

    def angular(self, d: int) -> int:
        from .quadrature import DEFAULT_ANGULAR
        base = DEFAULT_ANGULAR.get(d, 0) if self.n_angular is None else self.n_angular
        return base * 2**self.level


def _grid(d, r0, r1, spec: GridSpec, envelope=None):
    return annulus_grid(d, r0, r1, spec.radial(), spec.angular(d), envelope)


def _envelope(weight: WeightFunction, u: TestFunction, alpha: float):
    """``2 log|u| - 2 alpha log w`` along rays (modulation ignored)."""
    def env(R, U):
        R = np.asarray(R, float)
        D, K = R.shape
        pts = (R[:, :, None] * U[:, None, :]).reshape(-1, U.shape[1])
        lw = weight.log_w(pts).reshape(D, K)
        return 2 * u.log_profile(R) - 2 * alpha * lw
    return env


def _changes(coarse: dict, fine: dict, scale_key: Optional[str] = None) -> dict:
    """Relative change per key; with ``scale_key`` every change is measured
    against ``max(|value|, |value[scale_key]|)``."""
    out = {}
    for k in coarse:
        a, b = coarse[k], fine[k]
        if isinstance(a, LogValue):
            if scale_key is None:
                out[k] = b.relative_change(a)
                continue
            ref = fine[scale_key]
            L = max(a.log_norm, b.log_norm, ref.log_norm)
            ma = a.mantissa * math.exp(a.log_norm - L) if a.mantissa else 0.0
            mb = b.mantissa * math.exp(b.log_norm - L) if b.mantissa else 0.0
            mr = ref.mantissa * math.exp(ref.log_norm - L) if ref.mantissa else 0.0
            scale = max(abs(mb), abs(mr))
            out[k] = 0.0 if scale == 0 else abs(ma - mb) / scale
        else:
            scale = max(abs(a), abs(b))
            out[k] = 0.0 if scale == 0 else abs(a - b) / scale
    return out


def _gated(compute: Callable[[GridSpec], dict], spec: GridSpec,
           tol: float = CONVERGENCE_TOL, require: bool = True,
           keys: Optional[Sequence[str]] = None, max_level: int = MAX_LEVEL,
           scale_key: Optional[str] = None):
    """Evaluate at ``spec`` and doubled orders until two consecutive levels
    agree to ``tol`` on every key (or on ``keys``), at most ``max_level``
    doublings.

    Returns ``(finer_values, worst_change, changes, level)``; raises
    ``QuadratureError`` if never converged and ``require`` is set.
    """
    coarse = compute(spec)
    while True:
        spec = spec.doubled()
        fine = compute(spec)
        changes = _changes(coarse, fine, scale_key)
        judged = [changes[k] for k in (keys if keys is not None else changes)]
        worst = max(judged) if judged else 0.0
        if worst < tol or spec.level >= max_level:
            break
        coarse = fine
    if require and not worst < tol:
        bad = max(changes, key=changes.get)
        raise QuadratureError(
            f"doubling changed {bad!r} by {worst:.3e} at level {spec.level} "
            f"(tolerance {tol:g})")
    return fine, worst, changes, spec.level


# ------------------------------------------------------------- jets


def log_weight_jet(weight: WeightFunction, X):
    return weight.log_w(X), weight.grad_log_w(X), weight.hess_log_w(X)


def conjugate(weight: WeightFunction, u_jet: Jet, alpha: float, X) -> Jet:
    """Jet of ``f = w^{-alpha} u``."""
    lw, glw, Hlw = log_weight_jet(weight, X)
    return u_jet.times_exp(-alpha * lw, -alpha * glw, -alpha * Hlw)


def _q_over_w2(field, weight, X):
    """``grad w^T A grad w / w^2`` from the underflow-free ``grad log w``."""
    glw = weight.grad_log_w(X)
    return np.einsum("ni,nij,nj->n", glw, field.A(X), glw)


# ------------------------------------------------------------- Carleman sides


@dataclass
class CarlemanSides:
    """The three sides of the estimate at one ``alpha``.

    Each side is a ``LogValue`` (``exp(log_norm) * mantissa``); ``ratio`` is
    ``rhs / (lhs_grad + lhs_u)`` and ``None`` for ``u = 0``.
    """

    alpha: float
    C: float
    lhs_grad: LogValue
    lhs_u: LogValue
    rhs: LogValue
    certified: bool
    max_change: float
    n_nodes: int
    in_hypothesis: bool = True   # alpha >= alpha_0 and mu admissible
    log_integral_u: Optional[LogValue] = None   # int w^{-1-2 alpha} |u|^2
    level: int = 1                 # doublings of the requested orders used

    def _common(self):
        logs = [v.log_abs for v in (self.lhs_grad, self.lhs_u, self.rhs)]
        finite = [l for l in logs if math.isfinite(l)]
        return max(finite) if finite else 0.0

    def scaled_values(self):
        """``(log_scale, lhs_grad, lhs_u, rhs)`` with values ``* exp(log_scale)``."""
        L = self._common()

        def at(v: LogValue):
            if v.mantissa == 0:
                return 0.0
            return v.mantissa * math.exp(v.log_norm - L)
        return L, at(self.lhs_grad), at(self.lhs_u), at(self.rhs)

    @property
    def vacuous(self) -> bool:
        return (self.lhs_grad.mantissa == 0 and self.lhs_u.mantissa == 0)

    @property
    def log_ratio(self) -> Optional[float]:
        if self.vacuous:
            return None
        _, g, u, r = self.scaled_values()
        if r <= 0:
            return -math.inf
        return math.log(r) - math.log(g + u)

    @property
    def ratio(self) -> Optional[float]:
        lr = self.log_ratio
        if lr is None:
            return None
        return math.exp(min(lr, 709.0))

    @property
    def passed(self) -> bool:
        """Ratio at least one (``u = 0`` passes vacuously)."""
        lr = self.log_ratio
        return lr is None or lr >= 0.0


def _sides_integrands(field, weight, u, alpha, complex_arith):
    def fn(X):
        jet = u.jet(X)
        if complex_arith:
            jet = Jet(jet.log_scale, jet.value.astype(complex),
                      jet.grad.astype(complex), jet.hess.astype(complex))
        lw = weight.log_w(X)
        A = field.A(X)
        g = jet.grad
        m_grad = np.real(np.einsum("ni,nij,nj->n", g, A, np.conj(g)))
        m_u = np.real(jet.value * np.conj(jet.value))
        Lrel = calculus.apply_L_jet(field, X, jet)
        m_rhs = np.real(Lrel * np.conj(Lrel))
        return jet.log_scale, lw, m_grad, m_u, m_rhs
    return fn


def carleman_sides(field, params, u: TestFunction, alpha: float,
                   grid: GridSpec = GridSpec(), C: Optional[float] = None,
                   alpha0: Optional[float] = None, require_convergence: bool = True,
                   complex_arithmetic: bool = False,
                   tol: float = CONVERGENCE_TOL) -> CarlemanSides:
    """``alpha rho^2 int w^{1-2a} grad u^T A conj(grad u)``,
    ``alpha^3 int w^{-1-2a} |u|^2`` and ``C rho^4 int w^{2-2a} |L u|^2``.

    ``C`` and ``alpha0`` default to the constants the estimate is stated
    with for ``params`` (``C~, alpha~_0`` when ``b = c = 0``).
    """
    from .constants import carleman_constants

    rho, mu, d = params.rho, params.mu, params.d
    if C is None or alpha0 is None:
        rep = carleman_constants(params, strict=False)
        C = rep.C_used if C is None else C
        alpha0 = rep.alpha0_used if alpha0 is None else alpha0
    if not u.r1 < rho:
        raise ValueError(f"support radius {u.r1} must lie inside B_rho (rho = {rho})")
    weight = WeightFunction(field, rho, mu)
    fn = _sides_integrands(field, weight, u, alpha, complex_arithmetic)

    def compute(spec: GridSpec):
        grid_ = _grid(d, u.r0, u.r1, spec, _envelope(weight, u, alpha))
        ls, lw, mg, mu_, mr = map_chunks(fn, grid_.nodes, spec.jobs)
        two = 2 * ls
        out = {
            "lhs_grad": integrate_log(grid_, two + (1 - 2 * alpha) * lw, mg),
            "lhs_u_int": integrate_log(grid_, two + (-1 - 2 * alpha) * lw, mu_),
            "rhs": integrate_log(grid_, two + (2 - 2 * alpha) * lw, mr),
        }
        out["nodes"] = float(grid_.size)
        return out

    vals, worst, _, level = _gated(compute, grid, tol, require_convergence,
                                   keys=("lhs_grad", "lhs_u_int", "rhs"))
    lg = vals["lhs_grad"].scaled(_log_pos(alpha * rho**2))
    lu = vals["lhs_u_int"].scaled(_log_pos(alpha**3))
    rh = vals["rhs"].scaled(_log_pos(C * rho**4))
    if alpha == 0:
        lg = LogValue(0.0, 0.0)
        lu = LogValue(0.0, 0.0)
    in_hyp = bool(params.admissible and alpha0 is not None and alpha >= alpha0)
    return CarlemanSides(alpha, C, lg, lu, rh, worst < tol, worst,
                         int(vals["nodes"]), in_hyp, vals["lhs_u_int"], level)


def _log_pos(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def geometric_alphas(alpha0: float, factor: float = 8.0, n: int = 8) -> list:
    """``n`` geometrically spaced values from ``alpha0`` to ``factor * alpha0``."""
    if n == 1:
        return [float(alpha0)]
    return [float(alpha0 * factor ** (i / (n - 1))) for i in range(n)]


def alpha_sweep(field, params, u: TestFunction, alphas: Sequence[float],
                grid: GridSpec = GridSpec(), C: Optional[float] = None,
                alpha0: Optional[float] = None,
                require_convergence: bool = True) -> list:
    return [carleman_sides(field, params, u, a, grid, C, alpha0, require_convergence)
            for a in alphas]


SWEEP_COLUMNS = ("alpha", "lhs_grad", "lhs_u", "rhs", "ratio", "log_scale")


def sweep_rows(sides: Sequence[CarlemanSides]) -> list:
    """Rows for the sweep CSV; the three sides are ``value * exp(log_scale)``."""
    rows = []
    for s in sides:
        L, g, uu, r = s.scaled_values()
        ratio = s.ratio
        rows.append({"alpha": s.alpha, "lhs_grad": g, "lhs_u": uu, "rhs": r,
                     "ratio": "" if ratio is None else ratio, "log_scale": L})
    return rows


def sweep_csv(sides: Sequence[CarlemanSides]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in sweep_rows(sides):
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


# ------------------------------------------------------------- pointwise


@dataclass
class ResidualReport:
    name: str
    max_residual: float
    tolerance: float
    n_points: int

    @property
    def passed(self) -> bool:
        return self.max_residual < self.tolerance


def conjugation_terms(field, weight: WeightFunction, u_jet: Jet, alpha: float, X):
    """Mantissas (common scale ``exp(log f)``) of the conjugation identity:
    ``lhs = -w^{-alpha} L0 u`` and the three right-hand terms
    ``-L0 f``, ``alpha^2 f q / w^2`` and ``2 alpha (q / w^2) D_f``."""
    A = field.A(X)
    dA = field.dA(X)
    fj = conjugate(weight, u_jet, alpha, X)
    lhs = -flux_divergence(A, dA, u_jet.grad, u_jet.hess)
    qw2 = _q_over_w2(field, weight, X)
    wg = geometry(field, weight, X, "w")
    D = np.einsum("ni,ni->n", wg.h, fj.grad) + 0.5 * fj.value * wg.F
    t0 = -flux_divergence(A, dA, fj.grad, fj.hess)
    t1 = alpha**2 * fj.value * qw2
    t2 = 2 * alpha * qw2 * D
    return lhs, (t0, t1, t2)


def check_conjugation_identity(field, params, u: TestFunction, alpha: float, X,
                               tolerance: float = 1e-6) -> ResidualReport:
    """Pointwise ``-w^{-a} L0 u = -L0 f + a^2 f w^{-2} q + 2 a w^{-2} q D_f``.

    Points where ``u`` vanishes identically are dropped.
    """
    X = np.atleast_2d(np.asarray(X, float))
    weight = WeightFunction(field, params.rho, params.mu)
    jet = u.jet(X)
    keep = np.isfinite(jet.log_scale) & (np.abs(jet.value) > 0)
    X = X[keep]
    jet = u.jet(X)
    lhs, terms = conjugation_terms(field, weight, jet, alpha, X)
    scale = np.max(np.stack([np.abs(lhs)] + [np.abs(t) for t in terms]), axis=0)
    res = np.abs(lhs - sum(terms)) / scale
    return ResidualReport("conjugation", float(res.max()) if res.size else 0.0,
                          tolerance, int(X.shape[0]))


def support_points(u: TestFunction, n: int, d: int, rng: np.random.Generator,
                   margin: float = 0.02):
    """Uniform points in the open support annulus of ``u``."""
    from .params import uniform_ball
    span = u.r1 - u.r0
    a = u.r0 + margin * span
    b = u.r1 - margin * span
    return uniform_ball(rng, n, d, b, a / b, 1.0)


# ------------------------------------------------------------- identities


@dataclass
class IntegralIdentity:
    name: str
    lhs: float
    rhs: float
    scale: float
    tolerance: float
    max_change: float
    certified: bool
    path: str = ""
    level: int = 1

    @property
    def residual(self) -> float:
        if self.scale == 0:
            return 0.0
        return abs(self.lhs - self.rhs) / self.scale

    @property
    def passed(self) -> bool:
        return self.certified and self.residual < self.tolerance


def _support_union(*fns):
    return min(f.r0 for f in fns), max(f.r1 for f in fns)


def check_green(field, u: TestFunction, v: TestFunction, grid: GridSpec = GridSpec(),
                tolerance: float = 1e-7) -> IntegralIdentity:
    """``int u L0 v = int grad u^T A grad v`` (bilinear, no conjugation)."""
    d = field.d
    r0, r1 = _support_union(u, v)

    def fn(X):
        A, dA = field.A(X), field.dA(X)
        L0v = flux_divergence(A, dA, v.grad(X), v.hess(X))
        lhs = u.value(X) * L0v
        rhs = np.einsum("ni,nij,nj->n", u.grad(X), A, v.grad(X))
        return lhs, rhs

    def compute(spec):
        g = _grid(d, r0, r1, spec)
        lhs, rhs = map_chunks(fn, g.nodes, spec.jobs)
        return {"lhs": fsum_complex(g.weights * lhs), "rhs": fsum_complex(g.weights * rhs)}

    vals, worst, _, level = _gated(compute, grid, require=False)
    scale = max(abs(vals["lhs"]), abs(vals["rhs"]))
    return IntegralIdentity("green", float(np.real(vals["lhs"])), float(np.real(vals["rhs"])),
                            scale, tolerance, worst, worst < CONVERGENCE_TOL, level=level)


def check_rellich(field, weight: WeightFunction, f: TestFunction,
                  grid: GridSpec = GridSpec(), tolerance: float = 1e-5) -> IntegralIdentity:
    """``int h_w^T grad f L0 f = -1/2 int grad f^T B grad f`` with
    ``B = div(h_w o A) - A D(h_w) - D(h_w)^T A``."""
    d = field.d

    def fn(X):
        geo = geometry(field, weight, X, "w")
        A, dA = field.A(X), field.dA(X)
        g = f.grad(X)
        L0f = flux_divergence(A, dA, g, f.hess(X))
        lhs = np.einsum("ni,ni->n", geo.h, g) * L0f
        rhs = -0.5 * np.einsum("ni,nij,nj->n", g, geo.B, g)
        return lhs, rhs

    def compute(spec):
        gr = _grid(d, f.r0, f.r1, spec)
        lhs, rhs = map_chunks(fn, gr.nodes, spec.jobs)
        return {"lhs": fsum_complex(gr.weights * lhs), "rhs": fsum_complex(gr.weights * rhs)}

    vals, worst, _, level = _gated(compute, grid, require=False)
    scale = max(abs(vals["lhs"]), abs(vals["rhs"]))
    return IntegralIdentity("rellich", float(vals["lhs"]), float(vals["rhs"]), scale,
                            tolerance, worst, worst < CONVERGENCE_TOL, level=level)


# ------------------------------------------------------------- Lemma 4.1


@dataclass
class Lemma41Result:
    """``I1`` against ``4a int grad f^T M_w grad f - a int F_w L0(f^2)
    + 4a^2 int q D_f^2 / w^2``; all values share ``exp(log_norm)``."""

    alpha: float
    log_norm: float
    I1: float
    T_M: float
    T_F: float
    T_D: float
    P: float                 # the non-negative square integral
    Z: float                 # int q D_f f / w^2, zero by integration by parts
    tolerance: float
    max_change: float
    certified: bool
    path: str
    T_F_alternative: Optional[float] = None
    level: int = 1

    @property
    def rhs(self) -> float:
        return self.T_M + self.T_F + self.T_D

    @property
    def slack(self) -> float:
        return self.I1 - self.rhs

    @property
    def passed(self) -> bool:
        return self.certified and self.slack >= -self.tolerance * abs(self.I1)


def _grad_F_w(field, weight, X, step_scale=1e-5):
    def F(Y):
        return geometry(field, weight, Y, "w").F[:, None]
    return richardson_jacobian(F, X, step_scale * weight.rho)[:, :, 0]


def check_lemma41(field, params, u: TestFunction, alpha: float,
                  grid: GridSpec = GridSpec(), tolerance: float = 1e-6,
                  path: str = "analytic") -> Lemma41Result:
    """Evaluate both sides of the lemma for real ``u`` and ``b = c = 0``.

    ``path`` selects how ``int F_w L0(f^2)`` is evaluated: ``analytic`` from
    ``L0(f^2) = 2 f L0 f - 2 grad f^T A grad f``; ``green`` as
    ``int grad F_w^T A grad(f^2)`` with ``grad F_w`` by Richardson
    differences; ``both`` computes the two and certifies with the analytic
    one while recording the other.
    """
    if not u.is_real:
        raise ValueError("the lemma is stated for real-valued u")
    if path not in ("analytic", "green", "both"):
        raise ValueError(f"unknown path {path!r}")
    d = params.d
    weight = WeightFunction(field, params.rho, params.mu)
    a = float(alpha)

    def fn(X):
        A, dA = field.A(X), field.dA(X)
        uj = u.jet(X)
        fj = conjugate(weight, uj, a, X)
        geo = geometry(field, weight, X, "w")
        qw2 = _q_over_w2(field, weight, X)
        L0u = flux_divergence(A, dA, uj.grad, uj.hess)       # scale e^{ls_f}
        L0f = flux_divergence(A, dA, fj.grad, fj.hess)
        gAg = np.einsum("ni,nij,nj->n", fj.grad, A, fj.grad)
        Df = np.einsum("ni,ni->n", geo.h, fj.grad) + 0.5 * fj.value * geo.F
        out = {
            "ls": fj.log_scale,
            "I1": L0u**2 / qw2,
            "T_M": 4 * a * np.einsum("ni,nij,nj->n", fj.grad, geo.M, fj.grad),
            "T_D": 4 * a**2 * qw2 * Df**2,
            "P": (a**2 * qw2 * fj.value - L0f) ** 2 / qw2,
            "Z": qw2 * Df * fj.value,
        }
        if path in ("analytic", "both"):
            out["T_F"] = -a * geo.F * (2 * fj.value * L0f - 2 * gAg)
        if path in ("green", "both"):
            gF = _grad_F_w(field, weight, X)
            key = "T_F" if path == "green" else "T_F_alt"
            out[key] = -a * 2 * fj.value * np.einsum("ni,nij,nj->n", gF, A, fj.grad)
        return tuple(out[k] for k in sorted(out))

    keys = sorted(["ls", "I1", "T_M", "T_D", "P", "Z", "T_F"]
                  + (["T_F_alt"] if path == "both" else []))

    def compute(spec):
        gr = _grid(d, u.r0, u.r1, spec, _envelope(weight, u, a))
        parts = dict(zip(keys, map_chunks(fn, gr.nodes, spec.jobs)))
        ls2 = 2 * parts.pop("ls")
        return {k: integrate_log(gr, ls2, v) for k, v in parts.items()}

    # signed terms may vanish (T_M is zero for radial f when A = I), so
    # every change is judged on the scale of the inequality, |I1|
    vals, worst, changes, level = _gated(compute, grid, require=False,
                                         keys=("I1", "T_M", "T_F", "T_D", "P"),
                                         scale_key="I1")
    L = max(v.log_norm for v in vals.values())

    def at(v: LogValue):
        return v.mantissa * math.exp(v.log_norm - L) if v.mantissa else 0.0

    res = Lemma41Result(a, L, at(vals["I1"]), at(vals["T_M"]), at(vals["T_F"]),
                        at(vals["T_D"]), at(vals["P"]), at(vals["Z"]), tolerance,
                        worst, worst < CONVERGENCE_TOL,
                        "analytic" if path == "both" else path,
                        at(vals["T_F_alt"]) if "T_F_alt" in vals else None, level)
    return res


# ------------------------------------------------------------- reports


@dataclass
class CheckResult:
    """One judged number: ``value`` compared against ``tolerance``."""

    name: str
    stage: str
    passed: Optional[bool]      # None: skipped or reported without a claim
    value: Optional[float] = None
    tolerance: Optional[float] = None
    detail: dict = field(default_factory=dict)
    skipped: bool = False
    message: str = ""

    def record(self) -> dict:
        return {"name": self.name, "stage": self.stage, "passed": self.passed,
                "value": self.value, "tolerance": self.tolerance,
                "skipped": self.skipped, "message": self.message,
                "detail": self.detail}


@dataclass
class VerificationReport:
    params: dict
    checks: list = field(default_factory=list)
    sweeps: dict = field(default_factory=dict)   # name -> CSV text

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks) and any(
            c.passed for c in self.checks)

    def failing(self) -> list:
        return [c.name for c in self.checks if c.passed is False]

    def record(self) -> dict:
        return {"passed": self.passed, "failing": self.failing(),
                "params": self.params, "checks": [c.record() for c in self.checks]}

    def add(self, check: CheckResult):
        self.checks.append(check)
        return check


def run_suite(config, jobs: int = 1, stages=None) -> VerificationReport:
    """Run the configured verification stages; see ``suite.run_suite``."""
    from .suite import run_suite as _run
    return _run(config, jobs, stages)
