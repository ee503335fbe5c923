"""Product quadrature on annuli ``r0 <= |x| <= r1`` in dimensions 1, 2, 3.

Radial Gauss-Legendre against the Jacobian ``r^(d-1)``; on the sphere the
trapezoid rule (d = 2) or Gauss-Legendre in ``cos(theta)`` times the
trapezoid rule in azimuth (d = 3).  For integrands carrying a factor
``exp(E(x))`` with a sharp radial peak, a *focused* radial rule places
composite Gauss-Legendre panels on the window where ``E`` is within
``DROP`` of its maximum along each ray.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DROP = 100.0          # e^-100 relative cut-off for the focus window
PANEL_NODES = 16
TAIL_NODES = 8
CHUNK = 8192          # fixed work unit; results never depend on --jobs
DEFAULT_ANGULAR = {1: 2, 2: 128, 3: 64}


class QuadratureError(RuntimeError):
    """Integration could not be certified."""


@dataclass
class QuadratureGrid:
    d: int
    nodes: np.ndarray     # (N, d)
    weights: np.ndarray   # (N,)
    n_radial: int
    n_angular: int
    r0: float
    r1: float
    focused: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.weights.size


def sphere_rule(d: int, n_angular: int):
    """Directions and weights integrating over the unit sphere ``S^(d-1)``."""
    if d == 1:
        return np.array([[-1.0], [1.0]]), np.array([1.0, 1.0])
    if d == 2:
        th = 2 * np.pi * np.arange(n_angular) / n_angular
        return (np.stack([np.cos(th), np.sin(th)], -1),
                np.full(n_angular, 2 * np.pi / n_angular))
    if d == 3:
        n_pol = max(n_angular // 2, 2)
        t, wt = np.polynomial.legendre.leggauss(n_pol)
        ph = 2 * np.pi * np.arange(n_angular) / n_angular
        st = np.sqrt(1 - t**2)
        dirs = np.stack([np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)),
                         np.outer(t, np.ones_like(ph))], -1).reshape(-1, 3)
        w = np.outer(wt, np.full(n_angular, 2 * np.pi / n_angular)).ravel()
        return dirs, w
    raise ValueError(f"integration supports d in {{1, 2, 3}}, got {d}")


def _gl(a, b, n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * t + 0.5 * (a + b), 0.5 * (b - a) * w


def _composite(a, b, panels, n):
    edges = np.linspace(a, b, panels + 1)
    rs, ws = zip(*(_gl(edges[i], edges[i + 1], n) for i in range(panels)))
    return np.concatenate(rs), np.concatenate(ws)


def _candidate_radii(r0, r1, n=600):
    """Radii clustered geometrically towards both ends of ``(r0, r1)``."""
    span = r1 - r0
    t = np.logspace(-13, np.log10(0.5), n)
    return np.unique(np.concatenate([r0 + span * t, r1 - span * t]))


def _safe(v):
    return np.where(np.isfinite(v), v, -1e300)


def focus_windows(log_envelope: Callable, dirs: np.ndarray, r0: float, r1: float,
                  drop: float = DROP):
    """Per direction, the radii where the envelope is within ``drop`` of its
    maximum.

    ``log_envelope(R, U)`` maps radii ``R`` of shape ``(D, K)`` and unit
    directions ``U`` of shape ``(D, d)`` to log values of shape ``(D, K)``
    (``-inf`` allowed).  Returns arrays ``(left, right)`` of shape ``(D,)``.
    """
    D = dirs.shape[0]
    rc = _candidate_radii(r0, r1)
    K = rc.size
    ev = _safe(log_envelope(np.broadcast_to(rc, (D, K)), dirs))
    i = np.argmax(ev, axis=1)
    a = rc[np.maximum(i - 1, 0)]
    b = rc[np.minimum(i + 1, K - 1)]

    def at(r):
        return _safe(log_envelope(r[:, None], dirs))[:, 0]

    g = (math.sqrt(5) - 1) / 2
    for _ in range(60):
        c1 = b - g * (b - a)
        c2 = a + g * (b - a)
        left_better = at(c1) >= at(c2)
        b = np.where(left_better, c2, b)
        a = np.where(left_better, a, c1)
    r_star = 0.5 * (a + b)
    e_max = np.maximum(at(r_star), ev[np.arange(D), i])
    level = e_max - drop

    below = ev < level[:, None]
    left_mask = below & (rc[None, :] < r_star[:, None])
    right_mask = below & (rc[None, :] > r_star[:, None])
    has_left = left_mask.any(axis=1)
    has_right = right_mask.any(axis=1)
    jl = np.where(has_left, K - 1 - np.argmax(left_mask[:, ::-1], axis=1), 0)
    jr = np.where(has_right, np.argmax(right_mask, axis=1), K - 1)

    def bisect(lo, hi, lo_below):
        # lo_below: the envelope is under the level at lo (and above at hi)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            under = at(mid) < level
            go_right = under == lo_below
            lo, hi = np.where(go_right, mid, lo), np.where(go_right, hi, mid)
        return np.where(lo_below, lo, hi)

    left = np.where(has_left, bisect(rc[jl], r_star, True), r0)
    right = np.where(has_right, bisect(r_star, rc[jr], False), r1)
    return np.clip(left, r0, r1), np.clip(right, r0, r1)


def radial_rule(r0, r1, n_radial, window=None):
    """Radial nodes/weights (without Jacobian) on ``[r0, r1]``.

    Without a window: ``n_radial``-point Gauss-Legendre.  With a window
    ``(a, b)``: ``n_radial // PANEL_NODES`` composite panels on ``[a, b]``
    plus ``TAIL_NODES``-point rules on the two remainders.
    """
    if window is None:
        return _gl(r0, r1, n_radial)
    a, b = window
    # below one full panel the order itself must follow n_radial, or the
    # doubling gate would compare identical rules
    per_panel = min(PANEL_NODES, n_radial)
    panels = max(n_radial // PANEL_NODES, 1)
    rs, ws = _composite(a, b, panels, per_panel)
    r_list, w_list = [rs], [ws]
    tail_panels = max(n_radial // 64, 1)
    if a > r0:
        r, w = _composite(r0, a, tail_panels, TAIL_NODES)
        r_list.append(r)
        w_list.append(w)
    if b < r1:
        r, w = _composite(b, r1, tail_panels, TAIL_NODES)
        r_list.append(r)
        w_list.append(w)
    return np.concatenate(r_list), np.concatenate(w_list)


def annulus_grid(d: int, r0: float, r1: float, n_radial: int = 64,
                 n_angular: Optional[int] = None,
                 log_envelope: Optional[Callable] = None) -> QuadratureGrid:
    """Product rule on ``{r0 <= |x| <= r1}``.

    ``log_envelope(R, U)``, when given, focuses the radial rule on each ray
    separately (see ``focus_windows``); the peak moves with the direction
    when the weight is anisotropic.
    """
    if not 0 < r0 < r1:
        raise ValueError(f"need 0 < r0 < r1, got r0={r0!r}, r1={r1!r}")
    if n_radial < 4:
        raise ValueError("n_radial must be >= 4")
    if n_angular is None:
        n_angular = DEFAULT_ANGULAR[d] if d in DEFAULT_ANGULAR else 0
    if d > 1 and n_angular < 4:
        raise ValueError("n_angular must be >= 4")
    dirs, dw = sphere_rule(d, n_angular)
    meta = {}
    if log_envelope is None:
        r, wr = radial_rule(r0, r1, n_radial)
        nodes = (dirs[:, None, :] * r[None, :, None]).reshape(-1, d)
        weights = (dw[:, None] * (wr * r ** (d - 1))[None, :]).ravel()
    else:
        left, right = focus_windows(log_envelope, dirs, r0, r1)
        node_list, weight_list = [], []
        cache = {}
        for u, wu, a, b in zip(dirs, dw, left, right):
            key = (float(a), float(b))
            if key not in cache:
                cache[key] = radial_rule(r0, r1, n_radial, key)
            r, wr = cache[key]
            node_list.append(r[:, None] * u[None, :])
            weight_list.append(wr * r ** (d - 1) * wu)
        nodes = np.concatenate(node_list)
        weights = np.concatenate(weight_list)
        meta = {"window_min": float(left.min()), "window_max": float(right.max())}
    return QuadratureGrid(d, nodes, weights, n_radial, n_angular, float(r0),
                          float(r1), log_envelope is not None, meta)


def refined(grid_fn, n_radial, n_angular):
    """The doubled-order companion used by the convergence gate."""
    return grid_fn(2 * n_radial, 2 * n_angular)


def fsum_complex(values) -> complex | float:
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return complex(math.fsum(values.real), math.fsum(values.imag))
    return math.fsum(values)


def integrate(grid: QuadratureGrid, integrand: Callable | np.ndarray):
    """Weighted sum with correctly rounded (order-independent) summation."""
    vals = integrand(grid.nodes) if callable(integrand) else np.asarray(integrand)
    return fsum_complex(grid.weights * vals)


@dataclass
class LogValue:
    """``exp(log_norm) * mantissa``; represents integrals far outside the
    double range."""

    log_norm: float
    mantissa: float

    @property
    def log_abs(self) -> float:
        if self.mantissa == 0:
            return -math.inf
        return self.log_norm + math.log(abs(self.mantissa))

    def value(self) -> float:
        if self.mantissa == 0:
            return 0.0
        la = self.log_abs
        if la > 709:
            return math.copysign(math.inf, self.mantissa)
        return math.copysign(math.exp(la), self.mantissa)

    def relative_change(self, other: "LogValue") -> float:
        if self.mantissa == 0 and other.mantissa == 0:
            return 0.0
        if other.mantissa == 0 or self.mantissa == 0:
            return math.inf
        ratio = math.exp(self.log_norm - other.log_norm) * self.mantissa / other.mantissa
        return abs(ratio - 1.0)

    def scaled(self, log_factor: float) -> "LogValue":
        return LogValue(self.log_norm + log_factor, self.mantissa)


def integrate_log(grid: QuadratureGrid, log_factor: np.ndarray, mantissa: np.ndarray) -> LogValue:
    """``sum_i w_i exp(log_factor_i) mantissa_i`` normalised by the largest
    finite ``log_factor``; the normalisation is exact and cancels in ratios."""
    log_factor = np.asarray(log_factor, dtype=float)
    finite = np.isfinite(log_factor)
    if not np.any(finite):
        return LogValue(0.0, 0.0)
    L = float(log_factor[finite].max())
    with np.errstate(under="ignore"):
        scale = np.where(finite, np.exp(np.where(finite, log_factor - L, 0.0)), 0.0)
    m = np.where(finite, np.asarray(mantissa), 0.0)
    total = fsum_complex(grid.weights * scale * m)
    if isinstance(total, complex):
        total = total.real
    return LogValue(L, float(total))


def map_chunks(func: Callable, X: np.ndarray, jobs: int = 1):
    """Apply ``func`` to fixed-size row blocks of ``X``; concatenates in
    order, so output is identical for every ``jobs``."""
    blocks = [X[i:i + CHUNK] for i in range(0, X.shape[0], CHUNK)]
    if jobs <= 1 or len(blocks) == 1:
        parts = [func(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(func, blocks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)
