"""Every named constant of the Carleman estimate.

The chain is written once against a tiny arithmetic backend so it can be
replayed in interval arithmetic (``mpmath.iv``) to obtain outward-rounded
enclosures for audit purposes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from .params import ProblemParams


class InadmissibleMuError(ValueError):
    """``mu <= 33 d theta1^(11/2) theta2 rho``: the constant chain collapses."""


class _FloatOps:
    e = math.e

    @staticmethod
    def exp(x):
        return math.exp(x)

    @staticmethod
    def sqrt(x):
        return math.sqrt(x)

    @staticmethod
    def maximum(a, b):
        return max(a, b)

    @staticmethod
    def num(x):
        return float(x)


class _IntervalOps:
    """Outward-rounded interval arithmetic via ``mpmath.iv``."""

    def __init__(self, dps: int = 30):
        from mpmath import iv
        self.iv = iv
        iv.dps = dps
        self.e = iv.e

    def exp(self, x):
        return self.iv.exp(x)

    def sqrt(self, x):
        return self.iv.sqrt(x)

    def maximum(self, a, b):
        lo = max(a.a, b.a)
        hi = max(a.b, b.b)
        return self.iv.mpf([lo, hi])

    def num(self, x):
        return self.iv.mpf(x)


def _prop(d, th1, th2, mu, ops):
    sq = ops.sqrt(th1)
    E = ops.exp(mu * sq)
    CFp = 3 * d * th1**3 * sq * th2
    CF = E * (sq * (CFp + mu) + abs(d - 2))
    CM = 11 * d * th1**5 * sq * th2
    Cpsi = mu * E * th1**2 * (sq * (CFp + mu) + d - 1)
    return {"C_F_prime": CFp, "C_F": CF, "C_M": CM, "C_psi": Cpsi,
            "C_mu": mu - 3 * CM}


def prop_constants(d: int, theta1: float, theta2: float, mu: float) -> dict:
    """``C'_F, C_F, C_M, C_psi`` and ``C_mu = mu - 3 C_M``."""
    return _prop(d, float(theta1), float(theta2), float(mu), _FloatOps)


def _mu1(th1, mu, ops):
    s = math.sqrt(float(th1)) * float(mu)
    if s <= 1:
        return ops.exp(ops.sqrt(ops.num(th1)) * ops.num(mu))
    return ops.e * ops.sqrt(ops.num(th1)) * ops.num(mu)


def _chain(d, th1, th2, mu, ops):
    """Constants for the unit-radius estimate with Lipschitz constant ``th2``."""
    th1n, th2n, mun = ops.num(th1), ops.num(th2), ops.num(mu)
    c = _prop(d, th1n, th2n, mun, ops)
    sq = ops.sqrt(th1n)
    E = ops.exp(mun * sq)
    m1 = _mu1(th1, mu, ops)
    CF, Cpsi, Cmu = c["C_F"], c["C_psi"], c["C_mu"]
    K = ops.maximum(d * Cpsi, 6 * mun * m1 * E * th1n**2)
    K_estimate = 6 * d * mun * m1 * E * th1n**2 * (sq * (c["C_F_prime"] + mun) + d)
    t1 = K * th1n**2 * sq * m1**2 * E**2 / 8
    alpha1 = K * th1n**4 * sq * m1**2 * E**2
    inv = 1 / (E**2 * (th1n * m1) ** 2)   # e^{-2 mu sqrt(th1)} / (th1 mu1)^2
    p = Cmu * inv
    q = Cmu * CF * inv + K * (t1 + sq / 2)
    r = K * (1 + CF**2 * th1n**2 / 2)
    out = dict(c)
    out.update(mu1=m1, K=K, K_estimate=K_estimate, t1=t1, alpha1=alpha1,
               p=p, q=q, r=r, K1=K / 2 + (th1n * m1) ** 2 * E**2, K5=p / 2)
    if float(getattr(Cmu, "a", Cmu)) <= 0:
        return out
    alpha2 = q / p + ops.sqrt(q**2 / p**2 + 2 * r / p)
    out.update(alpha2=alpha2, hatC=out["K1"] / out["K5"],
               hat_alpha0=ops.maximum(alpha1, alpha2))
    return out


@dataclass
class ConstantsReport:
    """All constants for one parameter set.

    Chain constants are evaluated at the scaled Lipschitz constant
    ``rho * theta2``.  When ``admissible`` is false the chain fields are
    ``None`` and ``admissibility_margin`` (``mu`` minus the threshold) is
    negative or zero.
    """

    params: ProblemParams
    admissible: bool
    admissibility_margin: float
    C_F_prime: float
    C_F: float
    C_M: float
    C_psi: float
    C_mu: float
    mu1: float
    epsilon1: float
    K: Optional[float] = None
    K_estimate: Optional[float] = None
    t1: Optional[float] = None
    alpha1: Optional[float] = None
    p: Optional[float] = None
    q: Optional[float] = None
    r: Optional[float] = None
    alpha2: Optional[float] = None
    K1: Optional[float] = None
    K5: Optional[float] = None
    hatC: Optional[float] = None
    hat_alpha0: Optional[float] = None
    tildeC: Optional[float] = None
    tilde_alpha0: Optional[float] = None
    C_final: Optional[float] = None
    alpha0_final: Optional[float] = None
    tildeC_upper: Optional[float] = None
    tilde_alpha0_upper: Optional[float] = None
    alpha_order_ok: Optional[bool] = None      # alpha1 <= alpha2
    K_estimate_ok: Optional[bool] = None       # K <= paper's upper estimate
    K2: Optional[Callable] = field(default=None, repr=False)
    K3: Optional[Callable] = field(default=None, repr=False)
    K4: Optional[Callable] = field(default=None, repr=False)

    @property
    def lower_order_free(self) -> bool:
        return self.params.b_inf == 0 and self.params.c_inf == 0

    @property
    def C_used(self) -> Optional[float]:
        """Constant the estimate is checked with: ``C~`` without lower order
        terms, ``C = 6 C~`` otherwise."""
        return self.tildeC if self.lower_order_free else self.C_final

    @property
    def alpha0_used(self) -> Optional[float]:
        return self.tilde_alpha0 if self.lower_order_free else self.alpha0_final

    def record(self) -> dict:
        """Flat key-value record (params prefixed ``param_``)."""
        out = {f"param_{k}": v for k, v in asdict(self.params).items()}
        for k, v in asdict(self).items():
            if k in ("params", "K2", "K3", "K4"):
                continue
            out[k] = v
        out["C_used"] = self.C_used
        out["alpha0_used"] = self.alpha0_used
        return out

    def text(self) -> str:
        rec = self.record()
        width = max(len(k) for k in rec)
        lines = []
        for k, v in rec.items():
            if isinstance(v, float):
                v = f"{v:.12g}"
            lines.append(f"{k.ljust(width)}  {v}")
        return "\n".join(lines)


def epsilon1(d: int, theta1: float, theta2: float) -> float:
    """Feasibility number of the sampling theorem; positive means feasible."""
    return 1.0 - 33.0 * d * (math.sqrt(d) + 2) * theta1**5.5 * (math.e * theta1**1.5 + 1) * theta2


def remark_upper_bounds(params: ProblemParams) -> dict:
    """Closed-form upper bounds on ``C~`` and ``alpha~_0`` (b = c = 0 case)."""
    if not params.admissible:
        raise InadmissibleMuError(_inadmissible_message(params))
    d, th1, th2, mu, rho = params.d, params.theta1, params.theta2, params.mu, params.rho
    from .weight import mu1 as _m1
    m1 = _m1(th1, mu)
    E = math.exp(mu * math.sqrt(th1))
    Cmu = mu - 33 * d * th1**5.5 * th2 * rho
    tC = 2 * d**2 * th1**8 * E**4 * m1**4 * (3 * mu**2 + (9 * rho * th2 + 3) * mu + 1) / Cmu
    ta = (11 * d**4 * th1**16.5 * E**6 * m1**6 * (3 * rho * th2 + mu + 1) ** 2
          * (1 + mu * (mu + 1) / Cmu))
    return {"tildeC_upper": tC, "tilde_alpha0_upper": ta}


def _inadmissible_message(params):
    return (f"mu = {params.mu:.6g} violates mu > 33 d theta1^(11/2) theta2 rho "
            f"= {params.mu_threshold:.6g} (margin {params.admissibility_margin:.3g})")


def unit_chain(d: int, theta1: float, theta2: float, mu: float) -> dict:
    """``hat`` constants of the unit-radius estimate (float arithmetic)."""
    return _chain(d, theta1, theta2, mu, _FloatOps)


def unit_chain_enclosure(d: int, theta1, theta2, mu, dps: int = 30) -> dict:
    """Interval enclosures of the unit-radius chain (``mpmath.iv`` intervals)."""
    return _chain(d, theta1, theta2, mu, _IntervalOps(dps))


def carleman_constants(params: ProblemParams, strict: bool = True) -> ConstantsReport:
    """Full constant chain for ``params``.

    The unit-radius chain is evaluated at ``(d, theta1, rho * theta2, mu)``;
    then ``C = 6 C~`` and ``alpha_0 = max{alpha~_0, C rho^2 |b|^2 theta1^(3/2),
    C^(1/3) rho^(4/3) |c|^(2/3) sqrt(theta1)}``.

    Raises
    ------
    InadmissibleMuError
        If ``strict`` and ``mu`` is not admissible.  With ``strict=False`` the
        report carries ``None`` for every chain constant instead.
    """
    d, th1, mu, rho = params.d, params.theta1, params.mu, params.rho
    th2s = rho * params.theta2
    pc = prop_constants(d, th1, th2s, mu)
    from .weight import mu1 as _m1
    rep = ConstantsReport(params=params, admissible=params.admissible,
                          admissibility_margin=params.admissibility_margin,
                          mu1=_m1(th1, mu), epsilon1=epsilon1(d, th1, params.theta2),
                          **pc)
    if not params.admissible:
        if strict:
            raise InadmissibleMuError(_inadmissible_message(params))
        return rep
    ch = unit_chain(d, th1, th2s, mu)
    for k in ("K", "K_estimate", "t1", "alpha1", "p", "q", "r", "alpha2", "K1",
              "K5", "hatC", "hat_alpha0"):
        setattr(rep, k, ch[k])
    rep.alpha_order_ok = ch["alpha1"] <= ch["alpha2"]
    rep.K_estimate_ok = ch["K"] <= ch["K_estimate"]
    rep.tildeC = ch["hatC"]
    rep.tilde_alpha0 = ch["hat_alpha0"]
    rep.C_final = 6 * rep.tildeC
    C = rep.C_final
    rep.alpha0_final = max(rep.tilde_alpha0,
                           C * rho**2 * params.b_inf**2 * th1**1.5,
                           C ** (1 / 3) * rho ** (4 / 3) * params.c_inf ** (2 / 3) * math.sqrt(th1))
    rep.tildeC_upper, rep.tilde_alpha0_upper = remark_upper_bounds(params).values()

    p, q, r, K, t1 = ch["p"], ch["q"], ch["r"], ch["K"], ch["t1"]
    sq = math.sqrt(th1)
    E = math.exp(mu * sq)
    inv = 1 / (E**2 * (th1 * rep.mu1) ** 2)
    rep.K2 = lambda a: p * a**3 - q * a**2 - r * a
    rep.K3 = lambda a: (4 * inv - K * sq / (4 * t1)) * a**2 - 2 * K * th1**2.5 * a
    rep.K4 = lambda a: pc["C_mu"] * a
    return rep
