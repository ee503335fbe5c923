"""Staged verification run driven by an ``ExperimentConfig``.

Stages run in a fixed order and each draws its sample points from its own
counter-based stream ``Philox(SeedSequence([seed, stage]))``, so a stage
gives the same numbers whether or not the others run.  The admissibility
gate comes first: if ``mu`` is not admissible every later stage is
recorded as skipped.
"""

from __future__ import annotations

import json
import math
from typing import Optional, Sequence

import numpy as np

from . import harness
from .calculus import (check_lemma31, check_prop32, f_tilde_residual,
                       sample_annulus_points)
from .config import ExperimentConfig, config_record
from .constants import (carleman_constants, remark_upper_bounds,
                        unit_chain_enclosure)
from .harness import CheckResult, GridSpec, VerificationReport
from .params import verify_assumption
from .quadrature import QuadratureError
from .weight import WeightFunction, check_sandwich

STAGES = ("constants", "bounds", "identities", "lemma41", "carleman", "sweep")
SUITE_STAGES = ("constants", "bounds", "identities", "lemma41", "sweep")
ENCLOSURE_TOL = 1e-12    # float chain vs. interval enclosure, relative
_STAGE_IDS = {name: i for i, name in enumerate(STAGES)}


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), _STAGE_IDS[stage]])
    return np.random.Generator(np.random.Philox(ss))


def _num(v):
    """JSON-safe scalar: numpy types unwrapped, non-finite floats as text."""
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return _num(obj)


class _Run:
    def __init__(self, cfg: ExperimentConfig, jobs: int):
        self.cfg = cfg
        self.jobs = jobs
        self.field = cfg.build_field()
        self.params = cfg.problem_params(self.field)
        self.weight = WeightFunction(self.field, self.params.rho, self.params.mu)
        self.bumps = cfg.test_functions()
        self.grid = GridSpec(cfg.grid.n_radial, cfg.grid.n_angular, jobs)
        self.report = VerificationReport(_clean(config_record(cfg)))
        self.consts = carleman_constants(self.params, strict=False)
        tol = cfg.tolerances
        self.tol = tol

    def add(self, stage, name, passed, value=None, tolerance=None, detail=None,
            message=""):
        self.report.add(CheckResult(name, stage, None if passed is None else bool(passed),
                                    _num(value), _num(tolerance), _clean(detail or {}),
                                    False, message))

    def skip(self, stage, name, message):
        self.report.add(CheckResult(name, stage, None, skipped=True, message=message))

    def rng(self, stage):
        return stage_rng(self.cfg.sampling.seed, stage)

    # ------------------------------------------------------------ constants

    def constants(self):
        p, rep = self.params, self.consts
        st = "constants"
        self.add(st, "admissibility", rep.admissible, rep.admissibility_margin, 0.0,
                 {"mu": p.mu, "mu_threshold": p.mu_threshold, "theta1": p.theta1,
                  "theta2": p.theta2},
                 "" if rep.admissible else
                 f"mu = {p.mu:.6g} violates mu > 33 d theta1^(11/2) theta2 rho = "
                 f"{p.mu_threshold:.6g} (margin {rep.admissibility_margin:.6g})")
        if not rep.admissible:
            return False
        rec = {k: v for k, v in rep.record().items() if not k.startswith("param_")}
        self.add(st, "constant_chain", True, rep.C_used, None, rec,
                 "C and alpha0 used by the estimate")
        a = verify_assumption(self.field, p, self.cfg.sampling.n_assumption, self.rng(st))
        self.add(st, "assumption", a.passed, a.worst_ellipticity, p.theta1,
                 {"worst_lipschitz": a.worst_lipschitz, "theta2": p.theta2,
                  "n_samples": a.n_samples}, "; ".join(a.failures))
        ub = remark_upper_bounds(p)
        r1 = rep.tildeC / ub["tildeC_upper"]
        r2 = rep.tilde_alpha0 / ub["tilde_alpha0_upper"]
        self.add(st, "remark_upper_bounds", r1 <= 1 and r2 <= 1, max(r1, r2), 1.0,
                 dict(ub, tildeC=rep.tildeC, tilde_alpha0=rep.tilde_alpha0),
                 "computed constant / closed-form upper bound, exact")
        self.add(st, "alpha1_le_alpha2", rep.alpha_order_ok, rep.alpha1 / rep.alpha2, 1.0,
                 {"alpha1": rep.alpha1, "alpha2": rep.alpha2})
        self.add(st, "K_estimate", rep.K_estimate_ok, rep.K / rep.K_estimate, 1.0,
                 {"K": rep.K, "K_estimate": rep.K_estimate})
        enc = unit_chain_enclosure(p.d, p.theta1, p.rho * p.theta2, p.mu)
        worst = 0.0
        for key in ("hatC", "hat_alpha0"):
            x = getattr(rep, key)
            lo, hi = float(enc[key].a), float(enc[key].b)
            worst = max(worst, max(lo - x, x - hi, 0.0) / abs(x))
        self.add(st, "interval_enclosure", worst <= ENCLOSURE_TOL, worst, ENCLOSURE_TOL,
                 {"hatC": [float(enc["hatC"].a), float(enc["hatC"].b)],
                  "hat_alpha0": [float(enc["hat_alpha0"].a), float(enc["hat_alpha0"].b)]},
                 "relative distance of the float chain from its interval enclosure")
        if p.theta1 == 1 and p.theta2 == 0 and p.mu == 1 and p.rho == 1:
            d = p.d
            bc, ba = 8 * math.e**8 * d**2, 18 * math.e**12 * d**4
            ratio = max(rep.hatC / bc, rep.hat_alpha0 / ba)
            self.add(st, "laplacian_bounds", ratio <= 1, ratio, 1.0,
                     {"hatC": rep.hatC, "hatC_bound": bc, "hat_alpha0": rep.hat_alpha0,
                      "hat_alpha0_bound": ba})
        return True

    # ------------------------------------------------------------ bounds

    def bounds(self):
        st, p, s = "bounds", self.params, self.cfg.sampling
        rng = self.rng(st)
        sw = check_sandwich(self.weight, s.n_sandwich, p.theta1, rng=rng)
        self.add(st, "sandwich", sw.passed,
                 min(sw.worst_lower_margin, sw.worst_outer_lower, sw.worst_upper_margin,
                     sw.worst_outer_upper), 0.0,
                 {"lower": sw.worst_lower_margin, "outer_lower": sw.worst_outer_lower,
                  "upper": sw.worst_upper_margin, "outer_upper": sw.worst_outer_upper,
                  "n_samples": sw.n_samples}, "; ".join(sw.failures))
        X = sample_annulus_points(rng, s.n_bound_points, p.d)
        br = check_prop32(self.field, p, X, n_directions=s.n_directions, rng=rng)
        self.add(st, "prop32", br.passed, sum(br.violations.values()), 0,
                 {"violations": br.violations, "worst_slack": br.worst_slack,
                  "constants": br.constants, "allowance": br.allowance,
                  "n_points": br.n_points, "n_directions": br.n_directions},
                 "violation count; allowance is relative rounding for exact-zero bounds")

    # ------------------------------------------------------------ identities

    def identities(self):
        st, p, s, tol = "identities", self.params, self.cfg.sampling, self.tol
        rng = self.rng(st)
        X = p.rho * sample_annulus_points(rng, s.n_points, p.d)
        lr = check_lemma31(self.field, self.weight, X, tol.lemma31)
        self.add(st, "lemma31", lr.passed, lr.max_residual, tol.lemma31,
                 dict(lr.residuals, symmetry=lr.symmetry_residual, n_points=lr.n_points),
                 ", ".join(lr.failures()))
        alpha0 = self.consts.alpha0_used
        for name, u in self.bumps.items():
            Y = harness.support_points(u, s.n_conjugation, p.d, rng)
            for tag, a in (("0", 0.0), ("10", 10.0), ("alpha0", alpha0)):
                r = harness.check_conjugation_identity(self.field, p, u, a, Y,
                                                       tol.conjugation)
                self.add(st, f"conjugation[{name},alpha={tag}]", r.passed,
                         r.max_residual, tol.conjugation,
                         {"alpha": a, "n_points": r.n_points})
            res = f_tilde_residual(self.field, self.weight, Y, np.real(u.grad(Y)))
            worst = float(res.max())
            self.add(st, f"f_tilde[{name}]", worst < tol.f_tilde, worst, tol.f_tilde,
                     {"n_points": int(Y.shape[0])})
        if p.d > 3:
            for n in ("green", "rellich"):
                self.skip(st, n, "integration supports d <= 3")
            return
        real = [u.real_part() for u in self.bumps.values()]
        names = list(self.bumps)
        pairs = [(names[0], real[0], names[0], real[0])]
        if len(real) > 1:
            pairs.append((names[0], real[0], names[1], real[1]))
        for nu, u, nv, v in pairs:
            g = harness.check_green(self.field, u, v, self.grid, tol.green)
            self._integral(st, f"green[{nu},{nv}]", g)
        for name, f in zip(names, real):
            r = harness.check_rellich(self.field, self.weight, f, self.grid, tol.rellich)
            self._integral(st, f"rellich[{name}]", r)

    def _integral(self, st, name, ident):
        self.add(st, name, ident.passed, ident.residual, ident.tolerance,
                 {"lhs": ident.lhs, "rhs": ident.rhs, "max_change": ident.max_change,
                  "convergence_tolerance": self.tol.convergence, "level": ident.level,
                  "certified": ident.certified},
                 "" if ident.certified else "quadrature did not converge")

    # ------------------------------------------------------------ lemma 4.1

    def lemma41(self):
        st, p, tol = "lemma41", self.params, self.tol
        if p.d > 3:
            self.skip(st, "lemma41", "integration supports d <= 3")
            return
        if not self.consts.lower_order_free:
            self.skip(st, "lemma41", "stated for b = c = 0")
            return
        for name, u in self.bumps.items():
            if not u.is_real:
                self.skip(st, f"lemma41[{name}]", "stated for real-valued u")
                continue
            for a in self.cfg.lemma41.alphas:
                alpha = self.consts.alpha0_used if a == "alpha0" else float(a)
                tag = "alpha0" if a == "alpha0" else repr(float(a))
                r = harness.check_lemma41(self.field, p, u, alpha, self.grid,
                                          tol.inequality, self.cfg.lemma41.path)
                rel = r.slack / abs(r.I1) if r.I1 else 0.0
                self.add(st, f"lemma41[{name},alpha={tag}]", r.passed, rel, -tol.inequality,
                         {"alpha": alpha, "log_norm": r.log_norm, "I1": r.I1,
                          "T_M": r.T_M, "T_F": r.T_F, "T_D": r.T_D, "P": r.P, "Z": r.Z,
                          "T_F_alternative": r.T_F_alternative, "path": r.path,
                          "max_change": r.max_change, "level": r.level,
                          "convergence_tolerance": self.tol.convergence},
                         "slack / |I1|; passes at or above -tolerance"
                         + ("" if r.certified else "; quadrature did not converge"))

    # ------------------------------------------------------------ Carleman

    def _alphas(self, sweep: bool) -> list:
        a0 = self.consts.alpha0_used
        if not sweep:
            return [a0]
        if self.cfg.sweep.alphas:
            return [float(a) for a in self.cfg.sweep.alphas]
        return harness.geometric_alphas(a0, self.cfg.sweep.factor, self.cfg.sweep.points)

    def carleman(self, sweep: bool = False):
        st = "sweep" if sweep else "carleman"
        p = self.params
        if p.d > 3:
            self.skip(st, st, "integration supports d <= 3")
            return
        C = self.consts.C_used * self.cfg.sweep.C_scale
        a0 = self.consts.alpha0_used
        for name, u in self.bumps.items():
            sides = []
            for a in self._alphas(sweep):
                check = f"carleman[{name},alpha={a!r}]"
                try:
                    s = harness.carleman_sides(
                        self.field, p, u, a, self.grid, C, a0,
                        require_convergence=False,
                        complex_arithmetic=not u.is_real,
                        tol=self.tol.convergence)
                except QuadratureError as exc:   # pragma: no cover - gate is soft here
                    self.add(st, check, False, message=str(exc))
                    continue
                sides.append(s)
                L, g, lu, r = s.scaled_values()
                claim = s.in_hypothesis
                ok = s.passed and s.certified
                lr = s.log_ratio
                self.add(st, check, ok if claim else None,
                         None if lr is None else lr, 0.0,
                         {"alpha": a, "C": C, "log_scale": L, "lhs_grad": g, "lhs_u": lu,
                          "rhs": r, "ratio": s.ratio, "max_change": s.max_change,
                          "convergence_tolerance": self.tol.convergence,
                          "level": s.level, "n_nodes": s.n_nodes,
                          "certified": s.certified},
                         ("log(rhs / lhs); passes at or above 0"
                          + ("" if s.certified else "; quadrature did not converge")
                          if claim else "alpha below alpha0: reported without claim"))
            self.report.sweeps[name] = harness.sweep_csv(sides)


def run_suite(config: ExperimentConfig, jobs: int = 1,
              stages: Optional[Sequence[str]] = None) -> VerificationReport:
    """Run the selected stages (default: the full suite) and aggregate."""
    stages = SUITE_STAGES if stages is None else tuple(stages)
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    run = _Run(config, jobs)
    admissible = run.constants()
    for stage in STAGES[1:]:
        if stage not in stages:
            continue
        if not admissible:
            run.skip(stage, stage, "skipped: mu is not admissible")
            continue
        if stage == "bounds":
            run.bounds()
        elif stage == "identities":
            run.identities()
        elif stage == "lemma41":
            run.lemma41()
        elif stage == "carleman":
            run.carleman(sweep=False)
        elif stage == "sweep":
            run.carleman(sweep=True)
    if "constants" not in stages:
        # the gate always runs; keep only its admissibility verdict
        run.report.checks = [c for c in run.report.checks
                             if c.stage != "constants" or c.name == "admissibility"]
    return run.report


def report_json(report: VerificationReport) -> str:
    return json.dumps(_clean(report.record()), indent=2, sort_keys=True) + "\n"


def report_text(report: VerificationReport) -> str:
    lines = []
    for c in report.checks:
        status = "SKIP" if c.passed is None and c.skipped else (
            "INFO" if c.passed is None else ("PASS" if c.passed else "FAIL"))
        val = "" if c.value is None else f" value={_fmt(c.value)}"
        tol = "" if c.tolerance is None else f" tolerance={_fmt(c.tolerance)}"
        msg = f"  ({c.message})" if c.message else ""
        lines.append(f"{status}  {c.stage}/{c.name}{val}{tol}{msg}")
    lines.append(f"overall: {'PASS' if report.passed else 'FAIL'}")
    if report.failing():
        lines.append("failing: " + ", ".join(report.failing()))
    return "\n".join(lines) + "\n"


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


REPORT_CSV_COLUMNS = ("stage", "name", "passed", "value", "tolerance", "skipped",
                      "message")


def report_csv(report: VerificationReport) -> str:
    import csv
    import io
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for c in report.checks:
        row = c.record()
        w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else
                        ("" if row[k] is None else row[k])) for k in REPORT_CSV_COLUMNS})
    return buf.getvalue()
