"""Experiment configuration: a small sectioned ``key = value`` format.

::

    # comment
    [params]
    d = 2
    mu = 1.0

    [field]
    kind = affine
    A0 = [[1, 0], [0, 1]]
    G = [[[0.001, 0], [0, 0]], [[0, 0], [0, 0.001]]]

    [bump radial]
    r0 = 0.3
    r1 = 0.7

Values are Python literals (numbers, lists, strings); a bare word such as
``affine`` is read as a string.  Every key has a default, unknown keys are
errors, and every error names the section, key and line.
"""

from __future__ import annotations

import ast
import re
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .params import (CoefficientField, FieldError, LowerOrderTerms, ProblemParams,
                     make_affine_field, make_smooth_field)
from .testfunctions import TestFunction, make_bump


class ConfigError(ValueError):
    """Parse or semantic error, located by section, key and line."""

    def __init__(self, message: str, section: str = "", key: str = "", line: int = 0):
        where = ".".join(p for p in (section, key) if p)
        loc = f"line {line}: " if line else ""
        super().__init__(f"{loc}{where + ': ' if where else ''}{message}")
        self.section, self.key, self.line = section, key, line


@dataclass(frozen=True)
class ParamsSpec:
    d: int = 2
    rho: float = 1.0
    mu: float = 1.0
    theta1: Optional[float] = None    # None: the field's certificate
    theta2: Optional[float] = None


@dataclass(frozen=True)
class FieldSpec:
    kind: str = "constant"             # constant | affine | smooth
    A0: Optional[tuple] = None         # None: identity
    G: Optional[tuple] = None
    b_kind: str = "zero"
    b_scale: float = 0.0
    b_vector: Optional[tuple] = None
    c_kind: str = "zero"
    c_scale: float = 0.0


@dataclass(frozen=True)
class BumpSpec:
    name: str
    r0: float
    r1: float
    modulation: str = "none"
    k: Optional[tuple] = None
    amplitude: float = 1.0


@dataclass(frozen=True)
class GridConfig:
    n_radial: int = 64
    n_angular: Optional[int] = None


@dataclass(frozen=True)
class SweepSpec:
    factor: float = 8.0
    points: int = 8
    alphas: tuple = ()                 # explicit values override the sweep
    C_scale: float = 1.0               # fault injection: multiplies C


@dataclass(frozen=True)
class Lemma41Spec:
    alphas: tuple = (10.0, "alpha0")
    path: str = "analytic"             # analytic | green | both


@dataclass(frozen=True)
class Tolerances:
    lemma31: float = 1e-7
    conjugation: float = 1e-6
    f_tilde: float = 1e-9
    green: float = 1e-7
    rellich: float = 1e-5
    inequality: float = 1e-6
    convergence: float = 1e-6


@dataclass(frozen=True)
class Sampling:
    seed: int = 0
    n_points: int = 200
    n_bound_points: int = 10000
    n_directions: int = 16
    n_sandwich: int = 10000
    n_conjugation: int = 100
    n_assumption: int = 10000


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    format: str = "json"


@dataclass(frozen=True)
class ExperimentConfig:
    params: ParamsSpec = ParamsSpec()
    field: FieldSpec = FieldSpec()
    bumps: tuple = ()                  # empty: default bumps for rho and d
    grid: GridConfig = GridConfig()
    sweep: SweepSpec = SweepSpec()
    lemma41: Lemma41Spec = Lemma41Spec()
    tolerances: Tolerances = Tolerances()
    sampling: Sampling = Sampling()
    output: OutputSpec = OutputSpec()

    # ----------------------------------------------------------- builders

    def lower_order(self) -> LowerOrderTerms:
        f = self.field
        return LowerOrderTerms(f.b_kind, f.b_scale, f.b_vector, f.c_kind, f.c_scale)

    def build_field(self) -> CoefficientField:
        d, f = self.params.d, self.field
        A0 = np.eye(d) if f.A0 is None else np.array(f.A0, float)
        lower = self.lower_order()
        if f.kind == "smooth":
            return make_smooth_field(A0, np.array(f.G, float), self.params.rho, lower)
        G = None if f.G is None else np.array(f.G, float)
        return make_affine_field(A0, G, self.params.rho, lower)

    def problem_params(self, fld: Optional[CoefficientField] = None) -> ProblemParams:
        fld = fld if fld is not None else self.build_field()
        p = self.params
        lower = self.lower_order()
        th1 = fld.certified_theta1 if p.theta1 is None else p.theta1
        th2 = fld.certified_theta2 if p.theta2 is None else p.theta2
        return ProblemParams(p.d, p.rho, th1, th2, p.mu, lower.b_inf, lower.c_inf)

    def bump_specs(self) -> tuple:
        if self.bumps:
            return self.bumps
        d, rho = self.params.d, self.params.rho
        k = tuple([3.0, -2.0, 1.0][:d])
        return (BumpSpec("radial", 0.3 * rho, 0.7 * rho),
                BumpSpec("wave", 0.25 * rho, 0.75 * rho, "plane_wave", k))

    def test_functions(self) -> dict:
        return {b.name: make_bump(b.r0, b.r1, b.modulation, b.k, self.params.rho,
                                  b.amplitude) for b in self.bump_specs()}


# ------------------------------------------------------------------ parsing

_SECTIONS = {"params": ParamsSpec, "field": FieldSpec, "grid": GridConfig,
             "sweep": SweepSpec, "lemma41": Lemma41Spec, "tolerances": Tolerances,
             "sampling": Sampling, "output": OutputSpec}
_SECTION_RE = re.compile(r"^\[\s*([A-Za-z0-9_]+)(?:\s+([A-Za-z0-9_\-]+))?\s*\]$")
_WORD_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")


def _literal(text: str, section: str, key: str, line: int):
    text = text.strip()
    if text == "":
        raise ConfigError("missing value", section, key, line)
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if _WORD_RE.match(text):
            return "none" if text == "None" else text
        raise ConfigError(f"cannot read value {text!r}", section, key, line) from None


def _freeze(v):
    if isinstance(v, (list, tuple)):
        return tuple(_freeze(x) for x in v)
    return v


def _coerce(cls, name: str, value, section: str, line: int):
    """Check and normalise one value against the dataclass field type."""
    ftype = {f.name: f.type for f in fields(cls)}[name]
    optional = "Optional" in str(ftype)
    if optional and (value is None or value in ("none", "auto")):
        return None
    base = str(ftype).replace("Optional[", "").rstrip("]")
    try:
        if base == "int":
            if isinstance(value, bool) or not float(value) == int(value):
                raise ValueError
            return int(value)
        if base == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if base == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if base == "tuple":
            if not isinstance(value, (list, tuple)):
                raise ValueError
            return _freeze(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected {base}, got {value!r}", section, name, line) from None
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse the configuration text; omitted keys take their defaults."""
    values = {name: {} for name in _SECTIONS}
    lines_of = {name: {} for name in _SECTIONS}
    bumps: dict = {}
    bump_lines: dict = {}
    seen = set()
    section, bump = None, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            name, label = m.group(1), m.group(2)
            if name == "bump":
                if label is None:
                    raise ConfigError("bump sections need a name, e.g. [bump radial]",
                                      "bump", "", lineno)
                if label in bumps:
                    raise ConfigError("duplicate bump", f"bump {label}", "", lineno)
                bumps[label] = {}
                bump_lines[label] = {"": lineno}
                section, bump = "bump", label
                continue
            if name not in _SECTIONS or label is not None:
                raise ConfigError(f"unknown section [{line[1:-1].strip()}]", "", "", lineno)
            if name in seen:
                raise ConfigError("duplicate section", name, "", lineno)
            seen.add(name)
            section, bump = name, None
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", section or "", "", lineno)
        if section is None:
            raise ConfigError("key outside any section", "", "", lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        if section == "bump":
            sec_name = f"bump {bump}"
            allowed = {f.name for f in fields(BumpSpec)} - {"name"}
            if key not in allowed:
                raise ConfigError("unknown key", sec_name, key, lineno)
            if key in bumps[bump]:
                raise ConfigError("duplicate key", sec_name, key, lineno)
            bumps[bump][key] = _coerce(BumpSpec, key, _literal(val, sec_name, key, lineno),
                                       sec_name, lineno)
            bump_lines[bump][key] = lineno
            continue
        cls = _SECTIONS[section]
        if key not in {f.name for f in fields(cls)}:
            raise ConfigError("unknown key", section, key, lineno)
        if key in values[section]:
            raise ConfigError("duplicate key", section, key, lineno)
        values[section][key] = _coerce(cls, key, _literal(val, section, key, lineno),
                                       section, lineno)
        lines_of[section][key] = lineno

    built = {name: cls(**values[name]) for name, cls in _SECTIONS.items()}
    bump_specs = []
    for label, kv in bumps.items():
        for req in ("r0", "r1"):
            if req not in kv:
                raise ConfigError("missing required key", f"bump {label}", req,
                                  bump_lines[label][""])
        bump_specs.append(BumpSpec(name=label, **kv))
    cfg = ExperimentConfig(built["params"], built["field"], tuple(bump_specs),
                           built["grid"], built["sweep"], built["lemma41"],
                           built["tolerances"], built["sampling"], built["output"])
    validate(cfg, lines_of, bump_lines)
    return cfg


def _strip_comment(raw: str) -> str:
    """Drop a trailing ``#`` comment that is not inside a quoted string."""
    out, quote = [], None
    for ch in raw:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out)


def validate(cfg: ExperimentConfig, lines_of=None, bump_lines=None) -> None:
    """Semantic checks; errors carry the line of the offending key."""
    lines_of = lines_of or {}
    bump_lines = bump_lines or {}

    def err(msg, section, key):
        raise ConfigError(msg, section, key, lines_of.get(section, {}).get(key, 0))

    p, f = cfg.params, cfg.field
    if p.d < 1:
        err("d must be a positive integer", "params", "d")
    if not p.rho > 0:
        err("rho must be positive", "params", "rho")
    if not p.mu > 0:
        err("mu must be positive", "params", "mu")
    if p.theta1 is not None and not p.theta1 > 0:
        err("theta1 must be positive", "params", "theta1")
    if p.theta2 is not None and p.theta2 < 0:
        err("theta2 must be non-negative", "params", "theta2")
    if f.kind not in ("constant", "affine", "smooth"):
        err(f"unknown field kind {f.kind!r}", "field", "kind")
    d = p.d
    if f.A0 is not None:
        A0 = np.array(f.A0, float) if _rect(f.A0) else None
        if A0 is None or A0.shape != (d, d):
            err(f"A0 must be a {d}x{d} matrix", "field", "A0")
        if not np.array_equal(A0, A0.T):
            err("A0 is not symmetric", "field", "A0")
        if np.linalg.eigvalsh(A0).min() <= 0:
            err("A0 is not positive definite", "field", "A0")
    if f.kind == "constant" and f.G is not None:
        err("a constant field takes no G", "field", "G")
    if f.kind == "smooth" and f.G is None:
        err("a smooth field needs G", "field", "G")
    if f.G is not None:
        G = np.array(f.G, float) if _rect(f.G) else None
        if G is None or G.shape != (d, d, d):
            err(f"G must list {d} matrices of shape {d}x{d}", "field", "G")
        for k in range(d):
            if not np.array_equal(G[k], G[k].T):
                err(f"G[{k}] is not symmetric", "field", "G")
    if f.b_kind not in ("zero", "constant", "rotating"):
        err(f"unknown b kind {f.b_kind!r}", "field", "b_kind")
    if f.c_kind not in ("zero", "constant", "cosine"):
        err(f"unknown c kind {f.c_kind!r}", "field", "c_kind")
    if f.b_kind == "constant" and (f.b_vector is None or len(f.b_vector) != d):
        err(f"constant b needs a b_vector of length {d}", "field", "b_vector")
    for b in cfg.bumps:
        line = bump_lines.get(b.name, {})
        sec = f"bump {b.name}"
        if not 0 < b.r0 < b.r1 < p.rho:
            raise ConfigError(f"need 0 < r0 < r1 < rho = {p.rho}", sec, "r1",
                              line.get("r1", line.get("", 0)))
        if b.modulation not in ("none", "plane_wave", "cos", "sin", "polynomial"):
            raise ConfigError(f"unknown modulation {b.modulation!r}", sec, "modulation",
                              line.get("modulation", 0))
        if b.modulation != "none" and (b.k is None or len(b.k) != d):
            raise ConfigError(f"modulation needs k of length {d}", sec, "k",
                              line.get("k", line.get("", 0)))
    if cfg.grid.n_radial < 4:
        err("n_radial must be >= 4", "grid", "n_radial")
    if cfg.grid.n_angular is not None and cfg.grid.n_angular < 4:
        err("n_angular must be >= 4", "grid", "n_angular")
    if cfg.sweep.points < 1:
        err("points must be >= 1", "sweep", "points")
    if not cfg.sweep.factor >= 1:
        err("factor must be >= 1", "sweep", "factor")
    if not cfg.sweep.C_scale > 0:
        err("C_scale must be positive", "sweep", "C_scale")
    for a in cfg.sweep.alphas:
        if isinstance(a, str) or not a > 0:
            err("alphas must be positive numbers", "sweep", "alphas")
    for a in cfg.lemma41.alphas:
        if a != "alpha0" and (isinstance(a, str) or not a > 0):
            err("alphas must be positive numbers or 'alpha0'", "lemma41", "alphas")
    if cfg.lemma41.path not in ("analytic", "green", "both"):
        err("path must be analytic, green or both", "lemma41", "path")
    for t in fields(Tolerances):
        if not getattr(cfg.tolerances, t.name) > 0:
            err("tolerances must be positive", "tolerances", t.name)
    s = cfg.sampling
    for name in ("n_points", "n_bound_points", "n_directions", "n_sandwich",
                 "n_conjugation", "n_assumption"):
        if getattr(s, name) < 1:
            err("must be >= 1", "sampling", name)
    if cfg.output.format not in ("csv", "json", "text"):
        err("format must be csv, json or text", "output", "format")


def _rect(v) -> bool:
    try:
        np.array(v, float)
        return True
    except (TypeError, ValueError):
        return False


# ------------------------------------------------------------------ emitting


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, str):
        return v if _WORD_RE.match(v) and v not in ("none", "auto", "None") else repr(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return "[" + ", ".join(_fmt(x) if not isinstance(x, str) else repr(x) for x in v) + "]"
    return repr(v)


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical text: every section and key, defaults included."""
    out = []
    for name in ("params", "field", "grid", "sweep", "lemma41", "tolerances",
                 "sampling", "output"):
        obj = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in fields(obj):
            out.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
        out.append("")
    for b in cfg.bumps:
        out.append(f"[bump {b.name}]")
        for f in fields(b):
            if f.name != "name":
                out.append(f"{f.name} = {_fmt(getattr(b, f.name))}")
        out.append("")
    return "\n".join(out)


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def with_overrides(cfg: ExperimentConfig, seed: Optional[int] = None,
                   out_dir: Optional[str] = None, fmt: Optional[str] = None):
    if seed is not None:
        cfg = replace(cfg, sampling=replace(cfg.sampling, seed=seed))
    if out_dir is not None or fmt is not None:
        cfg = replace(cfg, output=OutputSpec(out_dir or cfg.output.dir,
                                             fmt or cfg.output.format))
    return cfg


def config_record(cfg: ExperimentConfig) -> dict:
    """Experiment inputs echoed in reports (output paths excluded so that
    reports do not depend on where they are written)."""
    rec = asdict(cfg)
    rec.pop("output")
    rec["bumps"] = [asdict(b) for b in cfg.bump_specs()]
    return rec
