"""Scenario files: INI sections ``[system] [kernel] [scheme] [control] [output]``.

Coefficients are strings in the expression language of :mod:`hyperback.expr`.
``load_config`` checks syntax and ranges; ``validate_config`` additionally
samples the model on a grid (speed signs, finiteness) without solving
anything.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .core import NORM_NAMES, LinearSystemSpec, QuasilinearSystemSpec, check_points
from .errors import (
    ConfigError,
    DegenerateRates,
    ExpressionSyntaxError,
    HyperbackError,
    HyperbolicityViolation,
    InvalidField,
    MissingField,
    NonPositiveSpeed,
    UnknownIdentifier,
)
from .expr import Expression

KINDS = ("linear", "quasilinear", "target-exact")
LINEAR_FIELDS = ("eps1", "eps2", "c1", "c2")
QUASI_FIELDS = ("lambda11", "lambda12", "lambda21", "lambda22", "f1", "f2")
BUNDLED = ("linear_const.cfg", "quasilinear_bench.cfg", "target_exact.cfg")


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    field: str
    message: str
    error: Exception = field(repr=False, compare=False, default=None)

    def __str__(self):
        return f"{self.kind} [{self.field}]: {self.message}"


@dataclass
class ScenarioConfig:
    kind: str
    exprs: dict
    q: Optional[float] = None
    init_coords: str = "plant"
    kernel_n: int = 101
    tol: float = 1e-10
    max_iter: int = 200
    sub_samples: int = 4
    m: int = 400
    cfl: float = 0.9
    t_end: Optional[float] = None
    t_end_tf: Optional[float] = None
    snapshot_stride: int = 1
    mode: str = "closed"
    d1: float = 1.0
    d2: float = 2.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    out_dir: str = "out"
    fit_norm: Optional[str] = None
    fit_start_tf: Optional[float] = None
    fit_end_tf: Optional[float] = None
    source: str = ""

    # -- model construction -------------------------------------------------

    def linear_system(self) -> LinearSystemSpec:
        e = self.exprs
        return LinearSystemSpec(eps1=e["eps1"].of_x(), eps2=e["eps2"].of_x(),
                                c1=e["c1"].of_x(), c2=e["c2"].of_x(), q=self.q)

    def quasilinear_system(self) -> QuasilinearSystemSpec:
        e = self.exprs
        rows = ((e["lambda11"], e["lambda12"]), (e["lambda21"], e["lambda22"]))

        def Lambda(z, x):
            z = np.asarray(z, dtype=float)
            x = np.broadcast_to(np.asarray(x, dtype=float), z.shape[:-1])
            env = dict(x=x, z1=z[..., 0], z2=z[..., 1])
            out = np.empty(z.shape[:-1] + (2, 2))
            for r in range(2):
                for c in range(2):
                    out[..., r, c] = rows[r][c](**env)
            return out

        def f(z, x):
            z = np.asarray(z, dtype=float)
            x = np.broadcast_to(np.asarray(x, dtype=float), z.shape[:-1])
            env = dict(x=x, z1=z[..., 0], z2=z[..., 1])
            return np.stack([np.broadcast_to(e["f1"](**env), x.shape),
                             np.broadcast_to(e["f2"](**env), x.shape)], axis=-1)

        def G0(v):
            v = np.asarray(v, dtype=float)
            return np.broadcast_to(e["G0"](z2=v), v.shape).astype(float)

        return QuasilinearSystemSpec(Lambda=Lambda, f=f, G0=G0)

    def initial_profiles(self):
        return self.exprs["init1"].of_x(), self.exprs["init2"].of_x()

    def resolve_t_end(self, t_final: float) -> float:
        if self.t_end is not None:
            return self.t_end
        return self.t_end_tf * t_final

    def fit_window(self, t_final: float, t_end: float) -> tuple[float, float]:
        start_default = 1.0 if self.kind == "quasilinear" else 0.0
        start = (self.fit_start_tf if self.fit_start_tf is not None else start_default) * t_final
        end = t_end if self.fit_end_tf is None else min(self.fit_end_tf * t_final, t_end)
        return start, end

    def norm_for_fit(self) -> str:
        if self.fit_norm:
            return self.fit_norm
        return "H2" if self.kind == "quasilinear" else "L2"


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, parser: configparser.ConfigParser):
        self.p = parser
        self.diags: list[Diagnostic] = []

    def report(self, where: str, exc: Exception):
        self.diags.append(Diagnostic(type(exc).__name__, where, str(exc), exc))

    def raw(self, section: str, key: str, required: bool):
        if self.p.has_option(section, key):
            return self.p.get(section, key).strip()
        if required:
            self.report(f"{section}.{key}", MissingField(f"{section}.{key}"))
        return None

    def expr(self, section: str, key: str, allowed, required=True, default=None):
        src = self.raw(section, key, required and default is None)
        if src is None:
            src = default
        if src is None:
            return None
        where = f"{section}.{key}"
        try:
            ex = Expression(src)
        except (ExpressionSyntaxError, UnknownIdentifier) as exc:
            self.report(where, exc)
            return None
        extra = ex.variables - set(allowed)
        if extra:
            self.report(where, UnknownIdentifier(sorted(extra)[0]))
            return None
        return ex

    def number(self, section, key, default=None, cast=float, check=None, what=""):
        src = self.raw(section, key, default is None)
        if src is None:
            return default
        where = f"{section}.{key}"
        try:
            val = cast(src)
        except ValueError:
            self.report(where, ConfigError(f"{where}: cannot read {src!r} as {cast.__name__}"))
            return default
        if cast is float and not math.isfinite(val):
            self.report(where, ConfigError(f"{where} must be finite"))
            return default
        if check is not None and not check(val):
            self.report(where, ConfigError(f"{where} = {src} out of range ({what})"))
        return val

    def choice(self, section, key, options, default):
        src = self.raw(section, key, default is None)
        if src is None:
            return default
        if src not in options:
            self.report(f"{section}.{key}",
                        ConfigError(f"{section}.{key} must be one of {', '.join(options)}"))
            return default
        return src


def _read(path) -> tuple[Optional[ScenarioConfig], list[Diagnostic]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    path = Path(path)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        return None, [Diagnostic(type(exc).__name__, str(path), str(exc), exc)]
    except configparser.Error as exc:
        err = ConfigError(str(exc))
        return None, [Diagnostic("ConfigError", str(path), str(exc), err)]
    r = _Reader(parser)
    for sec in ("system", "kernel", "scheme", "control", "output"):
        if not parser.has_section(sec):
            parser.add_section(sec)

    kind = r.choice("system", "kind", KINDS, None)
    exprs = {}
    q = None
    if kind in ("linear", "target-exact"):
        for key in LINEAR_FIELDS:
            exprs[key] = r.expr("system", key, {"x"})
        q = r.number("system", "q")
    elif kind == "quasilinear":
        for key in QUASI_FIELDS:
            exprs[key] = r.expr("system", key, {"x", "z1", "z2"})
        exprs["G0"] = r.expr("system", "G0", {"z2"})
    exprs["init1"] = r.expr("system", "init1", {"x"})
    exprs["init2"] = r.expr("system", "init2", {"x"})
    init_coords = r.choice("system", "init_coords", ("plant", "target"), "plant")

    cfg = dict(kind=kind, exprs=exprs, q=q, init_coords=init_coords, source=str(path))
    cfg["kernel_n"] = r.number("kernel", "n", 101, int, lambda v: v >= 5, ">= 5")
    cfg["tol"] = r.number("kernel", "tol", 1e-10, float, lambda v: v > 0, "> 0")
    cfg["max_iter"] = r.number("kernel", "max_iter", 200, int, lambda v: v >= 1, ">= 1")
    cfg["sub_samples"] = r.number("kernel", "sub_samples", 4, int, lambda v: v >= 4, ">= 4")

    cfg["m"] = r.number("scheme", "m", 400, int, lambda v: v >= 8, ">= 8")
    cfg["cfl"] = r.number("scheme", "cfl", 0.9, float, lambda v: 0 < v <= 1, "in (0, 1]")
    t_end = r.number("scheme", "t_end", math.nan, float, lambda v: v > 0, "> 0") \
        if parser.has_option("scheme", "t_end") else None
    t_end_tf = r.number("scheme", "t_end_tf", math.nan, float, lambda v: v > 0, "> 0") \
        if parser.has_option("scheme", "t_end_tf") else None
    if t_end is None and t_end_tf is None:
        r.report("scheme.t_end", MissingField("scheme.t_end"))
    elif t_end is not None and t_end_tf is not None:
        r.report("scheme.t_end", ConfigError("give only one of scheme.t_end, scheme.t_end_tf"))
    cfg["t_end"], cfg["t_end_tf"] = t_end, t_end_tf
    cfg["snapshot_stride"] = r.number("scheme", "snapshot_stride", 1, int, lambda v: v >= 1, ">= 1")

    cfg["mode"] = r.choice("control", "mode", ("closed", "open"), "closed")
    cfg["d1"] = r.number("control", "d1", 1.0, float, lambda v: v > 0, "> 0")
    cfg["d2"] = r.number("control", "d2", 2.0, float, lambda v: v > 0, "> 0")
    if abs(cfg["d1"] - cfg["d2"]) <= 1e-9:
        r.report("control.d1", DegenerateRates("control.d1 and control.d2 must differ"))
    cfg["lambda1"] = r.number("control", "lambda1", 1.0, float, lambda v: v > 0, "> 0")
    cfg["lambda2"] = r.number("control", "lambda2", 1.0, float, lambda v: v > 0, "> 0")
    h_free = r.expr("control", "h_free", {"x"}, required=False)
    if h_free is not None:
        exprs["h_free"] = h_free

    cfg["out_dir"] = r.raw("output", "dir", False) or "out"
    cfg["fit_norm"] = r.choice("output", "fit_norm", NORM_NAMES, "")
    cfg["fit_start_tf"] = r.number("output", "fit_start_tf", None, float) \
        if parser.has_option("output", "fit_start_tf") else None
    cfg["fit_end_tf"] = r.number("output", "fit_end_tf", None, float) \
        if parser.has_option("output", "fit_end_tf") else None

    if r.diags:
        return None, r.diags
    return ScenarioConfig(**cfg), []


def load_config(path) -> ScenarioConfig:
    """Parse a scenario file; raises the first problem found."""
    cfg, diags = _read(path)
    if diags:
        raise diags[0].error
    return cfg


def _model_checks(cfg: ScenarioConfig) -> list[Diagnostic]:
    out = []
    xs = check_points()

    def add(where, exc):
        out.append(Diagnostic(type(exc).__name__, where, str(exc), exc))

    def sample(where, fn):
        try:
            vals = np.asarray(fn(), dtype=float)
        except HyperbackError as exc:
            add(where, exc)
            return None
        if not np.all(np.isfinite(vals)):
            add(where, InvalidField(f"{where} is not finite on [0, 1]"))
            return None
        return vals

    e = cfg.exprs
    if cfg.kind in ("linear", "target-exact"):
        for key in ("eps1", "eps2"):
            vals = sample(f"system.{key}", lambda k=key: e[k].of_x()(xs))
            if vals is not None and np.any(vals <= 0.0):
                bad = float(xs[np.argmax(vals <= 0.0)])
                add(f"system.{key}", NonPositiveSpeed(f"system.{key} <= 0 at x = {bad:.4g}"))
        for key in ("c1", "c2"):
            sample(f"system.{key}", lambda k=key: e[k].of_x()(xs))
    else:
        zero = np.zeros_like(xs)
        lam = {}
        for key in ("lambda11", "lambda12", "lambda21", "lambda22", "f1", "f2"):
            lam[key] = sample(f"system.{key}", lambda k=key: np.broadcast_to(
                e[k](x=xs, z1=zero, z2=zero), xs.shape))
        if lam["lambda11"] is not None and np.any(lam["lambda11"] <= 0.0):
            add("system.lambda11", HyperbolicityViolation("lambda11(0, x) must be positive"))
        if lam["lambda22"] is not None and np.any(lam["lambda22"] >= 0.0):
            add("system.lambda22", HyperbolicityViolation("lambda22(0, x) must be negative"))
        for key in ("lambda12", "lambda21"):
            if lam[key] is not None and np.max(np.abs(lam[key])) > 1e-12:
                add(f"system.{key}", HyperbolicityViolation(f"{key}(0, x) must vanish"))
        for key in ("f1", "f2"):
            if lam[key] is not None and np.max(np.abs(lam[key])) > 1e-12:
                add(f"system.{key}", InvalidField(f"{key}(0, x) must vanish"))
        g0 = sample("system.G0", lambda: e["G0"](z2=0.0))
        if g0 is not None and abs(float(g0)) > 1e-12:
            add("system.G0", InvalidField("G0(0) must vanish"))
    for key in ("init1", "init2"):
        sample(f"system.{key}", lambda k=key: e[k].of_x()(xs))
    if "h_free" in e:
        sample("control.h_free", lambda: e["h_free"].of_x()(xs))
    return out


def validate_config(path) -> list[Diagnostic]:
    """All problems found in a scenario file; empty when it is usable."""
    cfg, diags = _read(path)
    if diags:
        return diags
    return _model_checks(cfg)


def bundled_config(name: str) -> Path:
    """Path of a scenario file shipped with the package."""
    if name not in BUNDLED:
        raise ConfigError(f"no bundled config {name!r}; choose from {', '.join(BUNDLED)}")
    return Path(str(resources.files("hyperback").joinpath("configs", name)))
