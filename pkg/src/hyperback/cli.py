"""Command line entry point.

Verbs::

    solve-kernels <cfg>   kernels and gains only
    simulate <cfg>        full pipeline: kernels, gains, simulation, diagnostics
    validate <cfg>        configuration checks, nothing is solved
    report <trace.csv>    norms and fitted decay rate of a saved trace

Exit status is 0 on success, 2 for configuration problems and 3 for
numerical failures.  Failures print one machine-readable line on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import backstepping as bs
from .config import ScenarioConfig, bundled_config, load_config, validate_config, BUNDLED
from .core import SimulationTrace, StateField
from .diagnostics import LyapunovWeights, fit_decay_rate, lyapunov_V1, v1_series, \
    write_diagnostics_csv
from .errors import (
    ConfigError,
    DegenerateRates,
    ExpressionSyntaxError,
    GridTooCoarse,
    HyperbolicityViolation,
    InvalidField,
    MissingField,
    NonPositiveNorm,
    NonPositiveSpeed,
    QNearZero,
    UnknownIdentifier,
)
from .goursat import TriangularGrid, picard_solve, write_kernels_csv
from .simulator import SchemeConfig, read_trace_csv, simulate_linear, simulate_quasilinear, \
    target_exact, write_state_csv, write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

CONFIG_ERRORS = (ConfigError, MissingField, ExpressionSyntaxError, UnknownIdentifier,
                 DegenerateRates, NonPositiveSpeed, HyperbolicityViolation, InvalidField,
                 QNearZero, GridTooCoarse, OSError, configparser.Error)


class StageFailure(Exception):
    def __init__(self, stage: str, error: Exception):
        super().__init__(str(error))
        self.stage = stage
        self.error = error


class _Stages:
    """Tags exceptions with the pipeline stage in which they happened."""

    def __init__(self):
        self.name = "startup"

    def __call__(self, name: str):
        self.name = name
        return self

    def __enter__(self):
        return self

    def __exit__(self, etype, exc, tb):
        if exc is not None and not isinstance(exc, StageFailure):
            raise StageFailure(self.name, exc) from exc
        return False


def _origin_module(exc: BaseException) -> str:
    tb = exc.__traceback__
    name = "cli"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("hyperback."):
            name = mod.split(".", 1)[1]
        tb = tb.tb_next
    return name


def _error_line(stage: str, exc: BaseException) -> str:
    return (f"error stage={stage} kind={type(exc).__name__} module={_origin_module(exc)} "
            f"message={json.dumps(str(exc))}")


def _exit_code(exc: BaseException) -> int:
    return EXIT_CONFIG if isinstance(exc, CONFIG_ERRORS) else EXIT_NUMERIC


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, msg: str = ""):
        if not self.quiet:
            print(msg)


# ---------------------------------------------------------------------------
# Pipeline pieces
# ---------------------------------------------------------------------------


def _design(cfg: ScenarioConfig, stage: _Stages):
    """Linear design system, scaling, kernel problem and (optional) g for q = 0."""
    with stage("kernel-assembly"):
        qsys = None
        if cfg.kind == "quasilinear":
            qsys = cfg.quasilinear_system()
            lin, scaling = bs.build_linear_spec(qsys)
        else:
            lin, scaling = cfg.linear_system(), bs.CoordinateScaling.identity()
        g_of_x = None
        if abs(lin.q) < bs.Q_MIN:
            h_free = cfg.exprs["h_free"].of_x() if "h_free" in cfg.exprs else None
            problem, g_of_x = bs.assemble_q0_kernel_problem(lin, h_free)
        else:
            problem = bs.assemble_direct_kernel_problem(lin)
    return qsys, lin, scaling, problem, g_of_x


def _kernels(cfg: ScenarioConfig, problem, stage: _Stages, out_dir: Path):
    with stage("kernel-solve"):
        k = picard_solve(problem, TriangularGrid(cfg.kernel_n), tol=cfg.tol,
                         max_iter=cfg.max_iter, sub_samples=cfg.sub_samples)
    with stage("output"):
        write_kernels_csv(out_dir / "kernels.csv", k)
    return k


def _gains(cfg: ScenarioConfig, k, scaling, stage: _Stages, out_dir: Path):
    with stage("gains"):
        gains = bs.controller_gains(k, cfg.m, scaling)
    with stage("output"):
        bs.write_gains_csv(out_dir / "gains.csv", gains)
    return gains


def _initial_state(cfg: ScenarioConfig, k, scaling, mats) -> StateField:
    f1, f2 = cfg.initial_profiles()
    s = StateField.from_functions(f1, f2, cfg.m)
    if cfg.init_coords == "target":
        s = bs.solve_direct_transform(k, s, mats)
        if cfg.kind == "quasilinear":
            x = s.x
            s = StateField(s.u / scaling.phi1(x), s.v / scaling.phi2(x))
    return s


def _fit(trace_times, norms, window):
    """Decay fit that stops at the first vanishing norm."""
    t0, t1 = window
    times = np.asarray(trace_times)
    norms = np.asarray(norms)
    zero = np.nonzero((norms <= 0.0) & (times >= t0))[0]
    if zero.size:
        t1 = min(t1, times[zero[0] - 1]) if zero[0] > 0 else t0
    try:
        return fit_decay_rate(times, norms, t0, t1)
    except (ValueError, NonPositiveNorm):
        return math.nan, math.nan


def _summary(out: _Out, cfg: ScenarioConfig, t_final: float, k, trace: SimulationTrace,
             rate, r2, window):
    out(f"kind: {cfg.kind} ({cfg.mode} loop)" if cfg.kind != "target-exact" else "kind: target-exact")
    out(f"t_F: {t_final:.12g}")
    if k is not None:
        out(f"picard iterations: {k.iterations} (final increment {k.final_increment:.3e}, "
            f"certified bound {k.certified_bound:.3e})")
    out(f"t_end: {trace.times[-1]:.6g} ({len(trace)} snapshots)")
    for name in ("L2", "H1", "H2", "sup"):
        out(f"{name}: initial {trace.norms[name][0]:.6e} final {trace.norms[name][-1]:.6e}")
    out(f"fitted {cfg.norm_for_fit()} decay rate on [{window[0]:.4g}, {window[1]:.4g}]: "
        f"{rate:.6g} (r^2 {r2:.4f})")


def _run_linear_like(cfg: ScenarioConfig, out: _Out, stage: _Stages, out_dir: Path,
                     solve_only: bool) -> int:
    qsys, lin, scaling, problem, g_of_x = _design(cfg, stage)
    k = _kernels(cfg, problem, stage, out_dir)
    gains = _gains(cfg, k, scaling, stage, out_dir)
    t_final = lin.t_final
    if solve_only:
        out(f"t_F: {t_final:.12g}")
        out(f"picard iterations: {k.iterations} (final increment {k.final_increment:.3e})")
        out(f"wrote {out_dir / 'kernels.csv'} and {out_dir / 'gains.csv'}")
        return EXIT_OK

    t_end = cfg.resolve_t_end(t_final)
    scheme = SchemeConfig(m=cfg.m, cfl=cfg.cfl, t_end=t_end, snapshot_stride=cfg.snapshot_stride)
    with stage("initial-data"):
        mats = bs.volterra_matrices(k, cfg.m)
        s0 = _initial_state(cfg, k, scaling, mats)
        used = gains if cfg.mode == "closed" else bs.ControllerGains.zero(cfg.m)
        ext = None
        if cfg.kind == "quasilinear" and cfg.mode == "closed":
            ext = bs.init_extension(qsys, gains, s0, cfg.d1, cfg.d2)
    with stage("simulate"):
        if cfg.kind == "quasilinear":
            trace = simulate_quasilinear(qsys, used, ext, s0, scheme)
        else:
            trace = simulate_linear(lin, used, s0, scheme)
    with stage("diagnostics"):
        weights = LyapunovWeights.from_rates(lin, cfg.lambda1, cfg.lambda2)
        if cfg.kind == "quasilinear":
            x = trace.snapshots[0].x
            p1, p2 = scaling.phi1(x), scaling.phi2(x)
            scaled = [StateField(s.u * p1, s.v * p2) for s in trace.snapshots]
            v1 = np.array([lyapunov_V1(weights, lin, bs.direct_transform(k, s, mats))
                           for s in scaled])
        else:
            v1 = v1_series(trace, k, lin, weights)
        window = cfg.fit_window(t_final, t_end)
        rate, r2 = _fit(trace.times, trace.norms[cfg.norm_for_fit()], window)
    with stage("output"):
        write_trace_csv(out_dir / "trace.csv", trace)
        write_state_csv(out_dir / "state_final.csv", trace.snapshots[-1])
        write_diagnostics_csv(out_dir / "diagnostics.csv", trace.times, v1)
    _summary(out, cfg, t_final, k, trace, rate, r2, window)
    return EXIT_OK


def _run_target(cfg: ScenarioConfig, out: _Out, stage: _Stages, out_dir: Path) -> int:
    with stage("kernel-assembly"):
        lin = cfg.linear_system()
    t_final = lin.t_final
    t_end = cfg.resolve_t_end(t_final)
    with stage("target-exact"):
        a0, b0 = cfg.initial_profiles()
        x = np.linspace(0.0, 1.0, cfg.m)
        h = x[1] - x[0]
        dt = cfg.cfl * h / float(max(np.max(lin.eps1(x)), np.max(lin.eps2(x))))
        count = max(int(math.ceil(t_end / (dt * cfg.snapshot_stride))), 1)
        times = np.linspace(0.0, t_end, count + 1)
        snaps = [StateField(*target_exact(lin, a0, b0, x, t)) for t in times]
        zeros = np.zeros(times.size)
        trace = SimulationTrace(times=times, snapshots=snaps, a=zeros, b=zeros.copy(),
                                control=np.array([s.v[-1] for s in snaps]))
    with stage("diagnostics"):
        weights = LyapunovWeights.from_rates(lin, cfg.lambda1, cfg.lambda2)
        v1 = np.array([lyapunov_V1(weights, lin, s) for s in snaps])
        window = cfg.fit_window(t_final, t_end)
        rate, r2 = _fit(times, trace.norms[cfg.norm_for_fit()], window)
    with stage("output"):
        write_trace_csv(out_dir / "trace.csv", trace)
        write_state_csv(out_dir / "state_final.csv", snaps[-1])
        write_diagnostics_csv(out_dir / "diagnostics.csv", times, v1)
    _summary(out, cfg, t_final, None, trace, rate, r2, window)
    return EXIT_OK


def _resolve_path(arg: str) -> Path:
    p = Path(arg)
    if not p.exists() and arg in BUNDLED:
        return bundled_config(arg)
    return p


def run_scenario(cfg_path, verb: str = "simulate", out_dir: Optional[str] = None,
                 grid_n: Optional[int] = None, quiet: bool = False) -> int:
    """Run ``verb`` on a scenario file and return the exit status."""
    out = _Out(quiet)
    stage = _Stages()
    try:
        with stage("config"):
            cfg = load_config(_resolve_path(str(cfg_path)))
            if grid_n is not None:
                if grid_n < 5:
                    raise ConfigError("--grid-n must be >= 5")
                cfg.kernel_n = grid_n
            target = Path(out_dir if out_dir is not None else cfg.out_dir)
            target.mkdir(parents=True, exist_ok=True)
        if verb == "solve-kernels":
            if cfg.kind == "target-exact":
                with stage("config"):
                    raise ConfigError("solve-kernels needs kind linear or quasilinear")
            return _run_linear_like(cfg, out, stage, target, solve_only=True)
        if cfg.kind == "target-exact":
            return _run_target(cfg, out, stage, target)
        return _run_linear_like(cfg, out, stage, target, solve_only=False)
    except StageFailure as fail:
        print(_error_line(fail.stage, fail.error), file=sys.stderr)
        return _exit_code(fail.error)


def run_validate(cfg_path, quiet: bool = False) -> int:
    diags = validate_config(_resolve_path(str(cfg_path)))
    for d in diags:
        print(f"error stage=validate kind={d.kind} field={d.field} message={json.dumps(d.message)}",
              file=sys.stderr)
    if not diags and not quiet:
        print(f"{cfg_path}: ok")
    return EXIT_CONFIG if diags else EXIT_OK


def run_report(trace_path, t_start: Optional[float] = None, t_end: Optional[float] = None,
               norm: str = "L2", quiet: bool = False) -> int:
    out = _Out(quiet)
    try:
        data = read_trace_csv(trace_path)
    except (OSError, ValueError, StopIteration) as exc:
        print(_error_line("report", exc), file=sys.stderr)
        return EXIT_CONFIG
    t = data["t"]
    t0 = t[0] if t_start is None else t_start
    t1 = t[-1] if t_end is None else t_end
    rate, r2 = _fit(t, data[norm], (t0, t1))
    out(f"samples: {t.size}, t in [{t[0]:.6g}, {t[-1]:.6g}]")
    for name in ("L2", "H1", "H2", "sup"):
        out(f"{name}: initial {data[name][0]:.6e} final {data[name][-1]:.6e}")
    out(f"fitted {norm} decay rate on [{t0:.4g}, {t1:.4g}]: {rate:.6g} (r^2 {r2:.4f})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hyperback",
                                 description="Backstepping boundary control of 2x2 hyperbolic systems.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=None, help="directory for CSV outputs")
    common.add_argument("--grid-n", type=int, default=None, help="kernel grid points per axis")
    common.add_argument("--quiet", action="store_true", help="suppress the summary")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb, text in (("solve-kernels", "solve kernels and write kernels.csv, gains.csv"),
                       ("simulate", "run the full scenario"),
                       ("validate", "check a scenario file")):
        p = sub.add_parser(verb, parents=[common], help=text)
        p.add_argument("config", help=f"scenario file or a bundled name ({', '.join(BUNDLED)})")
    p = sub.add_parser("report", parents=[common], help="summarise a trace CSV")
    p.add_argument("trace")
    p.add_argument("--norm", default="L2", choices=("L2", "H1", "H2", "sup"))
    p.add_argument("--t-start", type=float, default=None)
    p.add_argument("--t-end", type=float, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "validate":
        return run_validate(args.config, quiet=args.quiet)
    if args.verb == "report":
        return run_report(args.trace, args.t_start, args.t_end, args.norm, quiet=args.quiet)
    return run_scenario(args.config, args.verb, out_dir=args.out_dir, grid_n=args.grid_n,
                        quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
