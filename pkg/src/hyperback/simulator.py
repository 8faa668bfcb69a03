"""Time marching of the target, linear and quasilinear closed loops.

All schemes are explicit first-order upwind on a uniform grid with the
boundary values imposed strongly after each interior update.  The actuated
boundary value appears in its own feedback integral (trapezoid endpoint), so
it is obtained by solving that scalar linear relation exactly.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .backstepping import ControllerGains, DynamicExtension, check_natural_compatibility
from .core import (
    LinearSystemSpec,
    QuasilinearSystemSpec,
    SimulationTrace,
    StateField,
    as_profile,
)
from .errors import HyperbolicitySignChange, UnstableStep
from .goursat import CharacteristicMaps, build_characteristics

DIVERGENCE_FACTOR = 1e6
COMPATIBILITY_WARN = 1e-6


@dataclass(frozen=True)
class SchemeConfig:
    m: int = 400
    cfl: float = 0.9
    t_end: float = 1.0
    snapshot_stride: int = 1

    def __post_init__(self):
        if int(self.m) < 8:
            raise ValueError("m must be >= 8")
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError("cfl must lie in (0, 1]")
        if not (self.t_end > 0.0):
            raise ValueError("t_end must be positive")
        if int(self.snapshot_stride) < 1:
            raise ValueError("snapshot_stride must be >= 1")

    @property
    def h(self) -> float:
        return 1.0 / (self.m - 1)


# ---------------------------------------------------------------------------
# Exact solution of the target system
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def target_exact(sys: LinearSystemSpec, alpha0, beta0, x, t: float,
                 g: Optional[Callable] = None,
                 maps: Optional[CharacteristicMaps] = None):
    """Explicit solution of ``alpha_t = -eps1 alpha_x + g beta(0, t)``, ``beta_t = eps2 beta_x``.

    Boundary conditions ``alpha(0, t) = q beta(0, t)`` and ``beta(1, t) = 0``.
    With ``g = None`` this is the plain cascade, which vanishes identically
    for ``t >= t_F = phi1(1) + phi2(1)``.

    Returns
    -------
    (alpha, beta) : arrays shaped like ``x``
    """
    maps = maps or build_characteristics(sys)
    alpha0 = as_profile(alpha0)
    beta0 = as_profile(beta0)
    x = np.asarray(x, dtype=float)
    t = float(t)
    p1, p2 = maps.phi1, maps.phi2
    P1x, P2x = p1(x), p2(x)

    def beta_left(s):
        """beta(0, s)."""
        s = np.asarray(s, dtype=float)
        inside = s <= p2.top
        return np.where(inside, beta0(p2.inv(np.where(inside, s, 0.0))), 0.0)

    b_inside = t <= p2.top - P2x
    beta = np.where(b_inside, beta0(p2.inv(np.where(b_inside, P2x + t, 0.0))), 0.0)

    a_inside = t <= P1x
    alpha = np.where(
        a_inside,
        alpha0(p1.inv(np.where(a_inside, P1x - t, 0.0))),
        sys.q * beta_left(np.where(a_inside, 0.0, t - P1x)),
    )
    if g is not None:
        g = as_profile(g)
        s0 = np.maximum(0.0, t - P1x)
        s1 = np.minimum(t, p2.top)
        span = np.maximum(s1 - s0, 0.0)
        mid = 0.5 * (s0 + s1)
        s = mid[..., None] + 0.5 * span[..., None] * _GL_NODES
        X = p1.inv(P1x[..., None] - (t - s))
        integrand = g(X) * beta_left(s)
        alpha = alpha + 0.5 * span * np.sum(integrand * _GL_WEIGHTS, axis=-1)
    return alpha, beta


# ---------------------------------------------------------------------------
# Linear plant
# ---------------------------------------------------------------------------


def _snapshot_plan(step: int, stride: int, done: bool) -> bool:
    return done or step % stride == 0


def simulate_linear(sys: LinearSystemSpec, gains: Optional[ControllerGains], w0: StateField,
                    cfg: SchemeConfig) -> SimulationTrace:
    """March ``u_t = -eps1 u_x + c1 v``, ``v_t = eps2 v_x + c2 u``.

    ``u(0) = q v(0)``; ``v(1) = U`` with ``U`` from the feedback gains
    (``gains=None`` means open loop, ``U = 0``).
    """
    m = cfg.m
    if w0.m != m:
        raise ValueError("w0 must live on cfg.m points")
    gains = gains or ControllerGains.zero(m)
    if gains.m != m:
        raise ValueError("gains must live on cfg.m points")
    x = np.linspace(0.0, 1.0, m)
    h = cfg.h
    e1, e2 = sys.eps1(x), sys.eps2(x)
    c1, c2 = sys.c1(x), sys.c2(x)
    dt_cfl = cfg.cfl * h / float(max(e1.max(), e2.max()))
    k1, k2 = gains.weights()
    denom = 1.0 - k2[-1]

    u = w0.u.copy()
    v = w0.v.copy()
    ref = max(float(np.max(np.abs(u) + np.abs(v))), 1e-300)
    times, snaps, ctrl = [0.0], [StateField(u, v)], [float(v[-1])]
    t, step = 0.0, 0
    while t < cfg.t_end * (1.0 - 1e-14):
        dt = min(dt_cfl, cfg.t_end - t)
        lam1 = dt * e1 / h
        lam2 = dt * e2 / h
        un = u.copy()
        vn = v.copy()
        un[1:] = u[1:] - lam1[1:] * (u[1:] - u[:-1]) + dt * c1[1:] * v[1:]
        vn[:-1] = v[:-1] + lam2[:-1] * (v[1:] - v[:-1]) + dt * c2[:-1] * u[:-1]
        un[0] = sys.q * vn[0]
        vn[-1] = (k1 @ un + k2[:-1] @ vn[:-1]) / denom
        u, v = un, vn
        t += dt
        step += 1
        if not np.all(np.isfinite(u)) or np.max(np.abs(u) + np.abs(v)) > DIVERGENCE_FACTOR * ref:
            raise UnstableStep(f"state grew beyond {DIVERGENCE_FACTOR:g} x initial at t={t:.4g}")
        done = t >= cfg.t_end * (1.0 - 1e-14)
        if _snapshot_plan(step, cfg.snapshot_stride, done):
            times.append(t)
            snaps.append(StateField(u, v))
            ctrl.append(float(v[-1]))
    zeros = np.zeros(len(times))
    return SimulationTrace(times=np.array(times), snapshots=snaps, a=zeros, b=zeros.copy(),
                           control=np.array(ctrl))


# ---------------------------------------------------------------------------
# Quasilinear plant
# ---------------------------------------------------------------------------


def _split_speeds(lam: np.ndarray):
    """Positive/negative parts of each 2x2 matrix in ``lam`` (shape ``(m, 2, 2)``).

    Raises if a matrix does not have one positive and one negative real
    eigenvalue.
    """
    tr = lam[:, 0, 0] + lam[:, 1, 1]
    det = lam[:, 0, 0] * lam[:, 1, 1] - lam[:, 0, 1] * lam[:, 1, 0]
    disc = 0.25 * tr * tr - det
    if np.any(disc <= 0.0):
        raise HyperbolicitySignChange("speeds became complex or coincident")
    root = np.sqrt(disc)
    lp = 0.5 * tr + root
    lm = 0.5 * tr - root
    if np.any(lp <= 0.0) or np.any(lm >= 0.0):
        k = int(np.argmax((lp <= 0.0) | (lm >= 0.0)))
        raise HyperbolicitySignChange(
            f"speeds lost their signs at node {k} (eigenvalues {lp[k]:.4g}, {lm[k]:.4g})")
    eye = np.eye(2)
    gap = (lp - lm)[:, None, None]
    plus = lp[:, None, None] * (lam - lm[:, None, None] * eye) / gap
    minus = -lm[:, None, None] * (lam - lp[:, None, None] * eye) / gap
    return plus, minus, float(max(lp.max(), -lm.min()))


def simulate_quasilinear(q: QuasilinearSystemSpec, gains: ControllerGains,
                         ext0: Optional[DynamicExtension], z0: StateField,
                         cfg: SchemeConfig) -> SimulationTrace:
    """March ``z_t + Lambda(z, x) z_x + f(z, x) = 0`` under the extended feedback.

    Boundary rows: ``z1(0) = G0(z2(0))`` and
    ``z2(1) = int k^T z + a(t) + b(t)``, where ``a, b`` decay exactly.
    Upwinding uses the split ``Lambda = Lambda+ + Lambda-`` of the local
    speeds, recomputed every step together with ``dt``.
    """
    m = cfg.m
    if z0.m != m or gains.m != m:
        raise ValueError("z0 and gains must live on cfg.m points")
    r0, r1 = check_natural_compatibility(q, z0)
    if max(r0, r1) > COMPATIBILITY_WARN:
        warnings.warn(f"initial data violate the natural compatibility conditions "
                      f"(residuals {r0:.2e}, {r1:.2e})", RuntimeWarning, stacklevel=2)
    x = np.linspace(0.0, 1.0, m)
    h = cfg.h
    k1, k2 = gains.weights()
    denom = 1.0 - k2[-1]
    if ext0 is None:
        a0 = b0 = 0.0
        d1 = d2 = 0.0
    else:
        a0, b0, d1, d2 = ext0.a, ext0.b, ext0.d1, ext0.d2

    z = z0.stacked().copy()
    ref = max(float(np.max(np.abs(z).sum(axis=1))), 1e-300)
    times, snaps = [0.0], [StateField(z[:, 0], z[:, 1])]
    av, bv, ctrl = [a0], [b0], [float(z[-1, 1])]
    t, step = 0.0, 0
    while t < cfg.t_end * (1.0 - 1e-14):
        lam = q.lambda_at(z, x)
        plus, minus, smax = _split_speeds(lam)
        dt = min(cfg.cfl * h / smax, cfg.t_end - t)
        back = np.zeros_like(z)
        fwd = np.zeros_like(z)
        back[1:] = (z[1:] - z[:-1]) / h
        fwd[:-1] = (z[1:] - z[:-1]) / h
        rate = (np.einsum("kij,kj->ki", plus, back) + np.einsum("kij,kj->ki", minus, fwd)
                + q.f_at(z, x))
        zn = z - dt * rate
        t += dt
        step += 1
        a = a0 * math.exp(-d1 * t)
        b = b0 * math.exp(-d2 * t)
        zn[0, 0] = float(np.asarray(q.G0(zn[0, 1])))
        zn[-1, 1] = (k1 @ zn[:, 0] + k2[:-1] @ zn[:-1, 1] + a + b) / denom
        z = zn
        if not np.all(np.isfinite(z)) or np.max(np.abs(z).sum(axis=1)) > DIVERGENCE_FACTOR * ref:
            raise UnstableStep(f"state grew beyond {DIVERGENCE_FACTOR:g} x initial at t={t:.4g}")
        done = t >= cfg.t_end * (1.0 - 1e-14)
        if _snapshot_plan(step, cfg.snapshot_stride, done):
            times.append(t)
            snaps.append(StateField(z[:, 0], z[:, 1]))
            av.append(a)
            bv.append(b)
            ctrl.append(float(z[-1, 1]))
    return SimulationTrace(times=np.array(times), snapshots=snaps, a=np.array(av),
                           b=np.array(bv), control=np.array(ctrl))


# ---------------------------------------------------------------------------
# Reports and CSV
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("t", "L2", "H1", "H2", "sup", "a", "b", "U")


def step_report(trace: SimulationTrace) -> dict:
    """Per-time table with columns ``t, L2, H1, H2, sup, a, b, U``."""
    table = {"t": trace.times.copy()}
    for name in ("L2", "H1", "H2", "sup"):
        table[name] = trace.norms[name].copy()
    table["a"] = trace.a.copy()
    table["b"] = trace.b.copy()
    table["U"] = trace.control.copy()
    return table


def write_trace_csv(path, trace: SimulationTrace) -> None:
    table = step_report(trace)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in zip(*(table[c] for c in TRACE_COLUMNS)):
            writer.writerow([f"{v:.17g}" for v in row])


def read_trace_csv(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))
    return {c: data[:, k] for k, c in enumerate(TRACE_COLUMNS)}


def write_state_csv(path, s: StateField) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "z1", "z2"])
        for row in zip(s.x, s.u, s.v):
            writer.writerow([f"{v:.17g}" for v in row])
