"""Reference systems used by the tests and the demo scripts."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .backstepping import solve_direct_transform
from .core import LinearSystemSpec, QuasilinearSystemSpec, StateField, norm_L2
from .errors import UnstableStep
from .goursat import KernelSet
from .simulator import SchemeConfig, simulate_linear


def constant_system(eps1=1.0, eps2=1.0, c1=1.0, c2=1.0, q=1.0) -> LinearSystemSpec:
    return LinearSystemSpec(eps1=eps1, eps2=eps2, c1=c1, c2=c2, q=q)


def target_bump(x):
    """``sin(pi x)^2``: vanishes with its derivative at both ends."""
    return np.sin(np.pi * np.asarray(x, dtype=float)) ** 2


def compatible_initial_state(k: KernelSet, m: int, alpha0=target_bump, beta0=target_bump
                             ) -> StateField:
    """Plant state whose transformed image is ``(alpha0, beta0)``.

    With ``alpha0(0) = q beta0(0)`` and ``beta0(1) = 0`` the closed loop
    starts compatible with its boundary conditions.
    """
    return solve_direct_transform(k, StateField.from_functions(alpha0, beta0, m))


def _diag_lambda(offdiag: float):
    def Lambda(z, x):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0 + z[..., 0]
        out[..., 1, 1] = -1.0 + z[..., 1]
        out[..., 0, 1] = offdiag * z[..., 1]
        out[..., 1, 0] = offdiag * z[..., 0]
        return out
    return Lambda


def _coupling(z, x):
    z = np.asarray(z, dtype=float)
    return np.stack([0.5 * z[..., 1], 0.5 * z[..., 0]], axis=-1)


def quasilinear_benchmark(offdiag: float = 0.0) -> QuasilinearSystemSpec:
    """``Lambda = diag(1 + z1, -1 + z2)``, ``f = (z2/2, z1/2)``, ``G0(v) = v``.

    ``offdiag`` adds ``offdiag * z2`` and ``offdiag * z1`` off the diagonal of
    ``Lambda``; the equilibrium speeds are unchanged.
    """
    return QuasilinearSystemSpec(Lambda=_diag_lambda(offdiag), f=_coupling, G0=lambda v: v,
                                 f_lin=(0.0, 0.5, 0.5, 0.0), q0_deriv=1.0)


def quasilinear_initial_state(m: int, amplitude: float = 0.05) -> StateField:
    """``amplitude * (sin(pi x), -sin(pi x))``; meets the natural compatibility conditions."""
    return StateField.from_functions(lambda x: amplitude * np.sin(np.pi * x),
                                     lambda x: -amplitude * np.sin(np.pi * x), m)


@dataclass(frozen=True)
class SweepResult:
    c1: float
    c2: float
    q: float
    retained: float  # ||w(T)|| / ||w0|| in open loop


def open_loop_sweep(c_values=(0.5, 1.0, 1.5, 2.0), q_values=(0.5, 1.0), horizon: float = 1.25,
                    m: int = 100, threshold: float = 0.1) -> list[SweepResult]:
    """Open-loop retention of unit-speed systems at ``horizon * t_F``.

    Each candidate starts from ``sin(pi x)^2`` in both components.  Candidates
    whose open loop keeps less than ``threshold`` of the initial norm, or
    diverges, are dropped; the rest come back most neutral first (retention
    closest to 1 in log scale).
    """
    out = []
    w0 = StateField.from_functions(target_bump, target_bump, m)
    for c1, c2, q in itertools.product(c_values, c_values, q_values):
        sys = constant_system(c1=c1, c2=c2, q=q)
        cfg = SchemeConfig(m=m, cfl=0.9, t_end=horizon * sys.t_final, snapshot_stride=10 ** 6)
        try:
            tr = simulate_linear(sys, None, w0, cfg)
        except UnstableStep:
            continue
        ratio = norm_L2(tr.snapshots[-1]) / norm_L2(w0)
        if ratio >= threshold:
            out.append(SweepResult(c1, c2, q, ratio))
    return sorted(out, key=lambda r: abs(np.log(r.retained)))
