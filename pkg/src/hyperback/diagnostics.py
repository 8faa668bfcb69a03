"""Lyapunov weights, the symmetrising matrix R and decay-rate fits.

``D(x) = diag(A exp(-mu x)/eps1, B exp(mu x)/eps2)`` weights the target
state; ``R = D + Theta`` adds an antidiagonal correction that makes
``R (Sigma - F1)`` symmetric when the speeds are perturbed by the
state-dependent part ``F1`` of the quasilinear system.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backstepping import CoordinateScaling, direct_transform, volterra_matrices
from .core import LinearSystemSpec, QuasilinearSystemSpec, SimulationTrace, StateField, \
    check_points, trapezoid_weights
from .errors import NonPositiveNorm, SmallDenominator
from .goursat import KernelSet


@dataclass(frozen=True)
class LyapunovWeights:
    A: float
    B: float
    mu: float
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0):
            raise ValueError("A and B must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")

    @classmethod
    def from_rates(cls, sys: LinearSystemSpec, lambda1: float = 1.0,
                   lambda2: float = 1.0) -> "LyapunovWeights":
        """``mu = lambda1 eps_bar``, ``A = lambda2 e^mu``, ``B = q^2 A + lambda2``."""
        if not (lambda1 > 0 and lambda2 > 0):
            raise ValueError("rates must be positive")
        xs = check_points()
        eps_bar = float(max(np.max(1.0 / sys.eps1(xs)), np.max(1.0 / sys.eps2(xs))))
        mu = lambda1 * eps_bar
        A = lambda2 * math.exp(mu)
        B = sys.q ** 2 * A + lambda2
        return cls(A=A, B=B, mu=mu, lambda1=lambda1, lambda2=lambda2)


def weight_D(w: LyapunovWeights, sys: LinearSystemSpec, x) -> np.ndarray:
    """Diagonal weight at ``x``, shape ``x.shape + (2, 2)``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (2, 2))
    out[..., 0, 0] = w.A * np.exp(-w.mu * x) / sys.eps1(x)
    out[..., 1, 1] = w.B * np.exp(w.mu * x) / sys.eps2(x)
    return out


def lyapunov_V1(w: LyapunovWeights, sys: LinearSystemSpec, g: StateField) -> float:
    """``int gamma^T D gamma dx`` by the trapezoid rule."""
    D = weight_D(w, sys, g.x)
    dens = D[:, 0, 0] * g.u ** 2 + D[:, 1, 1] * g.v ** 2
    return float(trapezoid_weights(g.m) @ dens)


# ---------------------------------------------------------------------------
# State-dependent speed perturbation and R
# ---------------------------------------------------------------------------


def lambda_nl(q: QuasilinearSystemSpec, scaling: CoordinateScaling, w: StateField) -> np.ndarray:
    """``F1(w, x) = Phi Lambda(Phi^{-1} w, x) Phi^{-1} + Sigma(x)``, shape ``(m, 2, 2)``.

    Vanishes at ``w = 0`` because ``Sigma = -Lambda(0, x)``.
    """
    x = w.x
    p1 = scaling.phi1(x)
    p2 = scaling.phi2(x)
    z = np.stack([w.u / p1, w.v / p2], axis=-1)
    lam = q.lambda_at(z, x).copy()
    lam[:, 0, 1] *= p1 / p2
    lam[:, 1, 0] *= p2 / p1
    lam0 = q.lambda_at(np.zeros_like(z), x)
    lam[:, 0, 0] -= lam0[:, 0, 0]
    lam[:, 1, 1] -= lam0[:, 1, 1]
    return lam


def sigma_matrix(sys: LinearSystemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (2, 2))
    out[..., 0, 0] = -sys.eps1(x)
    out[..., 1, 1] = sys.eps2(x)
    return out


def build_R(sys: LinearSystemSpec, F1: np.ndarray, w: LyapunovWeights, x) -> np.ndarray:
    """``R = D + Theta`` with ``Theta`` antidiagonal, both entries ``psi``.

    ``psi = (D11 F1_12 - D22 F1_21) / (eps1 + eps2 + F1_11 - F1_22)``.

    Raises
    ------
    SmallDenominator
        If the denominator drops below ``min(eps1 + eps2) / 2`` at a node.
    """
    x = np.asarray(x, dtype=float)
    F1 = np.asarray(F1, dtype=float)
    e1, e2 = sys.eps1(x), sys.eps2(x)
    K1 = float(np.min(e1 + e2))
    denom = e1 + e2 + F1[..., 0, 0] - F1[..., 1, 1]
    if np.any(denom < 0.5 * K1):
        raise SmallDenominator(f"min denominator {np.min(denom):.4g} below K1/2 = {0.5 * K1:.4g}")
    D = weight_D(w, sys, x)
    psi = (D[..., 0, 0] * F1[..., 0, 1] - D[..., 1, 1] * F1[..., 1, 0]) / denom
    R = D.copy()
    R[..., 0, 1] = psi
    R[..., 1, 0] = psi
    return R


def check_symmetry_identity(R: np.ndarray, sigma_minus_F1: np.ndarray) -> float:
    """Sup over nodes of the Frobenius norm of ``R M - M^T R``."""
    M = np.asarray(sigma_minus_F1, dtype=float)
    R = np.asarray(R, dtype=float)
    res = R @ M - np.swapaxes(M, -1, -2) @ R
    if res.size == 0:
        return 0.0
    return float(np.max(np.sqrt(np.sum(res ** 2, axis=(-1, -2)))))


def lipschitz_lambda_nl(q: QuasilinearSystemSpec, scaling: CoordinateScaling, m: int = 101,
                        radius: float = 0.1, samples: int = 64, seed: int = 0) -> float:
    """Sampled bound ``K2`` with ``max_ij |F1_ij(w, x)| <= K2 (|w1| + |w2|)``.

    Probes constant states along random directions at several radii up to
    ``radius``; every node sees the same pointwise state, so one field probes
    all ``x`` at once.
    """
    rng = np.random.default_rng(seed)
    angles = np.concatenate([np.linspace(0.0, 2 * np.pi, 8, endpoint=False),
                             rng.uniform(0.0, 2 * np.pi, samples)])
    radii = radius * np.geomspace(1e-3, 1.0, 5)
    best = 0.0
    ones = np.ones(m)
    for th in angles:
        d = np.array([math.cos(th), math.sin(th)])
        d /= np.abs(d).sum()
        for r in radii:
            w = StateField(r * d[0] * ones, r * d[1] * ones)
            F1 = lambda_nl(q, scaling, w)
            best = max(best, float(np.max(np.abs(F1))) / r)
    return best


def positivity_radius(sys: LinearSystemSpec, w: LyapunovWeights, K2: float,
                      m: int = 201) -> float:
    """Sup-norm radius ``delta`` within which ``R`` is positive definite.

    With ``|F1_ij| <= K2 delta`` the denominator stays above ``K1/2`` when
    ``delta <= K1 / (4 K2)`` and ``psi^2 < D11 D22`` when
    ``delta < K1 sqrt(D11 D22) / (2 K2 (D11 + D22))``.
    """
    if K2 <= 0.0:
        return math.inf
    x = np.linspace(0.0, 1.0, m)
    D = weight_D(w, sys, x)
    d11, d22 = D[:, 0, 0], D[:, 1, 1]
    K1 = float(np.min(sys.eps1(x) + sys.eps2(x)))
    ratio = float(np.min(np.sqrt(d11 * d22) / (d11 + d22)))
    return min(K1 / (4.0 * K2), K1 * ratio / (2.0 * K2))


# ---------------------------------------------------------------------------
# Decay rates
# ---------------------------------------------------------------------------


def fit_decay_rate(times, norms, t_start: float, t_end: float) -> tuple[float, float]:
    """Least-squares slope of ``log(norm)`` against time, negated, with its ``r^2``."""
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    sel = (times >= t_start) & (times <= t_end)
    if np.count_nonzero(sel) < 5:
        raise ValueError("need at least 5 samples in the window")
    t, y = times[sel], norms[sel]
    if np.any(y <= 0.0):
        raise NonPositiveNorm("zero norm in the fit window; shrink the window")
    logy = np.log(y)
    slope, icpt = np.polyfit(t, logy, 1)
    ss_res = float(np.sum((logy - (slope * t + icpt)) ** 2))
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return -float(slope), r2


def v1_series(trace: SimulationTrace, k: KernelSet, sys: LinearSystemSpec,
              w: LyapunovWeights) -> np.ndarray:
    """``V1`` of the transformed state ``gamma = K[w]`` at every snapshot."""
    mats = volterra_matrices(k, trace.snapshots[0].m)
    return np.array([lyapunov_V1(w, sys, direct_transform(k, s, mats)) for s in trace.snapshots])


def rolling_rate(times, values, window: int = 5) -> np.ndarray:
    """Trailing-window decay-rate estimate; NaN where undefined."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    out = np.full(times.size, np.nan)
    for k in range(window - 1, times.size):
        seg = slice(k - window + 1, k + 1)
        if np.all(values[seg] > 0.0):
            out[k] = -np.polyfit(times[seg], np.log(values[seg]), 1)[0]
    return out


def write_diagnostics_csv(path, times: Sequence[float], v1: Sequence[float],
                          rate: Optional[Sequence[float]] = None) -> None:
    times = np.asarray(times, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    rate = rolling_rate(times, v1) if rate is None else np.asarray(rate, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "V1", "rate_window_estimate"])
        for row in zip(times, v1, rate):
            writer.writerow([f"{v:.17g}" for v in row])
