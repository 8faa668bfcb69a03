"""Kernel problems, Volterra transforms, feedback gains and coordinate changes.

Kernel naming: the direct kernel ``K = [[Kuu, Kuv], [Kvu, Kvv]]`` is stored
as ``F1..F4`` of a :class:`~hyperback.goursat.KernelSet` in that order; the
inverse kernel ``L`` uses the same layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from .core import (
    FD_STEP,
    GridTooCoarse,
    LinearSystemSpec,
    QuasilinearSystemSpec,
    StateField,
    as_profile,
    central_derivative,
    check_points,
    dx1,
    trapezoid_weights,
)
from .errors import DegenerateRates, HyperbolicityViolation, QNearZero
from .goursat import GoursatProblem, KernelSet

Q_MIN = 1e-6
#: step for central differences of the speeds inside the kernel coefficients
SPEED_FD_STEP = 1e-5


def _is_zero(f) -> bool:
    return getattr(f, "constant_value", None) == 0.0


def _speed_derivative(sys: LinearSystemSpec, which: int):
    """``eps_k'`` as a profile, or None when the speed is constant."""
    analytic = sys.deps1 if which == 1 else sys.deps2
    if analytic is not None:
        return analytic
    eps = sys.eps1 if which == 1 else sys.eps2
    if hasattr(eps, "constant_value"):
        return None
    return lambda x: central_derivative(eps, x, SPEED_FD_STEP)


def _of_xi(f, sign=1.0):
    if f is None or _is_zero(f):
        return None
    return lambda x, xi: sign * f(xi)


def _of_x(f, sign=1.0):
    if f is None or _is_zero(f):
        return None
    return lambda x, xi: sign * f(x)


def _diagonal_data(sys: LinearSystemSpec):
    def h2(x):
        return sys.c1(x) / (sys.eps1(x) + sys.eps2(x))

    def h3(x):
        return -sys.c2(x) / (sys.eps1(x) + sys.eps2(x))
    return h2, h3


def _boundary_ratios(sys: LinearSystemSpec) -> tuple[float, float]:
    e1 = float(sys.eps1(np.array(0.0)))
    e2 = float(sys.eps2(np.array(0.0)))
    return e2 / (sys.q * e1), sys.q * e1 / e2


def assemble_direct_kernel_problem(sys: LinearSystemSpec, q_min: float = Q_MIN) -> GoursatProblem:
    """Kernel system for ``gamma = w - int_0^x K w``.

    Raises
    ------
    QNearZero
        If ``|q| < q_min``; use :func:`assemble_q0_kernel_problem` instead.
    """
    if abs(sys.q) < q_min:
        raise QNearZero(f"|q| = {abs(sys.q):.3g} < {q_min:g}; use the q = 0 design")
    d1 = _speed_derivative(sys, 1)
    d2 = _speed_derivative(sys, 2)
    C = [[None] * 4 for _ in range(4)]
    C[0][0] = _of_xi(d1, -1.0)
    C[0][1] = _of_xi(sys.c2, -1.0)
    C[1][1] = _of_xi(d2, 1.0)
    C[1][0] = _of_xi(sys.c1, -1.0)
    C[2][2] = _of_xi(d1, 1.0)
    C[2][3] = _of_xi(sys.c2, 1.0)
    C[3][3] = _of_xi(d2, -1.0)
    C[3][2] = _of_xi(sys.c1, 1.0)
    h2, h3 = _diagonal_data(sys)
    q1, q4 = _boundary_ratios(sys)
    return GoursatProblem(sys.eps1, sys.eps2, C=C, h=[None, h2, h3, None],
                          qb=[q1, None, None, q4])


def assemble_inverse_kernel_problem(sys: LinearSystemSpec, q_min: float = Q_MIN) -> GoursatProblem:
    """Kernel system for ``w = gamma + int_0^x L gamma``."""
    if abs(sys.q) < q_min:
        raise QNearZero(f"|q| = {abs(sys.q):.3g} < {q_min:g}; use the q = 0 design")
    d1 = _speed_derivative(sys, 1)
    d2 = _speed_derivative(sys, 2)
    C = [[None] * 4 for _ in range(4)]
    C[0][0] = _of_xi(d1, -1.0)
    C[0][2] = _of_x(sys.c1, 1.0)
    C[1][1] = _of_xi(d2, 1.0)
    C[1][3] = _of_x(sys.c1, 1.0)
    C[2][2] = _of_xi(d1, 1.0)
    C[2][0] = _of_x(sys.c2, -1.0)
    C[3][3] = _of_xi(d2, -1.0)
    C[3][1] = _of_x(sys.c2, -1.0)
    h2, h3 = _diagonal_data(sys)
    q1, q4 = _boundary_ratios(sys)
    return GoursatProblem(sys.eps1, sys.eps2, C=C, h=[None, h2, h3, None],
                          qb=[q1, None, None, q4])


def assemble_q0_kernel_problem(sys: LinearSystemSpec, h_free=None):
    """Direct kernel system for small or vanishing ``q``.

    The row ``Kuu(x, 0) = eps2(0)/(q eps1(0)) Kuv(x, 0)`` is replaced by the
    free choice ``Kuu(x, 0) = h_free(x)``; the target system then gains the
    term ``g(x) beta(0, t)`` in the ``alpha`` equation.

    Returns
    -------
    problem : GoursatProblem
    g_of_x : callable
        ``g_of_x(kernels)`` returns the profile ``g`` once the kernels are
        solved.
    """
    h_free = as_profile(0.0 if h_free is None else h_free)
    d1 = _speed_derivative(sys, 1)
    d2 = _speed_derivative(sys, 2)
    C = [[None] * 4 for _ in range(4)]
    C[0][0] = _of_xi(d1, -1.0)
    C[0][1] = _of_xi(sys.c2, -1.0)
    C[1][1] = _of_xi(d2, 1.0)
    C[1][0] = _of_xi(sys.c1, -1.0)
    C[2][2] = _of_xi(d1, 1.0)
    C[2][3] = _of_xi(sys.c2, 1.0)
    C[3][3] = _of_xi(d2, -1.0)
    C[3][2] = _of_xi(sys.c1, 1.0)
    h2, h3 = _diagonal_data(sys)
    e1 = float(sys.eps1(np.array(0.0)))
    e2 = float(sys.eps2(np.array(0.0)))
    q4 = sys.q * e1 / e2
    problem = GoursatProblem(sys.eps1, sys.eps2, C=C,
                             h=[None if _is_zero(h_free) else h_free, h2, h3, None],
                             qb=[None, None, None, None if q4 == 0.0 else q4])

    def g_of_x(kernels: KernelSet) -> Callable:
        kuv = kernels.F2

        def g(x):
            x = np.asarray(x, dtype=float)
            return e2 * kuv(x, np.zeros_like(x)) - sys.q * e1 * h_free(x)
        return g
    return problem, g_of_x


# ---------------------------------------------------------------------------
# Volterra transforms
# ---------------------------------------------------------------------------


def volterra_matrices(k: KernelSet, m: int) -> np.ndarray:
    """Kernel blocks sampled at ``(x_a, x_b)``, ``b <= a``, times trapezoid weights.

    Returns an array of shape ``(4, m, m)`` (zero above the diagonal) such
    that ``int_0^{x_a} F(x_a, s) f(s) ds ~ (W[F] @ f)[a]``.
    """
    if m < 2:
        raise GridTooCoarse("need m >= 2")
    x = np.linspace(0.0, 1.0, m)
    h = x[1] - x[0]
    A, B = np.tril_indices(m)
    W = np.full(A.shape, h)
    W[B == 0] *= 0.5
    W[B == A] *= 0.5
    W[A == 0] = 0.0
    out = np.zeros((4, m, m))
    if k.grid.n == m:
        for c, kk in enumerate(k.kernels):
            out[c, A, B] = kk.values * W
    else:
        for c, kk in enumerate(k.kernels):
            out[c, A, B] = kk(x[A], x[B]) * W
    return out


def _apply(mats: np.ndarray, s: StateField, sign: float) -> StateField:
    iu = mats[0] @ s.u + mats[1] @ s.v
    iv = mats[2] @ s.u + mats[3] @ s.v
    return StateField(s.u + sign * iu, s.v + sign * iv)


def direct_transform(k: KernelSet, w: StateField, mats: Optional[np.ndarray] = None) -> StateField:
    """``gamma(x) = w(x) - int_0^x K(x, s) w(s) ds`` by the trapezoid rule."""
    mats = volterra_matrices(k, w.m) if mats is None else mats
    return _apply(mats, w, -1.0)


def inverse_transform(l: KernelSet, g: StateField, mats: Optional[np.ndarray] = None) -> StateField:
    """``w(x) = gamma(x) + int_0^x L(x, s) gamma(s) ds`` by the trapezoid rule."""
    mats = volterra_matrices(l, g.m) if mats is None else mats
    return _apply(mats, g, 1.0)


def solve_direct_transform(k: KernelSet, g: StateField, mats: Optional[np.ndarray] = None
                           ) -> StateField:
    """The ``w`` with ``direct_transform(k, w) == g`` exactly on the grid.

    Works in the ``q = 0`` branch too, where no inverse kernel is assembled.
    """
    m = g.m
    mats = volterra_matrices(k, m) if mats is None else mats
    eye = np.eye(m)
    A = np.block([[eye - mats[0], -mats[1]], [-mats[2], eye - mats[3]]])
    w = np.linalg.solve(A, np.concatenate([g.u, g.v]))
    return StateField(w[:m], w[m:])


# ---------------------------------------------------------------------------
# Quasilinear -> linear design data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinateScaling:
    """Diagonal change of variables ``w = diag(phi1, phi2) z``."""

    phi1: Callable
    phi2: Callable

    @property
    def phi2_at_1(self) -> float:
        return float(self.phi2(np.array(1.0)))

    @classmethod
    def identity(cls) -> "CoordinateScaling":
        return cls(as_profile(1.0), as_profile(1.0))


def _exp_integral(rate: Callable, quad_points: int = 4097) -> Callable:
    """Profile ``exp(int_0^x rate)``, tabulated and interpolated."""
    xs = np.linspace(0.0, 1.0, quad_points)
    vals = rate(xs)
    if np.all(vals == 0.0):
        return as_profile(1.0)
    table = np.exp(cumulative_trapezoid(vals, xs, initial=0.0))
    interp = PchipInterpolator(xs, table)
    return lambda x: interp(np.clip(np.asarray(x, dtype=float), 0.0, 1.0))


def transformed_drift(q: QuasilinearSystemSpec, scaling: CoordinateScaling, w, x) -> np.ndarray:
    """Drift of the scaled state ``w = Phi z``.

    ``fbar(w, x) = Phi f(Phi^-1 w, x) - Lambdabar(w, x) diag(f11/L1, f22/L2) w``
    with ``Lambdabar = Phi Lambda(Phi^-1 w, x) Phi^-1``.
    """
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    p = np.stack([scaling.phi1(x), scaling.phi2(x)], axis=-1)
    z = w / p
    lam = q.lambda_at(z, x)
    lam_bar = lam * p[..., :, None] / p[..., None, :]
    l1, l2 = q.speeds(x)
    d = np.stack([q.f_lin[0](x) / l1, q.f_lin[3](x) / l2], axis=-1)
    return p * q.f_at(z, x) - np.einsum("...ij,...j->...i", lam_bar, d * w)


def drift_jacobian_fd(q: QuasilinearSystemSpec, scaling: CoordinateScaling, x,
                      step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of :func:`transformed_drift` at ``w = 0``."""
    x = np.asarray(x, dtype=float)
    jac = np.empty(x.shape + (2, 2))
    for col in range(2):
        dw = np.zeros(x.shape + (2,))
        dw[..., col] = step
        jac[..., :, col] = (transformed_drift(q, scaling, dw, x)
                            - transformed_drift(q, scaling, -dw, x)) / (2 * step)
    return jac


def build_linear_spec(q: QuasilinearSystemSpec, check_tol: float = 1e-6):
    """Linear design data of a quasilinear plant.

    Returns ``(LinearSystemSpec, CoordinateScaling)`` where the linear spec
    has ``eps1 = Lambda_1``, ``eps2 = -Lambda_2``, ``q = G0'(0)`` and
    ``C = -d fbar / dw`` at ``w = 0``.  The analytic ``C`` is checked against a
    finite-difference Jacobian of the scaled drift.
    """
    xs = check_points()
    l1, l2 = q.speeds(xs)
    if np.any(l1 <= 0.0) or np.any(l2 >= 0.0):
        raise HyperbolicityViolation("need Lambda_1 > 0 > Lambda_2")
    f11, f12, f21, f22 = q.f_lin

    def lam1(x):
        return q.speeds(x)[0]

    def lam2(x):
        return q.speeds(x)[1]

    phi1 = _exp_integral(lambda x: f11(x) / lam1(x))
    phi2 = _exp_integral(lambda x: f22(x) / lam2(x))
    scaling = CoordinateScaling(phi1, phi2)

    def c1(x):
        return -f12(x) * phi1(x) / phi2(x)

    def c2(x):
        return -f21(x) * phi2(x) / phi1(x)

    if np.all(f12(xs) == 0.0):
        c1 = 0.0
    if np.all(f21(xs) == 0.0):
        c2 = 0.0
    eps1 = lam1
    eps2 = lambda x: -lam2(x)  # noqa: E731
    lam0 = q.lambda_at(np.zeros((xs.size, 2)), xs)
    if np.all(lam0[:, 0, 0] == lam0[0, 0, 0]):
        eps1 = float(lam0[0, 0, 0])
    if np.all(lam0[:, 1, 1] == lam0[0, 1, 1]):
        eps2 = float(-lam0[0, 1, 1])
    lin = LinearSystemSpec(eps1, eps2, c1, c2, q.q0_deriv)

    jac = drift_jacobian_fd(q, scaling, xs)
    analytic = np.zeros_like(jac)
    analytic[:, 0, 1] = -lin.c1(xs)
    analytic[:, 1, 0] = -lin.c2(xs)
    err = float(np.max(np.abs(jac - analytic)))
    if err > check_tol:
        raise RuntimeError(f"coupling matrix disagrees with the drift Jacobian by {err:.3e}")
    return lin, scaling


# ---------------------------------------------------------------------------
# Gains, control law and dynamic extension
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControllerGains:
    """Feedback gains ``Kvu(1, .)`` and ``Kvv(1, .)`` on the simulation grid."""

    kvu: np.ndarray
    kvv: np.ndarray
    phi1_scale: np.ndarray
    phi2_scale: np.ndarray
    phi2_at_1: float

    def __post_init__(self):
        arrays = [np.array(getattr(self, n), dtype=float)
                  for n in ("kvu", "kvv", "phi1_scale", "phi2_scale")]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("gain arrays must be 1-D and of equal length")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("gains must be finite")
        if np.any(arrays[2] <= 0.0) or np.any(arrays[3] <= 0.0):
            raise ValueError("scalings must be positive")
        for name, a in zip(("kvu", "kvv", "phi1_scale", "phi2_scale"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "phi2_at_1", float(self.phi2_at_1))

    @property
    def m(self) -> int:
        return self.kvu.size

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m)

    @classmethod
    def zero(cls, m: int) -> "ControllerGains":
        return cls(np.zeros(m), np.zeros(m), np.ones(m), np.ones(m), 1.0)

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature weights ``k1, k2`` with ``U = k1 . z1 + k2 . z2``."""
        tw = trapezoid_weights(self.m)
        k1 = tw * self.kvu * self.phi1_scale / self.phi2_at_1
        k2 = tw * self.kvv * self.phi2_scale / self.phi2_at_1
        return k1, k2


def controller_gains(k: KernelSet, m: int, scaling: Optional[CoordinateScaling] = None
                     ) -> ControllerGains:
    """Sample ``F3(1, .)`` and ``F4(1, .)`` onto an ``m``-point grid."""
    scaling = scaling or CoordinateScaling.identity()
    x = np.linspace(0.0, 1.0, m)
    ones = np.ones(m)
    return ControllerGains(
        kvu=k.F3(ones, x),
        kvv=k.F4(ones, x),
        phi1_scale=scaling.phi1(x) * ones,
        phi2_scale=scaling.phi2(x) * ones,
        phi2_at_1=scaling.phi2_at_1,
    )


@dataclass
class DynamicExtension:
    """Controller states with ``a' = -d1 a`` and ``b' = -d2 b``."""

    a: float
    b: float
    d1: float
    d2: float

    def __post_init__(self):
        if not (self.d1 > 0 and self.d2 > 0):
            raise DegenerateRates("d1 and d2 must be positive")
        if abs(self.d1 - self.d2) <= 1e-9:
            raise DegenerateRates("d1 and d2 must differ")

    def at(self, t) -> tuple:
        """Exact states at time ``t`` starting from the stored values."""
        return self.a * np.exp(-self.d1 * np.asarray(t)), self.b * np.exp(-self.d2 * np.asarray(t))


def control_value(gains: ControllerGains, z: StateField,
                  ext: Optional[DynamicExtension] = None) -> float:
    """``(1/phi2(1)) (int Kvu phi1 z1 + int Kvv phi2 z2) + a + b``."""
    if z.m != gains.m:
        raise ValueError("state and gains must share the grid")
    k1, k2 = gains.weights()
    val = float(k1 @ z.u + k2 @ z.v)
    if ext is not None:
        val += ext.a + ext.b
    return val


def _flux(q: QuasilinearSystemSpec, z0: StateField) -> np.ndarray:
    """``Lambda(z0, x) z0_x + f(z0, x)`` with one-sided differences at the ends."""
    x = z0.x
    zs = z0.stacked()
    zx = np.stack([dx1(z0.u, z0.h), dx1(z0.v, z0.h)], axis=-1)
    return np.einsum("kij,kj->ki", q.lambda_at(zs, x), zx) + q.f_at(zs, x)


def compatibility_terms(q: QuasilinearSystemSpec, gains: ControllerGains, z0: StateField
                        ) -> tuple[float, float]:
    """``(P1, P2)`` for initial data ``z0``."""
    if z0.m < 4:
        raise GridTooCoarse("z0 needs at least 4 points")
    if z0.m != gains.m:
        raise ValueError("state and gains must share the grid")
    k1, k2 = gains.weights()
    flux = _flux(q, z0)
    P1 = float(z0.v[-1] - (k1 @ z0.u + k2 @ z0.v))
    P2 = float(flux[-1, 1] - (k1 @ flux[:, 0] + k2 @ flux[:, 1]))
    return P1, P2


def init_extension(q: QuasilinearSystemSpec, gains: ControllerGains, z0: StateField,
                   d1: float = 1.0, d2: float = 2.0) -> DynamicExtension:
    """Initial controller states that make the artificial compatibility conditions hold."""
    if not (d1 > 0 and d2 > 0):
        raise DegenerateRates("d1 and d2 must be positive")
    if abs(d1 - d2) <= 1e-9:
        raise DegenerateRates("d1 and d2 must differ")
    P1, P2 = compatibility_terms(q, gains, z0)
    a0 = -(P2 + d2 * P1) / (d1 - d2)
    b0 = (d1 * P1 + P2) / (d1 - d2)
    return DynamicExtension(a0, b0, d1, d2)


def extension_residuals(q: QuasilinearSystemSpec, gains: ControllerGains, z0: StateField,
                        ext: DynamicExtension) -> tuple[float, float]:
    """Residuals of the two controller compatibility conditions."""
    P1, P2 = compatibility_terms(q, gains, z0)
    return -P1 + ext.a + ext.b, -P2 - ext.d1 * ext.a - ext.d2 * ext.b


def check_natural_compatibility(q: QuasilinearSystemSpec, z0: StateField) -> tuple[float, float]:
    """Absolute residuals of the zeroth- and first-order conditions at ``x = 0``."""
    if z0.m < 4:
        raise GridTooCoarse("z0 needs at least 4 points")
    r0 = float(np.asarray(q.G0(z0.v[0]))) - z0.u[0]
    flux0 = _flux(q, z0)[0]
    v0 = z0.v[0]
    dG = (float(np.asarray(q.G0(v0 + FD_STEP))) - float(np.asarray(q.G0(v0 - FD_STEP)))) / (2 * FD_STEP)
    r1 = dG * flux0[1] - flux0[0]
    return abs(r0), abs(float(r1))


def write_gains_csv(path, gains: ControllerGains) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["xi", "kvu", "kvv", "phi1", "phi2"])
        for row in zip(gains.x, gains.kvu, gains.kvv, gains.phi1_scale, gains.phi2_scale):
            writer.writerow([f"{v:.17g}" for v in row])
