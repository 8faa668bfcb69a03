"""Shared domain types: system descriptions, grids, grid functions and norms.

Coefficient functions are plain vectorised callables.  A one-dimensional
profile takes an array ``x`` and returns an array of the same shape; a
function on the triangle takes ``(x, xi)``.  Numbers are accepted wherever a
profile is expected and are promoted to constant profiles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    GridTooCoarse,
    HyperbolicityViolation,
    InvalidField,
    NonPositiveSpeed,
)

Profile = Callable[[np.ndarray], np.ndarray]

#: Number of uniform samples used to check coefficient invariants.
CHECK_POINTS = 201
FD_STEP = 1e-6


def as_profile(f) -> Profile:
    """Promote a number or callable to a vectorised profile on [0, 1]."""
    if callable(f):
        def profile(x, _f=f):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(np.asarray(_f(x), dtype=float), x.shape).copy()
        profile.__wrapped__ = f
        return profile
    value = float(f)

    def constant(x, _c=value):
        return np.full(np.shape(x), _c, dtype=float)
    constant.constant_value = value
    return constant


def as_field2(f):
    """Promote a number or callable ``f(x, xi)`` to a vectorised function on the triangle."""
    if f is None:
        return None
    if callable(f):
        def fun(x, xi, _f=f):
            x = np.asarray(x, dtype=float)
            xi = np.asarray(xi, dtype=float)
            shape = np.broadcast_shapes(x.shape, xi.shape)
            return np.broadcast_to(np.asarray(_f(x, xi), dtype=float), shape).copy()
        return fun
    value = float(f)

    def constant(x, xi, _c=value):
        return np.full(np.broadcast_shapes(np.shape(x), np.shape(xi)), _c)
    constant.constant_value = value
    return constant


def check_points(n: int = CHECK_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def central_derivative(f: Profile, x: np.ndarray, step: float) -> np.ndarray:
    """Central difference of ``f`` at ``x``, one-sided where the stencil leaves [0, 1]."""
    x = np.asarray(x, dtype=float)
    lo = np.clip(x - step, 0.0, 1.0)
    hi = np.clip(x + step, 0.0, 1.0)
    return (f(hi) - f(lo)) / (hi - lo)


# ---------------------------------------------------------------------------
# System descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearSystemSpec:
    """Linear 2x2 plant ``w_t = Sigma w_x + C w`` with ``u(0) = q v(0)``.

    ``Sigma = diag(-eps1, eps2)`` and ``C = [[0, c1], [c2, 0]]``.  The optional
    ``deps1``/``deps2`` are analytic derivatives of the speeds; when absent
    the kernel assembly falls back to central differences.
    """

    eps1: Profile
    eps2: Profile
    c1: Profile
    c2: Profile
    q: float
    deps1: Optional[Profile] = None
    deps2: Optional[Profile] = None

    def __post_init__(self):
        for name in ("eps1", "eps2", "c1", "c2"):
            object.__setattr__(self, name, as_profile(getattr(self, name)))
        for name in ("deps1", "deps2"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, as_profile(getattr(self, name)))
        object.__setattr__(self, "q", float(self.q))
        if not np.isfinite(self.q):
            raise InvalidField("q must be finite")
        xs = check_points()
        for name in ("eps1", "eps2", "c1", "c2"):
            vals = getattr(self, name)(xs)
            if not np.all(np.isfinite(vals)):
                raise InvalidField(f"{name} is not finite on [0, 1]")
        for name in ("eps1", "eps2"):
            vals = getattr(self, name)(xs)
            if np.any(vals <= 0.0):
                bad = xs[np.argmax(vals <= 0.0)]
                raise NonPositiveSpeed(f"{name}(x) <= 0 at x={bad:.6g}")

    @property
    def t_final(self) -> float:
        """Time at which the target system reaches zero."""
        from scipy.integrate import quad

        val, _ = quad(lambda s: 1.0 / self.eps1(s) + 1.0 / self.eps2(s), 0.0, 1.0,
                      epsabs=1e-13, epsrel=1e-13, limit=200)
        return float(val)


@dataclass(frozen=True)
class QuasilinearSystemSpec:
    """Quasilinear plant ``z_t + Lambda(z, x) z_x + f(z, x) = 0``.

    ``Lambda(z, x)`` takes ``z`` of shape ``(..., 2)`` and ``x`` of shape
    ``(...)`` and returns ``(..., 2, 2)``; ``f`` returns ``(..., 2)``.  The
    left boundary is ``z1(0) = G0(z2(0))``.  ``f_lin`` holds the entries
    ``(f11, f12, f21, f22)`` of ``df/dz(0, x)``; ``q0_deriv`` is ``G0'(0)``.
    Both default to central differences with step ``1e-6``.
    """

    Lambda: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    G0: Callable[[np.ndarray], np.ndarray]
    f_lin: Optional[Sequence] = None
    q0_deriv: Optional[float] = None

    def __post_init__(self):
        if self.f_lin is None:
            object.__setattr__(self, "f_lin", tuple(self._fd_entry(r, c)
                                                    for r in range(2) for c in range(2)))
        else:
            if len(self.f_lin) != 4:
                raise ValueError("f_lin needs four entries f11, f12, f21, f22")
            object.__setattr__(self, "f_lin", tuple(as_profile(e) for e in self.f_lin))
        if self.q0_deriv is None:
            g = self.G0
            d = (np.asarray(g(FD_STEP), float) - np.asarray(g(-FD_STEP), float)) / (2 * FD_STEP)
            object.__setattr__(self, "q0_deriv", float(d))
        else:
            object.__setattr__(self, "q0_deriv", float(self.q0_deriv))

        xs = check_points()
        lam = self.lambda_at(np.zeros((xs.size, 2)), xs)
        if not np.all(np.isfinite(lam)):
            raise InvalidField("Lambda(0, x) is not finite")
        off = np.maximum(np.abs(lam[:, 0, 1]), np.abs(lam[:, 1, 0]))
        if np.any(off > 1e-12):
            raise HyperbolicityViolation("Lambda(0, x) must be diagonal")
        if np.any(lam[:, 0, 0] <= 0.0) or np.any(lam[:, 1, 1] >= 0.0):
            raise HyperbolicityViolation("need Lambda_1(x) > 0 > Lambda_2(x) on [0, 1]")
        f0 = self.f_at(np.zeros((xs.size, 2)), xs)
        if np.max(np.abs(f0)) > 1e-12:
            raise InvalidField("f(0, x) must vanish (equilibrium at the origin)")
        if abs(float(np.asarray(self.G0(0.0)))) > 1e-12:
            raise InvalidField("G0(0) must vanish")
        for k, e in enumerate(self.f_lin):
            if not np.all(np.isfinite(e(xs))):
                raise InvalidField(f"f_lin entry {k} is not finite")

    def _fd_entry(self, row: int, col: int) -> Profile:
        def entry(x):
            x = np.asarray(x, dtype=float)
            dz = np.zeros(x.shape + (2,))
            dz[..., col] = FD_STEP
            hi = self.f_at(dz, x)[..., row]
            lo = self.f_at(-dz, x)[..., row]
            return (hi - lo) / (2 * FD_STEP)
        return entry

    def lambda_at(self, z, x) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.Lambda(z, x), dtype=float), x.shape + (2, 2))

    def f_at(self, z, x) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.f(z, x), dtype=float), x.shape + (2,))

    def speeds(self, x) -> tuple[np.ndarray, np.ndarray]:
        """``(Lambda_1(x), Lambda_2(x))`` at the equilibrium."""
        x = np.asarray(x, dtype=float)
        lam = self.lambda_at(np.zeros(x.shape + (2,)), x)
        return lam[..., 0, 0], lam[..., 1, 1]


# ---------------------------------------------------------------------------
# Triangular grid and grid functions
# ---------------------------------------------------------------------------


class TriangularGrid:
    """Uniform nodes ``(x_i, xi_j)``, ``j <= i``, on ``{0 <= xi <= x <= 1}``.

    Nodes are stored row-major in ``i`` then ``j``; node ``(i, j)`` has flat
    index ``i*(i+1)/2 + j``.
    """

    def __init__(self, n: int):
        n = int(n)
        if n < 2:
            raise GridTooCoarse("a triangular grid needs n >= 2")
        self.n = n
        self.h = 1.0 / (n - 1)
        ii, jj = np.tril_indices(n)
        self.i = ii
        self.j = jj
        self.x = ii * self.h
        self.xi = jj * self.h
        self.size = ii.size

    def __repr__(self):
        return f"TriangularGrid(n={self.n})"

    def __eq__(self, other):
        return isinstance(other, TriangularGrid) and other.n == self.n

    def __hash__(self):
        return hash(("TriangularGrid", self.n))

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def index(self, i, j):
        i = np.asarray(i)
        return i * (i + 1) // 2 + np.asarray(j)

    def row(self, i: int) -> slice:
        """Flat slice of the nodes with ``x = x_i``."""
        start = i * (i + 1) // 2
        return slice(start, start + i + 1)

    def to_square(self, values: np.ndarray) -> np.ndarray:
        """Expand nodal values to an ``(n, n)`` array, NaN above the diagonal."""
        out = np.full((self.n, self.n), np.nan)
        out[self.i, self.j] = values
        return out

    def stencil(self, x, xi) -> tuple[np.ndarray, np.ndarray]:
        """Interpolation stencil: node indices and weights, each ``(..., 4)``.

        Interior cells use bilinear weights.  Cells cut by the diagonal use
        linear interpolation on the lower triangle, with the fourth weight 0.
        """
        h, n = self.h, self.n
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        xi = np.clip(np.asarray(xi, dtype=float), 0.0, None)
        xi = np.minimum(xi, x)
        a = x / h
        i = np.clip(np.floor(a).astype(np.int64), 0, n - 2)
        fa = np.clip(a - i, 0.0, 1.0)
        b = xi / h
        j = np.minimum(np.clip(np.floor(b).astype(np.int64), 0, n - 1), i)
        fb = np.clip(b - j, 0.0, 1.0)

        diag = j == i
        fb = np.where(diag, np.minimum(fb, fa), fb)
        base_i = i * (i + 1) // 2
        base_i1 = (i + 1) * (i + 2) // 2
        idx = np.empty(x.shape + (4,), dtype=np.int64)
        w = np.empty(x.shape + (4,))
        # square cells: (i,j), (i+1,j), (i,j+1), (i+1,j+1)
        idx[..., 0] = base_i + j
        idx[..., 1] = base_i1 + j
        idx[..., 2] = np.where(diag, base_i1 + j + 1, base_i + j + 1)
        idx[..., 3] = base_i1 + j + 1
        w[..., 0] = np.where(diag, 1.0 - fa, (1.0 - fa) * (1.0 - fb))
        w[..., 1] = np.where(diag, fa - fb, fa * (1.0 - fb))
        w[..., 2] = np.where(diag, fb, (1.0 - fa) * fb)
        w[..., 3] = np.where(diag, 0.0, fa * fb)
        return idx, w


@dataclass(frozen=True)
class GridFunction2T:
    """Nodal values on a :class:`TriangularGrid`, evaluable anywhere in the triangle."""

    grid: TriangularGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} nodal values, got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __call__(self, x, xi) -> np.ndarray:
        idx, w = self.grid.stencil(x, xi)
        return np.sum(self.values[idx] * w, axis=-1)

    def square(self) -> np.ndarray:
        return self.grid.to_square(self.values)

    def row(self, i: int) -> np.ndarray:
        """Values along ``x = x_i`` for ``xi_0 .. xi_i``."""
        return self.values[self.grid.row(i)]

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


# ---------------------------------------------------------------------------
# State fields and norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateField:
    """Two-component field sampled at ``x_k = k/(m-1)``."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.ndim != 1 or u.shape != v.shape:
            raise InvalidField("components must be 1-D arrays of equal length")
        if u.size < 2:
            raise GridTooCoarse("a state field needs at least 2 points")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise InvalidField("state field contains non-finite values")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_functions(cls, fu, fv, m: int) -> "StateField":
        x = np.linspace(0.0, 1.0, m)
        return cls(as_profile(fu)(x), as_profile(fv)(x))

    @classmethod
    def zeros(cls, m: int) -> "StateField":
        return cls(np.zeros(m), np.zeros(m))

    @property
    def m(self) -> int:
        return self.u.size

    @property
    def h(self) -> float:
        return 1.0 / (self.m - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m)

    def stacked(self) -> np.ndarray:
        """Components as an ``(m, 2)`` array."""
        return np.stack([self.u, self.v], axis=-1)


def trapezoid_weights(m: int) -> np.ndarray:
    w = np.full(m, 1.0 / (m - 1))
    w[0] = w[-1] = 0.5 / (m - 1)
    return w


def dx1(y: np.ndarray, h: float) -> np.ndarray:
    """First derivative: central inside, second-order one-sided at the ends."""
    y = np.asarray(y, dtype=float)
    if y.size < 3:
        return np.full_like(y, (y[-1] - y[0]) / h) if y.size == 2 else np.zeros_like(y)
    return np.gradient(y, h, edge_order=2)


def dx2(y: np.ndarray, h: float) -> np.ndarray:
    """Second derivative: central inside, second-order one-sided at the ends."""
    y = np.asarray(y, dtype=float)
    if y.size < 4:
        raise GridTooCoarse("second derivatives need at least 4 points")
    out = np.empty_like(y)
    out[1:-1] = (y[2:] - 2.0 * y[1:-1] + y[:-2]) / h**2
    out[0] = (2.0 * y[0] - 5.0 * y[1] + 4.0 * y[2] - y[3]) / h**2
    out[-1] = (2.0 * y[-1] - 5.0 * y[-2] + 4.0 * y[-3] - y[-4]) / h**2
    return out


def _l2(u: np.ndarray, v: np.ndarray, h: float) -> float:
    w = np.full(u.size, h)
    w[0] = w[-1] = 0.5 * h
    return float(np.sqrt(np.sum(w * (u * u + v * v))))


def norm_L2(s: StateField) -> float:
    return _l2(s.u, s.v, s.h)


def norm_H1(s: StateField) -> float:
    """``||s||_L2 + ||s_x||_L2``."""
    h = s.h
    return norm_L2(s) + _l2(dx1(s.u, h), dx1(s.v, h), h)


def norm_H2(s: StateField) -> float:
    """``||s||_H1 + ||s_xx||_L2``."""
    if s.m < 4:
        raise GridTooCoarse("H2 norm needs m >= 4")
    h = s.h
    return norm_H1(s) + _l2(dx2(s.u, h), dx2(s.v, h), h)


def norm_sup(s: StateField) -> float:
    """``sup_x (|u(x)| + |v(x)|)``."""
    return float(np.max(np.abs(s.u) + np.abs(s.v)))


NORM_NAMES = ("L2", "H1", "H2", "sup")


def all_norms(s: StateField) -> dict[str, float]:
    return {"L2": norm_L2(s), "H1": norm_H1(s), "H2": norm_H2(s), "sup": norm_sup(s)}


@dataclass
class SimulationTrace:
    """Time series produced by the simulators.

    ``control`` is the value imposed at the actuated boundary; ``a`` and
    ``b`` are the dynamic-extension states (zero for linear runs).
    """

    times: np.ndarray
    snapshots: list
    a: np.ndarray
    b: np.ndarray
    control: np.ndarray
    norms: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.control = np.asarray(self.control, dtype=float)
        k = self.times.size
        if not self.norms:
            rows = [all_norms(s) for s in self.snapshots]
            self.norms = {name: np.array([r[name] for r in rows]) for name in NORM_NAMES}
        else:
            self.norms = {name: np.asarray(self.norms[name], dtype=float) for name in NORM_NAMES}
        lengths = {len(self.snapshots), self.a.size, self.b.size, self.control.size}
        lengths |= {arr.size for arr in self.norms.values()}
        if lengths != {k}:
            raise ValueError("all trace arrays must share the length of times")
        if k > 1 and np.any(np.diff(self.times) <= 0.0):
            raise ValueError("trace times must be strictly increasing")

    def __len__(self):
        return self.times.size
