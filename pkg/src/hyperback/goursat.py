"""Solver for the 4x4 Goursat-type kernel system on the triangle.

The system solved is::

    eps1(x) F1_x + eps1(xi) F1_xi = g1 + sum_i C_1i F_i
    eps1(x) F2_x - eps2(xi) F2_xi = g2 + sum_i C_2i F_i
    eps2(x) F3_x - eps1(xi) F3_xi = g3 + sum_i C_3i F_i
    eps2(x) F4_x + eps2(xi) F4_xi = g4 + sum_i C_4i F_i

on ``0 <= xi <= x <= 1`` with

    F1(x, 0) = h1 + q1 F2(x, 0) + q2 F3(x, 0)
    F2(x, x) = h2,   F3(x, x) = h3
    F4(x, 0) = h4 + q3 F2(x, 0) + q4 F3(x, 0).

Each equation is integrated along its characteristic, which turns the
system into four coupled Volterra-type integral equations.  Those are
discretised once (trapezoid along each characteristic, the unknowns sampled
by interpolation on the triangular grid) into a sparse linear operator, and
the fixed point is found by successive approximation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from .core import GridFunction2T, TriangularGrid, as_field2, as_profile, check_points
from .errors import GridTooCoarse, NoConvergence, NonPositiveSpeed

DEFAULT_QUAD_POINTS = 4097
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200
_SAMPLE_CHUNK = 400_000


@dataclass
class GoursatProblem:
    """Coefficients of the generic kernel system.

    ``C`` is a 4x4 nested sequence; ``C[j][i]`` multiplies ``F_{i+1}`` in
    equation ``j+1``.  Any entry of ``C``, ``g``, ``h`` or ``qb`` may be
    ``None``, meaning identically zero.  ``C`` and ``g`` live on the
    triangle (callables of ``(x, xi)``); ``h`` and ``qb`` are profiles on
    [0, 1].
    """

    eps1: object
    eps2: object
    C: Sequence = field(default_factory=lambda: [[None] * 4 for _ in range(4)])
    g: Sequence = field(default_factory=lambda: [None] * 4)
    h: Sequence = field(default_factory=lambda: [None] * 4)
    qb: Sequence = field(default_factory=lambda: [None] * 4)

    def __post_init__(self):
        self.eps1 = as_profile(self.eps1)
        self.eps2 = as_profile(self.eps2)
        if len(self.C) != 4 or any(len(row) != 4 for row in self.C):
            raise ValueError("C must be 4x4")
        self.C = [[as_field2(c) for c in row] for row in self.C]
        self.g = [as_field2(c) for c in _four(self.g, "g")]
        self.h = [None if c is None else as_profile(c) for c in _four(self.h, "h")]
        self.qb = [None if c is None else as_profile(c) for c in _four(self.qb, "qb")]
        xs = check_points()
        for name in ("eps1", "eps2"):
            vals = getattr(self, name)(xs)
            if np.any(~np.isfinite(vals)) or np.any(vals <= 0.0):
                raise NonPositiveSpeed(f"{name} must be positive and finite on [0, 1]")


def _four(seq, name):
    seq = list(seq)
    if len(seq) != 4:
        raise ValueError(f"{name} must have four entries")
    return seq


# ---------------------------------------------------------------------------
# Characteristics
# ---------------------------------------------------------------------------


class _MonotoneMap:
    """Tabulated increasing map with a monotone cubic inverse."""

    def __init__(self, xs: np.ndarray, ys: np.ndarray):
        self.xs = xs
        self.ys = ys
        self.top = float(ys[-1])
        self._fwd = PchipInterpolator(xs, ys, extrapolate=False)
        self._inv = PchipInterpolator(ys, xs, extrapolate=False)

    def __call__(self, x):
        return self._fwd(np.clip(x, 0.0, 1.0))

    def inv(self, y):
        return self._inv(np.clip(y, 0.0, self.top))


class CharacteristicMaps:
    """Characteristic curves of the four kernel equations.

    ``phi1 = int_0^x dz / eps1``, ``phi2`` likewise, ``phi3 = phi1 + phi2``.
    Curve ``j`` is parameterised by ``s in [0, s_final(j, x, xi)]`` and ends
    at ``(x, xi)`` when ``s = s_final``; at ``s = 0`` it starts on the
    boundary where the data of equation ``j`` is prescribed.
    """

    def __init__(self, eps1, eps2, quad_points: int = DEFAULT_QUAD_POINTS):
        if quad_points < 16:
            raise GridTooCoarse("quad_points must be >= 16")
        self.eps1 = as_profile(eps1)
        self.eps2 = as_profile(eps2)
        xs = np.linspace(0.0, 1.0, int(quad_points))
        e1 = self.eps1(xs)
        e2 = self.eps2(xs)
        if np.any(~np.isfinite(e1)) or np.any(e1 <= 0.0):
            raise NonPositiveSpeed("eps1 must be positive on [0, 1]")
        if np.any(~np.isfinite(e2)) or np.any(e2 <= 0.0):
            raise NonPositiveSpeed("eps2 must be positive on [0, 1]")
        p1 = cumulative_trapezoid(1.0 / e1, xs, initial=0.0)
        p2 = cumulative_trapezoid(1.0 / e2, xs, initial=0.0)
        self.phi1 = _MonotoneMap(xs, p1)
        self.phi2 = _MonotoneMap(xs, p2)
        self.phi3 = _MonotoneMap(xs, p1 + p2)
        self.eps_max = float(max(e1.max(), e2.max()))
        self.K_eps = float(max((1.0 / e1).max(), (1.0 / e2).max()))

    @property
    def t_final(self) -> float:
        return self.phi1.top + self.phi2.top

    # start points of each curve (s = 0)
    def _meet2(self, x, xi):
        return self.phi3.inv(self.phi1(x) + self.phi2(xi))

    def _meet3(self, x, xi):
        return self.phi3.inv(self.phi2(x) + self.phi1(xi))

    def s_final(self, j: int, x, xi) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if j == 1:
            s = self.phi1(xi)
        elif j == 2:
            s = self.phi1(x) - self.phi1(self._meet2(x, xi))
        elif j == 3:
            s = self.phi2(x) - self.phi2(self._meet3(x, xi))
        elif j == 4:
            s = self.phi2(xi)
        else:
            raise ValueError("characteristic index must be 1..4")
        s = np.maximum(s, 0.0)
        if j in (2, 3):
            s = np.where(x == xi, 0.0, s)
        return s

    def x_char(self, j: int, x, xi, s) -> np.ndarray:
        if j == 1:
            return self.phi1.inv(self.phi1(x) - self.phi1(xi) + s)
        if j == 2:
            return self.phi1.inv(self.phi1(self._meet2(x, xi)) + s)
        if j == 3:
            return self.phi2.inv(self.phi2(self._meet3(x, xi)) + s)
        if j == 4:
            return self.phi2.inv(self.phi2(x) - self.phi2(xi) + s)
        raise ValueError("characteristic index must be 1..4")

    def xi_char(self, j: int, x, xi, s) -> np.ndarray:
        if j == 1:
            return self.phi1.inv(np.asarray(s, dtype=float) + 0.0 * np.asarray(x))
        if j == 2:
            return self.phi2.inv(self.phi2(self._meet2(x, xi)) - s)
        if j == 3:
            return self.phi1.inv(self.phi1(self._meet3(x, xi)) - s)
        if j == 4:
            return self.phi2.inv(np.asarray(s, dtype=float) + 0.0 * np.asarray(x))
        raise ValueError("characteristic index must be 1..4")

    def start(self, j: int, x, xi) -> np.ndarray:
        """x-coordinate where curve ``j`` through ``(x, xi)`` meets its data boundary.

        For ``j = 1, 4`` that boundary is ``xi = 0``; for ``j = 2, 3`` it is
        the diagonal.  Exact at the degenerate points (``xi = 0`` for 1 and
        4, ``x = xi`` for 2 and 3).
        """
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if j in (1, 4):
            y = self.x_char(j, x, xi, 0.0)
            return np.where(xi == 0.0, x, y)
        y = self._meet2(x, xi) if j == 2 else self._meet3(x, xi)
        return np.where(x == xi, x, y)


def build_characteristics(p, quad_points: int = DEFAULT_QUAD_POINTS) -> CharacteristicMaps:
    """Characteristic maps for any object carrying ``eps1`` and ``eps2`` profiles."""
    return CharacteristicMaps(p.eps1, p.eps2, quad_points)


# ---------------------------------------------------------------------------
# Discretised integral operator
# ---------------------------------------------------------------------------


def _samples(maps: CharacteristicMaps, j: int, X, Xi, h: float, min_panels: int):
    """Trapezoid nodes along characteristic ``j`` through each point.

    Returns ``owner`` (index of the point each sample belongs to), sample
    coordinates and trapezoid weights in the ``s`` variable.
    """
    sF = maps.s_final(j, X, Xi)
    panels = np.where(
        sF > 0.0,
        np.maximum(min_panels, np.ceil(sF * maps.eps_max / h).astype(np.int64) + 2),
        0,
    )
    counts = np.where(panels > 0, panels + 1, 0)
    owner = np.repeat(np.arange(X.size), counts)
    starts = np.cumsum(counts) - counts
    k = np.arange(owner.size) - starts[owner]
    P = panels[owner]
    ds = sF[owner] / np.maximum(P, 1)
    s = ds * k
    wt = np.where((k == 0) | (k == P), 0.5 * ds, ds)
    xs = maps.x_char(j, X[owner], Xi[owner], s)
    xis = maps.xi_char(j, X[owner], Xi[owner], s)
    xis = np.minimum(xis, xs)
    return owner, xs, xis, wt


def _chunks(counts: np.ndarray, budget: int):
    """Split point indices so that each chunk owns at most ``budget`` samples."""
    cum = np.cumsum(counts)
    start = 0
    total = 0
    while start < counts.size:
        stop = int(np.searchsorted(cum, total + budget, side="right"))
        stop = max(stop, start + 1)
        yield start, stop
        total = cum[stop - 1]
        start = stop


def _integral_rows(problem: GoursatProblem, maps: CharacteristicMaps, grid: TriangularGrid,
                   j: int, X, Xi, min_panels: int):
    """Sparse rows of ``I_j`` (shape ``(len(X), 4N)``) and the forcing integral ``G_j``."""
    N = grid.size
    coupled = [(i, problem.C[j - 1][i]) for i in range(4) if problem.C[j - 1][i] is not None]
    gfun = problem.g[j - 1]
    G = np.zeros(X.size)
    blocks = []
    sF = maps.s_final(j, X, Xi)
    est = np.where(sF > 0, np.ceil(sF * maps.eps_max / grid.h) + 3, 0).astype(np.int64)
    for a, b in _chunks(np.maximum(est, min_panels + 1), _SAMPLE_CHUNK):
        owner, xs, xis, wt = _samples(maps, j, X[a:b], Xi[a:b], grid.h, min_panels)
        if gfun is not None and owner.size:
            G[a:b] += np.bincount(owner, weights=gfun(xs, xis) * wt, minlength=b - a)
        if not coupled or owner.size == 0:
            blocks.append(sp.csr_matrix((b - a, 4 * N)))
            continue
        idx, w = grid.stencil(xs, xis)
        rows, cols, vals = [], [], []
        for i, cfun in coupled:
            coef = cfun(xs, xis) * wt
            rows.append(np.repeat(owner, 4))
            cols.append((idx + i * N).ravel())
            vals.append((coef[:, None] * w).ravel())
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(b - a, 4 * N),
        ).tocsr()
        mat.eliminate_zeros()
        blocks.append(mat)
    return sp.vstack(blocks, format="csr"), G


def _boundary_interp(grid: TriangularGrid, y: np.ndarray) -> sp.csr_matrix:
    """Linear interpolation from the nodes on ``xi = 0`` to abscissae ``y``."""
    n, h = grid.n, grid.h
    a = np.clip(y, 0.0, 1.0) / h
    k = np.clip(np.floor(a).astype(np.int64), 0, n - 2)
    f = np.clip(a - k, 0.0, 1.0)
    rows = np.repeat(np.arange(y.size), 2)
    cols = np.stack([k, k + 1], axis=1).ravel()
    vals = np.stack([1.0 - f, f], axis=1).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(y.size, n)).tocsr()


@dataclass
class DiscreteGoursatOperator:
    """Affine map ``F -> phi + M F`` on the stacked nodal vector ``[F1; F2; F3; F4]``."""

    grid: TriangularGrid
    M: sp.csr_matrix
    phi: np.ndarray
    phi_bar: float
    C_bar: float
    K_eps: float

    def apply(self, F: np.ndarray) -> np.ndarray:
        return self.phi + self.M @ F

    def increment(self, dF: np.ndarray) -> np.ndarray:
        return self.M @ dF


def assemble_operator(problem: GoursatProblem, grid: TriangularGrid,
                      sub_samples: int = 4, quad_points: int = DEFAULT_QUAD_POINTS,
                      maps: Optional[CharacteristicMaps] = None) -> DiscreteGoursatOperator:
    """Discretise the integral equations on ``grid``.

    ``sub_samples`` is the minimum number of trapezoid panels per
    characteristic; longer curves get ``ceil(s_F * eps_max / h) + 2``.
    """
    if sub_samples < 4:
        raise ValueError("sub_samples must be >= 4")
    maps = maps or build_characteristics(problem, quad_points)
    N = grid.size
    X, Xi = grid.x, grid.xi
    bottom = grid.index(np.arange(grid.n), 0)  # nodes on xi = 0

    A, G, H = [], [], []
    for j in (1, 2, 3, 4):
        Aj, Gj = _integral_rows(problem, maps, grid, j, X, Xi, sub_samples)
        hj = problem.h[j - 1]
        start = maps.start(j, X, Xi)
        Hj = np.zeros(N) if hj is None else hj(start)
        A.append(Aj)
        G.append(Gj)
        H.append(Hj)

    phi = [H[j] + G[j] for j in range(4)]
    rows = list(A)
    for j, (qa, qb) in ((0, (0, 1)), (3, (2, 3))):
        q_first, q_second = problem.qb[qa], problem.qb[qb]
        if q_first is None and q_second is None:
            continue
        y = maps.start(j + 1, X, Xi)
        E = _boundary_interp(grid, y)
        for qfun, src in ((q_first, 1), (q_second, 2)):
            if qfun is None:
                continue
            qy = qfun(y)
            phi[j] = phi[j] + qy * (E @ (H[src] + G[src])[bottom])
            rows[j] = rows[j] + sp.diags(qy) @ (E @ A[src][bottom])

    M = sp.vstack(rows, format="csr")
    M.eliminate_zeros()
    phi_vec = np.concatenate(phi)

    xs = check_points()
    C_abs = 0.0
    for row in problem.C:
        for c in row:
            if c is not None:
                C_abs += float(np.max(np.abs(c(X, Xi))))
    q_abs = sum(float(np.max(np.abs(q(xs)))) for q in problem.qb if q is not None)
    return DiscreteGoursatOperator(
        grid=grid,
        M=M,
        phi=phi_vec,
        phi_bar=float(np.max(np.abs(phi_vec))) if phi_vec.size else 0.0,
        C_bar=(1.0 + q_abs) * C_abs,
        K_eps=maps.K_eps,
    )


# ---------------------------------------------------------------------------
# Successive approximation
# ---------------------------------------------------------------------------


@dataclass
class KernelSet:
    """Solved kernels ``F1..F4`` with the convergence record of the iteration."""

    F1: GridFunction2T
    F2: GridFunction2T
    F3: GridFunction2T
    F4: GridFunction2T
    iterations: int
    final_increment: float
    certified_bound: float
    increments: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phi_bar: float = 0.0
    C_bar: float = 0.0
    K_eps: float = 0.0
    tol: float = DEFAULT_TOL
    operator: Optional[DiscreteGoursatOperator] = field(default=None, repr=False)

    @property
    def grid(self) -> TriangularGrid:
        return self.F1.grid

    @property
    def kernels(self) -> tuple:
        return (self.F1, self.F2, self.F3, self.F4)

    def stacked(self) -> np.ndarray:
        return np.concatenate([k.values for k in self.kernels])

    @classmethod
    def from_stacked(cls, grid: TriangularGrid, F: np.ndarray, **kw) -> "KernelSet":
        N = grid.size
        parts = [GridFunction2T(grid, F[k * N:(k + 1) * N]) for k in range(4)]
        kw.setdefault("iterations", 0)
        kw.setdefault("final_increment", 0.0)
        kw.setdefault("certified_bound", float("nan"))
        return cls(*parts, **kw)


def picard_solve(p: GoursatProblem, grid: TriangularGrid, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, sub_samples: int = 4,
                 quad_points: int = DEFAULT_QUAD_POINTS) -> KernelSet:
    """Solve the kernel system by successive approximation.

    Starts from ``F^0 = phi`` (boundary data carried along the
    characteristics) and iterates ``F^n = phi + M F^{n-1}`` until the sup of
    the increment over all four kernels is at most ``tol``.

    Raises
    ------
    NoConvergence
        If ``max_iter`` sweeps do not reach ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    op = assemble_operator(p, grid, sub_samples=sub_samples, quad_points=quad_points)
    F = op.phi.copy()
    increments = []
    inc = float("inf")
    for it in range(1, max_iter + 1):
        F_new = op.apply(F)
        with np.errstate(over="ignore", invalid="ignore"):
            inc = float(np.max(np.abs(F_new - F))) if F.size else 0.0
        if not math.isfinite(inc):
            raise NoConvergence(it, inc)
        increments.append(inc)
        F = F_new
        if inc <= tol:
            return KernelSet.from_stacked(
                grid, F,
                iterations=it,
                final_increment=inc,
                certified_bound=op.phi_bar * math.exp(op.C_bar * op.K_eps),
                increments=np.array(increments),
                phi_bar=op.phi_bar,
                C_bar=op.C_bar,
                K_eps=op.K_eps,
                tol=tol,
                operator=op,
            )
    raise NoConvergence(max_iter, inc)


def picard_bound(n: int, phi_bar: float, C_bar: float, K_eps: float) -> float:
    """``phi_bar (C_bar K_eps)^n / n!`` evaluated in log space."""
    if phi_bar == 0.0:
        return 0.0
    rate = C_bar * K_eps
    if rate == 0.0:
        return phi_bar if n == 0 else 0.0
    return math.exp(math.log(phi_bar) + n * math.log(rate) - math.lgamma(n + 1))


def verify_picard_bound(k: KernelSet, increments=None, phi_bar=None, C_bar=None,
                        K_eps=None) -> bool:
    """Check every recorded increment against the factorial convergence bound.

    ``increments[n-1]`` is ``sup |F^n - F^{n-1}|``.  Missing arguments are
    taken from ``k``.
    """
    increments = k.increments if increments is None else np.asarray(increments, dtype=float)
    phi_bar = k.phi_bar if phi_bar is None else phi_bar
    C_bar = k.C_bar if C_bar is None else C_bar
    K_eps = k.K_eps if K_eps is None else K_eps
    for n, inc in enumerate(increments, start=1):
        bound = picard_bound(n, phi_bar, C_bar, K_eps)
        if inc > bound * (1.0 + 1e-12) + 1e-300:
            return False
    return True


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------


@dataclass
class ResidualReport:
    interior: np.ndarray  # per-kernel sup of the PDE residual at interior nodes
    boundary: np.ndarray  # per-kernel sup of the boundary-condition violation

    @property
    def interior_max(self) -> float:
        return float(np.max(self.interior))

    @property
    def boundary_max(self) -> float:
        return float(np.max(self.boundary))


# (speed in x, speed in xi, sign of the xi term) for each equation
_TRANSPORT = {1: ("eps1", "eps1", 1.0), 2: ("eps1", "eps2", -1.0),
              3: ("eps2", "eps1", -1.0), 4: ("eps2", "eps2", 1.0)}


def residual_check(p: GoursatProblem, k: KernelSet) -> ResidualReport:
    """Sup residuals of the kernel PDEs (central differences) and boundary rows."""
    grid = k.grid
    n, h = grid.n, grid.h
    if n < 5:
        raise GridTooCoarse("residual_check needs n >= 5")
    sq = [kk.square() for kk in k.kernels]
    ax = grid.axis
    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    inner = (J >= 1) & (J <= I - 1) & (I <= n - 2)
    ii, jj = I[inner], J[inner]
    x, xi = ax[ii], ax[jj]

    interior = np.zeros(4)
    for j in (1, 2, 3, 4):
        F = sq[j - 1]
        Fx = (F[ii + 1, jj] - F[ii - 1, jj]) / (2 * h)
        Fxi = (F[ii, jj + 1] - F[ii, jj - 1]) / (2 * h)
        sx, sxi, sign = _TRANSPORT[j]
        lhs = getattr(p, sx)(x) * Fx + sign * getattr(p, sxi)(xi) * Fxi
        rhs = np.zeros_like(x)
        if p.g[j - 1] is not None:
            rhs += p.g[j - 1](x, xi)
        for i in range(4):
            c = p.C[j - 1][i]
            if c is not None:
                rhs += c(x, xi) * sq[i][ii, jj]
        interior[j - 1] = float(np.max(np.abs(lhs - rhs))) if x.size else 0.0

    def prof(f, xx):
        return np.zeros_like(xx) if f is None else f(xx)

    bottom = [s[:, 0] for s in sq]
    diag = [np.diag(s) for s in sq]
    boundary = np.array([
        np.max(np.abs(bottom[0] - prof(p.h[0], ax) - prof(p.qb[0], ax) * bottom[1]
                      - prof(p.qb[1], ax) * bottom[2])),
        np.max(np.abs(diag[1] - prof(p.h[1], ax))),
        np.max(np.abs(diag[2] - prof(p.h[2], ax))),
        np.max(np.abs(bottom[3] - prof(p.h[3], ax) - prof(p.qb[2], ax) * bottom[1]
                      - prof(p.qb[3], ax) * bottom[2])),
    ])
    return ResidualReport(interior=interior, boundary=boundary)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_kernels_csv(path, k: KernelSet) -> None:
    """One row per node, row-major in ``i`` then ``j``, 17 significant digits."""
    grid = k.grid
    cols = [grid.x, grid.xi] + [kk.values for kk in k.kernels]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "xi", "F1", "F2", "F3", "F4"])
        for row in zip(*cols):
            writer.writerow([f"{v:.17g}" for v in row])


def read_kernels_csv(path) -> KernelSet:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    N = data.shape[0]
    n = int(round((math.sqrt(8 * N + 1) - 1) / 2))
    grid = TriangularGrid(n)
    if grid.size != N:
        raise ValueError("row count is not a triangular number")
    return KernelSet.from_stacked(grid, np.concatenate([data[:, c] for c in range(2, 6)]))
