"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (also collected in the
terminal summary) and fails if any part of the criterion fails.
"""

import math
import time

import numpy as np
import pytest

from hyperback.backstepping import (
    assemble_direct_kernel_problem,
    assemble_inverse_kernel_problem,
    assemble_q0_kernel_problem,
    build_linear_spec,
    controller_gains,
    direct_transform,
    extension_residuals,
    init_extension,
    inverse_transform,
)
from hyperback.benchmarks import (
    compatible_initial_state,
    constant_system,
    open_loop_sweep,
    quasilinear_benchmark,
    quasilinear_initial_state,
    target_bump,
)
from hyperback.cli import EXIT_OK, main
from hyperback.config import BUNDLED, bundled_config, validate_config
from hyperback.core import LinearSystemSpec, StateField, TriangularGrid, norm_L2
from hyperback.diagnostics import (
    LyapunovWeights,
    build_R,
    check_symmetry_identity,
    fit_decay_rate,
    lambda_nl,
    lipschitz_lambda_nl,
    positivity_radius,
    sigma_matrix,
    v1_series,
    weight_D,
)
from hyperback.expr import CONSTANTS, FUNCTIONS, VARIABLES, BinOp, Call, Neg, Num, Var, parse_expression, to_source
from hyperback.goursat import picard_solve, residual_check, verify_picard_bound
from hyperback.simulator import SchemeConfig, simulate_linear, simulate_quasilinear, target_exact

SEED = 1234


def smooth_field(rng, m):
    x = np.linspace(0, 1, m)
    c = rng.normal(size=(2, 4))
    u = sum(c[0, j] * np.sin((j + 1) * x + c[1, j]) for j in range(4))
    v = sum(c[1, j] * np.cos((j + 1) * np.pi * x) for j in range(4))
    return StateField(u, v)


# -- 1 -------------------------------------------------------------------------

def test_criterion_01_finite_time_horizon(verdict):
    t0 = time.perf_counter()
    sys = LinearSystemSpec(1.0, 2.0, 1.0, 1.0, 0.5)
    tF = sys.t_final
    x = np.linspace(0, 1, 501)
    worst = 0.0
    data = [(target_bump, target_bump), (np.cos, lambda s: np.exp(s)),
            (lambda s: 1 + s ** 2, lambda s: np.sin(3 * s))]
    for a0, b0 in data:
        a, b = target_exact(sys, a0, b0, x, tF + 1e-9)
        worst = max(worst, np.max(np.abs(a)), np.max(np.abs(b)))
    dt = time.perf_counter() - t0
    verdict("criterion 1 (finite-time horizon)", tF == 1.5 and worst == 0.0 and dt < 1.0,
            f"t_F = {tF!r}, max |target| at t_F+1e-9 = {worst:.1e}, {dt:.2f} s")


# -- 2, 3 --------------------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark_kernels():
    sys = constant_system()
    p = assemble_direct_kernel_problem(sys)
    t0 = time.perf_counter()
    k101 = picard_solve(p, TriangularGrid(101), tol=1e-10)
    dt101 = time.perf_counter() - t0
    return sys, p, k101, dt101


def test_criterion_02_kernel_correctness(verdict, benchmark_kernels):
    sys, p, k101, dt = benchmark_kernels
    t0 = time.perf_counter()
    rep = residual_check(p, k101)
    k51 = picard_solve(p, TriangularGrid(51), tol=1e-10)
    k201 = picard_solve(p, TriangularGrid(201), tol=1e-10)
    dt += time.perf_counter() - t0
    g = k51.grid

    def sup_diff(a, b):
        return max(np.max(np.abs(fa(g.x, g.xi) - fb(g.x, g.xi))) for fa, fb in zip(a.kernels, b.kernels))

    factor = sup_diff(k51, k101) / sup_diff(k101, k201)
    ok_bnd = rep.boundary_max <= 10 * k101.tol
    ok_int = rep.interior_max <= 5 * k101.grid.h
    ok_ref = 1.5 <= factor <= 3.0
    verdict("criterion 2 (kernel correctness)", ok_bnd and ok_int and ok_ref and dt < 30.0,
            f"boundary {rep.boundary_max:.1e} (<= {10 * k101.tol:.0e}), interior {rep.interior_max:.2e} "
            f"(<= {5 * k101.grid.h:.2e}), refinement factor {factor:.2f} (want [1.5, 3]), {dt:.1f} s")


def test_criterion_03_picard_certificate(verdict, benchmark_kernels):
    _, _, k, _ = benchmark_kernels
    ok = verify_picard_bound(k) and k.iterations <= 60 and k.final_increment <= 1e-10
    verdict("criterion 3 (Picard certificate)", ok,
            f"{k.iterations} iterations, final increment {k.final_increment:.1e}, "
            f"factorial bound holds: {verify_picard_bound(k)}")


# -- 4 -------------------------------------------------------------------------

def test_criterion_04_round_trip(verdict):
    sys = constant_system()
    rng = np.random.default_rng(SEED)
    fields = [rng.integers(1 << 30) for _ in range(5)]
    consts = {}
    for n in (51, 101, 201):
        grid = TriangularGrid(n)
        k = picard_solve(assemble_direct_kernel_problem(sys), grid)
        l = picard_solve(assemble_inverse_kernel_problem(sys), grid)
        err = 0.0
        for s in fields:
            w = smooth_field(np.random.default_rng(s), n)
            back = inverse_transform(l, direct_transform(k, w))
            err = max(err, np.max(np.abs(back.u - w.u)), np.max(np.abs(back.v - w.v)))
        consts[n] = err / grid.h
    c = list(consts.values())
    stable = all(b <= 1.1 * a for a, b in zip(c[:-1], c[1:]))
    verdict("criterion 4 (transform round trip)", stable,
            "fitted c = err/h: " + ", ".join(f"n={n}: {v:.2e}" for n, v in consts.items()))


# -- 5, 6, 9 -------------------------------------------------------------------

@pytest.fixture(scope="module")
def linear_benchmark():
    t0 = time.perf_counter()
    pick = open_loop_sweep()[0]
    sys = constant_system(c1=pick.c1, c2=pick.c2, q=pick.q)
    k = picard_solve(assemble_direct_kernel_problem(sys), TriangularGrid(101))
    m = 400
    w0 = compatible_initial_state(k, m)
    cfg = SchemeConfig(m=m, cfl=0.9, t_end=1.25 * sys.t_final)
    closed = simulate_linear(sys, controller_gains(k, m), w0, cfg)
    opened = simulate_linear(sys, None, w0, cfg)
    return dict(pick=pick, sys=sys, k=k, w0=w0, closed=closed, open=opened,
                seconds=time.perf_counter() - t0)


def test_criterion_05_closed_loop_decay(verdict, linear_benchmark):
    b = linear_benchmark
    n0 = norm_L2(b["w0"])
    nc = b["closed"].norms["L2"][-1]
    no = b["open"].norms["L2"][-1]
    pick = b["pick"]
    ok = nc <= 1e-2 * n0 and no >= 10 * nc and no >= 0.1 * n0 and b["seconds"] < 60
    verdict("criterion 5 (closed-loop finite-time decay)", ok,
            f"system c1={pick.c1}, c2={pick.c2}, q={pick.q}; closed {nc / n0:.1e} x ||w0||, "
            f"open {no / n0:.2f} x ||w0||, {b['seconds']:.1f} s")


def test_criterion_06_target_oracle(verdict, linear_benchmark):
    b = linear_benchmark
    sys, k, tr = b["sys"], b["k"], b["closed"]
    t_half = 0.5 * sys.t_final
    idx = int(np.argmin(np.abs(tr.times - t_half)))
    g = direct_transform(k, tr.snapshots[idx])
    a, bb = target_exact(sys, target_bump, target_bump, g.x, tr.times[idx])
    err = max(np.max(np.abs(g.u - a)), np.max(np.abs(g.v - bb)))
    verdict("criterion 6 (transform-oracle agreement)", err <= 10 * g.h,
            f"sup error {err:.2e} at t = {tr.times[idx]:.4f} (t_F/2 = {t_half:.4f}), 10h = {10 * g.h:.2e}")


def test_criterion_09_v1_monotone(verdict, linear_benchmark):
    b = linear_benchmark
    sys, tr = b["sys"], b["closed"]
    v1 = v1_series(tr, b["k"], sys, LyapunovWeights.from_rates(sys))
    h = tr.snapshots[0].h
    ratio = np.max(v1[1:] / v1[:-1]) if np.all(v1[:-1] > 0) else np.inf
    ok = bool(np.all(v1[1:] <= v1[:-1] * (1 + 10 * h)))
    verdict("criterion 9 (V1 monotonicity)", ok,
            f"max per-step ratio {ratio:.6f} over {v1.size - 1} steps, allowed 1 + 10h = {1 + 10 * h:.6f}")


# -- 7 -------------------------------------------------------------------------

def test_criterion_07_quasilinear_stability(verdict):
    t0 = time.perf_counter()
    q = quasilinear_benchmark()
    lin, sc = build_linear_spec(q)
    k = picard_solve(assemble_direct_kernel_problem(lin), TriangularGrid(101))
    m = 400
    gains = controller_gains(k, m, sc)
    z0 = quasilinear_initial_state(m, amplitude=0.05)
    ext = init_extension(q, gains, z0)
    tF = lin.t_final
    tr = simulate_quasilinear(q, gains, ext, z0, SchemeConfig(m=m, cfl=0.9, t_end=3 * tF,
                                                              snapshot_stride=4))
    rate, r2 = fit_decay_rate(tr.times, tr.norms["H2"], tF, 3 * tF)
    ab_err = max(np.max(np.abs(tr.a - ext.a * np.exp(-ext.d1 * tr.times))),
                 np.max(np.abs(tr.b - ext.b * np.exp(-ext.d2 * tr.times))))
    cc = max(abs(r) for r in extension_residuals(q, gains, z0, ext))
    dt = time.perf_counter() - t0
    ok = rate > 0 and r2 > 0.9 and ab_err <= 1e-12 and cc <= 1e-9 and dt < 120
    verdict("criterion 7 (quasilinear local stability)", ok,
            f"H2 rate {rate:.3f}, r^2 {r2:.3f}, |a,b - exact| {ab_err:.1e}, "
            f"compatibility residual {cc:.1e}, {dt:.1f} s")


# -- 8 -------------------------------------------------------------------------

def test_criterion_08_symmetry_identity(verdict):
    q = quasilinear_benchmark(offdiag=0.5)
    lin, sc = build_linear_spec(q)
    w = LyapunovWeights.from_rates(lin)
    x = np.linspace(0, 1, 101)
    K2 = lipschitz_lambda_nl(q, sc)
    delta = positivity_radius(lin, w, K2)
    rng = np.random.default_rng(SEED)

    zero = build_R(lin, lambda_nl(q, sc, StateField.zeros(x.size)), w, x)
    exact_at_zero = bool(np.array_equal(zero, weight_D(w, lin, x)))

    worst_res = 0.0
    min_eig = np.inf
    for _ in range(100):
        s = smooth_field(rng, x.size)
        scale = 0.99 * delta / np.max(np.abs(s.u) + np.abs(s.v))
        s = StateField(scale * s.u, scale * s.v)
        F1 = lambda_nl(q, sc, s)
        R = build_R(lin, F1, w, x)
        worst_res = max(worst_res, check_symmetry_identity(R, sigma_matrix(lin, x) - F1))
        min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(R))))
    ok = worst_res <= 1e-12 and exact_at_zero and min_eig > 0
    verdict("criterion 8 (symmetry identity)", ok,
            f"max residual {worst_res:.1e} over 100 states, R == D at zero: {exact_at_zero}, "
            f"delta = {delta:.3e}, min eigenvalue of R {min_eig:.3e}")


# -- 10 ------------------------------------------------------------------------

def test_criterion_10_q0_branch(verdict):
    sys = constant_system(c1=1.0, c2=1.0, q=0.0)
    p, g_of_x = assemble_q0_kernel_problem(sys)
    k = picard_solve(p, TriangularGrid(101))
    bottom = np.max(np.abs(k.F4.values[k.grid.j == 0]))
    m = 400
    w0 = compatible_initial_state(k, m)
    tr = simulate_linear(sys, controller_gains(k, m), w0,
                         SchemeConfig(m=m, cfl=0.9, t_end=1.25 * sys.t_final))
    ratio = tr.norms["L2"][-1] / norm_L2(w0)
    verdict("criterion 10 (q = 0 branch)", bottom == 0.0 and ratio <= 1e-2,
            f"max |Kvv(x,0)| = {bottom:.1e}, closed loop ||w(1.25 t_F)|| / ||w0|| = {ratio:.1e}")


# -- 11 ------------------------------------------------------------------------

def random_tree(rng, depth=0):
    leaf = depth >= 5 or rng.random() < 0.3
    if leaf:
        r = rng.random()
        if r < 0.4:
            return Num(float(np.round(rng.uniform(0, 100), int(rng.integers(0, 4)))))
        names = VARIABLES + tuple(CONSTANTS)
        return Var(names[int(rng.integers(len(names)))])
    r = rng.random()
    if r < 0.15:
        return Neg(random_tree(rng, depth + 1))
    if r < 0.3:
        funcs = tuple(FUNCTIONS)
        return Call(funcs[int(rng.integers(len(funcs)))], random_tree(rng, depth + 1))
    op = "+-*/^"[int(rng.integers(5))]
    return BinOp(op, random_tree(rng, depth + 1), random_tree(rng, depth + 1))


def test_criterion_11_parser_and_configs(verdict, tmp_path):
    rng = np.random.default_rng(SEED)
    bad = 0
    for _ in range(1000):
        tree = random_tree(rng)
        if parse_expression(to_source(tree)) != tree:
            bad += 1
    codes = {}
    for name in BUNDLED:
        diags = validate_config(bundled_config(name))
        code = main(["simulate", name, "--quiet", "--out-dir", str(tmp_path / name)])
        codes[name] = (len(diags), code)
    ok = bad == 0 and all(n == 0 and c == EXIT_OK for n, c in codes.values())
    verdict("criterion 11 (parser and bundled configs)", ok,
            f"{1000 - bad}/1000 round trips, configs (diagnostics, exit): "
            + ", ".join(f"{k} {v}" for k, v in codes.items()))
