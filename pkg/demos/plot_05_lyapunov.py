"""
Lyapunov weights along a closed-loop run
========================================

V1 is a weighted L2 norm of the target state.  Along the closed loop it
should never increase, and the weighted matrix R built from the nonlinear
speed perturbation stays positive definite near the origin.
"""

import numpy as np

from hyperback import LyapunovWeights, SchemeConfig, StateField, TriangularGrid, picard_solve, simulate_linear
from hyperback.backstepping import assemble_direct_kernel_problem, build_linear_spec, controller_gains
from hyperback.benchmarks import compatible_initial_state, constant_system, quasilinear_benchmark
from hyperback.diagnostics import (
    build_R,
    lambda_nl,
    lipschitz_lambda_nl,
    positivity_radius,
    rolling_rate,
    v1_series,
)

sys = constant_system()
k = picard_solve(assemble_direct_kernel_problem(sys), TriangularGrid(101))
m = 400
w0 = compatible_initial_state(k, m)
tr = simulate_linear(sys, controller_gains(k, m), w0,
                     SchemeConfig(m=m, t_end=1.25 * sys.t_final, snapshot_stride=40))

weights = LyapunovWeights.from_rates(sys)
v1 = v1_series(tr, k, sys, weights)
rate = rolling_rate(tr.times, v1)
for t, v, r in zip(tr.times, v1, rate):
    print(f"t={t:5.2f}  V1={v:.3e}  local rate={r:.2f}")

###############################################################################
# How far from the origin does R stay positive definite?

q = quasilinear_benchmark(offdiag=0.5)
lin, sc = build_linear_spec(q)
w = LyapunovWeights.from_rates(lin)
K2 = lipschitz_lambda_nl(q, sc)
delta = positivity_radius(lin, w, K2)
print(f"Lipschitz constant {K2:.3f}, positivity radius {delta:.3f}")

x = np.linspace(0, 1, 101)
for frac in (0.5, 0.99, 2.0):
    # |u| + |v| peaks at frac * delta
    s = StateField(0.5 * frac * delta * np.sin(np.pi * x), -0.5 * frac * delta * np.sin(np.pi * x))
    R = build_R(lin, lambda_nl(q, sc, s), w, x)
    print(f"|z| = {frac:4.2f} delta: min eigenvalue {np.min(np.linalg.eigvalsh(R)):.6f}")
