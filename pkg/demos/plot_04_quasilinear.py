"""
Local stabilisation of a quasilinear system
===========================================

The quasilinear plant z_t + Lambda(z) z_x + f(z) = 0 is controlled with the
gains of its linearisation.  Two extra controller states a, b make arbitrary
initial data compatible with the closed loop.
"""

import numpy as np

from hyperback import SchemeConfig, TriangularGrid, fit_decay_rate, picard_solve, simulate_quasilinear
from hyperback.backstepping import (
    assemble_direct_kernel_problem,
    build_linear_spec,
    controller_gains,
    extension_residuals,
    init_extension,
)
from hyperback.benchmarks import quasilinear_benchmark, quasilinear_initial_state
from hyperback.errors import HyperbolicitySignChange

q = quasilinear_benchmark()
lin, scaling = build_linear_spec(q)
print(f"linearisation: t_F = {lin.t_final}, phi2(1) = {scaling.phi2_at_1:.4f}")

k = picard_solve(assemble_direct_kernel_problem(lin), TriangularGrid(101))
m = 400
gains = controller_gains(k, m, scaling)

###############################################################################
# Small data decay; the H2 norm falls off exponentially.

for amplitude in (0.05, 0.2, 1.0):
    z0 = quasilinear_initial_state(m, amplitude)
    ext = init_extension(q, gains, z0)
    print(f"amplitude {amplitude}: a(0)={ext.a:.3e}, b(0)={ext.b:.3e}, "
          f"residuals {extension_residuals(q, gains, z0, ext)}")
    try:
        tr = simulate_quasilinear(q, gains, ext, z0,
                                  SchemeConfig(m=m, t_end=3 * lin.t_final, snapshot_stride=4))
    except HyperbolicitySignChange as exc:
        # large data can push a speed through zero
        print("   ", exc)
        continue
    rate, r2 = fit_decay_rate(tr.times, tr.norms["H2"], lin.t_final, 3 * lin.t_final)
    print(f"    H2 rate {rate:.3f} (r^2 {r2:.3f}), final H2 {tr.norms['H2'][-1]:.2e}")
