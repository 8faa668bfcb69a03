"""
Finite-time stabilisation of a linear system
============================================

With the feedback built from the kernel, the plant follows a pure transport
cascade and empties in finite time t_F = int 1/eps1 + 1/eps2.  Without
control, the same plant keeps most of its energy.
"""

import numpy as np

from hyperback import SchemeConfig, TriangularGrid, norm_L2, picard_solve, simulate_linear
from hyperback.backstepping import assemble_direct_kernel_problem, controller_gains
from hyperback.benchmarks import compatible_initial_state, open_loop_sweep, constant_system

# pick the open-loop system that neither grows nor decays much
pick = open_loop_sweep()[0]
sys = constant_system(c1=pick.c1, c2=pick.c2, q=pick.q)
print(f"c1={pick.c1}, c2={pick.c2}, q={pick.q}, t_F = {sys.t_final}")

k = picard_solve(assemble_direct_kernel_problem(sys), TriangularGrid(101))
m = 400
w0 = compatible_initial_state(k, m)
cfg = SchemeConfig(m=m, cfl=0.9, t_end=1.25 * sys.t_final, snapshot_stride=50)

closed = simulate_linear(sys, controller_gains(k, m), w0, cfg)
opened = simulate_linear(sys, None, w0, cfg)

###############################################################################
# L2 norm relative to the initial state.

n0 = norm_L2(w0)
print("    t      closed      open")
for t, c, o in zip(closed.times, closed.norms["L2"], opened.norms["L2"]):
    print(f"{t:6.3f}  {c / n0:9.2e}  {o / n0:8.3f}")
