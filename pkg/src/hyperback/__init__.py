"""Backstepping boundary control for 2x2 first-order hyperbolic systems.

Kernel equations are solved as Goursat problems by successive approximation,
turned into boundary feedback, and tested by upwind simulation of linear and
quasilinear plants.
"""

from .backstepping import (
    ControllerGains,
    CoordinateScaling,
    DynamicExtension,
    assemble_direct_kernel_problem,
    assemble_inverse_kernel_problem,
    assemble_q0_kernel_problem,
    build_linear_spec,
    check_natural_compatibility,
    control_value,
    controller_gains,
    direct_transform,
    init_extension,
    inverse_transform,
    solve_direct_transform,
)
from .core import (
    LinearSystemSpec,
    QuasilinearSystemSpec,
    SimulationTrace,
    StateField,
    TriangularGrid,
    GridFunction2T,
    norm_H1,
    norm_H2,
    norm_L2,
    norm_sup,
)
from .diagnostics import (
    LyapunovWeights,
    build_R,
    check_symmetry_identity,
    fit_decay_rate,
    lambda_nl,
    lyapunov_V1,
    weight_D,
)
from .goursat import (
    CharacteristicMaps,
    GoursatProblem,
    KernelSet,
    build_characteristics,
    picard_solve,
    residual_check,
    verify_picard_bound,
)
from .simulator import SchemeConfig, simulate_linear, simulate_quasilinear, step_report, target_exact

__version__ = "0.1.0"
