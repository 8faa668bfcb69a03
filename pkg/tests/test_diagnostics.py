import math

import numpy as np
import pytest

from hyperback.backstepping import build_linear_spec, controller_gains
from hyperback.benchmarks import compatible_initial_state, quasilinear_benchmark
from hyperback.core import LinearSystemSpec, StateField, norm_L2
from hyperback.diagnostics import (
    LyapunovWeights,
    build_R,
    check_symmetry_identity,
    fit_decay_rate,
    lambda_nl,
    lipschitz_lambda_nl,
    lyapunov_V1,
    positivity_radius,
    sigma_matrix,
    v1_series,
    weight_D,
    write_diagnostics_csv,
)
from hyperback.errors import NonPositiveNorm, SmallDenominator
from hyperback.simulator import SchemeConfig, simulate_linear

UNIT = LinearSystemSpec(1.0, 1.0, 1.0, 1.0, 1.0)
IDENTITY = LyapunovWeights(A=1.0, B=1.0, mu=0.0)


def random_perturbation(rng, m, size):
    """Per-node 2x2 matrices with max entry ``size``."""
    F = rng.uniform(-1, 1, size=(m, 2, 2))
    return size * F / np.max(np.abs(F))


# -- weights and V1 -----------------------------------------------------------

def test_identity_weight():
    D = weight_D(IDENTITY, UNIT, np.linspace(0, 1, 7))
    np.testing.assert_array_equal(D, np.broadcast_to(np.eye(2), D.shape))


def test_weights_from_rates():
    s = LinearSystemSpec(lambda x: 1.0 + x, 2.0, 0.0, 0.0, 0.7)
    w = LyapunovWeights.from_rates(s, lambda1=1.5, lambda2=0.5)
    assert abs(w.mu - 1.5 * 1.0) < 1e-12  # eps_bar = max(1/eps1, 1/eps2) = 1
    assert abs(w.A - 0.5 * math.exp(w.mu)) < 1e-12
    assert abs(w.B - (0.49 * w.A + 0.5)) < 1e-12
    D = weight_D(w, s, np.linspace(0, 1, 51))
    assert np.all(D[:, 0, 0] > 0) and np.all(D[:, 1, 1] > 0)


def test_weighted_speed_derivative():
    s = LinearSystemSpec(lambda x: 1.0 + x, lambda x: 2.0 - x, 0.0, 0.0, 1.0)
    w = LyapunovWeights.from_rates(s)
    x = np.linspace(0.05, 0.95, 19)
    step = 1e-5
    DS = lambda x: weight_D(w, s, x) @ sigma_matrix(s, x)
    fd = (DS(x + step) - DS(x - step)) / (2 * step)
    exact = np.zeros_like(fd)
    exact[:, 0, 0] = w.mu * w.A * np.exp(-w.mu * x)
    exact[:, 1, 1] = w.mu * w.B * np.exp(w.mu * x)
    assert np.max(np.abs(fd - exact)) <= 1e-6 * max(1.0, np.max(np.abs(exact)))


def test_v1_zero_and_identity(rng):
    assert lyapunov_V1(IDENTITY, UNIT, StateField.zeros(30)) == 0.0
    s = StateField(rng.normal(size=50), rng.normal(size=50))
    assert abs(lyapunov_V1(IDENTITY, UNIT, s) - norm_L2(s) ** 2) <= 1e-12


def test_v1_non_increasing_along_closed_loop(unit_system, unit_kernels):
    k, _ = unit_kernels
    m = 400
    w0 = compatible_initial_state(k, m)
    tr = simulate_linear(unit_system, controller_gains(k, m), w0,
                         SchemeConfig(m=m, t_end=1.25 * unit_system.t_final))
    v1 = v1_series(tr, k, unit_system, LyapunovWeights.from_rates(unit_system))
    h = 1.0 / (m - 1)
    assert np.all(v1[1:] <= v1[:-1] * (1 + 10 * h))


# -- R and the symmetry identity ----------------------------------------------

def test_R_at_zero_state():
    x = np.linspace(0, 1, 21)
    w = LyapunovWeights.from_rates(UNIT)
    R = build_R(UNIT, np.zeros((21, 2, 2)), w, x)
    np.testing.assert_array_equal(R, weight_D(w, UNIT, x))
    assert check_symmetry_identity(R, sigma_matrix(UNIT, x)) == 0.0


def test_identity_for_random_perturbations(rng):
    x = np.linspace(0, 1, 101)
    w = LyapunovWeights.from_rates(UNIT)
    K1 = 2.0
    for _ in range(100):
        F1 = random_perturbation(rng, x.size, 0.1 * K1)
        R = build_R(UNIT, F1, w, x)
        np.testing.assert_array_equal(R, np.swapaxes(R, 1, 2))
        assert check_symmetry_identity(R, sigma_matrix(UNIT, x) - F1) <= 1e-12


def test_identity_fails_without_theta(rng):
    x = np.linspace(0, 1, 11)
    w = LyapunovWeights.from_rates(UNIT)
    F1 = np.zeros((11, 2, 2))
    F1[:, 0, 1] = 0.1
    D = weight_D(w, UNIT, x)
    assert check_symmetry_identity(D, sigma_matrix(UNIT, x) - F1) > 0.0


def test_small_denominator():
    x = np.linspace(0, 1, 5)
    F1 = np.zeros((5, 2, 2))
    F1[:, 1, 1] = 1.5  # eps1 + eps2 + 0 - 1.5 = 0.5 < K1/2 = 1
    with pytest.raises(SmallDenominator):
        build_R(UNIT, F1, LyapunovWeights.from_rates(UNIT), x)


def test_lambda_nl_vanishes_at_zero():
    q = quasilinear_benchmark(offdiag=0.5)
    lin, sc = build_linear_spec(q)
    assert np.all(lambda_nl(q, sc, StateField.zeros(11)) == 0.0)


def test_R_positive_within_radius(rng):
    q = quasilinear_benchmark(offdiag=0.5)
    lin, sc = build_linear_spec(q)
    w = LyapunovWeights.from_rates(lin)
    K2 = lipschitz_lambda_nl(q, sc)
    delta = positivity_radius(lin, w, K2)
    assert 0 < delta < math.inf
    x = np.linspace(0, 1, 101)
    for _ in range(50):
        c = rng.normal(size=(2, 3))
        u = sum(c[0, j] * np.sin((j + 1) * np.pi * x + j) for j in range(3))
        v = sum(c[1, j] * np.cos((j + 1) * np.pi * x) for j in range(3))
        scale = 0.99 * delta / np.max(np.abs(u) + np.abs(v))
        s = StateField(scale * u, scale * v)
        R = build_R(lin, lambda_nl(q, sc, s), w, x)
        assert np.min(np.linalg.eigvalsh(R)) > 0.0


# -- decay fits -----------------------------------------------------------------

def test_fit_exact_exponential():
    t = np.linspace(0, 3, 31)
    rate, r2 = fit_decay_rate(t, np.exp(-2 * t), 0.0, 3.0)
    assert abs(rate - 2.0) <= 1e-9 and abs(r2 - 1.0) <= 1e-12


def test_fit_constant():
    t = np.linspace(0, 1, 10)
    rate, _ = fit_decay_rate(t, np.full(10, 3.0), 0.0, 1.0)
    assert abs(rate) <= 1e-12


def test_fit_errors():
    t = np.linspace(0, 1, 10)
    norms = np.exp(-t)
    norms[5] = 0.0
    with pytest.raises(NonPositiveNorm):
        fit_decay_rate(t, norms, 0.0, 1.0)
    with pytest.raises(ValueError):
        fit_decay_rate(t, np.ones(10), 0.0, 0.3)


def test_diagnostics_csv(tmp_path):
    t = np.linspace(0, 1, 8)
    write_diagnostics_csv(tmp_path / "d.csv", t, np.exp(-t))
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "t,V1,rate_window_estimate"
    assert lines[1].endswith(",nan")
    assert abs(float(lines[-1].split(",")[2]) - 1.0) < 1e-9
