import numpy as np
import pytest

from hyperback import (
    LinearSystemSpec,
    TriangularGrid,
    assemble_direct_kernel_problem,
    assemble_inverse_kernel_problem,
    picard_solve,
)


@pytest.fixture(scope="session")
def unit_system():
    return LinearSystemSpec(eps1=1.0, eps2=1.0, c1=1.0, c2=1.0, q=1.0)


@pytest.fixture(scope="session")
def unit_kernels(unit_system):
    """Direct and inverse kernels of the unit system on n = 101."""
    grid = TriangularGrid(101)
    k = picard_solve(assemble_direct_kernel_problem(unit_system), grid)
    l = picard_solve(assemble_inverse_kernel_problem(unit_system), grid)
    return k, l


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request):
    """Print and record one PASS/FAIL line, then assert on it."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(label: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        print(line)
        lines.append(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
