import numpy as np
import pytest
from hypothesis import settings

from mbadmm import core, diagnostics, instances, oracle

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def fd_gradient(fun, x, h=1e-5):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def scalar_qp(N, b, diag=1.0):
    """``sum 0.5*diag*x_i^2`` with scalar blocks, ``A_i = 1``."""
    from mbadmm.problem import BlockSpec, Free, ProblemSpec, Quadratic
    blocks = tuple(BlockSpec(np.ones((1, 1)), Quadratic([[diag]], [0.0]), Free(1)) for _ in range(N))
    return ProblemSpec(blocks, [b])


@pytest.fixture(scope="session")
def sharing_problem():
    return instances.make_sharing_instance(3, 5, 5, 0)


@pytest.fixture(scope="session")
def sharing_oracle(sharing_problem):
    return oracle.solve_small_nonsmooth(sharing_problem, 1e-9)


@pytest.fixture(scope="session")
def sharing_run(sharing_problem):
    cfg = core.SolverConfig(gamma=2.0, mode=core.Scenario2(), max_iter=5000)
    return core.run(sharing_problem, cfg, certificates=diagnostics.SCENARIO2_STEP)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
