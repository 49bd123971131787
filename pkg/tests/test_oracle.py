import numpy as np
import pytest

from mbadmm import diagnostics as dg, instances
from mbadmm.errors import AmbiguousPattern, InvalidProblem, NonConvergence, SingularKkt
from mbadmm.oracle import (ACTIVE_SET_ENUMERATION, HIGH_ACCURACY_PROX_GRAD, KKT_LINEAR_SOLVE, solve,
                           solve_exact_qp, solve_small_nonsmooth)
from mbadmm.problem import Ball, BlockSpec, Box, Free, NonNegative, ProblemSpec, Quadratic, SquaredDistance, WeightedL1, Zero

from conftest import scalar_qp

ONE = np.ones((1, 1))


def golden(fun, a, b, tol=1e-12):
    g = (np.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    while b - a > tol:
        if fun(c) < fun(d):
            b, d = d, c
            c = b - g * (b - a)
        else:
            a, c = c, d
            d = a + g * (b - a)
    return 0.5 * (a + b)


class TestExactQp:
    def test_three_scalar_blocks(self):
        sol = solve_exact_qp(scalar_qp(3, 3.0))
        np.testing.assert_allclose(np.concatenate(sol.u_star), [1, 1, 1], atol=1e-14)
        np.testing.assert_allclose(sol.lambda_star, [1.0], atol=1e-14)
        assert sol.method == KKT_LINEAR_SOLVE

    def test_two_scalar_blocks(self):
        sol = solve_exact_qp(scalar_qp(2, 2.0))
        np.testing.assert_allclose(np.concatenate(sol.u_star), [1, 1], atol=1e-14)
        assert sol.lambda_star[0] == pytest.approx(1.0)
        assert sol.rho == pytest.approx(2.0)
        assert sol.f_star == pytest.approx(1.0)

    def test_singular(self):
        blocks = tuple(BlockSpec(np.array([[1.0], [1.0]]), Zero(1), Free(1)) for _ in range(2))
        with pytest.raises(SingularKkt):
            solve_exact_qp(ProblemSpec(blocks, [1.0, 1.0]))

    def test_rejects_nonsmooth(self):
        prob = ProblemSpec((BlockSpec(ONE, WeightedL1(1, 1), Free(1)), BlockSpec(ONE, Zero(1), Free(1))), [1.0])
        with pytest.raises(InvalidProblem):
            solve_exact_qp(prob)

    def test_row_permutation_invariance(self):
        prob = instances.make_qp_instance(3, (2, 2, 2), 3, 5)
        perm = np.array([2, 0, 1])
        permuted = ProblemSpec(tuple(BlockSpec(b.A[perm], b.f, b.constraint) for b in prob.blocks), prob.b[perm])
        a, b = solve_exact_qp(prob), solve_exact_qp(permuted)
        np.testing.assert_allclose(np.concatenate(a.u_star), np.concatenate(b.u_star), atol=1e-10)
        np.testing.assert_allclose(a.lambda_star[perm], b.lambda_star, atol=1e-10)

    def test_unique_under_block_reordering(self):
        prob = instances.make_qp_instance(3, (1, 2, 3), 2, 6)
        order = [2, 0, 1]
        swapped = ProblemSpec(tuple(prob.blocks[i] for i in order), prob.b)
        a, b = solve_exact_qp(prob), solve_exact_qp(swapped)
        for k, i in enumerate(order):
            np.testing.assert_allclose(a.u_star[i], b.u_star[k], atol=1e-10)

    def test_certified(self):
        prob = instances.make_qp_instance(4, (2, 1, 3, 2), 3, 9)
        sol = solve_exact_qp(prob)
        assert sol.certified_kkt_residual <= 1e-8
        assert dg.kkt_residual(prob, sol.u_star, sol.lambda_star) <= 1e-10


class TestNonsmooth:
    def test_lasso_scalar(self):
        # min |x1| + 0.5 (x2 - 3)^2  s.t.  x1 + x2 = 3: with x1 > 0 stationarity forces
        # lambda = 1 and x2 = 4, x1 = -1 (contradiction); x1 = 0, x2 = 3, lambda = 0 is consistent
        prob = ProblemSpec((BlockSpec(ONE, WeightedL1(1, 1), Free(1)),
                            BlockSpec(ONE, SquaredDistance([3.0]), Free(1))), [3.0])
        sol = solve_small_nonsmooth(prob, 1e-12)
        np.testing.assert_allclose(np.concatenate(sol.u_star), [0.0, 3.0], atol=1e-14)
        assert abs(sol.lambda_star[0]) <= 1e-14
        assert sol.method == ACTIVE_SET_ENUMERATION

    def test_lasso_active(self):
        # with b = 6 the l1 coordinate turns on: lambda = 1, x2 = 4, x1 = 2
        prob = ProblemSpec((BlockSpec(ONE, WeightedL1(1, 1), Free(1)),
                            BlockSpec(ONE, SquaredDistance([3.0]), Free(1))), [6.0])
        sol = solve_small_nonsmooth(prob, 1e-12)
        np.testing.assert_allclose(np.concatenate(sol.u_star), [2.0, 4.0], atol=1e-13)
        assert sol.lambda_star[0] == pytest.approx(1.0)
        assert sol.certified_kkt_residual <= 1e-8

    def test_all_zero(self):
        A = np.array([[1.0, 0.0], [0.0, 1.0]])
        prob = ProblemSpec((BlockSpec(A, Zero(2), Free(2)), BlockSpec(A, Zero(2), Free(2))), [1.0, -2.0])
        sol = solve_small_nonsmooth(prob, 1e-10)
        assert sol.f_star == 0.0
        assert np.linalg.norm(prob.constraint_map(sol.u_star)) <= 1e-12

    def test_box_scalar_matches_golden_search(self):
        prob = ProblemSpec((BlockSpec(ONE, SquaredDistance([2.0]), Box([0.0], [0.8])),
                            BlockSpec(ONE, Quadratic([[1.0]], [0.0]), Free(1))), [1.0])
        sol = solve_small_nonsmooth(prob, 1e-12)
        x = golden(lambda t: 0.5 * (t - 2) ** 2 + 0.5 * (1 - t) ** 2, 0.0, 0.8)
        assert sol.u_star[0][0] == pytest.approx(x, abs=1e-8)

    def test_nonneg_l1(self):
        prob = ProblemSpec((BlockSpec(ONE, WeightedL1(0.5, 1), NonNegative(1)),
                            BlockSpec(ONE, SquaredDistance([-1.0]), Free(1))), [2.0])
        sol = solve_small_nonsmooth(prob, 1e-12)
        # x1 >= 0: stationarity 0.5 = lambda = x2 + 1 -> x2 = -0.5, x1 = 2.5
        np.testing.assert_allclose(np.concatenate(sol.u_star), [2.5, -0.5], atol=1e-12)

    def test_routes_agree(self):
        prob = instances.make_sharing_instance(3, 2, 2, 3)
        a = solve_small_nonsmooth(prob, 1e-10, method=ACTIVE_SET_ENUMERATION)
        b = solve_small_nonsmooth(prob, 1e-10, method=HIGH_ACCURACY_PROX_GRAD)
        np.testing.assert_allclose(np.concatenate(a.u_star), np.concatenate(b.u_star), atol=1e-8)
        np.testing.assert_allclose(a.lambda_star, b.lambda_star, atol=1e-8)

    def test_sharing_uses_splitting(self, sharing_problem, sharing_oracle):
        assert sharing_oracle.method == HIGH_ACCURACY_PROX_GRAD
        assert dg.kkt_residual(sharing_problem, sharing_oracle.u_star, sharing_oracle.lambda_star) <= 1e-9
        # dual recovered from the smooth last block
        np.testing.assert_allclose(sharing_oracle.lambda_star,
                                   sharing_problem.blocks[-1].f.grad(sharing_oracle.u_star[-1]), atol=1e-15)

    def test_ball_uses_splitting(self):
        prob = ProblemSpec((BlockSpec(np.eye(2), WeightedL1(0.3, 2), Ball([0.0, 0.0], 0.5)),
                            BlockSpec(np.eye(2), SquaredDistance([1.0, -2.0]), Free(2))), [2.0, 1.0])
        sol = solve_small_nonsmooth(prob, 1e-10)
        assert sol.method == HIGH_ACCURACY_PROX_GRAD
        assert np.linalg.norm(sol.u_star[0]) <= 0.5 + 1e-12

    def test_ambiguous(self):
        prob = ProblemSpec((BlockSpec(ONE, WeightedL1(1, 1), Free(1)),
                            BlockSpec(ONE, WeightedL1(1, 1), Free(1))), [1.0])
        with pytest.raises(AmbiguousPattern):
            solve_small_nonsmooth(prob, 1e-10)

    def test_iteration_cap(self):
        prob = instances.make_sharing_instance(3, 5, 5, 0)
        with pytest.raises(NonConvergence):
            solve_small_nonsmooth(prob, 1e-12, max_iter=30)

    def test_too_large(self):
        prob = instances.make_sharing_instance(3, 14, 5, 0)
        with pytest.raises(InvalidProblem):
            solve_small_nonsmooth(prob, 1e-9)

    def test_dispatch(self):
        assert solve(scalar_qp(3, 3.0)).method == KKT_LINEAR_SOLVE
