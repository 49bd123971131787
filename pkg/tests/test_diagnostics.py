import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mbadmm import core, diagnostics as dg, instances, oracle
from mbadmm.core import IterationDelta, PrimalDual, Perturbed, Scenario2, SolverConfig, run
from mbadmm.errors import InvalidContext, MissingOracle
from mbadmm.problem import BlockSpec, Free, ProblemSpec, Quadratic, SquaredDistance, WeightedL1

from conftest import scalar_qp


def sharing_with_last(f_last, n=2, p=2, seed=0):
    base = instances.make_sharing_instance(3, n, p, seed)
    blocks = base.blocks[:-1] + (BlockSpec(np.eye(p), f_last, Free(p)),)
    return ProblemSpec(blocks, base.b)


class TestAugmentedLagrangian:
    def test_feasible_equals_objective(self):
        prob = scalar_qp(3, 3.0)
        xs = [np.array([1.0]), np.array([0.5]), np.array([1.5])]
        assert dg.augmented_lagrangian(prob, xs, [7.0], 2.0) == pytest.approx(prob.objective(xs))

    def test_zero_dual(self):
        prob = scalar_qp(2, 1.0)
        xs = [np.array([2.0]), np.array([1.0])]
        r = 2.0
        assert dg.augmented_lagrangian(prob, xs, [0.0], 2.0) == pytest.approx(prob.objective(xs) + r * r)

    @given(st.integers(0, 10_000))
    def test_gamma_difference(self, seed):
        rng = np.random.default_rng(seed)
        prob = instances.make_qp_instance(3, (2, 1, 2), 3, 1)
        xs = [rng.standard_normal(d) for d in prob.dims]
        lam = rng.standard_normal(3)
        g1, g2 = sorted(rng.uniform(0.1, 5, 2))
        r = prob.constraint_map(xs)
        diff = dg.augmented_lagrangian(prob, xs, lam, g2) - dg.augmented_lagrangian(prob, xs, lam, g1)
        assert diff == pytest.approx(0.5 * (g2 - g1) * (r @ r), rel=1e-10, abs=1e-12)

    @given(st.integers(0, 10_000), st.floats(0, 1))
    def test_affine_in_dual(self, seed, a):
        rng = np.random.default_rng(seed)
        prob = instances.make_qp_instance(3, (2, 2, 2), 2, 2)
        xs = [rng.standard_normal(d) for d in prob.dims]
        l1, l2 = rng.standard_normal(2), rng.standard_normal(2)
        lhs = dg.augmented_lagrangian(prob, xs, a * l1 + (1 - a) * l2, 1.3)
        rhs = a * dg.augmented_lagrangian(prob, xs, l1, 1.3) + (1 - a) * dg.augmented_lagrangian(prob, xs, l2, 1.3)
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))

    def test_bad_gamma(self):
        with pytest.raises(ValueError):
            dg.augmented_lagrangian(scalar_qp(2, 1.0), [[0.0], [0.0]], [0.0], 0.0)


class TestKktResidual:
    def test_oracle_point(self):
        prob = instances.make_qp_instance(3, (2, 2, 2), 2, 0)
        sol = oracle.solve_exact_qp(prob)
        assert dg.kkt_residual(prob, sol.u_star, sol.lambda_star) <= 1e-10

    def test_feasible_not_stationary(self):
        prob = scalar_qp(2, 2.0)
        assert dg.kkt_residual(prob, [[2.0], [0.0]], [0.0]) > 0

    def test_l1_minimal_norm_selection(self):
        # at x = 0 any |A'lam| <= w is stationary for w|x|
        prob = ProblemSpec((BlockSpec(np.ones((1, 1)), WeightedL1(1.0, 1), Free(1)),
                            BlockSpec(np.ones((1, 1)), SquaredDistance([1.0]), Free(1))), [1.0])
        assert dg.kkt_residual(prob, [[0.0], [1.0]], [0.0]) == 0.0
        assert dg.kkt_residual(prob, [[0.0], [1.0]], [0.5]) > 0  # second block not stationary
        assert dg.block_stationarity(prob.blocks[0], np.zeros(1), np.array([0.9])) == 0.0
        assert dg.block_stationarity(prob.blocks[0], np.zeros(1), np.array([1.2])) == pytest.approx(0.2)

    def test_tail_decreases(self):
        prob = instances.make_qp_instance(2, (3, 3), 2, 0)
        res = run(prob, SolverConfig(gamma=1.0, max_iter=400))
        kkt = np.array([r.kkt_res for r in res.trace.records])
        tail = kkt[np.argmax(kkt < 1e-6):]
        assert tail.size > 10 and tail.max() < 1e-6
        # monotone up to rounding at the floor
        assert np.all(np.diff(tail) <= 1e-13)


class TestSufficientDecrease:
    def test_factor(self):
        prob = sharing_with_last(SquaredDistance([0.0, 0.0]))
        w = PrimalDual(tuple(np.zeros(d) for d in prob.dims), np.zeros(2))
        w1 = PrimalDual(w.x[:-1] + (np.array([1.0, 0.0]),), np.array([1.0, 0.0]))
        rec = dg.sufficient_decrease_certificate(prob, 2.0, 1.0, w, w1)
        # lhs = factor * (||dx_N||^2 + ||dlam||^2) = 0.25 * 2
        assert rec.lhs == pytest.approx(0.5)

    def test_stationary(self, sharing_problem, sharing_oracle):
        w = PrimalDual(sharing_oracle.u_star, sharing_oracle.lambda_star)
        rec = dg.sufficient_decrease_certificate(sharing_problem, 2.0, 1.0, w, w)
        assert rec.lhs == 0.0 and rec.rhs == 0.0 and rec.passed

    def test_short_run(self, sharing_run):
        assert all(r.certificates["sufficient_decrease"].passed for r in sharing_run.trace.records[:200])

    def test_outside_scenario2(self):
        prob = scalar_qp(3, 1.0, diag=0.0)
        w = PrimalDual(tuple(np.zeros(1) for _ in range(3)), np.zeros(1))
        with pytest.raises(InvalidContext):
            dg.sufficient_decrease_certificate(prob, 2.0, 1.0, w, w)
        with pytest.raises(InvalidContext):
            dg.sufficient_decrease_certificate(sharing_with_last(SquaredDistance([0.0, 0.0])), 1.4, 1.0, w, w)


class TestDualLipschitz:
    def test_tight_for_unit_quadratic(self):
        prob = sharing_with_last(SquaredDistance([0.5, -0.2]))
        res = run(prob, SolverConfig(gamma=2.0, mode=Scenario2(), max_iter=5))
        for r in res.trace.records:
            assert r.lambda_diff == pytest.approx(r.xN_diff, rel=1e-9, abs=1e-15)
            rec = dg.dual_lipschitz_certificate(1.0, IterationDelta(r.image_diffs, r.xN_diff, r.lambda_diff))
            assert rec.passed and abs(rec.slack) <= 1e-9 * (1 + rec.rhs)

    def test_zero_delta(self):
        rec = dg.dual_lipschitz_certificate(1.0, IterationDelta((0.0,), 0.0, 0.0))
        assert rec.lhs == 0 and rec.rhs == 0 and rec.passed

    def test_strict_slack_for_anisotropic(self):
        f = Quadratic(np.diag([0.5, 1.0]), [0.0, 0.0])
        dx = np.array([1.0, 0.3])
        dlam = f.Q @ dx
        rec = dg.dual_lipschitz_certificate(1.0, IterationDelta((0.0,), float(np.linalg.norm(dx)),
                                                                float(np.linalg.norm(dlam))))
        assert rec.passed and rec.slack == pytest.approx(1.0 - 0.25)

    def test_wrong_mode(self):
        with pytest.raises(InvalidContext):
            dg.dual_lipschitz_certificate(1.0, IterationDelta((0.0,), 0.0, 0.0), mode=core.Plain())


class TestSubgradient:
    def test_M_constant(self):
        blocks = (BlockSpec(np.eye(2), WeightedL1(1, 2), Free(2)),
                  BlockSpec(np.array([[0.0, 1.0], [1.0, 0.0]]), WeightedL1(1, 2), Free(2)),
                  BlockSpec(np.eye(2), SquaredDistance([0.0, 0.0]), Free(2)))
        prob = ProblemSpec(blocks, [1.0, 1.0])
        assert dg.m_constant(prob, 2.0) == pytest.approx(4.0)

    def test_spectral_norm(self):
        A = np.random.default_rng(3).standard_normal((5, 4))
        assert dg.spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-9)

    def test_zero_delta_zero_residual(self, sharing_problem, sharing_oracle):
        w = PrimalDual(sharing_oracle.u_star, sharing_oracle.lambda_star)
        R = dg.subgradient_terms(sharing_problem, 2.0, w, w)
        assert max(np.abs(r).max() for r in R) <= 1e-12
        assert dg.subgradient_bound_certificate(sharing_problem, 2.0, w, w).passed

    def test_last_terms_are_partial_gradients(self, sharing_problem, sharing_run):
        prob = sharing_problem
        tr = sharing_run.trace
        w0, w1 = tr.w(4, prob), tr.w(5, prob)
        R = dg.subgradient_terms(prob, 2.0, w0, w1)
        r = prob.constraint_map(w1.x)
        grad_xN = prob.blocks[-1].f.grad(w1.x[-1]) - w1.lam + 2.0 * r
        np.testing.assert_allclose(R[-2], grad_xN, atol=1e-9)
        np.testing.assert_allclose(R[-1], -r, atol=1e-15)


class TestLowerBound:
    def test_feasible_tight(self, sharing_problem, sharing_oracle):
        w = PrimalDual(sharing_oracle.u_star, np.zeros(sharing_problem.p))
        rec = dg.lower_bound_certificate(sharing_problem, 2.0, 1.0, w)
        assert rec.lhs == pytest.approx(rec.rhs, abs=1e-12) and rec.passed

    def test_gamma_not_above_L(self, sharing_problem, sharing_oracle):
        w = PrimalDual(sharing_oracle.u_star, sharing_oracle.lambda_star)
        with pytest.raises(InvalidContext):
            dg.lower_bound_certificate(sharing_problem, 1.0, 1.0, w)


class TestScenario1Bound:
    def _prob(self):
        return scalar_qp(3, 3.0)

    def test_start_at_oracle(self):
        prob = self._prob()
        sol = oracle.solve_exact_qp(prob)
        cfg = SolverConfig(gamma=0.2, mode=Perturbed(0.2), max_iter=30)
        res = run(prob, cfg, initial=(sol.u_star, sol.lambda_star))
        rec = dg.scenario1_bound_certificate(prob, res.run_config, res.trace, sol, 20)
        assert abs(rec.lhs) <= 1e-12
        rho = np.linalg.norm(sol.lambda_star) + 1
        assert rec.rhs == pytest.approx((rho ** 2 + np.linalg.norm(sol.lambda_star) ** 2) / (0.2 * 21))
        assert rec.passed

    def test_scalar_qp_t50(self):
        prob = instances.make_qp_instance(3, (1, 1, 1), 1, 2)
        sol = oracle.solve_exact_qp(prob)
        res = run(prob, SolverConfig(gamma=0.2, mode=Perturbed(0.2), max_iter=60))
        rec = dg.scenario1_bound_certificate(prob, res.run_config, res.trace, sol, 50)
        assert rec.passed and rec.lower_slack >= -rec.tol_cert
        for t in range(0, 59):
            assert dg.scenario1_bound_certificate(prob, res.run_config, res.trace, sol, t).lhs >= -1e-12

    def test_missing_oracle(self):
        prob = self._prob()
        res = run(prob, SolverConfig(gamma=0.2, mode=Perturbed(0.2), max_iter=3))
        with pytest.raises(MissingOracle):
            dg.scenario1_bound_certificate(prob, res.run_config, res.trace, None, 1)

    def test_wrong_mode(self):
        prob = self._prob()
        sol = oracle.solve_exact_qp(prob)
        res = run(prob, SolverConfig(gamma=1.0, max_iter=3))
        with pytest.raises(InvalidContext):
            dg.scenario1_bound_certificate(prob, res.run_config, res.trace, sol, 1)


class TestScenario2Bound:
    def test_start_at_oracle(self, sharing_problem, sharing_oracle):
        cfg = SolverConfig(gamma=2.0, mode=Scenario2(), max_iter=20)
        res = run(sharing_problem, cfg, initial=(sharing_oracle.u_star, sharing_oracle.lambda_star))
        rec = dg.scenario2_bound_certificate(sharing_problem, cfg, res.trace, sharing_oracle, 10)
        assert abs(rec.lhs) <= 1e-9 and rec.passed

    def test_constants(self, sharing_problem, sharing_oracle, sharing_run):
        cfg = sharing_run.run_config
        c10 = dg.bound_constants(sharing_problem, cfg, sharing_run.trace, sharing_oracle, 10)
        c100 = dg.bound_constants(sharing_problem, cfg, sharing_run.trace, sharing_oracle, 100)
        assert c10.rho >= 1 and c10.M > 0
        assert c100.D_emp >= c10.D_emp and c100.finite_length_sum >= c10.finite_length_sum

    def test_missing_oracle(self, sharing_problem, sharing_run):
        with pytest.raises(MissingOracle):
            dg.scenario2_bound_certificate(sharing_problem, sharing_run.run_config, sharing_run.trace, None, 5)


class TestFiniteLength:
    def test_stationary(self):
        prob = scalar_qp(3, 3.0)
        sol = oracle.solve_exact_qp(prob)
        res = run(prob, SolverConfig(gamma=1.0, max_iter=10), initial=(sol.u_star, sol.lambda_star))
        assert dg.finite_length_monitor(res.trace, 10) <= 1e-12

    def test_monotone_and_recomputed(self, sharing_problem, sharing_run):
        vals = [dg.finite_length_monitor(sharing_run.trace, t) for t in range(0, 60)]
        assert np.all(np.diff(vals) >= 0)
        bare = core.Trace(2.0, Scenario2(), u_hist=sharing_run.trace.u_hist[:61],
                          lam_hist=sharing_run.trace.lam_hist[:61])
        assert dg.finite_length_monitor(bare, 60, prob=sharing_problem) == pytest.approx(
            dg.finite_length_monitor(sharing_run.trace, 60), rel=1e-12)

    def test_out_of_range(self, sharing_run):
        with pytest.raises(ValueError):
            dg.finite_length_monitor(sharing_run.trace, 10 ** 6)


class TestOfflineCertification:
    def test_matches_online(self, sharing_problem):
        cfg = SolverConfig(gamma=2.0, mode=Scenario2(), max_iter=50)
        res = run(sharing_problem, cfg, certificates=dg.SCENARIO2_STEP)
        bare = core.Trace(2.0, Scenario2(), u_hist=res.trace.u_hist, lam_hist=res.trace.lam_hist)
        off = dg.certify_trace(sharing_problem, cfg, bare, dg.SCENARIO2_STEP)
        for name in dg.SCENARIO2_STEP:
            for on, of in zip(res.trace.records, off[name]):
                assert on.certificates[name].passed == of.passed
                assert on.certificates[name].slack == pytest.approx(of.slack, rel=1e-9, abs=1e-12)

    def test_tampered_dual_fails(self, sharing_problem):
        cfg = SolverConfig(gamma=2.0, mode=Scenario2(), max_iter=30)
        res = run(sharing_problem, cfg)
        lam = [l.copy() for l in res.trace.lam_hist]
        lam[12] = lam[12] + 1e-3
        bare = core.Trace(2.0, Scenario2(), u_hist=res.trace.u_hist, lam_hist=lam)
        off = dg.certify_trace(sharing_problem, cfg, bare, ("dual_update",))
        assert [r.iteration for r in off["dual_update"] if not r.passed] == [12, 13]


class TestCertificateRecord:
    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 1))
    def test_pass_iff_slack(self, lhs, rhs, tol):
        rec = dg.CertificateRecord.build("x", lhs, rhs, tol, 0)
        assert rec.slack == rhs - lhs
        assert rec.passed == (rec.slack >= -tol)
