"""Augmented Lagrangian, KKT residuals and per-iteration certificates.

A certificate evaluates one inequality ``lhs <= rhs`` at a given iterate and
reports the slack ``rhs - lhs``; it passes when ``slack >= -tol_cert``.
Every function here is a pure function of problem data and iterates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Perturbed, Scenario2, compute_mu
from .errors import InvalidContext, MissingOracle
from .problem import ProblemSpec
from .subproblem import prox_composite

REL_TOL = 1e-8


@dataclass(frozen=True)
class CertificateRecord:
    name: str
    lhs: float
    rhs: float
    slack: float
    tol_cert: float
    passed: bool
    iteration: int
    lower_slack: Optional[float] = None

    @classmethod
    def build(cls, name, lhs, rhs, tol, iteration, lower_slack=None):
        slack = float(rhs) - float(lhs)
        ok = slack >= -tol
        if lower_slack is not None:
            ok = ok and lower_slack >= -tol
        return cls(name, float(lhs), float(rhs), slack, float(tol), bool(ok), int(iteration), lower_slack)


@dataclass(frozen=True)
class BoundConstants:
    rho: float
    M: float
    L: float
    D_emp: float
    finite_length_sum: float


# --------------------------------------------------------------------------
# basic quantities


def augmented_lagrangian(prob: ProblemSpec, xs, lam, gamma) -> float:
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    r = prob.constraint_map(xs)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != r.shape:
        from .errors import DimensionMismatch
        raise DimensionMismatch(f"dual has shape {lam.shape}, expected {r.shape}")
    return prob.objective(xs) - float(lam @ r) + 0.5 * gamma * float(r @ r)


def block_stationarity(blk, x, lam) -> float:
    """``||x - prox_{h + indicator(X)}(x - (grad s(x) - A'lam))||`` with unit step.

    On a free set with a weighted l1 term this equals the residual of the
    minimal-norm subgradient selection (the subgradient at zero clamped to
    ``[-w, w]``); smooth terms enter through their gradient.
    """
    g = -(blk.A.T @ lam)
    if blk.f.differentiable:
        g = g + blk.f.grad(x)
    return float(np.linalg.norm(x - prox_composite(blk.f, blk.constraint, x - g)))


def kkt_residual(prob: ProblemSpec, xs, lam) -> float:
    xs = prob.check_blocks(list(xs))
    lam = np.asarray(lam, dtype=float)
    stat = max(block_stationarity(blk, x, lam) for blk, x in zip(prob.blocks, xs))
    return max(stat, float(np.linalg.norm(prob.constraint_map(xs))))


def spectral_norm(A, iters=200, tol=1e-10, seed=0) -> float:
    """Largest singular value by power iteration on ``A'A``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = math.sqrt(nw)
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(np.linalg.norm(A @ v))


def m_constant(prob: ProblemSpec, gamma) -> float:
    s = sum(spectral_norm(blk.A.T) for blk in prob.blocks[:-1])
    return max(gamma * s, 1.0 / gamma + 1.0 + s)


def iteration_delta(prob, w_k, w_k1):
    from .core import IterationDelta
    return IterationDelta(
        tuple(float(np.linalg.norm(blk.A @ (a - b))) for blk, a, b in zip(prob.blocks, w_k.x, w_k1.x)),
        float(np.linalg.norm(w_k.x[-1] - w_k1.x[-1])),
        float(np.linalg.norm(w_k.lam - w_k1.lam)),
    )


def _require_scenario2(prob, gamma, L):
    if not prob.scenario2_eligible:
        raise InvalidContext("certificate is defined only for scenario-2 problems")
    if not gamma > math.sqrt(2.0) * L:
        raise InvalidContext(f"certificate needs gamma > sqrt(2) L (gamma={gamma}, L={L})")


# --------------------------------------------------------------------------
# per-iteration certificates for the sharing-problem iteration


def sufficient_decrease_certificate(prob, gamma, L, w_k, w_k1, delta=None, *, iteration=0, rel_tol=REL_TOL):
    _require_scenario2(prob, gamma, L)
    if delta is None:
        delta = iteration_delta(prob, w_k, w_k1)
    factor = (gamma ** 2 - 2 * L ** 2) / (2 * gamma * (1 + L ** 2))
    sq = sum(d * d for d in delta.image_diffs[:-1]) + delta.xN_diff ** 2 + delta.lambda_diff ** 2
    lhs = factor * sq
    rhs = (augmented_lagrangian(prob, w_k.x, w_k.lam, gamma)
           - augmented_lagrangian(prob, w_k1.x, w_k1.lam, gamma))
    return CertificateRecord.build("sufficient_decrease", lhs, rhs, rel_tol * (1 + abs(rhs)), iteration)


def dual_lipschitz_certificate(L, delta, *, iteration=0, rel_tol=REL_TOL, mode=None):
    """Squared form ``||dlambda||^2 <= L^2 ||dx_N||^2``."""
    if mode is not None and not isinstance(mode, Scenario2):
        raise InvalidContext("dual-Lipschitz certificate is defined only in scenario 2")
    lhs = delta.lambda_diff ** 2
    rhs = L ** 2 * delta.xN_diff ** 2
    return CertificateRecord.build("dual_lipschitz", lhs, rhs, rel_tol * (1 + abs(rhs)), iteration)


def lower_bound_certificate(prob, gamma, L, w, *, iteration=0, rel_tol=REL_TOL):
    if not prob.scenario2_eligible:
        raise InvalidContext("certificate is defined only for scenario-2 problems")
    if not gamma > L:
        raise InvalidContext(f"lower bound needs gamma > L (gamma={gamma}, L={L})")
    xs = list(w.x)
    fixed = sum(blk.f.value(x) for blk, x in zip(prob.blocks[:-1], xs[:-1]))
    z = np.array(prob.b, dtype=float)
    for blk, x in zip(prob.blocks[:-1], xs[:-1]):
        z -= blk.A @ x
    r = prob.constraint_map(xs)
    lhs = fixed + prob.blocks[-1].f.value(z) + 0.5 * (gamma - L) * float(r @ r)
    rhs = augmented_lagrangian(prob, xs, w.lam, gamma)
    return CertificateRecord.build("lower_bound", lhs, rhs, rel_tol * (1 + abs(rhs)), iteration)


def subgradient_terms(prob, gamma, w_k, w_k1):
    """Blocks ``R_1..R_N, R_lambda`` of the explicit subgradient of the
    augmented Lagrangian at ``w^{k+1}``."""
    N = prob.N
    r = prob.constraint_map(w_k1.x)
    diffs = [blk.A @ (a - b) for blk, a, b in zip(prob.blocks, w_k.x, w_k1.x)]
    R = []
    for i in range(N - 1):
        tail = diffs[N - 1].copy()
        for j in range(i + 1, N - 1):
            tail += diffs[j]
        At = prob.blocks[i].A.T
        R.append(gamma * (At @ r) - gamma * (At @ tail))
    R.append(gamma * r)
    R.append(-r)
    return R


def subgradient_bound_certificate(prob, gamma, w_k, w_k1, delta=None, *, iteration=0, rel_tol=REL_TOL, M=None):
    _require_scenario2(prob, gamma, prob.lipschitz_last)
    if delta is None:
        delta = iteration_delta(prob, w_k, w_k1)
    lhs = sum(float(np.linalg.norm(R)) for R in subgradient_terms(prob, gamma, w_k, w_k1))
    if M is None:
        M = m_constant(prob, gamma)
    rhs = M * (sum(delta.image_diffs[:-1]) + delta.xN_diff + delta.lambda_diff)
    return CertificateRecord.build("subgradient_bound", lhs, rhs, rel_tol * (1 + abs(rhs)), iteration)


def dual_update_certificate(prob, gamma, w_k, w_k1, *, iteration=0):
    """Exactness of ``lambda^{k+1} = lambda^k - gamma (sum A_i x_i^{k+1} - b)``."""
    lhs = float(np.linalg.norm(w_k1.lam - w_k.lam + gamma * prob.constraint_map(w_k1.x)))
    rhs = 1e-12 * (1 + float(np.linalg.norm(w_k.lam)))
    return CertificateRecord.build("dual_update", lhs, rhs, 0.0, iteration)


def dual_gradient_certificate(prob, w, *, iteration=0, rel_tol=1e-10):
    """``lambda = grad f_N(x_N)`` after each scenario-2 dual update."""
    lam = np.asarray(w.lam)
    lhs = float(np.linalg.norm(lam - prob.blocks[-1].f.grad(w.x[-1])))
    rhs = rel_tol * (1 + float(np.linalg.norm(lam)))
    return CertificateRecord.build("dual_gradient", lhs, rhs, 0.0, iteration)


def monotone_lagrangian_certificate(prob, gamma, w_k, w_k1, *, iteration=0, rel_tol=REL_TOL):
    before = augmented_lagrangian(prob, w_k.x, w_k.lam, gamma)
    after = augmented_lagrangian(prob, w_k1.x, w_k1.lam, gamma)
    return CertificateRecord.build("monotone_lagrangian", after, before, rel_tol * (1 + abs(before)), iteration)



STEP_CERTIFICATES = {
    "sufficient_decrease": lambda prob, cfg, a, b, d, tol: sufficient_decrease_certificate(
        prob, cfg.gamma, prob.lipschitz_last, a, b, d, iteration=b.k, rel_tol=tol),
    "dual_lipschitz": lambda prob, cfg, a, b, d, tol: dual_lipschitz_certificate(
        prob.lipschitz_last, d, iteration=b.k, rel_tol=tol, mode=cfg.mode),
    "lower_bound": lambda prob, cfg, a, b, d, tol: lower_bound_certificate(
        prob, cfg.gamma, prob.lipschitz_last, b, iteration=b.k, rel_tol=tol),
    "subgradient_bound": lambda prob, cfg, a, b, d, tol: subgradient_bound_certificate(
        prob, cfg.gamma, a, b, d, iteration=b.k, rel_tol=tol),
    "dual_update": lambda prob, cfg, a, b, d, tol: dual_update_certificate(
        prob, cfg.gamma, a, b, iteration=b.k),
    "dual_gradient": lambda prob, cfg, a, b, d, tol: dual_gradient_certificate(prob, b, iteration=b.k),
    "monotone_lagrangian": lambda prob, cfg, a, b, d, tol: monotone_lagrangian_certificate(
        prob, cfg.gamma, a, b, iteration=b.k, rel_tol=tol),
}

DESCENT_CERTIFICATES = ("sufficient_decrease", "dual_lipschitz", "lower_bound", "subgradient_bound")
SCENARIO2_STEP = DESCENT_CERTIFICATES + ("dual_update", "dual_gradient", "monotone_lagrangian")


# --------------------------------------------------------------------------
# ergodic bounds


def step_norms(prob, trace, t):
    """Per-iteration ``(||A_i dx_i|| for i < N, ||dx_N||, ||dlambda||)`` for
    ``k < t``, from the records when present and from the iterates otherwise."""
    if len(trace.records) >= t:
        return [(rec.image_diffs[:-1], rec.xN_diff, rec.lambda_diff) for rec in trace.records[:t]]
    if prob is None:
        raise InvalidContext("trace has no records; pass the problem to recompute the steps")
    out = []
    prev = trace.w(0, prob)
    for k in range(1, t + 1):
        cur = trace.w(k, prob)
        d = iteration_delta(prob, prev, cur)
        out.append((d.image_diffs[:-1], d.xN_diff, d.lambda_diff))
        prev = cur
    return out


def finite_length_monitor(trace, t, prob=None) -> float:
    """``sum_{k<t}`` of the successive-difference norms
    ``sum_{i<N} ||A_i dx_i|| + ||dx_N|| + ||dlambda||``."""
    if not 0 <= t <= trace.iterations:
        raise ValueError(f"t={t} outside the trace ({trace.iterations} iterations)")
    return float(sum(sum(img) + dx + dl for img, dx, dl in step_norms(prob, trace, t)))


def _ergodic_gap(prob, trace, oracle, t):
    u_bar, _ = trace.ergodic(t, prob)
    rho = float(np.linalg.norm(oracle.lambda_star)) + 1.0
    res = float(np.linalg.norm(prob.constraint_map(u_bar)))
    return prob.objective(u_bar) - oracle.f_star + rho * res, rho


def ergodic_gap(prob, trace, oracle, t) -> float:
    """``f(u_bar^t) - f(u*) + rho ||sum A_i x_bar_i^t - b||``, ``rho = ||lambda*|| + 1``."""
    return _ergodic_gap(prob, trace, oracle, t)[0]


def ergodic_gap_series(prob, trace, oracle, ts):
    """Ergodic gaps at several ``t`` using cumulative sums (one pass)."""
    U = np.cumsum(np.asarray(trace.u_hist[1:]), axis=0)
    rho = float(np.linalg.norm(oracle.lambda_star)) + 1.0
    out = []
    for t in ts:
        u_bar = prob.split(U[t] / (t + 1))
        res = float(np.linalg.norm(prob.constraint_map(u_bar)))
        out.append(prob.objective(u_bar) - oracle.f_star + rho * res)
    return np.array(out)


def scenario1_bound_certificate(prob, cfg, trace, oracle, t, *, rel_tol=REL_TOL):
    if oracle is None:
        raise MissingOracle("the ergodic bound needs an oracle solution")
    if not isinstance(cfg.mode, Perturbed):
        raise InvalidContext("scenario-1 bound applies to perturbed runs")
    N, gamma, eps = prob.N, cfg.gamma, cfg.mode.epsilon
    lhs, rho = _ergodic_gap(prob, trace, oracle, t)
    w0 = trace.w(0, prob)
    anchor = trace.anchor if trace.anchor is not None else w0.x
    x_star = oracle.u_star
    lam0 = float(np.linalg.norm(w0.lam))
    tail = 0.0
    for i in range(N - 1):
        acc = np.zeros(prob.p)
        for j in range(i + 1, N):
            acc += prob.blocks[j].A @ (w0.x[j] - x_star[j])
        tail += float(acc @ acc)
    drift = sum(float(np.sum((prob.blocks[i].A @ (x_star[i] - anchor[i])) ** 2)) for i in range(1, N))
    rhs = ((rho ** 2 + lam0 ** 2) / (gamma * (t + 1))
           + gamma / (2 * (t + 1)) * tail
           + 0.5 * compute_mu(eps, N) * drift)
    return CertificateRecord.build("scenario1_bound", lhs, rhs, rel_tol * (1 + abs(rhs)), t, lower_slack=lhs)


def bound_constants(prob, cfg, trace, oracle, t) -> BoundConstants:
    rho = float(np.linalg.norm(oracle.lambda_star)) + 1.0
    steps = step_norms(prob, trace, t + 1)
    D = max((max(img) for img, _, _ in steps), default=0.0)
    total = float(sum(sum(img) + dx + dl for img, dx, dl in steps))
    return BoundConstants(rho=rho, M=m_constant(prob, cfg.gamma), L=float(prob.lipschitz_last),
                          D_emp=D, finite_length_sum=total)


def scenario2_bound_certificate(prob, cfg, trace, oracle, t, constants=None, *, rel_tol=REL_TOL):
    if oracle is None:
        raise MissingOracle("the ergodic bound needs an oracle solution")
    if not isinstance(cfg.mode, Scenario2):
        raise InvalidContext("scenario-2 bound applies to scenario-2 runs")
    N, gamma = prob.N, cfg.gamma
    if constants is None:
        constants = bound_constants(prob, cfg, trace, oracle, t)
    lhs, rho = _ergodic_gap(prob, trace, oracle, t)
    w0 = trace.w(0, prob)
    x_star = oracle.u_star
    acc = w0.x[-1] - x_star[-1]
    for i in range(1, N - 1):
        acc = acc + prob.blocks[i].A @ (w0.x[i] - x_star[i])
    lam0 = float(np.linalg.norm(w0.lam))
    rhs = ((rho ** 2 + lam0 ** 2) / (gamma * (t + 1))
           + gamma / (2 * (t + 1)) * float(acc @ acc)
           + gamma * constants.D_emp * (N - 2) / (t + 1) * constants.finite_length_sum)
    return CertificateRecord.build("scenario2_bound", lhs, rhs, rel_tol * (1 + abs(rhs)), t, lower_slack=lhs)


# --------------------------------------------------------------------------
# offline evaluation over a stored trace


def step_certificates_for(mode):
    """Per-iteration certificates that are defined for a solver mode."""
    if isinstance(mode, Scenario2):
        return SCENARIO2_STEP
    return ("dual_update",)


def certify_trace(prob, cfg, trace, names, rel_tol=REL_TOL):
    """Evaluate per-iteration certificates from the stored iterates
    ``w^0..w^K``; returns ``{name: [CertificateRecord, ...]}``."""
    unknown = set(names) - set(STEP_CERTIFICATES)
    if unknown:
        raise InvalidContext(f"unknown certificates: {sorted(unknown)}")
    out = {name: [] for name in names}
    if not names:
        return out
    M = m_constant(prob, cfg.gamma) if "subgradient_bound" in names else None
    w_prev = trace.w(0, prob)
    for k in range(1, trace.iterations + 1):
        w_k = trace.w(k, prob)
        d = iteration_delta(prob, w_prev, w_k)
        for name in names:
            if name == "subgradient_bound":
                rec = subgradient_bound_certificate(prob, cfg.gamma, w_prev, w_k, d, iteration=k,
                                                    rel_tol=rel_tol, M=M)
            else:
                rec = STEP_CERTIFICATES[name](prob, cfg, w_prev, w_k, d, rel_tol)
            out[name].append(rec)
        w_prev = w_k
    return out


# --------------------------------------------------------------------------
# inner-product identities used throughout the convergence analysis


def four_point_identity(w1, w2, w3, w4):
    """Both sides of ``(w1-w2)'(w3-w4) = (|w1-w4|^2 - |w1-w3|^2)/2 + (|w3-w2|^2 - |w4-w2|^2)/2``."""
    w1, w2, w3, w4 = (np.asarray(w, dtype=float) for w in (w1, w2, w3, w4))
    lhs = float((w1 - w2) @ (w3 - w4))
    sq = lambda v: float(v @ v)
    rhs = 0.5 * (sq(w1 - w4) - sq(w1 - w3)) + 0.5 * (sq(w3 - w2) - sq(w4 - w2))
    return lhs, rhs


def three_point_identity(w1, w2, w3):
    """Both sides of ``(w1-w2)'(w3-w1) = (|w2-w3|^2 - |w1-w2|^2 - |w1-w3|^2)/2``."""
    w1, w2, w3 = (np.asarray(w, dtype=float) for w in (w1, w2, w3))
    lhs = float((w1 - w2) @ (w3 - w1))
    sq = lambda v: float(v @ v)
    rhs = 0.5 * (sq(w2 - w3) - sq(w1 - w2) - sq(w1 - w3))
    return lhs, rhs
