"""Exact and iterative solvers for the per-block ADMM minimization

    argmin_{x in X}  f(x) + (gamma/2)||A x + c||^2 + (mu/2)||A x - a0||^2

where ``c`` collects the fixed blocks, ``b`` and the scaled multiplier, and
the last term is present only for the perturbed iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatch, InnerNonConvergence, InvalidProblem, SingularSystem
from .problem import Ball, Box, Free, NonNegative, Quadratic, SquaredDistance, WeightedL1, Zero

CLOSED_FORM = "ClosedForm"
PROX = "Prox"
PROJECTED_GRADIENT = "ProjectedGradient"
STRATEGIES = (CLOSED_FORM, PROX, PROJECTED_GRADIENT)

_COND_LIMIT = 1e12


def soft_threshold(v, t):
    """Componentwise ``sign(v) * max(|v| - t, 0)``."""
    if t < 0:
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _prox_l1_ball(v, tw, center, radius):
    # prox of tw*||x||_1 + indicator(ball): bisection on the ball multiplier nu,
    # x(nu) = soft((v + nu c)/(1 + nu), tw/(1 + nu)) with ||x(nu) - c|| nonincreasing.
    def x_of(nu):
        return soft_threshold((v + nu * center) / (1.0 + nu), tw / (1.0 + nu))

    x = x_of(0.0)
    if np.linalg.norm(x - center) <= radius:
        return x
    if radius == 0.0:
        return np.array(center, dtype=float)
    hi = 1.0
    while np.linalg.norm(x_of(hi) - center) > radius:
        hi *= 2.0
        if hi > 1e300:
            break
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if np.linalg.norm(x_of(mid) - center) > radius:
            lo = mid
        else:
            hi = mid
    return x_of(hi)


def prox_composite(f, s, v, t=1.0):
    """Proximal map of ``t * h + indicator(s)`` at ``v``.

    ``h`` is ``f`` when ``f`` is the weighted l1 norm and zero otherwise, so
    for smooth ``f`` this is the projection onto ``s``.
    """
    v = np.asarray(v, dtype=float)
    if not isinstance(f, WeightedL1) or f.weight == 0.0:
        return s.project(v)
    tw = t * f.weight
    if isinstance(s, Free):
        return soft_threshold(v, tw)
    if isinstance(s, NonNegative):
        return np.maximum(v - tw, 0.0)
    if isinstance(s, Box):
        # separable: the 1-D prox clipped to the interval is exact
        return np.clip(soft_threshold(v, tw), s.lower, s.upper)
    if isinstance(s, Ball):
        return _prox_l1_ball(v, tw, s.center, s.radius)
    raise InvalidProblem(f"unsupported constraint set {type(s).__name__}")


@dataclass(frozen=True, eq=False)
class Perturbation:
    mu: float
    anchor_image: np.ndarray


@dataclass(frozen=True, eq=False)
class BlockSubproblem:
    f: object
    constraint: object
    A: np.ndarray
    offset: np.ndarray
    gamma: float
    perturb: Perturbation | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidProblem("gamma must be > 0")
        if self.perturb is not None and not self.perturb.mu >= 0:
            raise InvalidProblem("mu must be >= 0")
        A = np.asarray(self.A, dtype=float)
        if np.asarray(self.offset).shape != (A.shape[0],):
            raise DimensionMismatch("offset length must equal the number of rows of A")

    @property
    def mu(self):
        return 0.0 if self.perturb is None else float(self.perturb.mu)

    @property
    def anchor_image(self):
        if self.perturb is None:
            return np.zeros(np.asarray(self.A).shape[0])
        return np.asarray(self.perturb.anchor_image, dtype=float)

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        Ax = self.A @ x
        val = self.f.value(x) + 0.5 * self.gamma * float(np.sum((Ax + self.offset) ** 2))
        if self.mu:
            val += 0.5 * self.mu * float(np.sum((Ax - self.anchor_image) ** 2))
        return val

    def smooth_gradient(self, x):
        x = np.asarray(x, dtype=float)
        Ax = self.A @ x
        g = self.gamma * (self.A.T @ (Ax + self.offset))
        if self.mu:
            g += self.mu * (self.A.T @ (Ax - self.anchor_image))
        if self.f.differentiable:
            g += self.f.grad(x)
        return g

    def residual(self, x):
        """Fixed-point residual of one unit-step proximal-gradient step."""
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x - prox_composite(self.f, self.constraint, x - self.smooth_gradient(x))))


@dataclass(frozen=True)
class InnerSolveReport:
    strategy: str
    iterations: int
    final_inner_residual: float


def _is_identity_gram(AtA):
    n = AtA.shape[0]
    return np.allclose(AtA, np.eye(n), rtol=0.0, atol=1e-12)


def _spectral_norm_sym(M):
    if M.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(M)[-1])


class BlockSolver:
    """Per-block solver with the strategy and factorization fixed up front.

    One instance serves every outer iteration of a run: the normal matrix
    depends only on ``f``, ``A``, ``gamma`` and ``mu``.
    """

    def __init__(self, f, constraint, A, gamma, mu=0.0, strategy=None):
        self.f = f
        self.constraint = constraint
        self.A = np.asarray(A, dtype=float)
        self.gamma = float(gamma)
        self.mu = float(mu)
        self.AtA = self.A.T @ self.A
        self._chol = None
        self.strategy = strategy or self._select()
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == CLOSED_FORM:
            if not (isinstance(f, (Zero, Quadratic, SquaredDistance)) and isinstance(constraint, Free)):
                raise ValueError("closed form needs a smooth block function on a free set")
            if self._chol is None:
                self._factor(strict=True)
        if self.strategy == PROX and not (
                isinstance(f, WeightedL1) and isinstance(constraint, Free) and _is_identity_gram(self.AtA)):
            raise ValueError("prox strategy needs weighted l1, a free set and orthonormal A")
        L_f = f.L if (f.differentiable and f.L is not None) else 0.0
        self.L_sub = (self.gamma + self.mu) * _spectral_norm_sym(self.AtA) + L_f

    def _normal_matrix(self):
        H = (self.gamma + self.mu) * self.AtA
        if isinstance(self.f, (Quadratic, SquaredDistance)):
            H = H + self.f.hessian()
        return H

    def _factor(self, strict):
        H = self._normal_matrix()
        try:
            c, low = sla.cho_factor(H, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            if strict:
                raise SingularSystem("normal matrix is not positive definite")
            return False
        d = np.abs(np.diag(c))
        if d.size and (d.min() == 0 or (d.max() / d.min()) ** 2 > _COND_LIMIT):
            if strict:
                raise SingularSystem("normal matrix is numerically singular")
            return False
        self._H = H
        self._chol = (c, low)
        return True

    def _select(self):
        if isinstance(self.f, (Zero, Quadratic, SquaredDistance)) and isinstance(self.constraint, Free):
            if self._factor(strict=False):
                return CLOSED_FORM
        if (isinstance(self.f, WeightedL1) and isinstance(self.constraint, Free)
                and _is_identity_gram(self.AtA)):
            return PROX
        return PROJECTED_GRADIENT

    def subproblem(self, offset, anchor_image=None):
        perturb = None
        if self.mu:
            perturb = Perturbation(self.mu, np.zeros(self.A.shape[0]) if anchor_image is None else anchor_image)
        return BlockSubproblem(self.f, self.constraint, self.A, np.asarray(offset, dtype=float),
                               self.gamma, perturb)

    def solve(self, offset, warm_start, inner_tol=1e-10, anchor_image=None):
        if not inner_tol > 0:
            raise ValueError("inner_tol must be > 0")
        sp = self.subproblem(offset, anchor_image)
        lin = self.A.T @ (self.gamma * sp.offset - self.mu * sp.anchor_image)
        if self.strategy == CLOSED_FORM:
            return self._closed_form(sp, lin)
        if self.strategy == PROX:
            tau = self.gamma + self.mu
            x = soft_threshold(-lin / tau, self.f.weight / tau)
            return x, InnerSolveReport(PROX, 1, sp.residual(x))
        return self._fista(sp, lin, np.asarray(warm_start, dtype=float), inner_tol)

    def _closed_form(self, sp, lin):
        rhs = -lin
        if isinstance(self.f, (Quadratic, SquaredDistance)):
            rhs = rhs - self.f.linear_term()
        x = sla.cho_solve(self._chol, rhs, check_finite=False)
        # one step of iterative refinement
        x = x + sla.cho_solve(self._chol, rhs - self._H @ x, check_finite=False)
        return x, InnerSolveReport(CLOSED_FORM, 1, sp.residual(x))

    def _fista(self, sp, lin, x0, tol):
        f, s = self.f, self.constraint
        H = (self.gamma + self.mu) * self.AtA
        if isinstance(f, (Quadratic, SquaredDistance)):
            H = H + f.hessian()
            lin = lin + f.linear_term()

        def grad(z):
            return H @ z + lin

        def resid(z, gz):
            return float(np.linalg.norm(z - prox_composite(f, s, z - gz)))

        x = s.project(x0)
        gx = grad(x)
        r = resid(x, gx)
        if r <= tol:
            return x, InnerSolveReport(PROJECTED_GRADIENT, 0, r)
        if self.L_sub <= 0:
            raise InnerNonConvergence("subproblem has no curvature and a nonzero residual")
        step = 1.0 / self.L_sub
        cap = int(100 * x.size * max(1.0, math.log10(1.0 / tol)))
        y, gy, t = x.copy(), gx, 1.0
        for it in range(1, cap + 1):
            x_new = prox_composite(f, s, y - step * gy, step)
            g_new = grad(x_new)
            r = resid(x_new, g_new)
            if r <= tol:
                return x_new, InnerSolveReport(PROJECTED_GRADIENT, it, r)
            if (y - x_new) @ (x_new - x) > 0:
                # gradient-based adaptive restart
                t = 1.0
                y, gy = x_new, g_new
            else:
                t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
                y = x_new + ((t - 1.0) / t_new) * (x_new - x)
                gy = grad(y)
                t = t_new
            x = x_new
        raise InnerNonConvergence(f"projected gradient hit the {cap}-iteration cap (residual {r:.3e})")


def solve_block(sp: BlockSubproblem, warm_start, inner_tol=1e-10, strategy=None):
    """Minimize one block subproblem; returns ``(x, InnerSolveReport)``."""
    solver = BlockSolver(sp.f, sp.constraint, sp.A, sp.gamma, sp.mu, strategy=strategy)
    return solver.solve(sp.offset, warm_start, inner_tol, anchor_image=sp.anchor_image)
