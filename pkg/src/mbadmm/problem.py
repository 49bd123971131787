"""N-block linearly coupled convex problems.

    minimize    f_1(x_1) + ... + f_N(x_N)
    subject to  A_1 x_1 + ... + A_N x_N = b,   x_i in X_i

Block functions and constraint sets are small closed families of variants.
Indicator functions live only in the constraint sets, so every block
function value is finite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, InvalidProblem, UnsupportedOperation

PSD_TOL = 1e-10


def _frozen(a, ndim=1, name="array"):
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 0 and ndim == 1:
        arr = arr.reshape(1)
    if arr.ndim != ndim:
        raise InvalidProblem(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_dim(x, dim, what="x"):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise DimensionMismatch(f"{what} has shape {x.shape}, expected ({dim},)")
    return x


# --------------------------------------------------------------------------
# constraint sets


@dataclass(frozen=True, eq=False)
class Free:
    dim: int

    bounded = False

    def project(self, v):
        return np.array(_check_dim(v, self.dim), dtype=float)

    def contains(self, v, tol=0.0):
        return True


@dataclass(frozen=True, eq=False)
class NonNegative:
    dim: int

    bounded = False

    def project(self, v):
        return np.maximum(_check_dim(v, self.dim), 0.0)

    def contains(self, v, tol=0.0):
        return bool(np.all(np.asarray(v) >= -tol))


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.lower, name="lower")
        hi = _frozen(self.upper, name="upper")
        if lo.shape != hi.shape:
            raise InvalidProblem("box bounds have different shapes")
        if np.any(lo > hi):
            raise InvalidProblem("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def bounded(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def project(self, v):
        return np.clip(_check_dim(v, self.dim), self.lower, self.upper)

    def contains(self, v, tol=0.0):
        v = np.asarray(v)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))


@dataclass(frozen=True, eq=False)
class Ball:
    """Euclidean ball ``{x : ||x - center|| <= radius}``."""

    center: np.ndarray
    radius: float

    bounded = True

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, name="center"))
        r = float(self.radius)
        if not r >= 0:
            raise InvalidProblem("ball radius must be >= 0")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self):
        return self.center.shape[0]

    def project(self, v):
        v = _check_dim(v, self.dim)
        d = v - self.center
        nd = np.linalg.norm(d)
        if nd <= self.radius:
            return np.array(v, dtype=float)
        return self.center + d * (self.radius / nd)

    def contains(self, v, tol=0.0):
        return bool(np.linalg.norm(np.asarray(v) - self.center) <= self.radius + tol)


ConstraintSet = Union[Free, NonNegative, Box, Ball]


def project(s: ConstraintSet, v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``s``."""
    return s.project(v)


# --------------------------------------------------------------------------
# block functions


@dataclass(frozen=True, eq=False)
class Zero:
    dim: int
    L: float | None = None

    differentiable = True

    def __post_init__(self):
        if self.L is not None and not self.L > 0:
            raise InvalidProblem("declared Lipschitz constant must be > 0")

    def value(self, x):
        _check_dim(x, self.dim)
        return 0.0

    def grad(self, x):
        return np.zeros_like(_check_dim(x, self.dim))

    def hessian(self):
        return np.zeros((self.dim, self.dim))

    def linear_term(self):
        return np.zeros(self.dim)


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``0.5 x'Qx + q'x + c`` with ``Q`` symmetric positive semidefinite."""

    Q: np.ndarray
    q: np.ndarray
    c: float = 0.0
    L: float | None = None

    differentiable = True

    def __post_init__(self):
        Q = _frozen(self.Q, ndim=2, name="Q")
        q = _frozen(self.q, name="q")
        if Q.shape != (q.shape[0], q.shape[0]):
            raise InvalidProblem(f"Q has shape {Q.shape}, q has length {q.shape[0]}")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * (1 + np.abs(Q).max(initial=0))):
            raise InvalidProblem("Q must be symmetric")
        eig = np.linalg.eigvalsh(Q) if Q.size else np.zeros(1)
        if eig[0] < -PSD_TOL:
            raise InvalidProblem(f"Q is not PSD (smallest eigenvalue {eig[0]:.3e})")
        lmax = max(float(eig[-1]), 0.0)
        L = self.L
        if L is None:
            L = lmax if lmax > 0 else None
        elif not (L > 0 and L >= lmax - PSD_TOL):
            raise InvalidProblem(f"declared L={L} is below the largest eigenvalue {lmax}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "L", None if L is None else float(L))

    @property
    def dim(self):
        return self.q.shape[0]

    def value(self, x):
        x = _check_dim(x, self.dim)
        return float(0.5 * x @ (self.Q @ x) + self.q @ x + self.c)

    def grad(self, x):
        x = _check_dim(x, self.dim)
        return self.Q @ x + self.q

    def hessian(self):
        return np.array(self.Q)

    def linear_term(self):
        return np.array(self.q)

    @property
    def positive_definite(self):
        return bool(np.linalg.eigvalsh(self.Q)[0] > PSD_TOL)


@dataclass(frozen=True, eq=False)
class WeightedL1:
    weight: float
    dim: int

    differentiable = False
    L = None

    def __post_init__(self):
        if not float(self.weight) >= 0:
            raise InvalidProblem("l1 weight must be >= 0")
        object.__setattr__(self, "weight", float(self.weight))

    def value(self, x):
        x = _check_dim(x, self.dim)
        return float(self.weight * np.abs(x).sum())

    def grad(self, x):
        raise UnsupportedOperation("weighted l1 is not differentiable")


@dataclass(frozen=True, eq=False)
class SquaredDistance:
    """``0.5 * weight * ||x - anchor||^2``."""

    anchor: np.ndarray
    weight: float = 1.0
    L: float | None = None

    differentiable = True

    def __post_init__(self):
        object.__setattr__(self, "anchor", _frozen(self.anchor, name="anchor"))
        w = float(self.weight)
        if not w >= 0:
            raise InvalidProblem("weight must be >= 0")
        object.__setattr__(self, "weight", w)
        L = self.L
        if L is None:
            L = w if w > 0 else None
        elif not (L > 0 and L >= w):
            raise InvalidProblem("declared L must be >= weight")
        object.__setattr__(self, "L", None if L is None else float(L))

    @property
    def dim(self):
        return self.anchor.shape[0]

    def value(self, x):
        x = _check_dim(x, self.dim)
        d = x - self.anchor
        return float(0.5 * self.weight * (d @ d))

    def grad(self, x):
        x = _check_dim(x, self.dim)
        return self.weight * (x - self.anchor)

    def hessian(self):
        return self.weight * np.eye(self.dim)

    def linear_term(self):
        return -self.weight * self.anchor


BlockFunction = Union[Zero, Quadratic, WeightedL1, SquaredDistance]


def evaluate_block(f: BlockFunction, x) -> float:
    return f.value(x)


def gradient(f: BlockFunction, x) -> np.ndarray:
    return f.grad(x)


def is_coercive(f: BlockFunction, s: ConstraintSet) -> bool:
    """Syntactic sufficient condition for coercivity of ``f + indicator(s)``."""
    if s.bounded:
        return True
    if isinstance(f, WeightedL1):
        return f.weight > 0
    if isinstance(f, Quadratic):
        return f.positive_definite
    if isinstance(f, SquaredDistance):
        return f.weight > 0
    return False


# --------------------------------------------------------------------------
# problem


@dataclass(frozen=True, eq=False)
class BlockSpec:
    A: np.ndarray
    f: BlockFunction
    constraint: ConstraintSet

    def __post_init__(self):
        A = _frozen(self.A, ndim=2, name="A")
        object.__setattr__(self, "A", A)
        if self.f.dim != A.shape[1]:
            raise InvalidProblem(f"f has dimension {self.f.dim}, A has {A.shape[1]} columns")
        if self.constraint.dim != A.shape[1]:
            raise InvalidProblem(
                f"constraint has dimension {self.constraint.dim}, A has {A.shape[1]} columns")

    @property
    def dim(self):
        return self.A.shape[1]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    blocks: tuple
    b: np.ndarray
    name: str = ""
    tags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if len(blocks) < 2:
            raise InvalidProblem("need at least two blocks")
        b = _frozen(self.b, name="b")
        for i, blk in enumerate(blocks):
            if blk.A.shape[0] != b.shape[0]:
                raise InvalidProblem(f"block {i} has {blk.A.shape[0]} rows, b has {b.shape[0]}")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "tags", frozenset(self.tags))

    @property
    def N(self):
        return len(self.blocks)

    @property
    def p(self):
        return self.b.shape[0]

    @property
    def dims(self):
        return tuple(blk.dim for blk in self.blocks)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.dims)]).astype(int)

    def split(self, u):
        """Split a stacked primal vector into per-block views."""
        u = np.asarray(u, dtype=float)
        off = self.offsets
        if u.shape != (off[-1],):
            raise DimensionMismatch(f"stacked vector has shape {u.shape}, expected ({off[-1]},)")
        return [u[off[i]:off[i + 1]] for i in range(self.N)]

    def stack(self, xs):
        return np.concatenate([np.asarray(x, dtype=float) for x in xs])

    def check_blocks(self, xs):
        if len(xs) != self.N:
            raise DimensionMismatch(f"expected {self.N} blocks, got {len(xs)}")
        return [_check_dim(x, blk.dim, what=f"x[{i}]") for i, (x, blk) in enumerate(zip(xs, self.blocks))]

    def objective(self, xs):
        xs = self.check_blocks(xs)
        return float(sum(blk.f.value(x) for blk, x in zip(self.blocks, xs)))

    def constraint_map(self, xs):
        """``sum_i A_i x_i - b``."""
        xs = self.check_blocks(xs)
        r = -np.array(self.b)
        for blk, x in zip(self.blocks, xs):
            r += blk.A @ x
        return r

    @property
    def coupling_matrix(self):
        return np.hstack([blk.A for blk in self.blocks])

    @property
    def scenario2_eligible(self):
        last = self.blocks[-1]
        if last.A.shape != (self.p, self.p) or not np.array_equal(last.A, np.eye(self.p)):
            return False
        if not isinstance(last.constraint, Free):
            return False
        if not last.f.differentiable or last.f.L is None:
            return False
        return all(is_coercive(blk.f, blk.constraint) for blk in self.blocks[:-1])

    @property
    def lipschitz_last(self):
        return self.blocks[-1].f.L


def primal_residual(prob: ProblemSpec, xs: Sequence) -> float:
    """Euclidean norm of ``sum_i A_i x_i - b``."""
    return float(np.linalg.norm(prob.constraint_map(xs)))
