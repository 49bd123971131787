"""Deterministic instance generators.

Every generator draws from ``numpy.random.Generator(Philox(seed))``, a
counter-based 64-bit generator, so a recipe (name, shape, seed, parameters)
fixes the instance bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionFailed, InvalidProblem
from .problem import BlockSpec, Free, ProblemSpec, Quadratic, SquaredDistance, WeightedL1, Zero

SHARING_NORM = 1.5
MAX_RESAMPLE = 10
KKT_COND_LIMIT = 1e10


@dataclass(frozen=True)
class InstanceRecipe:
    name: str
    N: int
    dims: tuple
    p: int
    seed: int
    parameters: dict = field(default_factory=dict)

    def build(self) -> ProblemSpec:
        if self.name == "sharing":
            if len(set(self.dims[:-1])) > 1:
                raise InvalidProblem("sharing instances use one block size for the l1 blocks")
            return make_sharing_instance(self.N, self.dims[0], self.p, self.seed, **self.parameters)
        if self.name == "qp":
            return make_qp_instance(self.N, self.dims, self.p, self.seed, **self.parameters)
        if self.name == "divergence":
            return make_divergence_instance()
        raise InvalidProblem(f"unknown recipe {self.name!r}")


def rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def make_sharing_instance(N, n, p, seed, weight=1.0, noise=0.01, sparsity=2, scale=3.0) -> ProblemSpec:
    """Sharing problem ``sum_{i<N} w||x_i||_1 + 0.5||x_N - d||^2`` with
    ``A_1 x_1 + ... + A_{N-1} x_{N-1} + x_N = b``.

    ``A_i`` are Gaussian matrices rescaled to spectral norm 1.5, and ``b`` is
    the image of a planted sparse point plus ``d`` and a little noise, so the
    optimum is sparse but not zero.
    """
    if N < 3:
        raise InvalidProblem("sharing instances need N >= 3")
    if n < 1 or p < 1:
        raise InvalidProblem("block sizes must be positive")
    g = rng(seed)
    As = []
    for _ in range(N - 1):
        G = g.standard_normal((p, n))
        As.append(G * (SHARING_NORM / np.linalg.norm(G, 2)))
    d = g.standard_normal(p)
    b = d + noise * g.standard_normal(p)
    for A in As:
        x = np.zeros(n)
        idx = g.permutation(n)[:min(sparsity, n)]
        x[idx] = scale * np.sign(g.standard_normal(idx.size))
        b = b + A @ x
    blocks = [BlockSpec(A, WeightedL1(weight, n), Free(n)) for A in As]
    blocks.append(BlockSpec(np.eye(p), SquaredDistance(d, 1.0), Free(p)))
    return ProblemSpec(tuple(blocks), b, name=f"sharing-N{N}-n{n}-p{p}-s{seed}", tags=frozenset({"sharing"}))


def make_qp_instance(N, dims, p, seed, strongly_convex=True, noise=0.5) -> ProblemSpec:
    """Quadratic blocks ``0.5 x'Q_i x + q_i'x`` on free sets.

    ``Q_i = I + P_i`` when strongly convex, else ``P_i``, with ``P_i`` a seeded
    PSD matrix of rank ``ceil(n_i/2)``. Draws whose KKT matrix is
    ill-conditioned are rejected and redrawn from the same stream.
    """
    if N < 2:
        raise InvalidProblem("QP instances need N >= 2")
    dims = tuple(int(d) for d in dims)
    if len(dims) != N or min(dims) < 1 or p < 1:
        raise InvalidProblem(f"dims {dims} do not describe {N} positive block sizes")
    g = rng(seed)
    for _ in range(MAX_RESAMPLE):
        blocks = []
        for n in dims:
            r = -(-n // 2)
            G = g.standard_normal((n, r))
            Q = noise * (G @ G.T) / r
            if strongly_convex:
                Q = Q + np.eye(n)
            Q = 0.5 * (Q + Q.T)
            q = g.standard_normal(n)
            A = g.standard_normal((p, n)) / np.sqrt(p)
            blocks.append(BlockSpec(A, Quadratic(Q, q), Free(n)))
        b = g.standard_normal(p)
        prob = ProblemSpec(tuple(blocks), b, name=f"qp-N{N}-p{p}-s{seed}",
                           tags=frozenset({"qp", "strongly_convex" if strongly_convex else "convex"}))
        from .oracle import kkt_system
        K, _ = kkt_system(prob)
        if np.linalg.cond(K) < KKT_COND_LIMIT:
            return prob
    raise ConstructionFailed(f"no well-posed QP after {MAX_RESAMPLE} draws")


# Columns of the classic 3x3 example on which the direct three-block
# extension of ADMM diverges for every gamma > 0.
DIVERGENCE_COLUMNS = np.array([[1.0, 1.0, 1.0],
                               [1.0, 1.0, 2.0],
                               [1.0, 2.0, 2.0]])


def make_divergence_instance() -> ProblemSpec:
    """``min 0`` subject to ``A_1 x_1 + A_2 x_2 + A_3 x_3 = 0`` with scalar
    blocks; the only solution is ``u = 0``."""
    blocks = tuple(BlockSpec(DIVERGENCE_COLUMNS[:, [i]], Zero(1), Free(1)) for i in range(3))
    return ProblemSpec(blocks, np.zeros(3), name="divergence-3x3",
                       tags=frozenset({"nonconvergent_expected"}))
