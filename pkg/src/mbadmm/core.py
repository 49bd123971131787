"""Outer ADMM iterations: plain Gauss-Seidel multi-block ADMM, the perturbed
variant with a fixed anchor, and the sharing-problem specialization with an
identity last block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import AdmmError, DualGradientIdentityViolated, InvalidConfig
from .problem import ProblemSpec
from .subproblem import BlockSolver

DEFAULT_STOP_TOL = 1e-8


@dataclass(frozen=True)
class Plain:
    name = "plain"


@dataclass(frozen=True)
class Perturbed:
    epsilon: float
    name = "perturbed"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon must be > 0")


@dataclass(frozen=True)
class Scenario2:
    name = "scenario2"


Mode = Union[Plain, Perturbed, Scenario2]


def compute_mu(epsilon, N):
    """Perturbation weight ``epsilon * (N - 2) * (N + 1)``."""
    if not epsilon > 0:
        raise InvalidConfig("epsilon must be > 0")
    if N < 3:
        raise InvalidConfig("the perturbation is defined for N >= 3 blocks")
    return epsilon * (N - 2) * (N + 1)


@dataclass(frozen=True, eq=False)
class SolverConfig:
    gamma: float
    mode: Mode = Plain()
    max_iter: int = 1000
    inner_tol: float = 1e-10
    anchor: Optional[tuple] = None
    record_trace: bool = True
    stop_tol: Optional[float] = None
    # test hook: replaces compute_mu(epsilon, N) in the perturbed iteration
    mu_override: Optional[float] = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidConfig("gamma must be > 0")
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise InvalidConfig("max_iter must be a nonnegative integer")
        if not self.inner_tol > 0:
            raise InvalidConfig("inner_tol must be > 0")
        if isinstance(self.mode, Perturbed):
            eps = self.mode.epsilon
            if not (eps / 2 <= self.gamma <= eps):
                raise InvalidConfig(f"perturbed mode needs eps/2 <= gamma <= eps (gamma={self.gamma}, eps={eps})")
        if self.anchor is not None:
            object.__setattr__(self, "anchor", tuple(np.array(a, dtype=float) for a in self.anchor))

    def validate(self, prob: ProblemSpec):
        if isinstance(self.mode, Scenario2):
            if not prob.scenario2_eligible:
                raise InvalidConfig("problem is not eligible for the scenario-2 iteration")
            L = prob.lipschitz_last
            if not self.gamma > math.sqrt(2) * L:
                raise InvalidConfig(f"scenario-2 needs gamma > sqrt(2) L = {math.sqrt(2) * L}")
        if isinstance(self.mode, Perturbed) and self.mu_override is None:
            compute_mu(self.mode.epsilon, prob.N)
        if self.anchor is not None:
            prob.check_blocks(list(self.anchor))
        return self

    def mu(self, N):
        if not isinstance(self.mode, Perturbed):
            return 0.0
        if self.mu_override is not None:
            return float(self.mu_override)
        return compute_mu(self.mode.epsilon, N)


def auto_gamma(prob: ProblemSpec, mode: Mode):
    if isinstance(mode, Perturbed):
        return mode.epsilon
    if isinstance(mode, Scenario2):
        return 2.0 * math.sqrt(2.0) * prob.lipschitz_last
    return 1.0


@dataclass(frozen=True, eq=False)
class IterateState:
    x: tuple
    lam: np.ndarray
    k: int
    images: tuple
    ergodic_sum_x: tuple
    ergodic_sum_lambda: np.ndarray


@dataclass(frozen=True)
class IterationDelta:
    image_diffs: tuple
    xN_diff: float
    lambda_diff: float
    inner_iterations: int = 0

    @property
    def max_image_diff(self):
        return max(self.image_diffs) if self.image_diffs else 0.0


def initial_state(prob: ProblemSpec, x0=None, lam0=None, mode: Mode = Plain()) -> IterateState:
    """Zero primal by default; zero dual except in scenario 2, where the dual
    starts at the gradient of the last block so the dual-gradient identity
    already holds at iteration 0."""
    if x0 is None:
        xs = [np.zeros(d) for d in prob.dims]
    else:
        xs = [np.array(x, dtype=float) for x in prob.check_blocks(list(x0))]
    if lam0 is None:
        if isinstance(mode, Scenario2):
            lam = np.array(prob.blocks[-1].f.grad(xs[-1]), dtype=float)
        else:
            lam = np.zeros(prob.p)
    else:
        lam = np.array(lam0, dtype=float)
        if lam.shape != (prob.p,):
            raise InvalidConfig(f"initial dual has shape {lam.shape}, expected ({prob.p},)")
    images = tuple(blk.A @ x for blk, x in zip(prob.blocks, xs))
    return IterateState(tuple(xs), lam, 0, images,
                        tuple(np.zeros(d) for d in prob.dims), np.zeros(prob.p))


def make_block_solvers(prob: ProblemSpec, cfg: SolverConfig):
    mu = cfg.mu(prob.N)
    return [BlockSolver(blk.f, blk.constraint, blk.A, cfg.gamma, mu if (mu and i > 0) else 0.0)
            for i, blk in enumerate(prob.blocks)]


def _sweep(prob, cfg, state, solvers, anchor_images=None):
    gamma = cfg.gamma
    xs = list(state.x)
    imgs = list(state.images)
    scaled_lam = state.lam / gamma
    inner = 0
    for i, (blk, solver) in enumerate(zip(prob.blocks, solvers)):
        fixed = -np.array(prob.b)
        for j in range(prob.N):
            if j != i:
                fixed += imgs[j]
        offset = fixed - scaled_lam
        a_img = None if anchor_images is None else anchor_images[i]
        x_new, report = solver.solve(offset, xs[i], cfg.inner_tol, anchor_image=a_img)
        inner += report.iterations
        xs[i] = x_new
        imgs[i] = blk.A @ x_new
    r = -np.array(prob.b)
    for img in imgs:
        r += img
    lam_new = state.lam - gamma * r
    k1 = state.k + 1
    new = IterateState(
        tuple(xs), lam_new, k1, tuple(imgs),
        tuple(s + x for s, x in zip(state.ergodic_sum_x, xs)),
        state.ergodic_sum_lambda + lam_new,
    )
    delta = IterationDelta(
        tuple(float(np.linalg.norm(a - b)) for a, b in zip(state.images, imgs)),
        float(np.linalg.norm(state.x[-1] - xs[-1])),
        float(np.linalg.norm(state.lam - lam_new)),
        inner,
    )
    return new, delta


def plain_iterate(prob, cfg, state, solvers=None):
    """One Gauss-Seidel sweep over the blocks followed by the dual update."""
    if solvers is None:
        solvers = make_block_solvers(prob, replace(cfg, mode=Plain(), mu_override=None))
    return _sweep(prob, cfg, state, solvers)


def perturbed_iterate(prob, cfg, state, solvers=None):
    """Plain sweep on the problem whose blocks 2..N carry the extra term
    ``(mu/2)||A_i x_i - A_i x_i^0||^2`` around the frozen anchor."""
    if not isinstance(cfg.mode, Perturbed):
        raise InvalidConfig("perturbed_iterate needs a Perturbed mode")
    if cfg.anchor is None:
        raise InvalidConfig("perturbed_iterate needs a fixed anchor")
    if solvers is None:
        solvers = make_block_solvers(prob, cfg)
    anchor_images = [blk.A @ a for blk, a in zip(prob.blocks, cfg.anchor)]
    return _sweep(prob, cfg, state, solvers, anchor_images)


def scenario2_iterate(prob, cfg, state, solvers=None):
    if not prob.scenario2_eligible:
        raise InvalidConfig("problem is not eligible for the scenario-2 iteration")
    if solvers is None:
        solvers = make_block_solvers(prob, cfg)
    new, delta = _sweep(prob, cfg, state, solvers)
    gap = np.linalg.norm(prob.blocks[-1].f.grad(new.x[-1]) - new.lam)
    if gap > 10 * cfg.inner_tol * (1 + np.linalg.norm(new.lam)):
        raise DualGradientIdentityViolated(
            f"||grad f_N(x_N) - lambda|| = {gap:.3e} at iteration {new.k}")
    return new, delta


_ITERATE = {Plain: plain_iterate, Perturbed: perturbed_iterate, Scenario2: scenario2_iterate}


def ergodic_point(state: IterateState):
    """Mean of the iterates ``x^1..x^k`` and ``lambda^1..lambda^k``."""
    if state.k < 1:
        raise AdmmError("no iterates yet")
    return (tuple(s / state.k for s in state.ergodic_sum_x), state.ergodic_sum_lambda / state.k)


# --------------------------------------------------------------------------
# runs and traces


@dataclass
class IterationRecord:
    k: int
    f_val: float
    aug_lag: float
    primal_res: float
    image_diffs: tuple
    xN_diff: float
    lambda_diff: float
    kkt_res: float
    inner_iterations: int
    certificates: dict = field(default_factory=dict)

    @property
    def max_image_diff(self):
        return max(self.image_diffs)


@dataclass
class Trace:
    """Per-iteration records plus the full iterate history ``w^0..w^K``."""

    gamma: float
    mode: Mode
    records: list = field(default_factory=list)
    u_hist: list = field(default_factory=list)
    lam_hist: list = field(default_factory=list)
    anchor: Optional[tuple] = None

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self):
        return len(self.u_hist) - 1

    def w(self, k, prob):
        return PrimalDual(tuple(prob.split(self.u_hist[k])), self.lam_hist[k], k)

    def ergodic(self, t, prob):
        """Ergodic point over ``x^1..x^{t+1}`` (the averaging window of ``t``)."""
        if not 0 <= t < self.iterations:
            raise AdmmError(f"ergodic point at t={t} needs {t + 1} iterations, trace has {self.iterations}")
        U = np.asarray(self.u_hist[1:t + 2])
        L = np.asarray(self.lam_hist[1:t + 2])
        return tuple(prob.split(U.mean(axis=0))), L.mean(axis=0)


@dataclass(frozen=True, eq=False)
class PrimalDual:
    x: tuple
    lam: np.ndarray
    k: int = 0


@dataclass
class RunResult:
    state: IterateState
    ergodic: Optional[tuple]
    trace: Trace
    stopped_early: bool = False
    run_config: Optional[SolverConfig] = None


def run(prob: ProblemSpec, cfg: SolverConfig, initial=None, certificates: Sequence[str] = (),
        rel_tol=1e-8) -> RunResult:
    """Apply the mode's iteration ``cfg.max_iter`` times (or until the stop test).

    ``initial`` is ``None`` or a pair ``(x_blocks, lam)`` where either entry may
    be ``None``. Per-iteration certificates named in ``certificates`` are
    evaluated from ``w^k`` and ``w^{k+1}`` and stored in the trace records.
    On failure the raised error carries the partial trace as ``.trace``.
    """
    from . import diagnostics

    cfg.validate(prob)
    x0, lam0 = (None, None) if initial is None else initial
    state = initial_state(prob, x0, lam0, cfg.mode)
    if isinstance(cfg.mode, Perturbed) and cfg.anchor is None:
        cfg = replace(cfg, anchor=state.x)
    step = _ITERATE[type(cfg.mode)]
    solvers = make_block_solvers(prob, cfg)
    unknown = set(certificates) - set(diagnostics.STEP_CERTIFICATES)
    if unknown:
        raise InvalidConfig(f"unknown per-iteration certificates: {sorted(unknown)}")

    trace = Trace(cfg.gamma, cfg.mode, anchor=cfg.anchor)
    if cfg.record_trace:
        trace.u_hist.append(prob.stack(state.x))
        trace.lam_hist.append(np.array(state.lam))
    stopped = False
    try:
        for _ in range(int(cfg.max_iter)):
            new, delta = step(prob, cfg, state, solvers)
            if cfg.record_trace:
                trace.u_hist.append(prob.stack(new.x))
                trace.lam_hist.append(np.array(new.lam))
                certs = {name: diagnostics.STEP_CERTIFICATES[name](prob, cfg, state, new, delta, rel_tol)
                         for name in certificates}
                trace.records.append(IterationRecord(
                    k=new.k,
                    f_val=prob.objective(new.x),
                    aug_lag=diagnostics.augmented_lagrangian(prob, new.x, new.lam, cfg.gamma),
                    primal_res=float(np.linalg.norm(prob.constraint_map(new.x))),
                    image_diffs=delta.image_diffs,
                    xN_diff=delta.xN_diff,
                    lambda_diff=delta.lambda_diff,
                    kkt_res=diagnostics.kkt_residual(prob, new.x, new.lam),
                    inner_iterations=delta.inner_iterations,
                    certificates=certs,
                ))
            state = new
            if cfg.stop_tol is not None:
                res = float(np.linalg.norm(prob.constraint_map(state.x)))
                if max(res, delta.max_image_diff, delta.lambda_diff) <= cfg.stop_tol:
                    stopped = True
                    break
    except AdmmError as exc:
        exc.trace = trace
        exc.state = state
        raise
    erg = ergodic_point(state) if state.k >= 1 else None
    return RunResult(state, erg, trace, stopped, cfg)
