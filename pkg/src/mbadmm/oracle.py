"""Reference solutions ``(u*, lambda*, f(u*))`` for small instances.

Sign convention: stationarity reads ``g_i(x_i*) - A_i' lambda* in -N_{X_i}(x_i*)``,
the same convention the solver's dual update ``lambda - gamma * residual``
produces.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .diagnostics import kkt_residual
from .errors import AmbiguousPattern, InvalidProblem, NonConvergence, SingularKkt
from .problem import Box, Free, NonNegative, ProblemSpec, Quadratic, SquaredDistance, WeightedL1, Zero
from .subproblem import prox_composite

KKT_LINEAR_SOLVE = "KktLinearSolve"
ACTIVE_SET_ENUMERATION = "ActiveSetEnumeration"
HIGH_ACCURACY_PROX_GRAD = "HighAccuracyProxGrad"

CERTIFY_TOL = 1e-8
MAX_PATTERNS = 4096
MAX_DIM = 30
_COND_LIMIT = 1e13


@dataclass(frozen=True, eq=False)
class OracleSolution:
    u_star: tuple
    lambda_star: np.ndarray
    f_star: float
    method: str
    certified_kkt_residual: float

    @property
    def rho(self):
        return float(np.linalg.norm(self.lambda_star)) + 1.0


def _smooth_parts(prob: ProblemSpec):
    """Stacked Hessian ``H``, linear term ``q`` and l1 weights (0 for smooth blocks)."""
    n = sum(prob.dims)
    H = np.zeros((n, n))
    q = np.zeros(n)
    w = np.zeros(n)
    off = prob.offsets
    for i, blk in enumerate(prob.blocks):
        sl = slice(off[i], off[i + 1])
        f = blk.f
        if isinstance(f, WeightedL1):
            w[sl] = f.weight
        elif isinstance(f, (Zero, Quadratic, SquaredDistance)):
            H[sl, sl] = f.hessian()
            q[sl] = f.linear_term()
        else:
            raise InvalidProblem(f"unsupported block function {type(f).__name__}")
    return H, q, w


def kkt_system(prob: ProblemSpec):
    """Matrix and right-hand side of ``[H, -A'; A, 0] (u, lambda) = (-q, b)``."""
    H, q, _ = _smooth_parts(prob)
    A = prob.coupling_matrix
    p = prob.p
    K = np.block([[H, -A.T], [A, np.zeros((p, p))]])
    return K, np.concatenate([-q, prob.b])


def _certify(prob, xs, lam, method):
    res = kkt_residual(prob, xs, lam)
    if not res <= CERTIFY_TOL:
        raise NonConvergence(f"{method}: KKT residual {res:.3e} exceeds {CERTIFY_TOL:g}")
    return OracleSolution(tuple(np.array(x) for x in xs), np.array(lam), prob.objective(xs), method, res)


def solve_exact_qp(prob: ProblemSpec) -> OracleSolution:
    """Direct solve of the KKT system of a quadratic problem on free sets."""
    for i, blk in enumerate(prob.blocks):
        if not isinstance(blk.f, (Zero, Quadratic, SquaredDistance)):
            raise InvalidProblem(f"block {i}: exact QP oracle needs a quadratic function")
        if not isinstance(blk.constraint, Free):
            raise InvalidProblem(f"block {i}: exact QP oracle needs a free set")
    K, rhs = kkt_system(prob)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(K, check_finite=False)
    d = np.abs(np.diag(lu[0]))
    if d.min() == 0.0 or np.linalg.cond(K) > _COND_LIMIT:
        raise SingularKkt("KKT matrix is singular")
    z = sla.lu_solve(lu, rhs, check_finite=False)
    z = z + sla.lu_solve(lu, rhs - K @ z, check_finite=False)
    n = K.shape[0] - prob.p
    xs = prob.split(z[:n])
    try:
        return _certify(prob, xs, z[n:], KKT_LINEAR_SOLVE)
    except NonConvergence as exc:
        raise SingularKkt(f"KKT solve is numerically unreliable: {exc}")


# --------------------------------------------------------------------------
# nonsmooth / constrained oracle


def _coordinate_states(f, s, j):
    """Candidate states of coordinate ``j`` of a block.

    A state is ``("free", sign)`` (coordinate varies, ``sign`` picks the l1
    subgradient) or ``("fix", value)`` (coordinate pinned to a bound or zero).
    """
    l1 = isinstance(f, WeightedL1) and f.weight > 0
    if isinstance(s, Free):
        return [("free", 1.0), ("free", -1.0), ("fix", 0.0)] if l1 else [("free", 0.0)]
    if isinstance(s, NonNegative):
        return [("free", 1.0), ("fix", 0.0)] if l1 else [("free", 0.0), ("fix", 0.0)]
    if isinstance(s, Box):
        lo, hi = float(s.lower[j]), float(s.upper[j])
        out = []
        if l1:
            if hi > 0:
                out.append(("free", 1.0))
            if lo < 0:
                out.append(("free", -1.0))
            if lo <= 0 <= hi:
                out.append(("fix", 0.0))
        else:
            out.append(("free", 0.0))
        for v in (lo, hi):
            if np.isfinite(v) and ("fix", v) not in out:
                out.append(("fix", v))
        return out
    return None


def _all_states(prob):
    states = []
    for blk in prob.blocks:
        for j in range(blk.dim):
            c = _coordinate_states(blk.f, blk.constraint, j)
            if c is None:
                return None
            states.append(c)
    return states


def _solve_pattern(prob, H, q, w, A, pattern):
    """Reduced KKT solve for one coordinate pattern; ``None`` if inconsistent."""
    n = H.shape[0]
    u = np.zeros(n)
    free = np.array([st[0] == "free" for st in pattern], dtype=bool)
    sign = np.array([st[1] if st[0] == "free" else 0.0 for st in pattern])
    for k, st in enumerate(pattern):
        if st[0] == "fix":
            u[k] = st[1]
    F = np.flatnonzero(free)
    fixed = np.flatnonzero(~free)
    p = A.shape[0]
    m = F.size
    K = np.zeros((m + p, m + p))
    K[:m, :m] = H[np.ix_(F, F)]
    K[:m, m:] = -A[:, F].T
    K[m:, :m] = A[:, F]
    rhs = np.concatenate([
        -q[F] - w[F] * sign[F] - H[np.ix_(F, fixed)] @ u[fixed],
        prob.b - A[:, fixed] @ u[fixed],
    ])
    z, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    if np.linalg.norm(K @ z - rhs) > 1e-9 * (1 + np.linalg.norm(rhs)):
        return None
    u[F] = z[:m]
    return u, z[m:]


def _enumerate(prob, states, tol):
    H, q, w = _smooth_parts(prob)
    A = prob.coupling_matrix
    hits = []
    for pattern in itertools.product(*states):
        sol = _solve_pattern(prob, H, q, w, A, pattern)
        if sol is None:
            continue
        xs = prob.split(sol[0])
        if not all(blk.constraint.contains(x, 1e-12) for blk, x in zip(prob.blocks, xs)):
            continue
        if kkt_residual(prob, xs, sol[1]) <= tol:
            hits.append((prob.objective(xs), sol))
    if not hits:
        return None
    base = hits[0][1][0]
    for _, (u, _lam) in hits[1:]:
        if np.linalg.norm(u - base) > max(tol, 1e-8) * (1 + np.linalg.norm(base)):
            raise AmbiguousPattern("several sign patterns give distinct KKT points")
    # lowest objective; stable sort keeps the lexicographic pattern order on ties
    hits.sort(key=lambda h: h[0])
    return hits[0][1]


def _splitting_reference(prob, tol, max_iter, rho=1.0):
    """Two-block ADMM on ``u = z``: the smooth part and the coupling constraint
    go to ``u`` (one linear solve), l1 terms and sets go to ``z`` (a prox).

    The multiplier of the coupling constraint in the ``u`` step converges to
    ``lambda*`` under the package sign convention.
    """
    H, q, _ = _smooth_parts(prob)
    A = prob.coupling_matrix
    n, p = H.shape[0], prob.p
    K = np.block([[H + rho * np.eye(n), -A.T], [A, np.zeros((p, p))]])
    lu = sla.lu_factor(K, check_finite=False)
    z = np.zeros(n)
    y = np.zeros(n)
    lam = np.zeros(p)
    off = prob.offsets
    best = (np.inf, None)
    for it in range(1, max_iter + 1):
        rhs = np.concatenate([-q + rho * (z - y), prob.b])
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        u, lam = sol[:n], sol[n:]
        v = u + y
        for i, blk in enumerate(prob.blocks):
            sl = slice(off[i], off[i + 1])
            z[sl] = prox_composite(blk.f, blk.constraint, v[sl], 1.0 / rho)
        y += u - z
        if it % 25 == 0 or it == max_iter:
            cand = u if all(blk.constraint.contains(x, 0.0)
                            for blk, x in zip(prob.blocks, prob.split(u))) else z
            xs = prob.split(cand)
            res = kkt_residual(prob, xs, lam)
            if res < best[0]:
                best = (res, (cand.copy(), lam.copy()))
            if res <= tol:
                return cand.copy(), lam.copy(), res
    raise NonConvergence(f"splitting reference reached {max_iter} iterations (best KKT residual {best[0]:.3e})")


def _pattern_of(prob, u, states, zero_tol=1e-9):
    pattern = []
    k = 0
    for blk in prob.blocks:
        for _ in range(blk.dim):
            v = u[k]
            cands = states[k]
            fixed = [st for st in cands if st[0] == "fix" and abs(v - st[1]) <= zero_tol]
            if fixed:
                pattern.append(fixed[0])
            else:
                sgn = 0.0 if not (isinstance(blk.f, WeightedL1) and blk.f.weight > 0) else float(np.sign(v))
                pattern.append(("free", sgn))
            k += 1
    return pattern


def _recover_dual(prob, xs, lam):
    # scenario-2 structure: lambda* = grad f_N(x_N*) exactly
    if prob.scenario2_eligible:
        return np.array(prob.blocks[-1].f.grad(xs[-1]), dtype=float)
    return lam


def solve_small_nonsmooth(prob: ProblemSpec, tol=1e-9, max_iter=1_000_000, method=None) -> OracleSolution:
    """High-accuracy solution of a small problem with l1 terms or constraint sets.

    Coordinate patterns (sign or zero for l1 coordinates, active bound for
    box and nonnegativity sets) are enumerated when there are at most 4096 of
    them; every pattern gives a reduced linear KKT system, and patterns whose
    solution satisfies the full KKT conditions are kept. Larger problems use
    a two-block splitting reference stopped at ``kkt_residual <= tol``, then
    polished by solving the reduced system of the identified pattern.
    ``method`` forces one of the two routes.
    """
    if method not in (None, ACTIVE_SET_ENUMERATION, HIGH_ACCURACY_PROX_GRAD):
        raise ValueError(f"unknown oracle method {method!r}")
    n = sum(prob.dims)
    if n > MAX_DIM:
        raise InvalidProblem(f"total dimension {n} exceeds the oracle limit {MAX_DIM}")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    _smooth_parts(prob)
    states = _all_states(prob)
    if states is not None:
        count = 1
        for c in states:
            count *= len(c)
        if method == ACTIVE_SET_ENUMERATION or (method is None and count <= MAX_PATTERNS):
            sol = _enumerate(prob, states, max(tol, 1e-12))
            if sol is None:
                raise NonConvergence("no coordinate pattern satisfies the KKT conditions")
            xs = prob.split(sol[0])
            return _certify(prob, xs, _recover_dual(prob, xs, sol[1]), ACTIVE_SET_ENUMERATION)
    elif method == ACTIVE_SET_ENUMERATION:
        raise InvalidProblem("coordinate patterns are not enumerable for ball constraints")
    u, lam, res = _splitting_reference(prob, tol, max_iter)
    if states is not None:
        H, q, w = _smooth_parts(prob)
        pol = _solve_pattern(prob, H, q, w, prob.coupling_matrix, _pattern_of(prob, u, states))
        if pol is not None:
            xs_p = prob.split(pol[0])
            if all(blk.constraint.contains(x, 1e-12) for blk, x in zip(prob.blocks, xs_p)):
                res_p = kkt_residual(prob, xs_p, pol[1])
                if res_p <= res:
                    u, lam = pol
    xs = prob.split(u)
    return _certify(prob, xs, _recover_dual(prob, xs, lam), HIGH_ACCURACY_PROX_GRAD)


def solve(prob: ProblemSpec, tol=1e-9) -> OracleSolution:
    """Exact KKT solve for quadratic problems on free sets, otherwise the
    nonsmooth oracle."""
    smooth = all(isinstance(blk.f, (Zero, Quadratic, SquaredDistance)) and isinstance(blk.constraint, Free)
                 for blk in prob.blocks)
    if smooth:
        try:
            return solve_exact_qp(prob)
        except SingularKkt:
            pass
    return solve_small_nonsmooth(prob, tol)
