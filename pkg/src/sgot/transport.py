"""Entropic optimal transport between node-embedding sets.

Marginals are always uniform: ``1/n`` over the rows of the first embedding
and ``1/m`` over the second. The Sinkhorn solver targets

    argmin_T  lam * <T, M> - H(T)

whose minimiser has the form ``diag(u) exp(-lam M) diag(v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

# Above this value of lam * max(M) the solver switches to log-domain updates.
LOG_DOMAIN_THRESHOLD = 50.0
# lam is annealed by this factor per stage in the log domain
SCALING_FACTOR = 4.0
STAGE_TOL = 1e-3
# scaling sweeps before switching to Newton steps, for problems small enough
# that a dense (n + m)^2 Hessian is cheap
NEWTON_AFTER = 200
NEWTON_SIZE_LIMIT = 400
POLISH_TOL = 1e-15
POLISH_STEPS = 8
# Newton gives up after this many steps without halving the marginal error
NEWTON_PATIENCE = 8
EXACT_SIZE_LIMIT = 400


class NumericError(ArithmeticError):
    """A non-finite value entered or appeared in a computation."""


@dataclass(frozen=True)
class SinkhornConfig:
    lam: float = 100.0
    max_iter: int = 1000
    tol: float = 1e-9
    domain: str = "auto"

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive and finite, got {self.lam}")
        if not (self.tol > 0):
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.domain not in ("auto", "direct", "log"):
            raise ValueError(f"domain must be auto, direct or log, got {self.domain!r}")


@dataclass(frozen=True)
class TransportPlan:
    matrix: np.ndarray
    iterations: int
    violation: float
    converged: bool = True
    log_domain: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def _as_embedding(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, d) embedding, got shape {X.shape}")
    return X


def cost_matrix(Xv, Xw) -> np.ndarray:
    """Pairwise squared Euclidean distances, ``M[i, j] = |x_i - y_j|^2``."""
    Xv, Xw = _as_embedding(Xv), _as_embedding(Xw)
    if Xv.shape[1] != Xw.shape[1]:
        raise ValueError(f"embedding dimensions differ: {Xv.shape[1]} vs {Xw.shape[1]}")
    diff = Xv[:, None, :] - Xw[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def uniform_marginals(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    return np.full(n, 1.0 / n), np.full(m, 1.0 / m)


def marginal_violation(T: np.ndarray) -> float:
    a, b = uniform_marginals(*T.shape)
    return float(max(np.abs(T.sum(axis=1) - a).max(), np.abs(T.sum(axis=0) - b).max()))


def _check_cost(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or 0 in M.shape:
        raise ValueError(f"cost matrix must be a non-empty 2-d array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("cost matrix has non-finite entries")
    return M


def _sinkhorn_direct(M, a, b, cfg, budget):
    K = np.exp(-cfg.lam * M)
    v = np.ones(M.shape[1])
    u = a / (K @ v)
    it = 0
    while it < budget:
        it += 1
        u = a / (K @ v)
        v = b / (K.T @ u)
        # columns match exactly after the v-update; rows carry the error
        err = np.abs(u * (K @ v) - a).max()
        if not np.isfinite(err) or err <= cfg.tol:
            break
    with np.errstate(divide="ignore"):
        return np.log(u), np.log(v), it


def _lse(A: np.ndarray, axis: int) -> np.ndarray:
    mx = A.max(axis=axis, keepdims=True)
    return (mx + np.log(np.exp(A - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def _lam_schedule(lam: float, span: float) -> list[float]:
    """Increasing regularisation strengths ending at ``lam``, starting where
    the kernel is still smooth (lam * span of order one)."""
    stages = [lam]
    floor = 1.0 / span if span > 0 else lam
    while stages[-1] > floor * SCALING_FACTOR:
        stages.append(stages[-1] / SCALING_FACTOR)
    return stages[::-1]


def _sinkhorn_log(M, a, b, cfg, budget):
    f = np.zeros(M.shape[0])
    g = np.zeros(M.shape[1])
    stages = _lam_schedule(cfg.lam, M.max())
    it = 0
    for s, lam in enumerate(stages):
        last = s == len(stages) - 1
        f, g, used = _sweeps(-lam * M, f, g, a, b, cfg.tol if last else STAGE_TOL, budget - it)
        it += used
        if not last:
            # potentials scale with lam at fixed dual variables
            f *= stages[s + 1] / lam
            g *= stages[s + 1] / lam
    return f, g, it


def _sweeps(S, f, g, a, b, tol, budget):
    loga, logb = np.log(a), np.log(b)
    it = 0
    while it < budget:
        it += 1
        f = loga - _lse(S + g[None, :], axis=1)
        g = logb - _lse(S + f[:, None], axis=0)
        if np.abs(np.exp(f + _lse(S + g[None, :], axis=1)) - a).max() <= tol:
            break
    return f, g, it


def _residual(S, f, g, a, b):
    T = np.exp(S + f[:, None] + g[None, :])
    return T, np.concatenate([a - T.sum(axis=1), b - T.sum(axis=0)])


def _newton_polish(S, f, g, a, b, tol, budget):
    """Newton steps on the log-domain dual of the entropic problem.

    Same fixed point as the scaling updates, but converges quadratically where
    alternating scaling stalls (nearly degenerate costs at large lam). The
    Hessian is singular along one gauge direction per connected block of the
    plan's support, so steps come from a rank-revealing least-squares solve.
    """
    n = S.shape[0]
    loga, logb = np.log(a), np.log(b)
    T, grad = _residual(S, f, g, a, b)
    obj = a @ f + b @ g - T.sum()
    it = stalled = 0
    best = np.abs(grad).max()
    while it < budget and best > tol and stalled < NEWTON_PATIENCE:
        it += 1
        r, c = T.sum(axis=1), T.sum(axis=0)
        H = np.block([[np.diag(r), T], [T.T, np.diag(c)]])
        try:
            step = np.linalg.lstsq(H, grad, rcond=1e-13)[0]
        except np.linalg.LinAlgError:
            break
        slope = grad @ step
        r0 = grad @ grad
        t = 1.0
        while t > 1e-12:
            nf, ng = f + t * step[:n], g + t * step[n:]
            Tn, gn = _residual(S, nf, ng, a, b)
            if np.all(np.isfinite(gn)):
                new_obj = a @ nf + b @ ng - Tn.sum()
                # the dual objective is the natural merit far from the
                # solution; near it, its gains drown in round-off and the
                # residual takes over
                if new_obj >= obj + 1e-4 * t * slope or gn @ gn < (1.0 - 1e-4 * t) * r0:
                    break
            t *= 0.5
        else:
            break
        # one exact block-ascent sweep rescales rows and columns whose plan
        # entries underflowed, which the Hessian cannot see
        f = loga - _lse(S + ng[None, :], axis=1)
        g = logb - _lse(S + f[:, None], axis=0)
        T, grad = _residual(S, f, g, a, b)
        obj = a @ f + b @ g - T.sum()
        err = np.abs(grad).max()
        stalled = stalled + 1 if err > 0.5 * best else 0
        best = min(best, err)
    return f, g, it


def round_to_marginals(T: np.ndarray) -> np.ndarray:
    """Project a nearly feasible plan onto the uniform-marginal polytope.

    Rows then columns are scaled down to their targets, and the leftover
    mass is added back as a rank-one correction, so the returned plan is
    feasible and differs from ``T`` by at most twice its marginal error in L1.
    """
    a, b = uniform_marginals(*T.shape)
    r = T.sum(axis=1)
    T = T * np.minimum(1.0, a / np.where(r > 0, r, 1.0))[:, None]
    c = T.sum(axis=0)
    T = T * np.minimum(1.0, b / np.where(c > 0, c, 1.0))[None, :]
    # both deficits are nonnegative in exact arithmetic
    da = np.maximum(a - T.sum(axis=1), 0.0)
    db = np.maximum(b - T.sum(axis=0), 0.0)
    total = da.sum()
    if total > 0:
        T = T + np.outer(da, db) / total
    return T


def sinkhorn(M, cfg: SinkhornConfig = SinkhornConfig()) -> TransportPlan:
    """Entropic transport plan between uniform marginals for cost ``M``.

    Alternates ``u = a / (K v)`` and ``v = b / (K^T u)`` with
    ``K = exp(-lam M)`` until the largest marginal error is at most
    ``cfg.tol``. When ``lam * max(M)`` is large the updates run on log
    potentials with lam annealed up from a smooth kernel; a final stage that
    stalls is finished by Newton steps on the same dual. A converged plan is
    rounded onto the exact marginals. Running out of ``cfg.max_iter`` total
    iterations is reported through ``converged``, not raised.
    """
    M = _check_cost(M)
    n, m = M.shape
    a, b = uniform_marginals(n, m)
    if n == 1 or m == 1:
        # the product coupling is the only feasible plan
        T = np.outer(a, b)
        return TransportPlan(T, 0, marginal_violation(T), True, False)
    # shifting M by a constant leaves the plan unchanged
    Ms = M - M.min()
    if cfg.domain == "auto":
        use_log = cfg.lam * Ms.max() > LOG_DOMAIN_THRESHOLD
    else:
        use_log = cfg.domain == "log"
    solver = _sinkhorn_log if use_log else _sinkhorn_direct
    budget = cfg.max_iter
    if n + m <= NEWTON_SIZE_LIMIT:
        budget = min(cfg.max_iter, NEWTON_AFTER)
    S = -cfg.lam * Ms
    with np.errstate(over="ignore", divide="ignore", invalid="ignore", under="ignore"):
        f, g, it = solver(Ms, a, b, cfg, budget)
        T, grad = _residual(S, f, g, a, b)
        newton = n + m <= NEWTON_SIZE_LIMIT
        if newton and not (np.abs(grad).max() <= cfg.tol):
            f, g, extra = _newton_polish(S, f, g, a, b, cfg.tol, cfg.max_iter - it)
            it += extra
            T, grad = _residual(S, f, g, a, b)
        if not (np.abs(grad).max() <= cfg.tol) and it < cfg.max_iter:
            # Newton stalled or was skipped: spend what is left on plain sweeps
            f, g, extra = _sweeps(S, f, g, a, b, cfg.tol, cfg.max_iter - it)
            it += extra
            T, grad = _residual(S, f, g, a, b)
        if newton and np.abs(grad).max() <= cfg.tol:
            # a few quadratic steps push the error to round-off, so the final
            # rounding moves no visible mass
            budget = min(POLISH_STEPS, cfg.max_iter - it)
            f, g, extra = _newton_polish(S, f, g, a, b, POLISH_TOL, budget)
            it += extra
            T, grad = _residual(S, f, g, a, b)
    if not np.all(np.isfinite(T)):
        raise NumericError("transport plan has non-finite entries")
    converged = marginal_violation(T) <= cfg.tol
    if converged:
        T = round_to_marginals(T)
    return TransportPlan(T, it, marginal_violation(T), converged, bool(use_log))


def plan_cost(plan, M) -> float:
    T = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan)
    return float(np.sum(T * np.asarray(M)))


def gwd(Xv, Xw, cfg: SinkhornConfig = SinkhornConfig()) -> tuple[float, TransportPlan]:
    """Graph Wasserstein distance ``<T, M>`` between two embedding sets and
    the entropic plan that realises it."""
    M = cost_matrix(Xv, Xw)
    plan = sinkhorn(M, cfg)
    return max(plan_cost(plan, M), 0.0), plan


def exact_ot(M) -> tuple[float, TransportPlan]:
    """Exact optimal transport under uniform marginals.

    Each side is replicated up to ``lcm(n, m)`` unit-mass copies; an optimal
    assignment between the copies is an optimal vertex of the transport
    polytope. Limited to ``n * m <= 400``.
    """
    M = _check_cost(M)
    n, m = M.shape
    if n * m > EXACT_SIZE_LIMIT:
        raise ValueError(f"exact_ot is limited to n*m <= {EXACT_SIZE_LIMIT}, got {n}x{m}")
    size = math.lcm(n, m)
    rows = np.repeat(np.arange(n), size // n)
    cols = np.repeat(np.arange(m), size // m)
    r, c = linear_sum_assignment(M[np.ix_(rows, cols)])
    T = np.zeros((n, m))
    np.add.at(T, (rows[r], cols[c]), 1.0 / size)
    cost = float(M[rows[r], cols[c]].sum() / size)
    return cost, TransportPlan(T, 0, marginal_violation(T), True, False)


def gwd_gradient(Xv, Xw, plan) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``<T, M(Xv, Xw)>`` with the plan held fixed.

    d/dx_i = 2 sum_j T_ij (x_i - y_j), d/dy_j = 2 sum_i T_ij (y_j - x_i).
    """
    Xv, Xw = _as_embedding(Xv), _as_embedding(Xw)
    T = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    if T.shape != (Xv.shape[0], Xw.shape[0]):
        raise ValueError(f"plan shape {T.shape} does not match embeddings {Xv.shape[0]}x{Xw.shape[0]}")
    if Xv.shape[1] != Xw.shape[1]:
        raise ValueError(f"embedding dimensions differ: {Xv.shape[1]} vs {Xw.shape[1]}")
    gv = 2.0 * (T.sum(axis=1)[:, None] * Xv - T @ Xw)
    gw = 2.0 * (T.sum(axis=0)[:, None] * Xw - T.T @ Xv)
    return gv, gw
