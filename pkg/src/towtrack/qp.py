"""Dense strictly convex box-constrained QP solved by a primal active-set method."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FREE = 0
AT_LOWER = -1
AT_UPPER = 1

_MIN_EIG = 1e-8
_SYM_TOL = 1e-10


@dataclass
class DenseBoxQP:
    """min 0.5 x'Hx + g'x  subject to  lb <= x <= ub  (bounds may be +-inf)."""

    hessian: np.ndarray
    gradient: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        h = np.asarray(self.hessian, dtype=float)
        g = np.asarray(self.gradient, dtype=float).ravel()
        lb = np.asarray(self.lower, dtype=float).ravel()
        ub = np.asarray(self.upper, dtype=float).ravel()
        n = g.size
        if h.shape != (n, n):
            raise ValueError(f"hessian shape {h.shape} does not match gradient size {n}")
        if lb.size != n or ub.size != n:
            raise ValueError("bound sizes do not match gradient size")
        if np.max(np.abs(h - h.T), initial=0.0) > _SYM_TOL * max(1.0, np.max(np.abs(h), initial=0.0)):
            raise ValueError("hessian is not symmetric")
        if np.any(lb > ub):
            raise ValueError("lower bound exceeds upper bound")
        self.hessian = 0.5 * (h + h.T)
        self.gradient = g
        self.lower = lb
        self.upper = ub


@dataclass
class QPSolution:
    x: np.ndarray
    active_set: np.ndarray  # int8 per entry: FREE, AT_LOWER or AT_UPPER
    kkt_residual: float
    iterations: int
    regularized: bool
    hit_iteration_limit: bool
    objective: float


def _projected_gradient_norm(grad, x, lb, ub, act_tol=1e-9):
    """Max-norm of the gradient projected on the feasible directions of the box."""
    at_lo = x <= lb + act_tol
    at_hi = x >= ub - act_tol
    res = np.abs(grad)
    res[at_lo] = np.maximum(0.0, -grad[at_lo])
    res[at_hi] = np.maximum(0.0, grad[at_hi])
    res[at_lo & at_hi] = 0.0  # pinned entries have no feasible direction
    return float(res.max(initial=0.0))


def solve_box_qp(qp: DenseBoxQP, x0=None, active_set0=None, max_iter=None) -> QPSolution:
    """Solve a dense box QP with warm starting.

    If the Hessian is not positive definite it is shifted by
    max(0, 1e-8 - lambda_min) * I and the solution is flagged regularized.
    Hitting the iteration limit (default 10 n) returns the best iterate with
    hit_iteration_limit set; the returned point always lies inside the box.
    """
    h = qp.hessian
    g = qp.gradient
    lb, ub = qp.lower, qp.upper
    n = g.size
    if max_iter is None:
        max_iter = 10 * n

    regularized = False
    try:
        np.linalg.cholesky(h)
    except np.linalg.LinAlgError:
        lam = float(np.linalg.eigvalsh(h)[0])
        h = h + max(0.0, _MIN_EIG - lam) * np.eye(n)
        regularized = True

    if x0 is None:
        x = np.clip(np.zeros(n), lb, ub)
    else:
        x = np.clip(np.asarray(x0, dtype=float).ravel().copy(), lb, ub)
    if active_set0 is not None and np.asarray(active_set0).size == n:
        w = np.asarray(active_set0, dtype=np.int8).copy()
        w[(w == AT_LOWER) & ~np.isfinite(lb)] = FREE
        w[(w == AT_UPPER) & ~np.isfinite(ub)] = FREE
        x[w == AT_LOWER] = lb[w == AT_LOWER]
        x[w == AT_UPPER] = ub[w == AT_UPPER]
    else:
        w = np.zeros(n, dtype=np.int8)

    mult_tol = 1e-10 * (1.0 + float(np.abs(g).max(initial=0.0)))
    hit_limit = False
    iters = 0
    while True:
        if iters >= max_iter:
            hit_limit = True
            break
        iters += 1
        free = w == FREE
        x_target = x.copy()
        if np.any(free):
            hff = h[np.ix_(free, free)]
            rhs = -(g[free] + h[np.ix_(free, ~free)] @ x[~free])
            x_target[free] = np.linalg.solve(hff, rhs)
        d = x_target - x
        d[~free] = 0.0

        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.full(n, np.inf)
            up = free & (d > 0.0)
            lo = free & (d < 0.0)
            ratio[up] = (ub[up] - x[up]) / d[up]
            ratio[lo] = (lb[lo] - x[lo]) / d[lo]
        j = int(np.argmin(ratio))
        alpha = float(ratio[j])
        if alpha < 1.0:
            x = x + alpha * d
            if d[j] > 0.0:
                x[j] = ub[j]
                w[j] = AT_UPPER
            else:
                x[j] = lb[j]
                w[j] = AT_LOWER
            continue

        x = x_target
        grad = h @ x + g
        viol = np.zeros(n)
        low_set = w == AT_LOWER
        up_set = w == AT_UPPER
        viol[low_set] = -grad[low_set]  # optimal needs grad >= 0 at a lower bound
        viol[up_set] = grad[up_set]     # optimal needs grad <= 0 at an upper bound
        k = int(np.argmax(viol)) if n else 0
        if n == 0 or viol[k] <= mult_tol:
            break
        w[k] = FREE

    x = np.clip(x, lb, ub)
    grad = h @ x + g
    kkt = _projected_gradient_norm(grad.copy(), x, lb, ub)
    objective = float(0.5 * x @ (h @ x) + g @ x)
    return QPSolution(x=x, active_set=w, kkt_residual=kkt, iterations=iters,
                      regularized=regularized, hit_iteration_limit=hit_limit,
                      objective=objective)
