"""Local NLP solvers: projected BFGS and an augmented-Lagrangian outer loop.

Both solvers return a :class:`~amorgs.problem.SolveRecord`. Failing to
converge is an outcome, not an exception; only non-finite objective or
gradient values at an accepted point raise :class:`EvaluationError`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .problem import SolveRecord

ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 40


class EvaluationError(RuntimeError):
    """Objective or gradient returned a non-finite value."""


class RejectedStep(RuntimeError):
    """Raised by a problem callback when a trial point cannot be evaluated."""


@dataclass
class SolverConfig:
    optimality_tol: float = 1e-6
    feasibility_tol: float = 1e-6
    max_major_iterations: int = 1000
    max_wall_time_s: float = math.inf
    bound_handling: bool = True
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    max_penalty: float = 1e10
    max_inner_iterations: int = 200
    multiplier_bound: float = 1e6
    max_step: float = math.inf

    def __post_init__(self):
        if not (self.optimality_tol > 0 and self.feasibility_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (self.max_major_iterations > 0 and self.max_wall_time_s > 0):
            raise ValueError("iteration and time limits must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")


@dataclass
class SolverTrace:
    objective: list = field(default_factory=list)
    gradient_norm: list = field(default_factory=list)
    constraint_norm: list = field(default_factory=list)
    step_size: list = field(default_factory=list)
    reason: str = ""

    def append(self, f, gnorm, cnorm, step):
        self.objective.append(float(f))
        self.gradient_norm.append(float(gnorm))
        self.constraint_norm.append(float(cnorm))
        self.step_size.append(float(step))

    def __len__(self):
        return len(self.objective)


def _binding(x, r, lower, upper):
    """Coordinates held at a bound with the descent direction pointing outward."""
    at_lo = (x <= lower) & (r > 0)
    at_hi = (x >= upper) & (r < 0)
    return at_lo | at_hi


def projected_gradient_norm(x, g, lower, upper) -> float:
    free = ~_binding(x, g, lower, upper)
    if not free.any():
        return 0.0
    return float(np.max(np.abs(g[free])))


def kkt_residual(x, lam, grad_f, jac, bounds=None) -> float:
    """Infinity norm of the Lagrangian gradient over non-binding coordinates.

    ``jac`` has shape (m, n); ``lam`` has length m. With ``bounds`` (an (n, 2)
    array or a (lower, upper) pair), coordinates held at a bound by a
    stationarity component pointing out of the box are excluded.
    """
    x = np.asarray(x, dtype=float)
    grad_f = np.asarray(grad_f, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    jac = np.asarray(jac, dtype=float)
    if jac.size == 0:
        jac = np.zeros((lam.size if lam.size else 0, x.size))
    if jac.ndim != 2 or jac.shape[1] != x.size or grad_f.shape != x.shape or jac.shape[0] != lam.size:
        raise ValueError(
            f"shape mismatch: x {x.shape}, grad {grad_f.shape}, jac {jac.shape}, lambda {lam.shape}"
        )
    r = grad_f + jac.T @ lam
    if bounds is None:
        return float(np.max(np.abs(r))) if r.size else 0.0
    lower, upper = _split_bounds(bounds, x.size)
    return projected_gradient_norm(x, r, lower, upper)


def _split_bounds(bounds, n):
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    if isinstance(bounds, tuple) and len(bounds) == 2 and np.ndim(bounds[0]) <= 1 and n != 2:
        lower, upper = bounds
    else:
        b = np.asarray(bounds, dtype=float)
        if b.shape == (n, 2):
            lower, upper = b[:, 0], b[:, 1]
        elif b.shape == (2, n):
            lower, upper = b[0], b[1]
        else:
            raise ValueError(f"bounds of shape {b.shape} do not match dimension {n}")
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy()
    return lower, upper


def _safe_value(value, x):
    try:
        f = value(x)
    except RejectedStep:
        return math.inf
    return f if np.isfinite(f) else math.inf


def _projected_bfgs(value, value_and_grad, x0, lower, upper, gtol, max_iter, deadline,
                    H0=None, trace=None, on_iterate=None, unit_step=1.0, max_step=math.inf):
    """Core projected BFGS with backtracking Armijo search along the projection arc.

    Returns ``(x, f, g, iterations, reason, converged)``.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f, g = value_and_grad(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise EvaluationError("non-finite objective or gradient at the initial point")
    n = x.size
    eye = np.eye(n)
    H = eye.copy() if H0 is None else np.array(H0, dtype=float)
    scaled = H0 is not None
    it = 0
    while True:
        pg = projected_gradient_norm(x, g, lower, upper)
        if pg <= gtol:
            return x, f, g, it, "optimality tolerance reached", True
        if it >= max_iter:
            return x, f, g, it, "iteration limit", False
        if time.perf_counter() > deadline:
            return x, f, g, it, "wall-time limit", False

        free = ~_binding(x, g, lower, upper)
        d = np.zeros(n)
        Hf = H[np.ix_(free, free)]
        d[free] = -Hf @ g[free]
        slope = float(g @ d)
        if not slope < 0:
            H = eye.copy()
            scaled = False
            d = np.zeros(n)
            d[free] = -g[free]
        if not scaled:
            # steepest descent on a flat or concave patch: take unit-length
            # trial steps instead of creeping with the raw gradient
            dmax = float(np.max(np.abs(d)))
            if 0 < dmax < unit_step:
                d *= unit_step / dmax
        dmax = float(np.max(np.abs(d)))
        if dmax > max_step:
            d *= max_step / dmax

        t = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            xt = np.clip(x + t * d, lower, upper)
            step = xt - x
            if not np.any(step):
                break
            ft = _safe_value(value, xt)
            if ft <= f + ARMIJO_C1 * float(g @ step):
                accepted = True
                break
            t *= BACKTRACK
        if not accepted:
            return x, f, g, it, "line search failure", False

        ft, gt = value_and_grad(xt)
        if not (np.isfinite(ft) and np.all(np.isfinite(gt))):
            raise EvaluationError("non-finite objective or gradient at an accepted point")
        s = xt - x
        y = gt - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = (sy / float(y @ y)) * eye
                scaled = True
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        x, f, g = xt, ft, gt
        it += 1
        if trace is not None:
            trace.append(f, projected_gradient_norm(x, g, lower, upper), 0.0, t)
        if on_iterate is not None:
            on_iterate(x)


def _damped_bfgs_update(A, s, y):
    """Powell-damped BFGS update of a direct Hessian approximation."""
    As = A @ s
    sAs = float(s @ As)
    if sAs <= 0:
        return A
    sy = float(s @ y)
    if sy < 0.2 * sAs:
        theta = 0.8 * sAs / (sAs - sy)
        y = theta * y + (1.0 - theta) * As
        sy = float(s @ y)
    return A - np.outer(As, As) / sAs + np.outer(y, y) / sy


def _projected_structured_qn(value, value_grad_jac, x0, lower, upper, gtol, max_iter,
                             deadline, rho, A):
    """Projected quasi-Newton on a penalty function ``f + lam.c + rho/2 |c|^2``.

    The model Hessian is ``rho J'J + A``: the Gauss-Newton part is exact from
    the current constraint Jacobian and ``A`` collects the remaining curvature
    through damped BFGS updates on the residual secant pairs.

    Returns ``(x, f, g, iterations, reason, converged, A)``.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f, g, J = value_grad_jac(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise EvaluationError("non-finite objective or gradient at the initial point")
    n = x.size
    it = 0
    while True:
        if projected_gradient_norm(x, g, lower, upper) <= gtol:
            return x, f, g, it, "optimality tolerance reached", True, A
        if it >= max_iter:
            return x, f, g, it, "iteration limit", False, A
        if time.perf_counter() > deadline:
            return x, f, g, it, "wall-time limit", False, A

        free = ~_binding(x, g, lower, upper)
        B = rho * (J.T @ J) + A
        Bf = B[np.ix_(free, free)]
        d = np.zeros(n)
        try:
            L = np.linalg.cholesky(Bf)
            d[free] = -np.linalg.solve(L.T, np.linalg.solve(L, g[free]))
        except np.linalg.LinAlgError:
            d[free] = -g[free]
        if not float(g @ d) < 0:
            d = np.zeros(n)
            d[free] = -g[free]

        t = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            xt = np.clip(x + t * d, lower, upper)
            step = xt - x
            if not np.any(step):
                break
            ft = _safe_value(value, xt)
            if ft <= f + ARMIJO_C1 * float(g @ step):
                accepted = True
                break
            t *= BACKTRACK
        if not accepted:
            return x, f, g, it, "line search failure", False, A

        ft, gt, Jt = value_grad_jac(xt)
        if not (np.isfinite(ft) and np.all(np.isfinite(gt))):
            raise EvaluationError("non-finite objective or gradient at an accepted point")
        s = xt - x
        y = gt - g - rho * (Jt.T @ (Jt @ s))
        A = _damped_bfgs_update(A, s, y)
        x, f, g, J = xt, ft, gt, Jt
        it += 1


def minimize_unconstrained(f, grad, x0, bounds=None, cfg: SolverConfig | None = None, *,
                           alpha: float = 0.0, trace: SolverTrace | None = None) -> SolveRecord:
    """Box-constrained BFGS; converged iff the projected gradient is below tolerance."""
    cfg = cfg or SolverConfig()
    x0 = np.asarray(x0, dtype=float)
    lower, upper = _split_bounds(bounds if cfg.bound_handling else None, x0.size)
    start = time.perf_counter()

    def value(x):
        return float(f(x))

    def value_and_grad(x):
        return float(f(x)), np.asarray(grad(x), dtype=float)

    x, fx, g, it, reason, ok = _projected_bfgs(
        value, value_and_grad, x0, lower, upper, cfg.optimality_tol,
        cfg.max_major_iterations, start + cfg.max_wall_time_s, trace=trace,
        unit_step=min(1.0, cfg.max_step), max_step=cfg.max_step)
    if trace is not None:
        trace.reason = reason
    return SolveRecord(
        alpha=alpha, x0=x0, x_star=x, lambda_star=np.zeros(0), objective=fx,
        converged=ok, iterations=it, wall_time_s=time.perf_counter() - start,
        constraint_norm=0.0, reason=reason)


def forward_difference_jacobian(fun, x, fx=None, rel_step=1e-7):
    x = np.asarray(x, dtype=float)
    fx = np.asarray(fun(x) if fx is None else fx, dtype=float)
    J = np.empty((fx.size, x.size))
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        J[:, i] = (np.asarray(fun(xp)) - fx) / h
    return J


def minimize_constrained(objective, gradient, constraints, x0, bounds=None,
                         cfg: SolverConfig | None = None, *, jacobian=None,
                         alpha: float = 0.0, trace: SolverTrace | None = None) -> SolveRecord:
    """Equality-constrained minimization by an augmented Lagrangian method.

    Each major iteration approximately minimizes
    ``f + lam.c + rho/2 |c|^2`` over the box with a projected quasi-Newton
    method, then updates ``lam <- lam + rho c``. The penalty grows tenfold
    whenever an infeasible constraint norm fails to shrink by a factor of
    four. The inner model Hessian is ``rho J'J + A`` with ``A`` a damped BFGS
    approximation carried across major iterations.

    ``jacobian`` defaults to forward differences on ``constraints``.
    """
    cfg = cfg or SolverConfig()
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    lower, upper = _split_bounds(bounds if cfg.bound_handling else None, n)
    if jacobian is None:
        def jacobian(x, cx=None):
            return forward_difference_jacobian(constraints, x, cx)
    start = time.perf_counter()
    deadline = start + cfg.max_wall_time_s

    def fail(x, lam, reason, it, fx=math.nan, cnorm=math.inf):
        if trace is not None:
            trace.reason = reason
        return SolveRecord(alpha=alpha, x0=x0, x_star=x, lambda_star=lam, objective=fx,
                           converged=False, iterations=it,
                           wall_time_s=time.perf_counter() - start,
                           constraint_norm=cnorm, reason=reason)

    x = np.clip(x0, lower, upper)
    try:
        c = np.atleast_1d(np.asarray(constraints(x), dtype=float))
    except RejectedStep as exc:
        return fail(x, np.zeros(0), f"constraint evaluation failed at x0: {exc}", 0)
    m = c.size
    lam = np.zeros(m)
    rho = cfg.initial_penalty
    cache: dict = {}

    def eval_c(xv):
        key = xv.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = np.atleast_1d(np.asarray(constraints(xv), dtype=float))
        return cache[key]

    def jac_at(xv):
        return np.asarray(jacobian(xv, eval_c(xv)), dtype=float).reshape(m, n)

    c_prev = float(np.max(np.abs(c))) if m else 0.0
    A = np.eye(n)
    it = 0
    x_best = x
    while True:
        lam_k, rho_k = lam.copy(), rho

        def value(xv):
            cv = eval_c(xv)
            return float(objective(xv)) + float(lam_k @ cv) + 0.5 * rho_k * float(cv @ cv)

        def value_grad_jac(xv):
            cv = eval_c(xv)
            J = jac_at(xv)
            fval = float(objective(xv)) + float(lam_k @ cv) + 0.5 * rho_k * float(cv @ cv)
            return fval, np.asarray(gradient(xv), dtype=float) + J.T @ (lam_k + rho_k * cv), J

        inner_tol = max(0.1 * cfg.optimality_tol, min(1.0, c_prev))
        try:
            x, _, _, _, reason, _, A = _projected_structured_qn(
                value, value_grad_jac, x, lower, upper, inner_tol,
                cfg.max_inner_iterations, deadline, rho_k, A)
        except RejectedStep as exc:
            return fail(x, lam, f"constraint evaluation failed: {exc}", it)
        except EvaluationError as exc:
            return fail(x, lam, str(exc), it)
        it += 1
        x_best = x
        c = eval_c(x)
        cnorm = float(np.max(np.abs(c))) if m else 0.0
        lam = np.clip(lam + rho * c, -cfg.multiplier_bound, cfg.multiplier_bound)
        try:
            J = jac_at(x)
        except RejectedStep as exc:
            return fail(x, lam, f"constraint evaluation failed: {exc}", it)
        gf = np.asarray(gradient(x), dtype=float)
        kkt = kkt_residual(x, lam, gf, J, (lower, upper))
        fx = float(objective(x))
        if trace is not None:
            trace.append(fx, kkt, cnorm, rho)
        if cnorm <= cfg.feasibility_tol and kkt <= cfg.optimality_tol:
            if trace is not None:
                trace.reason = "converged"
            return SolveRecord(alpha=alpha, x0=x0, x_star=x, lambda_star=lam, objective=fx,
                               converged=True, iterations=it,
                               wall_time_s=time.perf_counter() - start,
                               constraint_norm=cnorm, reason="converged")
        if it >= cfg.max_major_iterations:
            return fail(x_best, lam, "major iteration limit", it, fx, cnorm)
        if time.perf_counter() > deadline:
            return fail(x_best, lam, "wall-time limit", it, fx, cnorm)
        # escalate only while infeasible; a feasible iterate just needs
        # better multipliers
        if cnorm > 0.25 * c_prev and cnorm > cfg.feasibility_tol:
            rho = min(rho * cfg.penalty_growth, cfg.max_penalty)
        c_prev = cnorm
