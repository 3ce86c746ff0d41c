"""Likelihood maximization with analytic derivatives.

Ascent BFGS with a strong-Wolfe line search is the default; a damped
Newton mode uses the exact Hessian with a Levenberg shift whenever the
negated Hessian is not positive definite.  Both are deterministic: the
same inputs reproduce the same iteration trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InitialCondition, NonFiniteObjective, StateSpaceModel
from .derivatives import evaluate


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "bfgs"       # "bfgs" or "newton"
    grad_tol: float = 1e-6     # infinity-norm stopping threshold
    max_iter: int = 200
    initial_step: float = 1.0  # first line-search trial step
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9

    def __post_init__(self):
        if self.method not in ("bfgs", "newton"):
            raise ValueError("method must be 'bfgs' or 'newton'")
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError("require 0 < c1 < c2 < 1")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")


@dataclass(frozen=True)
class OptimResult:
    theta_hat: np.ndarray
    loglik: float
    grad_at_opt: np.ndarray
    hessian_at_opt: np.ndarray
    sigma2: float
    iterations: int
    converged: bool
    message: str
    trace: list  # per-iteration (theta, loglik, max|grad|), start included


@dataclass(frozen=True)
class StartOutcome:
    theta0: np.ndarray
    result: OptimResult | None
    error: str | None


@dataclass(frozen=True)
class MultistartResult:
    best: OptimResult
    runs: list[StartOutcome]


class _LineSearchFailed(Exception):
    pass


def _wolfe_ascent(fg, x, d, f0, g0, c1, c2, first_trial=1.0):
    """Strong-Wolfe line search along an ascent direction.

    Accepts a step a with f(x+ad) >= f0 + c1*a*slope0 and
    |slope(a)| <= c2*slope0.  Non-finite objective values are treated as
    "stepped too far" and shrink the bracket.  Returns (a, f, g).
    """
    slope0 = float(g0 @ d)
    if slope0 <= 0.0:
        raise _LineSearchFailed("not an ascent direction")

    def phi(a):
        f, g = fg(x + a * d)
        return f, g, (float(g @ d) if g is not None else math.nan)

    def zoom(lo, f_lo, hi):
        for _ in range(60):
            a = 0.5 * (lo + hi)
            f_a, g_a, s_a = phi(a)
            if not math.isfinite(f_a) or f_a < f0 + c1 * a * slope0 or f_a <= f_lo:
                hi = a
            else:
                if abs(s_a) <= c2 * slope0:
                    return a, f_a, g_a
                if s_a * (hi - lo) >= 0.0:
                    hi = lo
                lo, f_lo = a, f_a
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        if lo > 0.0 and math.isfinite(f_lo) and f_lo > f0:
            f_b, g_b, _ = phi(lo)
            return lo, f_b, g_b
        raise _LineSearchFailed("zoom failed to satisfy Wolfe conditions")

    a_prev, f_prev = 0.0, f0
    a = first_trial
    for it in range(25):
        f_a, g_a, s_a = phi(a)
        if not math.isfinite(f_a):
            # Objective blew up: bracket between the last good point and a.
            return zoom(a_prev, f_prev, a)
        if f_a < f0 + c1 * a * slope0 or (it > 0 and f_a <= f_prev):
            return zoom(a_prev, f_prev, a)
        if abs(s_a) <= c2 * slope0:
            return a, f_a, g_a
        if s_a <= 0.0:
            return zoom(a, f_a, a_prev)
        a_prev, f_prev = a, f_a
        a *= 2.0
    raise _LineSearchFailed("bracketing exhausted without a Wolfe point")


def _newton_direction(hessian, grad):
    """Solve (-hessian + mu I) d = grad, doubling mu from 1e-6 until PD."""
    p = grad.size
    B = -hessian
    mu = 0.0
    for _ in range(60):
        try:
            L = np.linalg.cholesky(B + mu * np.eye(p))
            d = np.linalg.solve(L.T, np.linalg.solve(L, grad))
            if np.isfinite(d).all() and float(d @ grad) > 0.0:
                return d
        except np.linalg.LinAlgError:
            pass
        mu = 1e-6 if mu == 0.0 else 2.0 * mu
    return grad.copy()  # last resort: plain gradient ascent


def _ascend(value_grad, theta0, cfg: OptimizerConfig, hessian_fn=None):
    """Generic ascent loop on a callable objective.

    ``value_grad(theta) -> (f, grad)`` must return -inf (not raise) at
    infeasible points; ``hessian_fn`` enables Newton directions.  Returns
    (theta, f, grad, iterations, converged, message, trace).
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    p = theta.size
    f, g = value_grad(theta)
    if not math.isfinite(f):
        raise NonFiniteObjective("objective is not finite at theta0")

    trace = [(theta.copy(), f, float(np.abs(g).max()))]
    M = np.eye(p)  # approximate inverse of the negated Hessian
    iterations = 0
    converged = float(np.abs(g).max()) <= cfg.grad_tol
    message = "gradient norm below tolerance" if converged else ""
    use_newton = hessian_fn is not None

    while not converged and iterations < cfg.max_iter:
        if use_newton:
            d = _newton_direction(hessian_fn(theta), g)
        else:
            d = M @ g
            if float(d @ g) <= 0.0:  # numerical loss of curvature: reset
                M = np.eye(p)
                d = g.copy()
        first_trial = cfg.initial_step if iterations == 0 else 1.0
        try:
            a, f_new, g_new = _wolfe_ascent(
                value_grad, theta, d, f, g, cfg.wolfe_c1, cfg.wolfe_c2, first_trial
            )
        except _LineSearchFailed as exc:
            message = f"line search failed: {exc}"
            break

        s = a * d
        y_diff = g - g_new  # gradient change of the negated objective
        theta = theta + s
        if not use_newton:
            sy = float(s @ y_diff)
            if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y_diff) + 1e-300):
                if iterations == 0:
                    M = (sy / float(y_diff @ y_diff)) * np.eye(p)
                rho = 1.0 / sy
                V = np.eye(p) - rho * np.outer(s, y_diff)
                M = V @ M @ V.T + rho * np.outer(s, s)
        f, g = f_new, g_new
        iterations += 1
        trace.append((theta.copy(), f, float(np.abs(g).max())))
        if float(np.abs(g).max()) <= cfg.grad_tol:
            converged = True
            message = "gradient norm below tolerance"

    if not converged and not message:
        message = "iteration limit reached"
    return theta, f, g, iterations, converged, message, trace


def maximize(
    spec: StateSpaceModel,
    theta0,
    y,
    cfg: OptimizerConfig | None = None,
    init: InitialCondition | None = None,
    backend: str | None = None,
) -> OptimResult:
    """Maximize the concentrated log-likelihood from one start.

    On line-search failure the best point so far is returned with
    ``converged=False``; raises :class:`NonFiniteObjective` if the
    objective is not finite at ``theta0``.
    """
    cfg = cfg or OptimizerConfig()
    theta0 = spec.validate_theta(theta0)
    y = np.asarray(y, dtype=np.float64)

    def value_grad(t):
        try:
            rep = evaluate(spec, t, y, init=init, order="gradient", backend=backend)
        except Exception:
            return -math.inf, None
        return rep.loglik, rep.grad

    hessian_fn = None
    if cfg.method == "newton":
        def hessian_fn(t):
            return evaluate(
                spec, t, y, init=init, order="hessian", backend=backend
            ).hessian

    theta, _, _, iterations, converged, message, trace = _ascend(
        value_grad, theta0, cfg, hessian_fn=hessian_fn
    )
    final = evaluate(spec, theta, y, init=init, order="hessian", backend=backend)
    return OptimResult(
        theta_hat=theta,
        loglik=final.loglik,
        grad_at_opt=final.grad,
        hessian_at_opt=final.hessian,
        sigma2=final.sigma2,
        iterations=iterations,
        converged=converged,
        message=message,
        trace=trace,
    )


def multistart(
    spec: StateSpaceModel,
    starts,
    y,
    cfg: OptimizerConfig | None = None,
    init: InitialCondition | None = None,
    backend: str | None = None,
) -> MultistartResult:
    """Run :func:`maximize` from every start; select the highest likelihood.

    Per-start failures are recorded without aborting the remaining starts;
    raises only if no start succeeds.
    """
    starts = [spec.validate_theta(t) for t in starts]
    if not starts:
        raise ValueError("at least one start is required")
    runs: list[StartOutcome] = []
    for t0 in starts:
        try:
            res = maximize(spec, t0, y, cfg=cfg, init=init, backend=backend)
            runs.append(StartOutcome(theta0=t0, result=res, error=None))
        except Exception as exc:
            runs.append(StartOutcome(theta0=t0, result=None, error=str(exc)))
    successes = [r.result for r in runs if r.result is not None]
    if not successes:
        raise NonFiniteObjective("every start failed: " + "; ".join(
            r.error or "?" for r in runs
        ))
    best = max(successes, key=lambda r: r.loglik)
    return MultistartResult(best=best, runs=runs)
