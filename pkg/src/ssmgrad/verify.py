"""Finite-difference oracles and analytic-vs-numeric comparison reports.

The FD gradient is the classical central difference of the log-likelihood,
costing exactly 2p filter passes.  The FD Hessian differences the analytic
gradient (one order of truncation error better); an independent
value-only second-difference Hessian is also available for cross-checks
that must not share the analytic gradient path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import InitialCondition, NonFiniteObjective, StateSpaceModel
from .derivatives import DerivativeReport, evaluate


@dataclass(frozen=True)
class FdConfig:
    """Central-difference stencil configuration.

    Step per coordinate: ``max(rel_step * |theta_j|, min_step)``; the floor
    keeps the stencil usable when a transformed parameter crosses zero.
    """

    rel_step: float = 1e-4
    min_step: float = 1e-4
    scheme: str = "central"

    def __post_init__(self):
        if self.rel_step <= 0 or self.min_step <= 0:
            raise ValueError("rel_step and min_step must be positive")
        if self.scheme != "central":
            raise ValueError("only the central scheme is supported")

    def step(self, theta_j: float) -> float:
        return max(self.rel_step * abs(theta_j), self.min_step)


def _loglik(spec, theta, y, init, backend):
    try:
        return evaluate(spec, theta, y, init=init, order="value", backend=backend).loglik
    except Exception as exc:  # surfaced with the stencil point for diagnosis
        raise NonFiniteObjective(f"log-likelihood failed at theta={theta}: {exc}") from exc


def fd_gradient(
    spec: StateSpaceModel,
    theta,
    y,
    cfg: FdConfig | None = None,
    init: InitialCondition | None = None,
    backend: str | None = None,
) -> np.ndarray:
    """Central-difference gradient of the log-likelihood (2p evaluations)."""
    cfg = cfg or FdConfig()
    theta = spec.validate_theta(theta)
    grad = np.empty(spec.p)
    for j in range(spec.p):
        h = cfg.step(theta[j])
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        fp = _loglik(spec, tp, y, init, backend)
        fm = _loglik(spec, tm, y, init, backend)
        grad[j] = (fp - fm) / (2.0 * h)
    return grad


def fd_hessian(
    spec: StateSpaceModel,
    theta,
    y,
    cfg: FdConfig | None = None,
    init: InitialCondition | None = None,
    backend: str | None = None,
) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrized (2p passes)."""
    cfg = cfg or FdConfig()
    theta = spec.validate_theta(theta)
    cols = np.empty((spec.p, spec.p))
    for j in range(spec.p):
        h = cfg.step(theta[j])
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        gp = evaluate(spec, tp, y, init=init, order="gradient", backend=backend).grad
        gm = evaluate(spec, tm, y, init=init, order="gradient", backend=backend).grad
        cols[:, j] = (gp - gm) / (2.0 * h)
    return 0.5 * (cols + cols.T)


def fd_hessian_values(
    spec: StateSpaceModel,
    theta,
    y,
    cfg: FdConfig | None = None,
    init: InitialCondition | None = None,
    backend: str | None = None,
) -> np.ndarray:
    """Second differences of the log-likelihood alone.

    Fully independent of the analytic derivative path; noisier than
    :func:`fd_hessian` by one order of truncation.
    """
    cfg = cfg or FdConfig()
    theta = spec.validate_theta(theta)
    p = spec.p
    f0 = _loglik(spec, theta, y, init, backend)
    steps = np.array([cfg.step(theta[j]) for j in range(p)])
    hess = np.empty((p, p))
    for i in range(p):
        ti = theta.copy()
        ti[i] += steps[i]
        fp = _loglik(spec, ti, y, init, backend)
        ti[i] = theta[i] - steps[i]
        fm = _loglik(spec, ti, y, init, backend)
        hess[i, i] = (fp - 2.0 * f0 + fm) / steps[i] ** 2
        for j in range(i + 1, p):
            tpp, tpm, tmp, tmm = (theta.copy() for _ in range(4))
            tpp[i] += steps[i]; tpp[j] += steps[j]
            tpm[i] += steps[i]; tpm[j] -= steps[j]
            tmp[i] -= steps[i]; tmp[j] += steps[j]
            tmm[i] -= steps[i]; tmm[j] -= steps[j]
            val = (
                _loglik(spec, tpp, y, init, backend)
                - _loglik(spec, tpm, y, init, backend)
                - _loglik(spec, tmp, y, init, backend)
                + _loglik(spec, tmm, y, init, backend)
            ) / (4.0 * steps[i] * steps[j])
            hess[i, j] = hess[j, i] = val
    return hess


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise |a-b| / max(|a|, |b|, 1e-8)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def agrees(
    analytic: np.ndarray, numeric: np.ndarray, rel_tol: float, abs_tol: float
) -> bool:
    """Entrywise match: |a-b| <= abs_tol or |a-b| <= rel_tol*max(|a|,|b|).

    The absolute escape keeps near-zero entries from failing on stencil
    noise; significant entries are held to the relative tolerance.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - b)
    ok = (diff <= abs_tol) | (diff <= rel_tol * np.maximum(np.abs(a), np.abs(b)))
    return bool(ok.all())


@dataclass(frozen=True)
class ComparisonReport:
    """Analytic derivatives next to their finite-difference counterparts."""

    analytic: DerivativeReport
    numeric_grad: np.ndarray
    numeric_hessian: np.ndarray
    max_rel_err_grad: float
    max_rel_err_hess: float
    grad_entries: list = field(default_factory=list)   # (index, analytic, numeric, rel_err)
    hess_entries: list = field(default_factory=list)   # ((i, j), analytic, numeric, rel_err)
    analytic_seconds: float = 0.0
    fd_seconds: float = 0.0

    def passes(self, grad_rel_tol=1e-4, grad_abs_tol=1e-6,
               hess_rel_tol=1e-5, hess_abs_frac=1e-6) -> bool:
        hess_abs = hess_abs_frac * max(1.0, float(np.abs(self.analytic.hessian).max()))
        return agrees(
            self.analytic.grad, self.numeric_grad, grad_rel_tol, grad_abs_tol
        ) and agrees(
            self.analytic.hessian, self.numeric_hessian, hess_rel_tol, hess_abs
        )


def compare(
    spec: StateSpaceModel,
    theta,
    y,
    cfg: FdConfig | None = None,
    init: InitialCondition | None = None,
    backend: str | None = None,
) -> ComparisonReport:
    """Run the analytic pass and both FD oracles; tabulate the agreement.

    Wall times for the analytic gradient pass and the 2p-evaluation FD
    gradient are recorded so the one-pass cost advantage is visible.
    """
    cfg = cfg or FdConfig()
    theta = spec.validate_theta(theta)
    t0 = time.perf_counter()
    analytic = evaluate(spec, theta, y, init=init, order="hessian", backend=backend)
    t1 = time.perf_counter()
    numeric_grad = fd_gradient(spec, theta, y, cfg=cfg, init=init, backend=backend)
    t2 = time.perf_counter()
    numeric_hessian = fd_hessian(spec, theta, y, cfg=cfg, init=init, backend=backend)

    grad_err = relative_error(analytic.grad, numeric_grad)
    hess_err = relative_error(analytic.hessian, numeric_hessian)
    grad_entries = [
        (j, float(analytic.grad[j]), float(numeric_grad[j]), float(grad_err[j]))
        for j in range(spec.p)
    ]
    hess_entries = [
        ((i, j), float(analytic.hessian[i, j]), float(numeric_hessian[i, j]),
         float(hess_err[i, j]))
        for i in range(spec.p)
        for j in range(spec.p)
    ]
    return ComparisonReport(
        analytic=analytic,
        numeric_grad=numeric_grad,
        numeric_hessian=numeric_hessian,
        max_rel_err_grad=float(grad_err.max()),
        max_rel_err_hess=float(hess_err.max()),
        grad_entries=grad_entries,
        hess_entries=hess_entries,
        analytic_seconds=t1 - t0,
        fd_seconds=t2 - t1,
    )
