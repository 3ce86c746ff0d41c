"""Concrete model families: trend, seasonal adjustment, seasonal + AR.

All families use unconstrained working parameters.  Variances enter through
``theta = log(variance)`` so that the derivative of each variance with
respect to its own parameter equals the variance itself.  AR coefficients
enter through partial autocorrelations (PARCOR) mapped from the real line
by a scaled logistic transform and expanded with the Levinson recursion,
which keeps the AR block stationary for every finite ``theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import (
    DerivativeBundle,
    DimensionMismatch,
    InvariantViolation,
    StateSpaceModel,
    SystemMatrices,
)

__all__ = [
    "TrendSpec",
    "SeasonalSpec",
    "SeasonalArSpec",
    "log_variance_transform",
    "parcor_transform",
    "parcor_encode",
    "levinson_expand",
    "levinson_jacobian",
    "levinson_hessian",
]


def log_variance_transform(theta_i: float) -> tuple[float, float, float]:
    """Map a log-variance parameter to (variance, d/dtheta, d2/dtheta2).

    All three coincide: q = dq = d2q = exp(theta_i).  Raises OverflowError
    if the exponential overflows.
    """
    q = math.exp(theta_i)  # math.exp raises OverflowError natively
    return q, q, q


def parcor_transform(theta_j: float, bound: float = 1.0) -> tuple[float, float, float]:
    """Scaled logistic map from the real line onto (-bound, bound).

    Returns (beta, first derivative, second derivative) of

        beta = bound * (e^t - 1) / (e^t + 1) = bound * tanh(t / 2).

    The derivative closed forms are evaluated in an overflow-safe way:
    with u = e^{-|t|},  d beta/dt = 2*bound*u/(1+u)^2  and
    d2 beta/dt2 = -(d beta/dt) * tanh(t/2).
    """
    if not 0.0 < bound <= 1.0:
        raise InvariantViolation("parcor bound must lie in (0, 1]")
    t = math.tanh(0.5 * theta_j)
    u = math.exp(-abs(theta_j))
    c = 2.0 * bound * u / ((1.0 + u) * (1.0 + u))
    return bound * t, c, -c * t


def parcor_encode(beta: float, bound: float = 1.0) -> float:
    """Inverse of :func:`parcor_transform`: theta = log((bound+beta)/(bound-beta))."""
    if not -bound < beta < bound:
        raise InvariantViolation(f"beta must lie strictly inside (-{bound}, {bound})")
    return math.log((bound + beta) / (bound - beta))


def levinson_expand(beta: np.ndarray) -> np.ndarray:
    """AR coefficients of order m from PARCORs beta[0..m-1].

    Order-recursive update: at stage s (1-based), for j < s
    ``a_j^(s) = a_j^(s-1) - beta_s * a_{s-j}^(s-1)`` and ``a_s^(s) = beta_s``.
    |beta_j| < 1 for all j guarantees a stationary AR polynomial.
    """
    beta = np.asarray(beta, dtype=np.float64)
    m = beta.size
    a = np.zeros(m)
    for s in range(1, m + 1):
        bs = beta[s - 1]
        prev = a.copy()
        for kk in range(s - 1):
            a[kk] = prev[kk] - bs * prev[s - kk - 2]
        a[s - 1] = bs
    return a


def levinson_jacobian(beta: np.ndarray) -> np.ndarray:
    """J[k, i] = d a_k / d beta_i for the full-order coefficients."""
    beta = np.asarray(beta, dtype=np.float64)
    m = beta.size
    a = np.zeros(m)
    jac = np.zeros((m, m))
    for s in range(1, m + 1):
        bs = beta[s - 1]
        a_prev = a.copy()
        j_prev = jac.copy()
        for kk in range(s - 1):
            jac[kk] = j_prev[kk] - bs * j_prev[s - kk - 2]
            jac[kk, s - 1] = -a_prev[s - kk - 2]
            a[kk] = a_prev[kk] - bs * a_prev[s - kk - 2]
        jac[s - 1] = 0.0
        jac[s - 1, s - 1] = 1.0
        a[s - 1] = bs
    return jac


def levinson_hessian(beta: np.ndarray) -> np.ndarray:
    """T[k, i, j] = d2 a_k / (d beta_i d beta_j); symmetric in (i, j).

    Stage-s coefficients are linear in beta_s given the stage-(s-1) ones,
    so the pure second derivative in the newest PARCOR vanishes and the
    cross terms reduce to stage-(s-1) Jacobian rows.
    """
    beta = np.asarray(beta, dtype=np.float64)
    m = beta.size
    a = np.zeros(m)
    jac = np.zeros((m, m))
    hes = np.zeros((m, m, m))
    for s in range(1, m + 1):
        bs = beta[s - 1]
        a_prev = a.copy()
        j_prev = jac.copy()
        h_prev = hes.copy()
        for kk in range(s - 1):
            hes[kk] = h_prev[kk] - bs * h_prev[s - kk - 2]
            hes[kk, s - 1, :] -= j_prev[s - kk - 2]
            hes[kk, :, s - 1] -= j_prev[s - kk - 2]
            jac[kk] = j_prev[kk] - bs * j_prev[s - kk - 2]
            jac[kk, s - 1] = -a_prev[s - kk - 2]
            a[kk] = a_prev[kk] - bs * a_prev[s - kk - 2]
        hes[s - 1] = 0.0
        jac[s - 1] = 0.0
        jac[s - 1, s - 1] = 1.0
        a[s - 1] = bs
    return hes


def _second_order_trend_block() -> np.ndarray:
    # Local level with slope: T[n] = 2 T[n-1] - T[n-2] + noise.
    return np.array([[2.0, -1.0], [1.0, 0.0]])


def _seasonal_block(period: int) -> np.ndarray:
    # Seasonal sum constraint: S[n] = -(S[n-1] + ... + S[n-period+1]) + noise.
    s = period - 1
    blk = np.zeros((s, s))
    blk[0, :] = -1.0
    for i in range(1, s):
        blk[i, i - 1] = 1.0
    return blk


def _companion_block(a: np.ndarray) -> np.ndarray:
    q = a.size
    blk = np.zeros((q, q))
    blk[0, :] = a
    for i in range(1, q):
        blk[i, i - 1] = 1.0
    return blk


@dataclass(frozen=True)
class TrendSpec(StateSpaceModel):
    """Stochastic trend of order 1 (random walk) or 2 (local linear).

    Single parameter: theta[0] = log of the trend noise variance.
    """

    order: int = 1

    def __post_init__(self):
        if self.order not in (1, 2):
            raise InvariantViolation("trend order must be 1 or 2")

    @property
    def p(self) -> int:
        return 1

    @property
    def m(self) -> int:
        return self.order

    @property
    def k(self) -> int:
        return 1

    def realize(self, theta) -> SystemMatrices:
        theta = self.validate_theta(theta)
        tau2, _, _ = log_variance_transform(theta[0])
        if self.order == 1:
            F = np.array([[1.0]])
            G = np.array([[1.0]])
            H = np.array([1.0])
        else:
            F = _second_order_trend_block()
            G = np.array([[1.0], [0.0]])
            H = np.array([1.0, 0.0])
        return SystemMatrices(F=F, G=G, H=H, Q=np.array([[tau2]]))

    def differentiate(self, theta) -> DerivativeBundle:
        theta = self.validate_theta(theta)
        _, dq, d2q = log_variance_transform(theta[0])
        m = self.m
        return DerivativeBundle(
            dF=np.zeros((1, m, m)),
            dG=np.zeros((1, m, 1)),
            dH=np.zeros((1, m)),
            dQ=np.array([[[dq]]]),
            dR=np.zeros(1),
            d2F=np.zeros((1, 1, m, m)),
            d2G=np.zeros((1, 1, m, 1)),
            d2H=np.zeros((1, 1, m)),
            d2Q=np.array([[[[d2q]]]]),
            d2R=np.zeros((1, 1)),
        )

    def describe(self, theta) -> dict[str, Any]:
        theta = self.validate_theta(theta)
        return {"trend_order": self.order, "tau2_trend": math.exp(theta[0])}

    def encode(self, natural) -> np.ndarray:
        return np.array([math.log(natural["tau2_trend"])])

    def default_start(self) -> np.ndarray:
        return np.array([math.log(0.5)])


@dataclass(frozen=True)
class SeasonalSpec(StateSpaceModel):
    """Second-order trend plus seasonal-sum component.

    Parameters: theta = (log trend variance, log seasonal variance).
    """

    period: int = 12
    trend_order: int = 2  # fixed; only the order-2 trend variant is supported

    def __post_init__(self):
        if self.period < 2:
            raise InvariantViolation("period must be >= 2")
        if self.trend_order != 2:
            raise InvariantViolation("seasonal model uses a second-order trend")

    @property
    def p(self) -> int:
        return 2

    @property
    def m(self) -> int:
        return self.trend_order + self.period - 1

    @property
    def k(self) -> int:
        return 2

    def realize(self, theta) -> SystemMatrices:
        theta = self.validate_theta(theta)
        tau1, _, _ = log_variance_transform(theta[0])
        tau2, _, _ = log_variance_transform(theta[1])
        m, s = self.m, self.period - 1
        F = np.zeros((m, m))
        F[:2, :2] = _second_order_trend_block()
        F[2:, 2:] = _seasonal_block(self.period)
        G = np.zeros((m, 2))
        G[0, 0] = 1.0
        G[2, 1] = 1.0
        H = np.zeros(m)
        H[0] = 1.0
        H[2] = 1.0
        return SystemMatrices(F=F, G=G, H=H, Q=np.diag([tau1, tau2]))

    def differentiate(self, theta) -> DerivativeBundle:
        theta = self.validate_theta(theta)
        m = self.m
        dQ = np.zeros((2, 2, 2))
        d2Q = np.zeros((2, 2, 2, 2))
        for i in range(2):
            _, dq, d2q = log_variance_transform(theta[i])
            dQ[i, i, i] = dq
            d2Q[i, i, i, i] = d2q  # cross second derivatives of Q are zero
        return DerivativeBundle(
            dF=np.zeros((2, m, m)),
            dG=np.zeros((2, m, 2)),
            dH=np.zeros((2, m)),
            dQ=dQ,
            dR=np.zeros(2),
            d2F=np.zeros((2, 2, m, m)),
            d2G=np.zeros((2, 2, m, 2)),
            d2H=np.zeros((2, 2, m)),
            d2Q=d2Q,
            d2R=np.zeros((2, 2)),
        )

    def describe(self, theta) -> dict[str, Any]:
        theta = self.validate_theta(theta)
        return {
            "period": self.period,
            "tau2_trend": math.exp(theta[0]),
            "tau2_seasonal": math.exp(theta[1]),
        }

    def encode(self, natural) -> np.ndarray:
        return np.array(
            [math.log(natural["tau2_trend"]), math.log(natural["tau2_seasonal"])]
        )

    def default_start(self) -> np.ndarray:
        return np.array([-5.3, -5.0])


@dataclass(frozen=True)
class SeasonalArSpec(StateSpaceModel):
    """Seasonal adjustment model with an additional stationary AR component.

    Parameters: theta = (log tau1^2, log tau2^2, log tau3^2,
    theta_4 .. theta_{3+ar_order}) where the trailing entries map to
    PARCORs via :func:`parcor_transform` with bound ``parcor_bound``.
    """

    period: int = 12
    ar_order: int = 2
    parcor_bound: float = 1.0

    def __post_init__(self):
        if self.period < 2:
            raise InvariantViolation("period must be >= 2")
        if self.ar_order < 1:
            raise InvariantViolation("ar_order must be >= 1")
        if not 0.0 < self.parcor_bound <= 1.0:
            raise InvariantViolation("parcor_bound must lie in (0, 1]")

    @property
    def p(self) -> int:
        return 3 + self.ar_order

    @property
    def m(self) -> int:
        return 2 + (self.period - 1) + self.ar_order

    @property
    def k(self) -> int:
        return 3

    @property
    def ar_row(self) -> int:
        """Row/column offset of the AR companion block inside F."""
        return 2 + (self.period - 1)

    def _parcor(self, theta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        q = self.ar_order
        beta = np.zeros(q)
        c1 = np.zeros(q)
        c2 = np.zeros(q)
        for j in range(q):
            beta[j], c1[j], c2[j] = parcor_transform(theta[3 + j], self.parcor_bound)
        return beta, c1, c2

    def realize(self, theta) -> SystemMatrices:
        theta = self.validate_theta(theta)
        taus = [log_variance_transform(theta[i])[0] for i in range(3)]
        beta, _, _ = self._parcor(theta)
        a = levinson_expand(beta)
        m, r0 = self.m, self.ar_row
        F = np.zeros((m, m))
        F[:2, :2] = _second_order_trend_block()
        F[2:r0, 2:r0] = _seasonal_block(self.period)
        F[r0:, r0:] = _companion_block(a)
        G = np.zeros((m, 3))
        G[0, 0] = 1.0
        G[2, 1] = 1.0
        G[r0, 2] = 1.0
        H = np.zeros(m)
        H[0] = 1.0
        H[2] = 1.0
        H[r0] = 1.0
        return SystemMatrices(F=F, G=G, H=H, Q=np.diag(taus))

    def differentiate(self, theta) -> DerivativeBundle:
        theta = self.validate_theta(theta)
        p, m, q, r0 = self.p, self.m, self.ar_order, self.ar_row
        dQ = np.zeros((p, 3, 3))
        d2Q = np.zeros((p, p, 3, 3))
        for i in range(3):
            _, dq, d2q = log_variance_transform(theta[i])
            dQ[i, i, i] = dq
            d2Q[i, i, i, i] = d2q

        beta, c1, c2 = self._parcor(theta)
        jac = levinson_jacobian(beta)
        hes = levinson_hessian(beta)

        # F depends on theta only through the AR row; chain rule through the
        # PARCOR map: da_q/dtheta_k = J[q, k] * c1[k] and
        # d2a_q/(dtheta_k dtheta_l) = T[q, k, l] c1[k] c1[l] + delta_kl J[q, k] c2[k].
        dF = np.zeros((p, m, m))
        d2F = np.zeros((p, p, m, m))
        for kk in range(q):
            dF[3 + kk, r0, r0:] = jac[:, kk] * c1[kk]
            for ll in range(kk, q):
                row = hes[:, kk, ll] * (c1[kk] * c1[ll])
                if kk == ll:
                    row = row + jac[:, kk] * c2[kk]
                # mirror exactly so the parameter-pair symmetry is bitwise
                d2F[3 + kk, 3 + ll, r0, r0:] = row
                d2F[3 + ll, 3 + kk, r0, r0:] = row

        return DerivativeBundle(
            dF=dF,
            dG=np.zeros((p, m, 3)),
            dH=np.zeros((p, m)),
            dQ=dQ,
            dR=np.zeros(p),
            d2F=d2F,
            d2G=np.zeros((p, p, m, 3)),
            d2H=np.zeros((p, p, m)),
            d2Q=d2Q,
            d2R=np.zeros((p, p)),
        )

    def describe(self, theta) -> dict[str, Any]:
        theta = self.validate_theta(theta)
        beta, _, _ = self._parcor(theta)
        return {
            "period": self.period,
            "ar_order": self.ar_order,
            "parcor_bound": self.parcor_bound,
            "tau2_trend": math.exp(theta[0]),
            "tau2_seasonal": math.exp(theta[1]),
            "tau2_ar": math.exp(theta[2]),
            "parcor": beta.tolist(),
            "ar_coefficients": levinson_expand(beta).tolist(),
        }

    def encode(self, natural) -> np.ndarray:
        theta = [
            math.log(natural["tau2_trend"]),
            math.log(natural["tau2_seasonal"]),
            math.log(natural["tau2_ar"]),
        ]
        theta.extend(
            parcor_encode(b, self.parcor_bound) for b in natural["parcor"]
        )
        if len(theta) != self.p:
            raise DimensionMismatch(
                f"expected {self.ar_order} parcor values, got {len(theta) - 3}"
            )
        return np.array(theta)

    def default_start(self) -> np.ndarray:
        return np.concatenate(
            [[-5.3, -5.0, math.log(0.5)], np.zeros(self.ar_order)]
        )
