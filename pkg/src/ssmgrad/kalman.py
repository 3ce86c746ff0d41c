"""Kalman filter and the concentrated Gaussian log-likelihood.

The observation noise variance is fixed to 1 inside the filter; the actual
scale sigma^2 is concentrated out analytically:

    sigma2_hat = (1/N) * sum(eps_n^2 / r_n)
    loglik     = -0.5 * (N * log(2 pi sigma2_hat) + sum(log r_n) + N)

with eps_n the one-step prediction error and r_n = H V_pred H' + 1 its
variance under the unit-noise convention.  Because observations are scalar
no matrix inversion occurs anywhere in the update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    SIGMA2_FLOOR,
    DegenerateLikelihood,
    InitialCondition,
    NonFiniteInput,
    StateSpaceModel,
    SystemMatrices,
)


@dataclass(frozen=True)
class FilterStep:
    """Per-step filter quantities at one time index."""

    x_pred: np.ndarray   # x[n|n-1]
    V_pred: np.ndarray   # V[n|n-1]
    gain: np.ndarray     # K[n]
    eps: float           # innovation
    r: float             # innovation variance (>= 1)
    x_filt: np.ndarray   # x[n|n]
    V_filt: np.ndarray   # V[n|n]


@dataclass(frozen=True)
class LikelihoodSummary:
    loglik: float
    sigma2: float
    n_obs: int
    eps_trace: np.ndarray
    r_trace: np.ndarray


def _sym(V: np.ndarray) -> np.ndarray:
    # Suppress asymmetry drift over long recursions.
    return 0.5 * (V + V.T)


def predict(
    x_filt_prev: np.ndarray, V_filt_prev: np.ndarray, sm: SystemMatrices
) -> tuple[np.ndarray, np.ndarray]:
    """One-step state prediction: x_pred = F x, V_pred = F V F' + G Q G'."""
    x_filt_prev = np.asarray(x_filt_prev, dtype=np.float64)
    V_filt_prev = np.asarray(V_filt_prev, dtype=np.float64)
    x_pred = sm.F @ x_filt_prev
    V_pred = _sym(sm.F @ V_filt_prev @ sm.F.T + sm.G @ sm.Q @ sm.G.T)
    return x_pred, V_pred


def update(
    x_pred: np.ndarray, V_pred: np.ndarray, y_n: float, sm: SystemMatrices
) -> FilterStep:
    """Scalar-observation measurement update.

    r = H V_pred H' + 1, gain = V_pred H' / r, and the covariance update is
    (I - gain H) V_pred followed by symmetrization.
    """
    x_pred = np.asarray(x_pred, dtype=np.float64)
    V_pred = np.asarray(V_pred, dtype=np.float64)
    if (
        not np.isfinite(y_n)
        or not np.isfinite(x_pred).all()
        or not np.isfinite(V_pred).all()
    ):
        raise NonFiniteInput("observation and predicted state must be finite")
    w = V_pred @ sm.H
    r = float(sm.H @ w) + 1.0
    eps = float(y_n - sm.H @ x_pred)
    gain = w / r
    x_filt = x_pred + gain * eps
    V_filt = _sym(V_pred - np.outer(gain, w))
    return FilterStep(
        x_pred=x_pred, V_pred=V_pred, gain=gain, eps=eps, r=r,
        x_filt=x_filt, V_filt=V_filt,
    )


def concentrated_loglik(eps_trace, r_trace) -> LikelihoodSummary:
    """Log-likelihood with the observation variance concentrated out."""
    eps = np.asarray(eps_trace, dtype=np.float64)
    r = np.asarray(r_trace, dtype=np.float64)
    if eps.size == 0 or eps.shape != r.shape:
        raise NonFiniteInput("eps and r traces must be nonempty and equal-length")
    n = eps.size
    sigma2 = float(np.mean(eps * eps / r))
    if sigma2 < SIGMA2_FLOOR:
        raise DegenerateLikelihood(
            f"concentrated variance {sigma2:.3e} underflows floor {SIGMA2_FLOOR:.0e}"
        )
    loglik = -0.5 * (n * math.log(2.0 * math.pi * sigma2) + float(np.log(r).sum()) + n)
    return LikelihoodSummary(
        loglik=loglik, sigma2=sigma2, n_obs=n, eps_trace=eps, r_trace=r
    )


def run_filter(
    spec: StateSpaceModel,
    theta,
    y,
    init: InitialCondition | None = None,
) -> tuple[list[FilterStep], LikelihoodSummary]:
    """Run the filter over a series and evaluate the concentrated likelihood.

    Delegates the forward pass to the same kernel used by
    :func:`ssmgrad.derivatives.evaluate`, so a value-only evaluation and
    this function produce identical traces.
    """
    from . import derivatives  # local import to avoid a cycle

    theta = spec.validate_theta(theta)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size < 1:
        raise NonFiniteInput("y must be a nonempty 1-D series")
    out = derivatives.forward_pass(spec, theta, y, init=init, order=0, store_steps=True)
    summary = concentrated_loglik(out["eps"], out["r"])
    steps = [
        FilterStep(
            x_pred=out["x_pred"][n],
            V_pred=out["V_pred"][n],
            gain=out["gain"][n],
            eps=float(out["eps"][n]),
            r=float(out["r"][n]),
            x_filt=out["x_filt"][n],
            V_filt=out["V_filt"][n],
        )
        for n in range(y.size)
    ]
    return steps, summary
