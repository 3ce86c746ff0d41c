"""Synthetic series generation from a model realization."""

from __future__ import annotations

import numpy as np

from .core import InvariantViolation, StateSpaceModel


def simulate_series(
    spec: StateSpaceModel,
    theta,
    n_obs: int,
    seed: int = 0,
    obs_std: float = 1.0,
    x0=None,
) -> np.ndarray:
    """Draw a length-``n_obs`` series from the model at ``theta``.

    Iterates x[n] = F x[n-1] + G v[n], y[n] = H x[n] + w[n] with
    v ~ N(0, Q) and w ~ N(0, obs_std^2), from a deterministic seeded
    generator.  ``x0`` sets the initial state (defaults to zeros).
    """
    if n_obs < 2:
        raise InvariantViolation("n_obs must be >= 2")
    theta = spec.validate_theta(theta)
    sm = spec.realize(theta)
    rng = np.random.default_rng(seed)
    m, k = sm.m, sm.k
    x = np.zeros(m) if x0 is None else np.asarray(x0, dtype=np.float64).copy()

    offdiag = sm.Q - np.diag(np.diag(sm.Q))
    if not offdiag.any():
        noise_sqrt = np.diag(np.sqrt(np.diag(sm.Q)))
    else:
        vals, vecs = np.linalg.eigh(sm.Q)
        noise_sqrt = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T

    y = np.empty(n_obs)
    for n in range(n_obs):
        v = noise_sqrt @ rng.standard_normal(k)
        x = sm.F @ x + sm.G @ v
        y[n] = sm.H @ x + obs_std * rng.standard_normal()
    return y
