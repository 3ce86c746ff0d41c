"""First- and second-order parameter sensitivities of the Kalman filter.

Alongside the filter recursion this module propagates, for every working
parameter (and parameter pair), the derivatives of the predicted state and
covariance, feeds them through the measurement update, and accumulates the
per-step innovation derivatives needed for the exact gradient and Hessian
of the concentrated log-likelihood.

With sigma2 = (1/N) sum(eps^2 / r) concentrated out, direct differentiation
of

    loglik = -0.5 * (N log(2 pi sigma2) + sum(log r) + N)

gives

    grad    = -0.5 * (N dsigma2 / sigma2 + sum(dr / r))
    hessian = -0.5 * N * (d2sigma2 / sigma2 - dsigma2 dsigma2' / sigma2^2)
              -0.5 * sum(d2r / r - dr dr' / r^2)

which is what :func:`evaluate` assembles from the propagated traces.  (See
README for the full derivation; the sign of the sum term follows from
d/dtheta (dr / r) = d2r / r - dr dr' / r^2 and is confirmed against finite
differences in the test suite.)

Everything here is pure: a single evaluation is sequential in time but
multiple evaluations may run concurrently on shared inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend, kalman
from .core import (
    DerivativeBundle,
    DimensionMismatch,
    InitialCondition,
    NonFiniteDerivative,
    NonFiniteInput,
    NonFiniteState,
    StateSpaceModel,
    SystemMatrices,
    validate_dimensions,
    zero_bundle,
)

__all__ = [
    "SensitivityState",
    "CurvatureState",
    "DerivativeReport",
    "predict_sensitivities",
    "innovation_sensitivities",
    "update_sensitivities",
    "predict_curvatures",
    "innovation_curvatures",
    "update_curvatures",
    "sigma2_and_gradient",
    "evaluate",
    "forward_pass",
]

_ORDERS = {"value": 0, "gradient": 1, "hessian": 2}


@dataclass(frozen=True)
class SensitivityState:
    """First derivatives of the state mean and covariance, batched over i."""

    dx: np.ndarray  # (p, m)
    dV: np.ndarray  # (p, m, m), each slice symmetric

    @classmethod
    def zeros(cls, p: int, m: int) -> "SensitivityState":
        return cls(dx=np.zeros((p, m)), dV=np.zeros((p, m, m)))


@dataclass(frozen=True)
class CurvatureState:
    """Second derivatives of the state mean and covariance, batched over (i, j)."""

    d2x: np.ndarray  # (p, p, m), symmetric in (i, j)
    d2V: np.ndarray  # (p, p, m, m), symmetric in (i, j) and per-matrix

    @classmethod
    def zeros(cls, p: int, m: int) -> "CurvatureState":
        return cls(d2x=np.zeros((p, p, m)), d2V=np.zeros((p, p, m, m)))


@dataclass(frozen=True)
class DerivativeReport:
    """Value, gradient and Hessian of the concentrated log-likelihood."""

    loglik: float
    sigma2: float
    n_obs: int
    order: str
    grad: np.ndarray | None = None
    hessian: np.ndarray | None = None
    dsigma2: np.ndarray | None = None
    d2sigma2: np.ndarray | None = None
    eps_trace: np.ndarray | None = None
    r_trace: np.ndarray | None = None
    deps_trace: np.ndarray | None = None
    dr_trace: np.ndarray | None = None


def _sym_mat(A: np.ndarray) -> np.ndarray:
    # Symmetrize the trailing matrix axes.
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _sym_pair(A: np.ndarray) -> np.ndarray:
    # Symmetrize the leading (i, j) parameter axes.
    return 0.5 * (A + np.swapaxes(A, 0, 1))


def predict_sensitivities(
    prev: SensitivityState,
    x_filt_prev: np.ndarray,
    V_filt_prev: np.ndarray,
    sm: SystemMatrices,
    db: DerivativeBundle,
) -> SensitivityState:
    """Propagate first derivatives through the prediction step.

    dx_pred[i] = F dx[i] + dF[i] x
    dV_pred[i] = F dV[i] F' + dF[i] V F' + F V dF[i]' + G dQ[i] G'
                 + dG[i] Q G' + G Q dG[i]'
    with zero bundle entries skipped.
    """
    F, G, Q = sm.F, sm.G, sm.Q
    dx = prev.dx @ F.T
    dV = F @ prev.dV @ F.T
    if db.depends_F:
        dx = dx + np.einsum("iab,b->ia", db.dF, x_filt_prev)
        A = db.dF @ (V_filt_prev @ F.T)
        dV = dV + A + A.transpose(0, 2, 1)
    dV = dV + G @ db.dQ @ G.T
    if db.depends_G:
        B = db.dG @ (Q @ G.T)
        dV = dV + B + B.transpose(0, 2, 1)
    return SensitivityState(dx=dx, dV=_sym_mat(dV))


def innovation_sensitivities(
    sens: SensitivityState,
    x_pred: np.ndarray,
    V_pred: np.ndarray,
    sm: SystemMatrices,
    db: DerivativeBundle,
) -> tuple[np.ndarray, np.ndarray]:
    """First derivatives of the innovation and its variance.

    deps[i] = -H dx_pred[i] - dH[i] x_pred
    dr[i]   = H dV_pred[i] H' + dH[i] V_pred H' + H V_pred dH[i]' + dR[i]
    """
    H = sm.H
    deps = -(sens.dx @ H)
    dr = np.einsum("a,iab,b->i", H, sens.dV, H)
    if db.depends_H:
        deps = deps - db.dH @ x_pred
        dr = dr + 2.0 * (db.dH @ (V_pred @ H))
    if db.depends_R:
        dr = dr + db.dR
    return deps, dr


def _gain_sensitivities(
    sens: SensitivityState,
    V_pred: np.ndarray,
    r: float,
    dr: np.ndarray,
    sm: SystemMatrices,
    db: DerivativeBundle,
) -> np.ndarray:
    # dK[i] = (dV_pred[i] H' + V_pred dH[i]') / r - V_pred H' dr[i] / r^2
    w = V_pred @ sm.H
    num = sens.dV @ sm.H
    if db.depends_H:
        num = num + db.dH @ V_pred
    return num / r - np.outer(dr, w) / (r * r)


def update_sensitivities(
    sens: SensitivityState,
    step: kalman.FilterStep,
    deps: np.ndarray,
    dr: np.ndarray,
    sm: SystemMatrices,
    db: DerivativeBundle,
) -> SensitivityState:
    """Propagate first derivatives through the measurement update.

    dx_filt[i] = dx_pred[i] + K deps[i] + dK[i] eps
    dV_filt[i] = dV_pred[i] - dK[i] H V_pred - K dH[i] V_pred - K H dV_pred[i]
    """
    V_pred, K, eps, r = step.V_pred, step.gain, step.eps, step.r
    dK = _gain_sensitivities(sens, V_pred, r, dr, sm, db)
    dx = sens.dx + np.outer(deps, K) + dK * eps
    w = V_pred @ sm.H
    u0 = sens.dV @ sm.H
    dV = (
        sens.dV
        - dK[:, :, None] * w[None, None, :]
        - K[None, :, None] * u0[:, None, :]
    )
    if db.depends_H:
        VdH = db.dH @ V_pred
        dV = dV - K[None, :, None] * VdH[:, None, :]
    return SensitivityState(dx=dx, dV=_sym_mat(dV))


def predict_curvatures(
    prev: CurvatureState,
    sens_prev: SensitivityState,
    x_filt_prev: np.ndarray,
    V_filt_prev: np.ndarray,
    sm: SystemMatrices,
    db: DerivativeBundle,
) -> CurvatureState:
    """Propagate second derivatives through the prediction step.

    Full product-rule expansion of x_pred = F x and
    V_pred = F V F' + G Q G', using the filtered (n-1) quantities in every
    derivative cross term.
    """
    F, G, Q, V = sm.F, sm.G, sm.Q, V_filt_prev
    dx, dV = sens_prev.dx, sens_prev.dV

    d2x = np.einsum("ab,ijb->ija", F, prev.d2x)
    d2V = F @ prev.d2V @ F.T
    if db.depends_F:
        B = np.einsum("jab,ib->ija", db.dF, dx)
        d2x = d2x + B + B.transpose(1, 0, 2) + np.einsum("ijab,b->ija", db.d2F, x_filt_prev)
        C1 = np.einsum("iab,jbc,dc->ijad", db.dF, dV, F)
        C3 = np.einsum("ab,ibc,jdc->ijad", F, dV, db.dF)
        C4 = np.einsum("ijab,bc,dc->ijad", db.d2F, V, F)
        C5 = np.einsum("iab,bc,jdc->ijad", db.dF, V, db.dF)
        d2V = (
            d2V
            + C1 + C1.transpose(1, 0, 2, 3)
            + C3 + C3.transpose(1, 0, 2, 3)
            + C4 + C4.transpose(0, 1, 3, 2)
            + C5 + C5.transpose(1, 0, 2, 3)
        )
    d2V = d2V + G @ db.d2Q @ G.T
    if db.depends_G:
        E1 = np.einsum("ijab,bc,dc->ijad", db.d2G, Q, G)
        E2 = np.einsum("iab,jbc,dc->ijad", db.dG, db.dQ, G)
        E3 = np.einsum("iab,bc,jdc->ijad", db.dG, Q, db.dG)
        d2V = (
            d2V
            + E1 + E1.transpose(0, 1, 3, 2)
            + E2 + E2.transpose(1, 0, 2, 3)
            + E2.transpose(1, 0, 3, 2) + E2.transpose(0, 1, 3, 2)
            + E3 + E3.transpose(1, 0, 2, 3)
        )
    return CurvatureState(d2x=_sym_pair(d2x), d2V=_sym_pair(_sym_mat(d2V)))


def innovation_curvatures(
    curv: CurvatureState,
    sens: SensitivityState,
    x_pred: np.ndarray,
    V_pred: np.ndarray,
    sm: SystemMatrices,
    db: DerivativeBundle,
) -> tuple[np.ndarray, np.ndarray]:
    """Second derivatives of the innovation and its variance.

    d2eps[i,j] = -H d2x_pred[i,j] (minus dH/d2H cross terms when present)
    d2r[i,j]   = H d2V_pred[i,j] H' (plus dH/d2H/d2R terms when present)
    """
    H = sm.H
    d2eps = -np.einsum("a,ija->ij", H, curv.d2x)
    d2r = np.einsum("a,ijab,b->ij", H, curv.d2V, H)
    if db.depends_H:
        B = np.einsum("ia,ja->ij", db.dH, sens.dx)
        d2eps = d2eps - B - B.T - db.d2H @ x_pred
        w = V_pred @ H
        u0 = sens.dV @ H
        E = db.dH @ u0.T  # E[i, j] = dH[i] . (dV_pred[j] H)
        d2r = (
            d2r
            + 2.0 * (E + E.T)
            + 2.0 * (db.d2H @ w)
            + 2.0 * (db.dH @ V_pred @ db.dH.T)
        )
    if db.depends_R:
        d2r = d2r + db.d2R
    return _sym_pair(d2eps), _sym_pair(d2r)


def update_curvatures(
    curv: CurvatureState,
    sens: SensitivityState,
    step: kalman.FilterStep,
    deps: np.ndarray,
    dr: np.ndarray,
    d2eps: np.ndarray,
    d2r: np.ndarray,
    sm: SystemMatrices,
    db: DerivativeBundle,
) -> CurvatureState:
    """Propagate second derivatives through the measurement update.

    Implements the product-rule expansion of the gain K = V_pred H' / r
    (terms in 1/r, 1/r^2 and 2/r^3) and of the filtered mean/covariance.
    """
    H = sm.H
    V_pred, K, eps, r = step.V_pred, step.gain, step.eps, step.r
    w = V_pred @ H
    u0 = sens.dV @ H
    num = sens.dV @ H
    if db.depends_H:
        VdH = db.dH @ V_pred
        num = num + VdH
    t = np.einsum("ijab,b->ija", curv.d2V, H)
    q = t.copy()
    if db.depends_H:
        Dq = np.einsum("iab,jb->ija", sens.dV, db.dH)
        q = q + Dq + Dq.transpose(1, 0, 2) + np.einsum("ab,ijb->ija", V_pred, db.d2H)
    dKn_dr = np.einsum("ia,j->ija", num, dr)
    d2K = (
        q / r
        - (dKn_dr + dKn_dr.transpose(1, 0, 2) + d2r[:, :, None] * w[None, None, :])
        / (r * r)
        + 2.0 * np.einsum("i,j,a->ija", dr, dr, w) / (r * r * r)
    )

    dK = _gain_sensitivities(sens, V_pred, r, dr, sm, db)
    cross = np.einsum("ia,j->ija", dK, deps)
    d2x = (
        curv.d2x
        + cross + cross.transpose(1, 0, 2)
        + d2eps[:, :, None] * K[None, None, :]
        + d2K * eps
    )

    def _outer(left, right):
        # Batched outer product over the trailing state axis.
        return left[..., :, None] * right[..., None, :]

    gain_cross = _outer(dK[:, None, :], u0[None, :, :])
    d2V = (
        curv.d2V
        - _outer(d2K, w[None, None, :])
        - gain_cross - gain_cross.transpose(1, 0, 2, 3)
        - _outer(K[None, None, :], t)
    )
    if db.depends_H:
        hv = _outer(dK[:, None, :], VdH[None, :, :])
        dvh = np.einsum("iab,jb->ija", sens.dV, db.dH)
        d2V = (
            d2V
            - hv - hv.transpose(1, 0, 2, 3)
            - _outer(K[None, None, :], np.einsum("ab,ijb->ija", V_pred, db.d2H))
            - _outer(K[None, None, :], dvh + dvh.transpose(1, 0, 2))
        )
    return CurvatureState(d2x=_sym_pair(d2x), d2V=_sym_pair(_sym_mat(d2V)))


def sigma2_and_gradient(
    eps_trace, r_trace, deps_traces, dr_traces, n_obs: int | None = None
) -> tuple[float, np.ndarray, np.ndarray]:
    """Concentrated variance, its gradient, and the log-likelihood gradient.

    dsigma2[i] = (1/N) sum(2 eps/r * deps[i] - eps^2/r^2 * dr[i])
    grad[i]    = -0.5 * (N/sigma2 * dsigma2[i] + sum(dr[i]/r))
    """
    eps = np.asarray(eps_trace, dtype=np.float64)
    r = np.asarray(r_trace, dtype=np.float64)
    deps = np.asarray(deps_traces, dtype=np.float64)
    dr = np.asarray(dr_traces, dtype=np.float64)
    n = eps.size if n_obs is None else n_obs
    if not (eps.shape[0] == r.shape[0] == deps.shape[0] == dr.shape[0] == n):
        raise DimensionMismatch("trace lengths must all equal n_obs")
    summary = kalman.concentrated_loglik(eps, r)
    sigma2 = summary.sigma2
    dsigma2 = (
        (2.0 * eps / r)[:, None] * deps - (eps * eps / (r * r))[:, None] * dr
    ).mean(axis=0)
    grad = -0.5 * (n / sigma2 * dsigma2 + (dr / r[:, None]).sum(axis=0))
    return sigma2, dsigma2, grad


def _hessian_from_traces(eps, r, deps, dr, d2eps, d2r, sigma2, dsigma2):
    n = eps.size
    inv_r = 1.0 / r
    d2sigma2 = (
        np.einsum("n,ni,nj->ij", 2.0 * inv_r, deps, deps)
        + np.einsum("n,nij->ij", 2.0 * eps * inv_r, d2eps)
        + np.einsum("n,ni,nj->ij", 2.0 * eps * eps * inv_r**3, dr, dr)
        - np.einsum("n,nij->ij", eps * eps * inv_r**2, d2r)
    )
    mixed = np.einsum("n,ni,nj->ij", 2.0 * eps * inv_r**2, deps, dr)
    d2sigma2 = (d2sigma2 - mixed - mixed.T) / n
    sum_d2r = np.einsum("n,nij->ij", inv_r, d2r)
    sum_drdr = np.einsum("n,ni,nj->ij", inv_r**2, dr, dr)
    hess = -0.5 * n * (
        d2sigma2 / sigma2 - np.outer(dsigma2, dsigma2) / (sigma2 * sigma2)
    ) - 0.5 * (sum_d2r - sum_drdr)
    d2sigma2 = 0.5 * (d2sigma2 + d2sigma2.T)
    hess = 0.5 * (hess + hess.T)
    return d2sigma2, hess


def _forward_python(sm, db, y, x0, V0, order, store_steps):
    """Reference forward pass built from the public step operations."""
    n_obs, m, p = y.size, sm.m, db.p
    eps_tr = np.empty(n_obs)
    r_tr = np.empty(n_obs)
    out = {"eps": eps_tr, "r": r_tr}
    if order >= 1:
        deps_tr = np.empty((n_obs, p))
        dr_tr = np.empty((n_obs, p))
        out.update(deps=deps_tr, dr=dr_tr)
    if order >= 2:
        d2eps_tr = np.empty((n_obs, p, p))
        d2r_tr = np.empty((n_obs, p, p))
        out.update(d2eps=d2eps_tr, d2r=d2r_tr)
    if store_steps:
        steps = {
            "x_pred": np.empty((n_obs, m)),
            "V_pred": np.empty((n_obs, m, m)),
            "gain": np.empty((n_obs, m)),
            "x_filt": np.empty((n_obs, m)),
            "V_filt": np.empty((n_obs, m, m)),
        }
        out.update(steps)

    x, V = x0, V0
    sens = SensitivityState.zeros(p, m) if order >= 1 else None
    curv = CurvatureState.zeros(p, m) if order >= 2 else None

    for n in range(n_obs):
        x_pred, V_pred = kalman.predict(x, V, sm)
        if order >= 2:
            curv = predict_curvatures(curv, sens, x, V, sm, db)
        if order >= 1:
            sens = predict_sensitivities(sens, x, V, sm, db)
        if not (np.isfinite(x_pred).all() and np.isfinite(V_pred).all()):
            raise NonFiniteState(n)
        step = kalman.update(x_pred, V_pred, y[n], sm)
        if not (np.isfinite(step.eps) and np.isfinite(step.r)):
            raise NonFiniteState(n)
        eps_tr[n], r_tr[n] = step.eps, step.r
        if order >= 1:
            deps, dr = innovation_sensitivities(sens, x_pred, V_pred, sm, db)
            deps_tr[n], dr_tr[n] = deps, dr
            if order >= 2:
                d2eps, d2r = innovation_curvatures(curv, sens, x_pred, V_pred, sm, db)
                d2eps_tr[n], d2r_tr[n] = d2eps, d2r
                curv = update_curvatures(
                    curv, sens, step, deps, dr, d2eps, d2r, sm, db
                )
            sens = update_sensitivities(sens, step, deps, dr, sm, db)
        if store_steps:
            steps["x_pred"][n] = x_pred
            steps["V_pred"][n] = V_pred
            steps["gain"][n] = step.gain
            steps["x_filt"][n] = step.x_filt
            steps["V_filt"][n] = step.V_filt
        x, V = step.x_filt, step.V_filt
    return out


def _forward_compiled(sm, db, y, x0, V0, order, store_steps):
    kernel = _backend.compiled_kernel()
    # Fold the time-invariant noise terms G Q G' and their derivatives once.
    G, Q = sm.G, sm.Q
    NQ = G @ Q @ G.T
    dNQ = G @ db.dQ @ G.T
    if db.depends_G:
        B = db.dG @ (Q @ G.T)
        dNQ = dNQ + B + B.transpose(0, 2, 1)
    d2NQ = G @ db.d2Q @ G.T
    if db.depends_G:
        E1 = np.einsum("ijab,bc,dc->ijad", db.d2G, Q, G)
        E2 = np.einsum("iab,jbc,dc->ijad", db.dG, db.dQ, G)
        E3 = np.einsum("iab,bc,jdc->ijad", db.dG, Q, db.dG)
        d2NQ = (
            d2NQ
            + E1 + E1.transpose(0, 1, 3, 2)
            + E2 + E2.transpose(1, 0, 2, 3)
            + E2.transpose(1, 0, 3, 2) + E2.transpose(0, 1, 3, 2)
            + E3 + E3.transpose(1, 0, 2, 3)
        )
    # Row-support masks let the kernel skip the zero rows of dF/d2F.
    rF = np.ascontiguousarray((db.dF != 0).any(axis=2), dtype=np.uint8)
    r2F = np.ascontiguousarray((db.d2F != 0).any(axis=3), dtype=np.uint8)
    c = np.ascontiguousarray
    status, out = kernel.forward(
        c(sm.F), c(sm.H), c(NQ),
        c(db.dF), c(db.dH), c(dNQ), c(db.dR),
        c(db.d2F), c(db.d2H), c(d2NQ), c(db.d2R),
        rF, r2F,
        c(y), c(x0), c(V0),
        int(order), bool(store_steps),
        bool(db.depends_F), bool(db.depends_H), bool(db.depends_R),
    )
    if status >= 0:
        raise NonFiniteState(status)
    return out


def forward_pass(
    spec: StateSpaceModel,
    theta,
    y,
    init: InitialCondition | None = None,
    order: int = 2,
    store_steps: bool = False,
    backend: str | None = None,
):
    """Run one forward pass and return the per-step traces.

    Dispatches to the compiled kernel when available (or when requested via
    ``backend``/the SSMGRAD_BACKEND environment variable), otherwise to the
    pure-Python reference loop.  Both produce the same trace dictionary.
    """
    theta = spec.validate_theta(theta)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size < 1:
        raise NonFiniteInput("y must be a nonempty 1-D series")
    if not np.isfinite(y).all():
        raise NonFiniteInput("y contains non-finite values")
    sm = spec.realize(theta)
    db = spec.differentiate(theta) if order >= 1 else zero_bundle(spec.p, sm.m, sm.k)
    validate_dimensions(sm, db)
    x0, V0 = (init or InitialCondition()).resolve(sm.m)
    name = _backend.resolve(backend)
    if name == "compiled":
        return _forward_compiled(sm, db, y, x0, V0, order, store_steps)
    return _forward_python(sm, db, y, x0, V0, order, store_steps)


def _check_derivative_traces(out, order):
    for key, second in (("deps", False), ("dr", False), ("d2eps", True), ("d2r", True)):
        if key not in out:
            continue
        arr = out[key]
        if np.isfinite(arr).all():
            continue
        where = np.argwhere(~np.isfinite(arr))[0]
        if second:
            raise NonFiniteDerivative(int(where[0]), int(where[1]), int(where[2]))
        raise NonFiniteDerivative(int(where[0]), int(where[1]))


def evaluate(
    spec: StateSpaceModel,
    theta,
    y,
    init: InitialCondition | None = None,
    order: str = "hessian",
    keep_traces: bool = False,
    backend: str | None = None,
) -> DerivativeReport:
    """Log-likelihood and, as requested, its exact gradient and Hessian.

    ``order`` selects how much state is propagated: "value" runs the plain
    filter, "gradient" adds the first-order recursions (cost O(p) per
    step), "hessian" adds the second-order recursions (cost O(p^2)).
    """
    if order not in _ORDERS:
        raise ValueError(f"order must be one of {sorted(_ORDERS)}")
    level = _ORDERS[order]
    out = forward_pass(spec, theta, y, init=init, order=level, backend=backend)
    _check_derivative_traces(out, level)
    summary = kalman.concentrated_loglik(out["eps"], out["r"])

    grad = hessian = dsigma2 = d2sigma2 = None
    if level >= 1:
        _, dsigma2, grad = sigma2_and_gradient(
            out["eps"], out["r"], out["deps"], out["dr"], summary.n_obs
        )
    if level >= 2:
        d2sigma2, hessian = _hessian_from_traces(
            out["eps"], out["r"], out["deps"], out["dr"],
            out["d2eps"], out["d2r"], summary.sigma2, dsigma2,
        )
    return DerivativeReport(
        loglik=summary.loglik,
        sigma2=summary.sigma2,
        n_obs=summary.n_obs,
        order=order,
        grad=grad,
        hessian=hessian,
        dsigma2=dsigma2,
        d2sigma2=d2sigma2,
        eps_trace=out["eps"] if keep_traces else None,
        r_trace=out["r"] if keep_traces else None,
        deps_trace=out.get("deps") if keep_traces else None,
        dr_trace=out.get("dr") if keep_traces else None,
    )
