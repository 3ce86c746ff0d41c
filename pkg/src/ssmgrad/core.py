"""Core contracts: system matrices, derivative bundles and the model interface.

A model realization is the linear Gaussian state-space system

    x[n] = F x[n-1] + G v[n],   v[n] ~ N(0, Q)
    y[n] = H x[n]   + w[n],     w[n] ~ N(0, 1)

with scalar observations and the observation noise variance pinned to 1;
the actual observation scale is concentrated out of the likelihood (see
:mod:`ssmgrad.kalman`).  Parameterized models additionally supply first and
second derivatives of the system matrices with respect to the working
parameter vector ``theta``.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class SsmgradError(Exception):
    """Base class for errors raised by this package."""


class DimensionMismatch(SsmgradError):
    """A matrix or derivative array has an unexpected shape."""


class InvariantViolation(SsmgradError):
    """A structural invariant (symmetry, PSD-ness, R == 1) is broken."""


class NonFiniteInput(SsmgradError):
    """An observation or state entry is NaN or infinite."""


class NonFiniteState(SsmgradError):
    """The filter state diverged; carries the first offending time index."""

    def __init__(self, n: int, message: str | None = None):
        self.n = n
        super().__init__(message or f"non-finite filter state at step n={n}")


class NonFiniteDerivative(SsmgradError):
    """A propagated sensitivity diverged; carries (n, i, j)."""

    def __init__(self, n: int, i: int, j: int | None = None):
        self.n, self.i, self.j = n, i, j
        where = f"n={n}, i={i}" + ("" if j is None else f", j={j}")
        super().__init__(f"non-finite derivative trace at {where}")


class DegenerateLikelihood(SsmgradError):
    """The concentrated error variance underflowed its floor."""


class NonFiniteObjective(SsmgradError):
    """The log-likelihood is not finite at a requested point."""


#: Smallest admissible concentrated error variance; below this the
#: log-likelihood is -inf for all practical purposes and we refuse to
#: return it silently.
SIGMA2_FLOOR = 1e-300


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SystemMatrices:
    """One realization (F, G, H, Q, R) of a model at a parameter point.

    Shapes: F (m, m), G (m, k), H (m,) as the single observation row,
    Q (k, k) symmetric PSD.  R is fixed to 1 by contract.
    """

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: float = 1.0

    def __post_init__(self):
        for name in ("F", "G", "H", "Q"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        m = self.F.shape[0]
        if self.F.shape != (m, m):
            raise DimensionMismatch(f"F must be square, got {self.F.shape}")
        if self.G.ndim != 2 or self.G.shape[0] != m:
            raise DimensionMismatch(f"G must be ({m}, k), got {self.G.shape}")
        if self.H.shape != (m,):
            raise DimensionMismatch(f"H must be a length-{m} row, got {self.H.shape}")
        k = self.G.shape[1]
        if self.Q.shape != (k, k):
            raise DimensionMismatch(f"Q must be ({k}, {k}), got {self.Q.shape}")
        if self.R != 1.0:
            raise InvariantViolation("R is fixed to 1 in this formulation")
        if not np.array_equal(self.Q, self.Q.T):
            raise InvariantViolation("Q must be symmetric")
        if self.Q.size and np.linalg.eigvalsh(self.Q).min() < -1e-12 * max(
            1.0, float(np.abs(self.Q).max())
        ):
            raise InvariantViolation("Q must be positive semidefinite")

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def k(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class DerivativeBundle:
    """First and second parameter derivatives of the system matrices.

    Arrays are dense and batched over the parameter axis: ``dF[i]`` is the
    elementwise derivative of F with respect to ``theta[i]`` and
    ``d2F[i, j]`` the mixed second derivative.  Entries for matrices that do
    not depend on ``theta`` are exact zeros.  ``dR``/``d2R`` exist for
    uniformity of the recursions but are always zero under the R == 1
    contract.
    """

    dF: np.ndarray   # (p, m, m)
    dG: np.ndarray   # (p, m, k)
    dH: np.ndarray   # (p, m)
    dQ: np.ndarray   # (p, k, k)
    dR: np.ndarray   # (p,)
    d2F: np.ndarray  # (p, p, m, m)
    d2G: np.ndarray  # (p, p, m, k)
    d2H: np.ndarray  # (p, p, m)
    d2Q: np.ndarray  # (p, p, k, k)
    d2R: np.ndarray  # (p, p)

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def p(self) -> int:
        return self.dF.shape[0]

    # Structural dependence flags; used to skip zero terms in the recursions.
    @property
    def depends_F(self) -> bool:
        return bool(self.dF.any() or self.d2F.any())

    @property
    def depends_G(self) -> bool:
        return bool(self.dG.any() or self.d2G.any())

    @property
    def depends_H(self) -> bool:
        return bool(self.dH.any() or self.d2H.any())

    @property
    def depends_R(self) -> bool:
        return bool(self.dR.any() or self.d2R.any())


def zero_bundle(p: int, m: int, k: int) -> DerivativeBundle:
    """All-zero derivative bundle with shapes consistent with (p, m, k)."""
    if min(p, m, k) < 1:
        raise DimensionMismatch("p, m, k must all be >= 1")
    return DerivativeBundle(
        dF=np.zeros((p, m, m)),
        dG=np.zeros((p, m, k)),
        dH=np.zeros((p, m)),
        dQ=np.zeros((p, k, k)),
        dR=np.zeros(p),
        d2F=np.zeros((p, p, m, m)),
        d2G=np.zeros((p, p, m, k)),
        d2H=np.zeros((p, p, m)),
        d2Q=np.zeros((p, p, k, k)),
        d2R=np.zeros((p, p)),
    )


def validate_dimensions(sm: SystemMatrices, db: DerivativeBundle) -> None:
    """Check that a bundle is shape-consistent with a realization.

    Raises :class:`DimensionMismatch` naming the offending array, or
    :class:`InvariantViolation` for broken symmetry invariants.
    """
    m, k, p = sm.m, sm.k, db.p
    expected = {
        "dF": (p, m, m),
        "dG": (p, m, k),
        "dH": (p, m),
        "dQ": (p, k, k),
        "dR": (p,),
        "d2F": (p, p, m, m),
        "d2G": (p, p, m, k),
        "d2H": (p, p, m),
        "d2Q": (p, p, k, k),
        "d2R": (p, p),
    }
    for name, shape in expected.items():
        got = getattr(db, name).shape
        if got != shape:
            raise DimensionMismatch(f"{name}: expected shape {shape}, got {got}")
    for i in range(p):
        if not np.array_equal(db.dQ[i], db.dQ[i].T):
            raise InvariantViolation(f"dQ[{i}] must be symmetric")
    if not np.array_equal(db.d2F, db.d2F.transpose(1, 0, 2, 3)):
        raise InvariantViolation("d2F must be symmetric in the parameter pair")
    if not np.array_equal(db.d2Q, db.d2Q.transpose(1, 0, 2, 3)):
        raise InvariantViolation("d2Q must be symmetric in the parameter pair")


@dataclass(frozen=True)
class InitialCondition:
    """Filter initialization x[0|0], V[0|0].

    By default a zero mean with a diffuse-ish covariance ``kappa * I``.  The
    initial condition carries no parameter dependence, so its derivatives
    are zero.
    """

    x0: np.ndarray | None = None
    V0: np.ndarray | None = None
    kappa: float = 1e4

    def resolve(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        x0 = np.zeros(m) if self.x0 is None else np.asarray(self.x0, dtype=np.float64)
        V0 = (
            self.kappa * np.eye(m)
            if self.V0 is None
            else np.asarray(self.V0, dtype=np.float64)
        )
        if x0.shape != (m,):
            raise DimensionMismatch(f"x0 must have shape ({m},), got {x0.shape}")
        if V0.shape != (m, m):
            raise DimensionMismatch(f"V0 must have shape ({m}, {m}), got {V0.shape}")
        return x0, V0


class StateSpaceModel(abc.ABC):
    """Contract for a parameterized model.

    Implementations must be deterministic, pure functions of ``theta`` and
    reentrant; realizations and bundles are immutable after construction.
    """

    @property
    @abc.abstractmethod
    def p(self) -> int:
        """Number of working parameters."""

    @property
    @abc.abstractmethod
    def m(self) -> int:
        """State dimension."""

    @property
    @abc.abstractmethod
    def k(self) -> int:
        """System noise dimension."""

    @abc.abstractmethod
    def realize(self, theta: np.ndarray) -> SystemMatrices:
        """System matrices at ``theta``."""

    @abc.abstractmethod
    def differentiate(self, theta: np.ndarray) -> DerivativeBundle:
        """First and second matrix derivatives at ``theta``."""

    @abc.abstractmethod
    def describe(self, theta: np.ndarray) -> dict[str, Any]:
        """Natural-parameter report (variances, AR coefficients, ...)."""

    def encode(self, natural: dict[str, Any]) -> np.ndarray:
        """Map a natural-parameter dict back to ``theta`` (inverse of describe)."""
        raise NotImplementedError

    def default_start(self) -> np.ndarray:
        """Canonical optimizer start for this model family."""
        raise NotImplementedError

    def validate_theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape != (self.p,):
            raise DimensionMismatch(
                f"theta must have shape ({self.p},), got {theta.shape}"
            )
        if not np.isfinite(theta).all():
            raise NonFiniteInput("theta entries must be finite")
        return theta
