"""Single-hypothesis error-state Kalman filter.

This is the readable reference path; the filter bank runs the same algebra
through compiled kernels and is tested against these functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalBlowup, SingularInnovation
from .rotations import quat_correct
from .strapdown import ATT, AUX, POS, VEL, ImuSample, NavState, NoiseConfig, error_transition, propagate

BLOWUP_LIMIT = 1e12
RCOND_LIMIT = 1e-14
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianBelief:
    """Nominal state with the covariance of its error state."""

    mean: NavState
    cov: np.ndarray

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        d = self.mean.error_dim
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance shape {self.cov.shape} does not match error dimension {d}")

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mean.copy(), self.cov.copy())


@dataclass
class Constraint:
    """Pseudo-measurement ``0 = h(x) + e``: innovation, Jacobian and covariance."""

    z: np.ndarray
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(-1)
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        m = self.z.size
        if self.H.shape[0] != m or self.R.shape != (m, m):
            raise ValueError("constraint dimensions do not agree")


def symmetrize(P):
    return 0.5 * (P + P.T)


def predict(
    b: GaussianBelief,
    u: ImuSample,
    cfg: NoiseConfig,
    dt: float | None = None,
    assign_height: bool = False,
) -> GaussianBelief:
    """Propagate the nominal state and the error covariance one sample."""
    F, Q = error_transition(b.mean, u, cfg, dt, assign_height)
    mean = propagate(b.mean, u, cfg, dt)
    if assign_height and mean.xi is not None:
        mean.xi = float(b.mean.r[2])
    cov = symmetrize(F @ b.cov @ F.T + Q)
    if np.any(np.diag(cov) > BLOWUP_LIMIT) or not np.all(np.isfinite(cov)):
        raise NumericalBlowup("error covariance diverged during prediction")
    return GaussianBelief(mean, cov)


def innovation_loglik(z, S):
    """``log N(z; 0, S)`` through a Cholesky factor of ``S``."""
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation("innovation covariance is not positive definite") from exc
    diag = np.diag(L)
    if (diag.min() / diag.max()) ** 2 < RCOND_LIMIT:
        raise SingularInnovation("innovation covariance is ill-conditioned")
    alpha = np.linalg.solve(L, z)
    return -0.5 * (z.size * LOG_2PI + 2.0 * np.sum(np.log(diag)) + alpha @ alpha), L


def inject(mean: NavState, dx) -> NavState:
    """Fold an error-state estimate back into the nominal state."""
    out = NavState(mean.r + dx[POS], mean.v + dx[VEL], quat_correct(mean.q, dx[ATT]), mean.xi)
    if mean.xi is not None:
        out.xi = mean.xi + float(dx[AUX])
    return out


def update(b: GaussianBelief, c: Constraint):
    """Kalman update with a pseudo-measurement.

    Returns the posterior belief and ``log N(z; 0, S)`` with
    ``S = H P H^T + R``. Rows of ``H`` that are all zero still enter the
    likelihood; they just do not move the state.
    """
    P = b.cov
    PHt = P @ c.H.T
    S = symmetrize(c.H @ PHt + c.R)
    loglik, L = innovation_loglik(c.z, S)
    # K = P H^T S^-1 via two triangular solves
    Kt = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T))
    K = Kt.T
    dx = K @ c.z
    A = np.eye(P.shape[0]) - K @ c.H
    cov = symmetrize(A @ P @ A.T + K @ c.R @ K.T)
    return GaussianBelief(inject(b.mean, dx), cov), float(loglik)
