"""Strapdown mechanization and its error-state linearization.

The navigation frame is local-level with the z-axis pointing up. The
error state is ``[dr, dv, dtheta]`` (9) or ``[dr, dv, dtheta, dxi]`` (10)
when the auxiliary height reference is carried.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigError
from .rotations import quat_increment, quat_normalize, rotmat_from_quat, skew

GRAVITY = np.array([0.0, 0.0, -9.81])
MAX_DT = 0.1

# error-state slices
POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
AUX = 9


@dataclass
class NavState:
    """Position, velocity, attitude and optional auxiliary height reference."""

    r: np.ndarray
    v: np.ndarray
    q: np.ndarray
    xi: float | None = None

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.q = quat_normalize(np.asarray(self.q, dtype=float).reshape(4))
        if self.xi is not None:
            self.xi = float(self.xi)

    @property
    def error_dim(self) -> int:
        return 9 if self.xi is None else 10

    def copy(self) -> "NavState":
        return NavState(self.r.copy(), self.v.copy(), self.q.copy(), self.xi)


@dataclass(frozen=True)
class ImuSample:
    """One IMU reading: time [s], specific force [m/s^2], angular rate [rad/s]."""

    t: float
    s: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float).reshape(3))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(3))


@dataclass(frozen=True)
class NoiseConfig:
    """Per-sample IMU noise levels, nominal sample period and gravity."""

    sigma_s: float = 0.02
    sigma_w: float = 0.002
    dt: float = 0.01
    g: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float).reshape(3))
        if self.sigma_s < 0 or self.sigma_w < 0:
            raise ConfigError("noise standard deviations must be non-negative")
        if not 0.0 < self.dt <= MAX_DT:
            raise ConfigError(f"dt must lie in (0, {MAX_DT}] s, got {self.dt}")

    def with_(self, **kwargs) -> "NoiseConfig":
        return replace(self, **kwargs)


def sample_interval(t_prev, t, cfg: NoiseConfig) -> float:
    """Sampling period from consecutive timestamps, falling back to ``cfg.dt``."""
    if t_prev is None or t is None:
        return cfg.dt
    dt = float(t) - float(t_prev)
    if not 0.0 < dt <= MAX_DT:
        raise ConfigError(f"sample interval {dt} s outside (0, {MAX_DT}]")
    return dt


def propagate(x: NavState, u: ImuSample, cfg: NoiseConfig, dt: float | None = None) -> NavState:
    """Noise-free mechanization over one sampling period.

    ``r' = r + dt v``, ``v' = v + dt (C(q) s + g)``, ``q' = q * exp(dt w)``.
    The auxiliary state is passed through unchanged.
    """
    dt = cfg.dt if dt is None else dt
    C = rotmat_from_quat(x.q)
    r = x.r + dt * x.v
    v = x.v + dt * (C @ u.s + cfg.g)
    q = quat_increment(x.q, dt * u.w)
    return NavState(r, v, q, x.xi)


def error_transition(
    x: NavState,
    u: ImuSample,
    cfg: NoiseConfig,
    dt: float | None = None,
    assign_height: bool = False,
):
    """Error-state transition matrix ``F`` and process noise ``Q``.

    With ``assign_height`` the auxiliary row implements ``xi' = r_z``,
    otherwise ``xi' = xi``.
    """
    dt = cfg.dt if dt is None else dt
    d = x.error_dim
    C = rotmat_from_quat(x.q)
    F = np.eye(d)
    F[POS, VEL] = dt * np.eye(3)
    F[VEL, ATT] = -dt * skew(C @ u.s)
    Q = np.zeros((d, d))
    # isotropic accelerometer noise is invariant under rotation by C
    Q[VEL, VEL] = (dt * cfg.sigma_s) ** 2 * C @ C.T
    Q[ATT, ATT] = (dt * cfg.sigma_w) ** 2 * np.eye(3)
    if d == 10 and assign_height:
        F[AUX, :] = 0.0
        F[AUX, 2] = 1.0
    return F, 0.5 * (Q + Q.T)
