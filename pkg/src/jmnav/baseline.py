"""Loosely integrated comparison system: stance detector plus zero-velocity updates.

A fixed-threshold stance hypothesis test (the SHOE detector) decides, sample
by sample, whether the foot is still. A single error-state filter runs the
strapdown mechanization and applies a velocity-only pseudo-measurement
whenever the detector fires. Detection is binary and external to the filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eskf import Constraint, GaussianBelief, predict, update
from .exceptions import ConfigError, DegenerateWindow, NumericalBlowup, SingularInnovation
from .filterbank import Trajectory, _as_array, level_prior
from .models import single_mode_model
from .rotations import euler_from_quat
from .strapdown import VEL, ImuSample, NoiseConfig, sample_interval


@dataclass(frozen=True)
class DetectorConfig:
    """Stance detector settings.

    Parameters
    ----------
    window : int
        Samples per test window.
    gamma : float
        Threshold; stance is declared when the statistic is below it.
        ``0`` never fires and ``inf`` always fires.
    sigma_a : float
        Accelerometer noise standard deviation used by the statistic [m/s^2].
    sigma_g : float
        Gyroscope noise standard deviation used by the statistic [rad/s].
    g_mag : float
        Gravity magnitude [m/s^2].
    """

    window: int = 5
    gamma: float = 3.0e4
    sigma_a: float = 0.02
    sigma_g: float = 0.002
    g_mag: float = 9.81

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ConfigError("detector window must be a positive integer")
        if np.isnan(self.gamma) or self.gamma < 0:
            raise ConfigError("detector threshold must be non-negative")
        if not (self.sigma_a > 0 and self.sigma_g > 0 and self.g_mag > 0):
            raise ConfigError("detector noise levels and gravity must be positive")


def shoe_statistic(window, cfg: DetectorConfig) -> float:
    """Stance-hypothesis test statistic of one window.

    Parameters
    ----------
    window : ndarray, shape (W, 6) or (W, 7), or sequence of ImuSample
        Specific force and angular rate rows; a leading time column is
        ignored.

    Returns
    -------
    float
        Mean over the window of
        ``|s - g_mag * mean(s) / |mean(s)||^2 / sigma_a^2 + |w|^2 / sigma_g^2``.
    """
    if not isinstance(window, np.ndarray):
        window = np.array([np.r_[u.s, u.w] for u in window])
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[1] not in (6, 7):
        raise ConfigError("window rows must hold specific force and angular rate")
    if window.shape[0] != cfg.window:
        raise ConfigError(f"window has {window.shape[0]} samples, expected {cfg.window}")
    sw = window[:, -6:]
    s, w = sw[:, :3], sw[:, 3:]
    mean = s.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-6:
        raise DegenerateWindow("mean specific force vanishes; gravity direction undefined")
    ds = s - cfg.g_mag * mean / norm
    terms = np.sum(ds * ds, axis=1) / cfg.sigma_a**2 + np.sum(w * w, axis=1) / cfg.sigma_g**2
    return float(terms.mean())


def detect_stance(data, cfg: DetectorConfig):
    """Stance flag for every row of an IMU array.

    Row ``k`` is tested with the window of ``cfg.window`` rows centred on it,
    shifted inward at the ends of the record.

    Returns
    -------
    stance : ndarray of bool
    statistic : ndarray
    """
    arr = _as_array(data)
    n, W = arr.shape[0], cfg.window
    if n < W:
        raise ConfigError(f"record of {n} samples is shorter than the detector window")
    stats = np.array([shoe_statistic(arr[j : j + W], cfg) for j in range(n - W + 1)])
    start = np.clip(np.arange(n) - W // 2, 0, n - W)
    T = stats[start]
    return T < cfg.gamma, T


def run_zupt_ins(
    data,
    det: DetectorConfig,
    noise: NoiseConfig | None = None,
    sigma_v: float = 0.01,
    prior: GaussianBelief | None = None,
    align: int = 20,
) -> Trajectory:
    """Strapdown navigation with detector-triggered zero-velocity updates.

    Parameters
    ----------
    data : ndarray, shape (n, 7)
        Columns ``t, sx, sy, sz, wx, wy, wz``; row 0 is the sample of the prior.
    det : DetectorConfig
    noise : NoiseConfig, optional
    sigma_v : float
        Standard deviation of the zero-velocity pseudo-measurement [m/s].
    prior : GaussianBelief, optional
        Defaults to accelerometer leveling over the first ``align`` rows.

    Returns
    -------
    Trajectory
        Two modes: 1 for free navigation and 2 where a zero-velocity update
        was applied. ``loglik`` holds the update likelihood (0 without one).
    """
    if not sigma_v > 0:
        raise ConfigError("sigma_v must be positive")
    arr = _as_array(data)
    n = arr.shape[0]
    noise = noise or NoiseConfig()
    if prior is None:
        prior = level_prior(arr[: max(1, min(align, n))], single_mode_model("unconstrained"))
    stance, _ = detect_stance(arr, det) if n >= det.window else (np.zeros(n, bool), None)
    H = np.zeros((3, prior.mean.error_dim))
    H[:, VEL] = np.eye(3)
    R = sigma_v**2 * np.eye(3)

    r = np.empty((n, 3))
    v = np.empty((n, 3))
    euler = np.empty((n, 3))
    loglik = np.zeros(n)
    b = prior
    for k in range(n):
        if k > 0:
            u = ImuSample(arr[k, 0], arr[k, 1:4], arr[k, 4:7])
            try:
                b = predict(b, u, noise, sample_interval(arr[k - 1, 0], arr[k, 0], noise))
                if stance[k]:
                    b, loglik[k] = update(b, Constraint(-b.mean.v, H, R))
            except (NumericalBlowup, SingularInnovation) as exc:
                exc.sample = k
                raise
        r[k] = b.mean.r
        v[k] = b.mean.v
        euler[k] = euler_from_quat(b.mean.q)
    map_mode = np.where(stance, 2, 1)
    post = np.column_stack([~stance, stance]).astype(float)
    return Trajectory(arr[:, 0].copy(), r, v, euler, map_mode, post, loglik)
