"""Pruned bank of error-state Kalman filters over mode-sequence hypotheses.

Every leaf of the hypothesis tree is one branch: a mode history, an
error-state filter and a log-weight. Each IMU sample expands every branch
over the modes reachable from its current mode, weights the children by
transition probability times constraint likelihood, normalizes, and keeps
the ``max_leaves`` most probable children.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .eskf import GaussianBelief
from .exceptions import AllBranchesDead, ConfigError, NumericalBlowup, SingularInnovation
from .models import MotionModel
from .rotations import (
    EulerAngles,
    euler_covariance,
    euler_from_rotmat,
    polar_project,
    quat_from_euler,
    quat_from_rotmat,
    rotmat_from_quat,
)
from .strapdown import ImuSample, NavState, NoiseConfig, sample_interval

HISTORY_LEN = 256
WEIGHT_TOL = 1e-9


@dataclass
class Branch:
    """One hypothesis of the bank; ``mode`` is 1-based."""

    belief: GaussianBelief
    mode: int
    log_w: float
    history: tuple


@dataclass
class FusedEstimate:
    """Mixture summary of the bank at one sample."""

    x_mv: NavState
    P_mv: np.ndarray
    euler: EulerAngles
    euler_cov: np.ndarray
    mode_posterior: np.ndarray
    map_mode: int


class FilterBank:
    """Hypothesis tree of error-state filters for a :class:`MotionModel`.

    Parameters
    ----------
    model : MotionModel
        Mode set, constraints and transition matrix.
    prior : GaussianBelief
        Initial navigation state and error covariance shared by all branches.
    mode_prior : array-like, optional
        Initial mode probabilities; uniform by default. Modes with zero prior
        get no branch.
    noise : NoiseConfig, optional
        IMU noise, nominal period and gravity used for prediction.
    max_leaves : int or None
        Leaf budget after pruning; ``None`` disables pruning.
    t0 : float, optional
        Timestamp of the prior; the first step then uses the actual interval.
    """

    def __init__(
        self,
        model: MotionModel,
        prior: GaussianBelief,
        mode_prior=None,
        noise: NoiseConfig | None = None,
        max_leaves: int | None = 9,
        t0: float | None = None,
    ):
        L = model.n_modes
        mode_prior = np.full(L, 1.0 / L) if mode_prior is None else np.asarray(mode_prior, dtype=float)
        if mode_prior.shape != (L,) or np.any(mode_prior < 0) or abs(mode_prior.sum() - 1.0) > 1e-9:
            raise ConfigError(f"mode prior must be a probability vector of length {L}")
        if max_leaves is not None and max_leaves < 1:
            raise ConfigError("max_leaves must be a positive integer or None")
        if prior.mean.error_dim != model.error_dim:
            raise ConfigError(
                f"prior error dimension {prior.mean.error_dim} does not match model dimension {model.error_dim}"
            )
        self.model = model
        self.noise = noise or NoiseConfig(g=model.gravity)
        self.max_leaves = max_leaves
        self.step_count = 0
        self.t_last = t0
        self._kinds, self._rdiag = model.kernel_arrays()
        self._logpi = model.transition.log()
        self._g = np.asarray(self.noise.g, dtype=float)
        self._dlogw = np.zeros((0, 0))  # no weight tangent when stepping

        modes = np.flatnonzero(mode_prior > 0.0)
        n = modes.size
        m = prior.mean
        self.r = np.tile(m.r, (n, 1))
        self.v = np.tile(m.v, (n, 1))
        self.q = np.tile(m.q, (n, 1))
        self.xi = np.full(n, 0.0 if m.xi is None else m.xi)
        self.P = np.tile(prior.cov, (n, 1, 1))
        self.mode = modes.astype(np.int64)
        self.log_w = np.log(mode_prior[modes])
        self._hist = np.zeros((n, HISTORY_LEN), dtype=np.int8)
        self._hist[:, 0] = modes + 1

    # -- inspection ---------------------------------------------------------

    @property
    def n_branches(self) -> int:
        return self.mode.size

    @property
    def weights(self):
        return np.exp(self.log_w)

    def _history(self, i):
        k = self.step_count
        if k < HISTORY_LEN:
            return tuple(int(m) for m in self._hist[i, : k + 1])
        idx = (np.arange(k + 1 - HISTORY_LEN, k + 1)) % HISTORY_LEN
        return tuple(int(m) for m in self._hist[i, idx])

    def _state(self, i) -> NavState:
        xi = float(self.xi[i]) if self.model.has_height else None
        return NavState(self.r[i].copy(), self.v[i].copy(), self.q[i].copy(), xi)

    @property
    def branches(self) -> list[Branch]:
        return [
            Branch(GaussianBelief(self._state(i), self.P[i].copy()), int(self.mode[i]) + 1, float(self.log_w[i]), self._history(i))
            for i in range(self.n_branches)
        ]

    # -- recursion ------------------------------------------------------------

    def step(self, u: ImuSample) -> float:
        """Process one IMU sample; returns ``log p(y_k | y_1:k-1)`` of the pruned mixture."""
        dt = sample_interval(self.t_last, u.t, self.noise) if self.t_last is not None else self.noise.dt
        out = _kernels.bank_step(
            self.r,
            self.v,
            self.q,
            self.xi,
            self.P,
            self.mode,
            self.log_w,
            self._dlogw,
            u.s,
            u.w,
            dt,
            self._g,
            self.noise.sigma_s**2,
            self.noise.sigma_w**2,
            self.model.has_height,
            self._kinds,
            self._rdiag,
            self._logpi,
            0 if self.max_leaves is None else int(self.max_leaves),
        )
        r, v, q, xi, P, mode, log_w, _, parent, lse, _, status, where = out
        k = self.step_count + 1
        if status != _kernels.STATUS_OK:
            self._raise(status, k, where)
        self.r, self.v, self.q, self.xi, self.P, self.mode, self.log_w = r, v, q, xi, P, mode, log_w
        self._hist = self._hist[parent]
        self._hist[:, k % HISTORY_LEN] = mode + 1
        self.step_count = k
        self.t_last = u.t
        return float(lse)

    def _raise(self, status, k, where):
        if status == _kernels.STATUS_BLOWUP:
            raise NumericalBlowup(f"covariance blow-up in branch {where} at sample {k}", sample=k, branch=where)
        if status == _kernels.STATUS_SINGULAR:
            raise SingularInnovation(f"singular innovation in child {where} at sample {k}", sample=k, branch=where)
        if status == _kernels.STATUS_DEAD:
            raise AllBranchesDead(f"all child weights underflowed at sample {k}", sample=k)

    def sequence_loglik(self, data, return_posterior=False, return_grad=False):
        """Per-sample ``log p(y_k | y_1:k-1)`` over an array of samples.

        ``data`` has columns ``t, sx, sy, sz, wx, wy, wz``; row 0 is the sample
        of the prior and contributes 0. The bank itself is left untouched, so
        this is the fast path for likelihood evaluation.

        With ``return_posterior`` the per-sample mode posteriors are returned
        too. With ``return_grad`` the derivative of the summed log-likelihood
        with respect to every entry of ``log(Pi)`` is returned as an
        ``(L, L)`` array; pruning decisions are held fixed, so this is the
        exact derivative wherever they do not change.
        """
        data = np.ascontiguousarray(data, dtype=float)
        lse, post, grad, status, k, where = _kernels.run_sequence(
            self.r.copy(),
            self.v.copy(),
            self.q.copy(),
            self.xi.copy(),
            self.P.copy(),
            self.mode.copy(),
            self.log_w.copy(),
            data,
            self.noise.dt,
            self._g,
            self.noise.sigma_s**2,
            self.noise.sigma_w**2,
            self.model.has_height,
            self._kinds,
            self._rdiag,
            self._logpi,
            0 if self.max_leaves is None else int(self.max_leaves),
            bool(return_grad),
        )
        if status != _kernels.STATUS_OK:
            self._raise(status, int(k), int(where))
        out = (lse,)
        if return_posterior:
            out += (post,)
        if return_grad:
            out += (grad,)
        return out if len(out) > 1 else lse

    def prune(self, max_leaves: int | None = None) -> "FilterBank":
        """Keep the most probable branches and renormalize.

        Ties are broken toward the lower mode index, then the earlier branch.
        """
        budget = self.max_leaves if max_leaves is None else max_leaves
        if budget is None or self.n_branches <= budget:
            return self
        by_mode = np.argsort(self.mode, kind="stable")
        order = by_mode[np.argsort(-self.log_w[by_mode], kind="stable")]
        keep = np.sort(order[:budget])
        for name in ("r", "v", "q", "xi", "P", "mode", "log_w", "_hist"):
            setattr(self, name, getattr(self, name)[keep])
        self.log_w = self.log_w - np.logaddexp.reduce(self.log_w)
        return self

    # -- summaries ------------------------------------------------------------

    def mode_posterior(self):
        return np.bincount(self.mode, weights=self.weights, minlength=self.model.n_modes)

    def fuse(self) -> FusedEstimate:
        """Minimum-variance mixture estimate with manifold-aware attitude fusion."""
        w = self.weights
        w = w / w.sum()
        r = w @ self.r
        v = w @ self.v
        height = self.model.has_height
        idx = np.r_[0:6, 9] if height else np.r_[0:6]
        mean_e = np.column_stack([self.r, self.v, self.xi]) if height else np.column_stack([self.r, self.v])
        mu = w @ mean_e
        dev = mean_e - mu
        Pe = self.P[:, idx[:, None], idx[None, :]]
        P_mv = np.einsum("i,ijk->jk", w, Pe) + (dev * w[:, None]).T @ dev
        P_mv = 0.5 * (P_mv + P_mv.T)

        Cs = np.array([rotmat_from_quat(q) for q in self.q])
        C_mv = polar_project(np.einsum("i,ijk->jk", w, Cs))
        euler = euler_from_rotmat(C_mv)
        euler_cov = np.zeros((3, 3))
        for wi, Ci, qi, Pi in zip(w, Cs, self.q, self.P):
            dphi = np.array(euler_from_rotmat(C_mv @ Ci.T, wrap=False))
            euler_cov += wi * (euler_covariance(qi, Pi[6:9, 6:9]) + np.outer(dphi, dphi))
        euler_cov = 0.5 * (euler_cov + euler_cov.T)

        post = self.mode_posterior()
        post = post / post.sum()
        xi = float(mu[-1]) if height else None
        x_mv = NavState(r, v, quat_from_rotmat(C_mv), xi)
        return FusedEstimate(x_mv, P_mv, euler, euler_cov, post, int(np.argmax(post)) + 1)


def init(model: MotionModel, prior: GaussianBelief, mode_prior=None, **kwargs) -> FilterBank:
    """Create a bank with one branch per mode of non-zero prior probability."""
    return FilterBank(model, prior, mode_prior, **kwargs)


def level_prior(
    samples,
    model: MotionModel,
    pos_std: float = 1e-3,
    vel_std: float = 1e-2,
    tilt_std: float = np.deg2rad(1.0),
    yaw_std: float = np.deg2rad(0.1),
) -> GaussianBelief:
    """Initial belief from accelerometer leveling over stationary samples.

    Roll and pitch come from the mean specific force, yaw is zero and the
    position is the origin. ``samples`` is a sequence of :class:`ImuSample`
    or an array with columns ``t, sx, sy, sz, wx, wy, wz``.
    """
    arr = np.array([np.r_[u.t, u.s, u.w] for u in samples]) if not isinstance(samples, np.ndarray) else samples
    if arr.shape[0] < 1:
        raise ConfigError("leveling needs at least one sample")
    s = arr[:, 1:4].mean(axis=0)
    if np.linalg.norm(s) < 1e-6:
        raise ConfigError("mean specific force vanishes; cannot level")
    roll = np.arctan2(s[1], s[2])
    pitch = np.arctan2(-s[0], np.hypot(s[1], s[2]))
    q = quat_from_euler((0.0, pitch, roll))
    xi = 0.0 if model.has_height else None
    mean = NavState(np.zeros(3), np.zeros(3), q, xi)
    diag = [pos_std**2] * 3 + [vel_std**2] * 3 + [tilt_std**2] * 2 + [yaw_std**2]
    if model.has_height:
        diag.append(pos_std**2)
    return GaussianBelief(mean, np.diag(diag))


@dataclass
class Trajectory:
    """Per-sample navigation output shared by the filter bank and the baseline.

    Row 0 is the prior; ``loglik`` holds the log predictive likelihood of
    each sample (0 for row 0).
    """

    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    euler: np.ndarray
    map_mode: np.ndarray
    mode_posterior: np.ndarray
    loglik: np.ndarray

    def __len__(self):
        return self.t.size


def _as_array(data):
    arr = np.ascontiguousarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 7 or arr.shape[0] < 1:
        raise ConfigError("IMU data must have columns t, sx, sy, sz, wx, wy, wz")
    if not np.all(np.isfinite(arr)):
        raise ConfigError("IMU data contains non-finite values")
    return arr


def run_filter_bank(
    data,
    model: MotionModel,
    prior: GaussianBelief | None = None,
    mode_prior=None,
    noise: NoiseConfig | None = None,
    max_leaves: int | None = 9,
    align: int = 20,
) -> Trajectory:
    """Run the bank over an IMU array and fuse after every sample.

    Parameters
    ----------
    data : ndarray, shape (n, 7)
        Columns ``t, sx, sy, sz, wx, wy, wz``. Row 0 is the sample of the prior.
    model : MotionModel
    prior : GaussianBelief, optional
        Defaults to :func:`level_prior` over the first ``align`` samples.
    mode_prior, noise, max_leaves
        Passed to :class:`FilterBank`.

    Returns
    -------
    Trajectory
    """
    arr = _as_array(data)
    n = arr.shape[0]
    if prior is None:
        prior = level_prior(arr[: max(1, min(align, n))], model)
    bank = FilterBank(model, prior, mode_prior, noise=noise, max_leaves=max_leaves, t0=arr[0, 0])
    L = model.n_modes
    r = np.empty((n, 3))
    v = np.empty((n, 3))
    euler = np.empty((n, 3))
    post = np.empty((n, L))
    map_mode = np.empty(n, dtype=np.int64)
    loglik = np.zeros(n)
    for k in range(n):
        if k > 0:
            loglik[k] = bank.step(ImuSample(arr[k, 0], arr[k, 1:4], arr[k, 4:7]))
        est = bank.fuse()
        r[k] = est.x_mv.r
        v[k] = est.x_mv.v
        euler[k] = est.euler
        post[k] = est.mode_posterior
        map_mode[k] = est.map_mode
    return Trajectory(arr[:, 0].copy(), r, v, euler, map_mode, post, loglik)
