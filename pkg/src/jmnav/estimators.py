"""scikit-learn style wrappers around the filter bank and the baseline.

Inputs are IMU arrays with columns ``t, sx, sy, sz, wx, wy, wz`` (one
sequence), or lists of them for :meth:`FilterBankNavigator.fit`.
``predict`` returns the most probable mode per sample, ``predict_proba``
the mode posterior and ``transform`` the navigation solution as columns
``rx, ry, rz, vx, vy, vz, yaw, pitch, roll``.
"""

from __future__ import annotations

import hashlib

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .baseline import DetectorConfig, run_zupt_ins
from .exceptions import ConfigError
from .filterbank import Trajectory, run_filter_bank
from .learning import LearnConfig, learn_transition_matrix, log_marginal_likelihood
from .models import default_initial_transition, same_height_model, varying_gait_model
from .strapdown import NoiseConfig

N_COLUMNS = 7


def _check_sequence(X) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_min_samples=2)
    if X.shape[1] != N_COLUMNS:
        raise ConfigError(f"expected {N_COLUMNS} columns t, sx, sy, sz, wx, wy, wz; got {X.shape[1]}")
    if np.any(np.diff(X[:, 0]) <= 0):
        raise ConfigError("timestamps must be strictly increasing")
    return X


def _check_dataset(X) -> list:
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [_check_sequence(X)]
    seqs = [_check_sequence(x) for x in X]
    if not seqs:
        raise ConfigError("empty dataset")
    return seqs


def _navigation(traj: Trajectory) -> np.ndarray:
    return np.column_stack([traj.r, traj.v, traj.euler])


class _CachedRun:
    """Remembers the output of the most recent sequence, so that predict,
    predict_proba and transform on the same array share one filter pass."""

    def _run_cached(self, X):
        X = _check_sequence(X)
        key = hashlib.sha1(X.tobytes()).hexdigest() + str(X.shape)
        cache = getattr(self, "_last_run", None)
        if cache is None or cache[0] != key:
            cache = (key, self._run(X))
            self._last_run = cache
        return cache[1]

    def navigate(self, X) -> Trajectory:
        """Full per-sample output for one sequence."""
        check_is_fitted(self)
        return self._run_cached(X)

    def predict(self, X) -> np.ndarray:
        """Most probable mode (1-based) per sample."""
        return self.navigate(X).map_mode

    def predict_proba(self, X) -> np.ndarray:
        """Mode posterior per sample, shape ``(n, n_modes)``."""
        return self.navigate(X).mode_posterior

    def transform(self, X) -> np.ndarray:
        """Navigation solution per sample, shape ``(n, 9)``."""
        return _navigation(self.navigate(X))


class FilterBankNavigator(_CachedRun, BaseEstimator):
    """Jump Markov navigation filter with an optionally learned transition matrix.

    Parameters
    ----------
    model : {"varying-gait", "same-height"}
    transition : array-like of shape (3, 3), optional
        Transition matrix used when ``learn`` is off and as the mask
        reference; the model default otherwise.
    learn : bool
        Fit the transition matrix by maximum likelihood in :meth:`fit`.
    pi_init : array-like of shape (3, 3), optional
        Starting point of learning; a uniform matrix over the admissible
        entries by default.
    max_leaves : int or None
        Leaf budget of the hypothesis tree.
    align : int
        Leading samples used for accelerometer leveling.
    mode2, mode3 : dict, optional
        Constraint standard deviations ``sigma_v, sigma_w, sigma_s`` of the
        two stationary-type modes.
    sigma_nc, sigma_h : float
        Flat-likelihood and same-height standard deviations.
    sigma_s, sigma_w : float
        IMU noise standard deviations per sample.
    mode_prior : array-like, optional
        Initial mode probabilities; uniform by default.
    max_iter, tol_loglik, method
        Passed to :class:`LearnConfig`.

    Attributes
    ----------
    model_ : MotionModel
        Model with the fitted transition matrix.
    transition_ : ndarray of shape (3, 3)
    learn_report_ : LearnReport or None
    n_modes_ : int
    """

    def __init__(
        self,
        model="varying-gait",
        transition=None,
        learn=True,
        pi_init=None,
        max_leaves=9,
        align=20,
        mode2=None,
        mode3=None,
        sigma_nc=1.0,
        sigma_h=0.01,
        sigma_s=0.02,
        sigma_w=0.002,
        mode_prior=None,
        max_iter=50,
        tol_loglik=1e-4,
        method="scoring",
    ):
        self.model = model
        self.transition = transition
        self.learn = learn
        self.pi_init = pi_init
        self.max_leaves = max_leaves
        self.align = align
        self.mode2 = mode2
        self.mode3 = mode3
        self.sigma_nc = sigma_nc
        self.sigma_h = sigma_h
        self.sigma_s = sigma_s
        self.sigma_w = sigma_w
        self.mode_prior = mode_prior
        self.max_iter = max_iter
        self.tol_loglik = tol_loglik
        self.method = method

    def _build_model(self, transition=None):
        values = self.transition if transition is None else transition
        if self.model == "varying-gait":
            return varying_gait_model(values, self.mode2, self.mode3, self.sigma_nc)
        if self.model == "same-height":
            return same_height_model(values, self.mode2, self.mode3, self.sigma_h, self.sigma_nc)
        raise ConfigError(f"unknown model {self.model!r}")

    def _noise(self):
        return NoiseConfig(sigma_s=self.sigma_s, sigma_w=self.sigma_w)

    def fit(self, X, y=None):
        """Learn the transition matrix from one sequence or a list of sequences.

        ``y`` is ignored; learning is unsupervised.
        """
        seqs = _check_dataset(X)
        model = self._build_model()
        self.learn_report_ = None
        if self.learn:
            cfg = LearnConfig(
                seqs,
                max_iter=self.max_iter,
                tol_loglik=self.tol_loglik,
                max_leaves=self.max_leaves,
                noise=self._noise(),
                align=self.align,
                method=self.method,
            )
            pi0 = default_initial_transition(model) if self.pi_init is None else np.asarray(self.pi_init, dtype=float)
            report = learn_transition_matrix(cfg, model, pi0)
            model = model.with_transition(report.pi.values)
            self.learn_report_ = report
        self.model_ = model
        self.transition_ = model.transition.values.copy()
        self.n_modes_ = model.n_modes
        self._last_run = None
        return self

    def _run(self, X):
        return run_filter_bank(
            X, self.model_, mode_prior=self.mode_prior, noise=self._noise(), max_leaves=self.max_leaves, align=self.align
        )

    def score(self, X, y=None) -> float:
        """Log marginal likelihood of one sequence or a list of sequences."""
        check_is_fitted(self)
        seqs = _check_dataset(X)
        return log_marginal_likelihood(seqs, self.model_, noise=self._noise(), max_leaves=self.max_leaves, align=self.align)


class ZuptNavigator(_CachedRun, BaseEstimator):
    """Fixed-threshold stance detector driving zero-velocity updates.

    Modes in the output are 1 (free) and 2 (zero-velocity update applied).

    Parameters
    ----------
    gamma : float
        Detector threshold; stance when the statistic is below it.
    window : int
        Detector window in samples.
    sigma_a, sigma_g : float
        Noise levels used by the detector statistic.
    sigma_v : float
        Standard deviation of the zero-velocity pseudo-measurement [m/s].
    sigma_s, sigma_w : float
        IMU noise standard deviations used by the filter.
    align : int
        Leading samples used for accelerometer leveling.
    """

    def __init__(self, gamma=3e4, window=5, sigma_a=0.02, sigma_g=0.002, sigma_v=0.01, sigma_s=0.02, sigma_w=0.002, align=20):
        self.gamma = gamma
        self.window = window
        self.sigma_a = sigma_a
        self.sigma_g = sigma_g
        self.sigma_v = sigma_v
        self.sigma_s = sigma_s
        self.sigma_w = sigma_w
        self.align = align

    def fit(self, X=None, y=None):
        """Validate the settings; the baseline has nothing to learn."""
        if not self.sigma_v > 0:
            raise ConfigError("sigma_v must be positive")
        self.detector_ = DetectorConfig(self.window, self.gamma, self.sigma_a, self.sigma_g)
        self.n_modes_ = 2
        self._last_run = None
        return self

    def _run(self, X):
        noise = NoiseConfig(sigma_s=self.sigma_s, sigma_w=self.sigma_w)
        return run_zupt_ins(X, self.detector_, noise, self.sigma_v, align=self.align)
