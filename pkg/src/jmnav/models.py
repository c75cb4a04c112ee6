"""Motion-mode models: constraint functions, covariances and transition structure.

Modes are numbered from 1 in the public API, matching the usual way the
models are described; arrays are indexed from 0 internally.

Varying gait speed (``varying_gait_model``)
    1 unconstrained, 2 almost stationary, 3 stationary.
Return to same height (``same_height_model``)
    1 unconstrained, 2 stationary at a new height, 3 stationary at the same
    height as the last stationary period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .eskf import Constraint
from .exceptions import ConfigError
from .rotations import rotmat_from_quat, skew
from .strapdown import ATT, AUX, VEL, GRAVITY, ImuSample, NavState

# constraint kinds understood by the compiled bank kernels
KIND_NONE = 0
KIND_H0 = 1
KIND_H0_HEIGHT = 2

COLUMN_TOL = 1e-12

VARYING_GAIT_MASK = np.array(
    [
        [1, 1, 0],
        [1, 1, 1],
        [0, 1, 1],
    ],
    dtype=bool,
)
SAME_HEIGHT_MASK = np.array(
    [
        [1, 0, 1],
        [1, 0, 0],
        [1, 1, 1],
    ],
    dtype=bool,
)
# entries fixed at exactly one (2 -> 3 in the same-height model)
SAME_HEIGHT_PINNED = np.array(
    [
        [0, 0, 0],
        [0, 0, 0],
        [0, 1, 0],
    ],
    dtype=bool,
)

VARYING_GAIT_PI_INIT = np.array(
    [
        [1 / 2, 1 / 3, 0.0],
        [1 / 2, 1 / 3, 1 / 2],
        [0.0, 1 / 3, 1 / 2],
    ]
)
VARYING_GAIT_PI_LEARNED = np.array(
    [
        [0.993, 0.073, 0.0],
        [0.007, 0.893, 0.005],
        [0.0, 0.034, 0.995],
    ]
)
SAME_HEIGHT_PI_INIT = np.array(
    [
        [1 / 3, 0.0, 1 / 2],
        [1 / 3, 0.0, 0.0],
        [1 / 3, 1.0, 1 / 2],
    ]
)
SAME_HEIGHT_PI_LEARNED = np.array(
    [
        [0.976, 0.0, 0.031],
        [0.003, 0.0, 0.0],
        [0.021, 1.0, 0.969],
    ]
)


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic mode transition matrix.

    ``values[i, j]`` is the probability of moving to mode ``i + 1`` from mode
    ``j + 1``. ``mask`` marks the admissible transitions; everything outside
    it is exactly zero. ``pinned`` entries are fixed at exactly one.
    """

    values: np.ndarray
    mask: np.ndarray
    pinned: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        pinned = np.zeros_like(mask) if self.pinned is None else np.array(self.pinned, dtype=bool)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "pinned", pinned)
        check_transition(values, mask, pinned)

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]

    def log(self):
        with np.errstate(divide="ignore"):
            return np.where(self.values > 0.0, np.log(np.where(self.values > 0, self.values, 1.0)), -np.inf)

    def with_values(self, values) -> "TransitionMatrix":
        return TransitionMatrix(values, self.mask, self.pinned)

    def stationary_distribution(self):
        """Long-run mode occupancy of the chain."""
        w, V = np.linalg.eig(self.values)
        k = int(np.argmin(np.abs(w - 1.0)))
        p = np.real(V[:, k])
        return p / p.sum()


def check_transition(values, mask, pinned=None):
    """Validate a transition matrix against its structure; raise ConfigError."""
    values = np.asarray(values, dtype=float)
    L = values.shape[0]
    if values.shape != (L, L) or mask.shape != (L, L):
        raise ConfigError("transition matrix must be square and match its mask")
    if not np.all(np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
        raise ConfigError("transition probabilities must lie in [0, 1]")
    if np.any(values[~mask] != 0.0):
        raise ConfigError("transition matrix has non-zero entries outside the structure mask")
    if pinned is not None and np.any(values[pinned] != 1.0):
        raise ConfigError("pinned transition entries must be exactly 1")
    sums = values.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > COLUMN_TOL):
        raise ConfigError(f"transition matrix columns must sum to 1, got {sums}")


@dataclass(frozen=True)
class ModeNoise:
    """Standard deviations of the stationarity constraints for one mode."""

    sigma_v: float
    sigma_w: float
    sigma_s: float
    sigma_h: float | None = None

    def check(self, label):
        vals = [self.sigma_v, self.sigma_w, self.sigma_s] + ([] if self.sigma_h is None else [self.sigma_h])
        if not all(np.isfinite(vals)) or min(vals) <= 0.0:
            raise ConfigError(f"{label}: constraint standard deviations must be positive")


STATIONARY_NOISE = ModeNoise(sigma_v=0.01, sigma_w=0.05, sigma_s=0.3)
ALMOST_STATIONARY_NOISE = ModeNoise(sigma_v=0.1, sigma_w=0.5, sigma_s=3.0)


@dataclass(frozen=True)
class MotionModel:
    """A jump Markov motion model over ``n_modes`` modes.

    Use :func:`varying_gait_model` or :func:`same_height_model` to build one.
    """

    name: str
    transition: TransitionMatrix
    kinds: tuple  # constraint kind per mode
    mode_noise: tuple  # ModeNoise or None per mode
    sigma_nc: float = 1.0
    error_dim: int = 9
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    @property
    def n_modes(self) -> int:
        return len(self.kinds)

    @property
    def has_height(self) -> bool:
        return self.error_dim == 10

    def assigns_height(self, mode: int) -> bool:
        """Whether leaving ``mode`` stores the current height (``xi' = r_z``)."""
        return self.has_height and mode != 1

    def R(self, mode: int):
        """Constraint covariance of ``mode`` (1-based)."""
        return np.diag(self.r_diagonal(mode))

    def r_diagonal(self, mode: int):
        kind = self.kinds[mode - 1]
        if kind == KIND_NONE:
            return np.full(9, self.sigma_nc**2)
        n = self.mode_noise[mode - 1]
        diag = np.concatenate([np.full(3, n.sigma_v**2), np.full(3, n.sigma_w**2), np.full(3, n.sigma_s**2)])
        if kind == KIND_H0_HEIGHT:
            diag = np.append(diag, n.sigma_h**2)
        return diag

    def constraint(self, mode: int, x: NavState, u: ImuSample) -> Constraint:
        """Pseudo-measurement for ``mode`` at state ``x`` with input ``u``."""
        kind = self.kinds[mode - 1]
        d = self.error_dim
        if kind == KIND_NONE:
            return Constraint(np.zeros(9), np.zeros((9, d)), self.R(mode))
        z, H = h0(x, u, self.gravity, d)
        if kind == KIND_H0_HEIGHT:
            row = np.zeros((1, d))
            row[0, 2] = 1.0
            row[0, AUX] = -1.0
            z = np.append(z, height_innovation(x))
            H = np.vstack([H, row])
        return Constraint(z, H, self.R(mode))

    def with_transition(self, values) -> "MotionModel":
        return MotionModel(
            self.name,
            self.transition.with_values(values),
            self.kinds,
            self.mode_noise,
            self.sigma_nc,
            self.error_dim,
            self.gravity,
        )

    def kernel_arrays(self):
        """Constraint kinds and covariance diagonals laid out for the bank kernels."""
        L = self.n_modes
        kinds = np.array(self.kinds, dtype=np.int64)
        rdiag = np.zeros((L, 10))
        for m in range(1, L + 1):
            diag = self.r_diagonal(m)
            rdiag[m - 1, : diag.size] = diag
        return kinds, rdiag


def h0(x: NavState, u: ImuSample, g=GRAVITY, error_dim: int = 9):
    """Stationarity constraint ``[v; w; C(q) s + g]``.

    Returns the innovation ``z = 0 - h0`` and the Jacobian with respect to
    the error state. The angular-rate rows have zero Jacobian.
    """
    C = rotmat_from_quat(x.q)
    f_nav = C @ u.s
    z = -np.concatenate([x.v, u.w, f_nav + np.asarray(g, dtype=float)])
    H = np.zeros((9, error_dim))
    H[0:3, VEL] = np.eye(3)
    H[6:9, ATT] = -skew(f_nav)
    return z, H


def height_innovation(x: NavState) -> float:
    """Innovation of the same-height row, ``0 - (r_z - xi)``."""
    return float(x.xi - x.r[2])


def _mode_noise(value, default):
    if value is None:
        return default
    if isinstance(value, ModeNoise):
        return value
    return ModeNoise(**value)


def varying_gait_model(
    transition=None,
    almost_stationary: ModeNoise | dict | None = None,
    stationary: ModeNoise | dict | None = None,
    sigma_nc: float = 1.0,
    gravity=GRAVITY,
) -> MotionModel:
    """Three-mode model that adapts the stationarity constraints to gait speed.

    Parameters
    ----------
    transition : array-like, optional
        3x3 column-stochastic matrix; defaults to a learned low-pass matrix.
    almost_stationary, stationary : ModeNoise or dict, optional
        Constraint standard deviations for modes 2 and 3. Mode 2 must be
        strictly looser than mode 3 in every component.
    sigma_nc : float
        Standard deviation of the flat likelihood of the unconstrained mode.
    """
    n2 = _mode_noise(almost_stationary, ALMOST_STATIONARY_NOISE)
    n3 = _mode_noise(stationary, STATIONARY_NOISE)
    n2.check("almost stationary mode")
    n3.check("stationary mode")
    if not (n2.sigma_v > n3.sigma_v and n2.sigma_w > n3.sigma_w and n2.sigma_s > n3.sigma_s):
        raise ConfigError("almost-stationary constraints must be looser than stationary ones")
    if not sigma_nc > 0:
        raise ConfigError("sigma_nc must be positive")
    values = VARYING_GAIT_PI_LEARNED if transition is None else transition
    return MotionModel(
        "varying-gait",
        TransitionMatrix(values, VARYING_GAIT_MASK),
        (KIND_NONE, KIND_H0, KIND_H0),
        (None, n2, n3),
        float(sigma_nc),
        9,
        np.asarray(gravity, dtype=float),
    )


def same_height_model(
    transition=None,
    new_height: ModeNoise | dict | None = None,
    same_height: ModeNoise | dict | None = None,
    sigma_h: float = 0.01,
    sigma_nc: float = 1.0,
    gravity=GRAVITY,
) -> MotionModel:
    """Three-mode model that locks the height when the foot returns to it.

    Mode 3 appends the row ``r_z - xi`` to the stationarity constraint, where
    ``xi`` holds the height of the previous stationary sample.
    """
    n2 = _mode_noise(new_height, STATIONARY_NOISE)
    n3 = _mode_noise(same_height, STATIONARY_NOISE)
    n2.check("new-height mode")
    if n3.sigma_h is None:
        n3 = ModeNoise(n3.sigma_v, n3.sigma_w, n3.sigma_s, sigma_h)
    n3.check("same-height mode")
    if not sigma_nc > 0:
        raise ConfigError("sigma_nc must be positive")
    values = SAME_HEIGHT_PI_LEARNED if transition is None else transition
    return MotionModel(
        "same-height",
        TransitionMatrix(values, SAME_HEIGHT_MASK, SAME_HEIGHT_PINNED),
        (KIND_NONE, KIND_H0, KIND_H0_HEIGHT),
        (None, n2, n3),
        float(sigma_nc),
        10,
        np.asarray(gravity, dtype=float),
    )


def single_mode_model(kind: str = "unconstrained", noise: ModeNoise | None = None, sigma_nc: float = 1.0, gravity=GRAVITY):
    """One-mode model, either always unconstrained or always stationary."""
    if kind == "unconstrained":
        kinds, noises = (KIND_NONE,), (None,)
    elif kind == "stationary":
        n = noise or STATIONARY_NOISE
        n.check("stationary mode")
        kinds, noises = (KIND_H0,), (n,)
    else:
        raise ConfigError(f"unknown single-mode kind {kind!r}")
    return MotionModel(
        f"single-{kind}",
        TransitionMatrix([[1.0]], [[True]]),
        kinds,
        noises,
        float(sigma_nc),
        9,
        np.asarray(gravity, dtype=float),
    )


def default_initial_transition(model: MotionModel):
    """Uninformative starting point for learning, respecting the mask."""
    if model.name == "varying-gait":
        return VARYING_GAIT_PI_INIT.copy()
    if model.name == "same-height":
        return SAME_HEIGHT_PI_INIT.copy()
    mask = model.transition.mask.astype(float)
    return mask / mask.sum(axis=0, keepdims=True)
