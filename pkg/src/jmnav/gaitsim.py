"""Synthetic foot-mounted IMU data with ground truth.

A trajectory is a sequence of phases. Stance phases hold the foot still;
moving phases carry it from one rest point to the next with zero velocity
at both ends. IMU samples are obtained by inverting the discrete
mechanization, so integrating noise-free samples with
:func:`jmnav.strapdown.propagate` reproduces the truth.

Sample ``k`` (``k >= 1``) describes the interval ``(t[k-1], t[k]]``: its
specific force and angular rate carry the truth state from sample ``k-1``
to sample ``k``. Row 0 repeats the stationary reading of the first phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .models import TransitionMatrix
from .rotations import euler_from_quat, quat_conjugate, quat_from_euler, quat_multiply, rotmat_from_quat, rotvec_from_quat
from .strapdown import ImuSample, NavState, NoiseConfig

PHASE_KINDS = ("stance", "swing", "stair_up", "stair_down")


@dataclass
class Phase:
    """One gait phase.

    ``height`` is the foot clearance for a swing and the stair rise for
    ``stair_up``/``stair_down``. ``turn`` is a heading change spread
    linearly over the phase.
    ``segment`` is a free-form tag copied to the truth, e.g. ``"walk"``.
    """

    duration: float
    kind: str = "stance"
    stride: float = 0.0
    height: float = 0.0
    pitch: float = 0.5
    segment: str = ""
    turn: float = 0.0


@dataclass
class GaitProfile:
    """Phase list plus sampling, noise and labeling settings.

    ``labels`` picks how truth modes are derived from phases:
    ``"varying-gait"`` (stance 3, moving 1) or ``"same-height"``
    (stance at the previous height 3, first sample at a new height 2,
    following samples 3, moving 1).
    """

    phases: list
    sample_rate: float = 100.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    cadence: float | None = None
    labels: str = "varying-gait"
    heading: float = 0.0


@dataclass
class Truth:
    """Per-sample ground truth."""

    t: np.ndarray
    r: np.ndarray
    v: np.ndarray
    q: np.ndarray
    mode: np.ndarray
    stance: np.ndarray
    segment: np.ndarray

    def __len__(self):
        return self.t.size

    @property
    def euler(self):
        return np.array([euler_from_quat(q) for q in self.q])

    def state(self, k: int) -> NavState:
        return NavState(self.r[k], self.v[k], self.q[k])


def _check(profile: GaitProfile):
    if profile.sample_rate < 20.0:
        raise ConfigError("sample rate must be at least 20 Hz")
    if not profile.phases:
        raise ConfigError("profile has no phases")
    if profile.labels not in ("varying-gait", "same-height"):
        raise ConfigError(f"unknown label scheme {profile.labels!r}")
    for ph in profile.phases:
        if ph.kind not in PHASE_KINDS:
            raise ConfigError(f"unknown phase kind {ph.kind!r}")
        if not ph.duration > 0.0:
            raise ConfigError("phase durations must be positive")


def _quintic(tau):
    return tau**3 * (10 - 15 * tau + 6 * tau**2), 30 * tau**2 * (1 - tau) ** 2


def _bump(tau):
    # peak 1 at tau = 1/2, zero value/slope/curvature at both ends
    return 64 * tau**3 * (1 - tau) ** 3, 192 * tau**2 * (1 - tau) ** 2 * (1 - 2 * tau)


_PITCH_NORM = 1.0 / np.max(
    (lambda x: x**3 * (1 - x) ** 3 * (1 - 2 * x))(np.linspace(0, 1, 20001))
)


def _pitch_smooth(tau):
    # toe-down then toe-up, zero rate at both ends
    return _PITCH_NORM * tau**3 * (1 - tau) ** 3 * (1 - 2 * tau)


def _phase_motion(ph: Phase, tau, T, direction):
    """Displacement, velocity and pitch of a moving phase at normalized times ``tau``."""
    rise = {"stair_up": ph.height, "stair_down": -ph.height}.get(ph.kind, 0.0)
    clearance = ph.height if ph.kind == "swing" else 0.05 + max(rise, 0.0) * 0.3
    s, ds = _quintic(tau)
    b, db = _bump(tau)
    pitch = ph.pitch * _pitch_smooth(tau)
    disp = np.outer(s, ph.stride * direction)
    disp[:, 2] += rise * s + clearance * b
    vel = np.outer(ds, ph.stride * direction) / T
    vel[:, 2] += (rise * ds + clearance * db) / T
    return disp, vel, pitch, rise


def _trajectory(profile: GaitProfile):
    fs = profile.sample_rate
    dt = 1.0 / fs
    # phase boundaries snapped to the sample grid, so no sample interval straddles two phases
    ticks = np.round(np.concatenate([[0.0], np.cumsum([ph.duration for ph in profile.phases])]) * fs).astype(int)
    if np.any(np.diff(ticks) < 1):
        raise ConfigError("every phase must last at least one sample period")
    bounds = ticks * dt
    n = ticks[-1] + 1
    t = np.arange(n) * dt
    # phase index of each sample; a boundary sample belongs to the phase it ends
    idx = np.clip(np.searchsorted(ticks, np.arange(n), side="left") - 1, 0, len(profile.phases) - 1)
    r = np.zeros((n, 3))
    v = np.zeros((n, 3))
    pitch = np.zeros(n)
    yaw = np.full(n, float(profile.heading))
    rest = np.zeros(3)
    heading = float(profile.heading)
    for p, ph in enumerate(profile.phases):
        sel = idx == p
        T = bounds[p + 1] - bounds[p]
        tau = np.clip((t[sel] - bounds[p]) / T, 0.0, 1.0)
        yaw[sel] = heading + ph.turn * tau
        if ph.kind == "stance":
            r[sel] = rest
        else:
            direction = np.array([np.cos(heading), np.sin(heading), 0.0])
            disp, vel, pit, _ = _phase_motion(ph, tau, T, direction)
            r[sel] = rest + disp
            v[sel] = vel
            pitch[sel] = pit
            end, _, _, _ = _phase_motion(ph, np.array([1.0]), T, direction)
            rest = rest + end[0]
        heading += ph.turn
    v[np.abs(v) < 1e-15] = 0.0
    # positions follow the discrete recursion r_k = r_{k-1} + dt v_{k-1} used by the mechanization;
    # with velocity and acceleration zero at both ends of a phase this moves rest points by O(dt^3)
    r[1:] = r[0] + dt * np.cumsum(v[:-1], axis=0)
    q = np.array([quat_from_euler((y_, p_, 0.0)) for y_, p_ in zip(yaw, pitch)])
    return t, r, v, q, idx


def _labels(profile: GaitProfile, idx, r):
    phases = profile.phases
    kinds = np.array([phases[i].kind for i in idx])
    stance = kinds == "stance"
    mode = np.ones(idx.size, dtype=np.int64)
    if profile.labels == "varying-gait":
        mode[stance] = 3
        return mode, stance
    last_height = None
    prev_phase = -1
    for k in range(idx.size):
        if not stance[k]:
            continue
        if idx[k] != prev_phase:
            new = last_height is not None and abs(r[k, 2] - last_height) > 1e-6
            mode[k] = 2 if new else 3
            prev_phase = idx[k]
        else:
            mode[k] = 3
        last_height = r[k, 2]
    return mode, stance


def _imu_from_truth(t, v, q, noise: NoiseConfig, seed):
    """Invert the discrete mechanization and add seeded white noise."""
    n = t.size
    g = noise.g
    s = np.empty((n, 3))
    w = np.empty((n, 3))
    s[0] = rotmat_from_quat(q[0]).T @ (-g)
    w[0] = 0.0
    for k in range(1, n):
        dt = t[k] - t[k - 1]
        C = rotmat_from_quat(q[k - 1])
        s[k] = C.T @ ((v[k] - v[k - 1]) / dt - g)
        w[k] = rotvec_from_quat(quat_multiply(quat_conjugate(q[k - 1]), q[k])) / dt
    rng = np.random.default_rng(seed)
    s = s + noise.sigma_s * rng.standard_normal((n, 3))
    w = w + noise.sigma_w * rng.standard_normal((n, 3))
    return np.column_stack([t, s, w])


def simulate(profile: GaitProfile):
    """Generate IMU samples and ground truth for ``profile``.

    Returns
    -------
    samples : ndarray, shape (n, 7)
        Columns ``t, sx, sy, sz, wx, wy, wz``.
    truth : Truth
    """
    _check(profile)
    t, r, v, q, idx = _trajectory(profile)
    samples = _imu_from_truth(t, v, q, profile.noise, profile.seed)
    mode, stance = _labels(profile, idx, r)
    segment = np.array([profile.phases[i].segment for i in idx], dtype=object)
    return samples, Truth(t, r, v, q, mode, stance, segment)


def to_imu_samples(samples) -> list[ImuSample]:
    return [ImuSample(row[0], row[1:4], row[4:7]) for row in np.asarray(samples)]


def sample_mode_sequence(pi, n: int, seed=0, start: int | None = None):
    """Draw ``n`` modes (1-based) from the Markov chain with column-stochastic ``pi``.

    The first mode is ``start`` or, by default, drawn from the stationary
    distribution.
    """
    P = pi.values if isinstance(pi, TransitionMatrix) else np.asarray(pi, dtype=float)
    L = P.shape[0]
    rng = np.random.default_rng(seed)
    if start is None:
        stat = TransitionMatrix(P, P > 0).stationary_distribution() if L > 1 else np.ones(1)
        current = int(rng.choice(L, p=np.clip(stat, 0, None) / np.clip(stat, 0, None).sum()))
    else:
        current = start - 1
    cum = np.cumsum(P, axis=0)
    u = rng.random(n)
    out = np.empty(n, dtype=np.int64)
    for k in range(n):
        out[k] = current + 1
        current = min(int(np.searchsorted(cum[:, current], u[k], side="right")), L - 1)
    return out


# -- profile builders ----------------------------------------------------------


def walk_phases(duration, cadence=1.0, stride=1.4, clearance=0.12, stance_fraction=0.4, pitch=0.5, segment="walk"):
    """Alternating stance/swing for ``duration`` seconds, starting and ending in stance.

    The last stance absorbs whatever is left after the final whole stride.
    """
    period = 1.0 / cadence
    t_st = stance_fraction * period
    t_sw = period - t_st
    phases = [Phase(t_st, "stance", segment=segment)]
    elapsed = t_st
    while elapsed + t_sw + t_st <= duration + 1e-9:
        phases.append(Phase(t_sw, "swing", stride, clearance, pitch, segment=segment))
        phases.append(Phase(t_st, "stance", segment=segment))
        elapsed += t_sw + t_st
    if duration > elapsed:
        phases[-1] = Phase(t_st + duration - elapsed, "stance", segment=segment)
    return phases


def run_phases(duration, cadence=1.4, stride=2.6, clearance=0.2, stance_fraction=0.25, pitch=0.8):
    return walk_phases(duration, cadence, stride, clearance, stance_fraction, pitch, segment="run")


def stair_phases(n_steps, up=True, rise=0.17, going=0.3, cadence=0.8, stance_fraction=0.45):
    period = 1.0 / cadence
    t_st = stance_fraction * period
    kind = "stair_up" if up else "stair_down"
    phases = []
    for _ in range(n_steps):
        phases.append(Phase(period - t_st, kind, going, rise, 0.3, segment="stairs"))
        phases.append(Phase(t_st, "stance", segment="stairs"))
    return phases


def preset_profile(name: str, duration: float = 60.0, seed: int = 0, noise: NoiseConfig | None = None) -> GaitProfile:
    """Named scenarios: ``stationary``, ``walk``, ``run``, ``walk-run``, ``stairs``."""
    noise = noise or NoiseConfig()
    if name == "stationary":
        return GaitProfile([Phase(duration, "stance", segment="stationary")], noise=noise, seed=seed)
    if name == "walk":
        return GaitProfile(walk_phases(duration), noise=noise, seed=seed, cadence=1.0)
    if name == "run":
        return GaitProfile([Phase(1.0, "stance", segment="run")] + run_phases(duration - 1.0), noise=noise, seed=seed, cadence=1.4)
    if name == "walk-run":
        half = duration / 2
        phases = walk_phases(half) + run_phases(half)
        return GaitProfile(phases, noise=noise, seed=seed)
    if name == "stairs":
        # flat, up a flight, flat, rest of the time on flat ground
        stairs = stair_phases(10)
        flat = max(duration - sum(p.duration for p in stairs), 10.0) / 2
        phases = walk_phases(flat, segment="flat") + stairs + walk_phases(flat, segment="flat")
        return GaitProfile(phases, noise=noise, seed=seed, labels="same-height")
    raise ConfigError(f"unknown profile {name!r}")


def simulate_markov(
    pi,
    n: int,
    seed: int = 0,
    sample_rate: float = 100.0,
    noise: NoiseConfig | None = None,
    speed: float = 1.5,
    swing_rate: float = 4.0,
    shuffle_speed: float = 0.05,
    shuffle_rate: float = 0.5,
    start: int = 3,
):
    """Samples and truth whose varying-gait modes follow a sampled chain.

    The mode chain is drawn with :func:`sample_mode_sequence`. Every run of
    equal modes starts and ends at rest, and each sample carries evidence of
    its own mode: mode 1 moves at ``speed`` while turning at
    ``swing_rate``, mode 2 creeps at ``shuffle_speed`` while turning at
    ``shuffle_rate``, and mode 3 holds still. Velocity steps happen inside
    the moving samples, so stationary samples are exactly stationary.

    Parameters
    ----------
    pi : TransitionMatrix or array-like
        Column-stochastic 3-mode transition matrix.
    n : int
        Number of samples, including the initial one.
    seed : int
        Seeds both the mode chain and the IMU noise.

    Returns
    -------
    samples : ndarray, shape (n, 7)
    truth : Truth
    """
    if sample_rate < 20.0:
        raise ConfigError("sample rate must be at least 20 Hz")
    if n < 2:
        raise ConfigError("need at least two samples")
    noise = noise or NoiseConfig()
    modes = sample_mode_sequence(pi, n, seed=[seed, 0], start=start)
    dt = 1.0 / sample_rate
    t = np.arange(n) * dt
    r = np.zeros((n, 3))
    v = np.zeros((n, 3))
    yaw = np.zeros(n)
    rng = np.random.default_rng([seed, 1])
    # sample k >= 1 covers (t[k-1], t[k]]; runs are taken over modes[1:]
    change = np.flatnonzero(np.diff(modes[1:])) + 2
    starts = np.concatenate([[1], change])
    ends = np.concatenate([change, [n]])
    for a, b in zip(starts, ends):
        m = modes[a]
        length = b - a
        sign = rng.choice([-1.0, 1.0])
        for i, k in enumerate(range(a, b)):
            if m == 3:
                rate, vel = 0.0, 0.0
            elif m == 1:
                # turn one way for the first half and back for the second
                rate = sign * swing_rate * (1.0 if i < length / 2 else -1.0)
                vel = speed
            else:
                rate, vel = sign * shuffle_rate, shuffle_speed
            yaw[k] = yaw[k - 1] + rate * dt
            r[k] = r[k - 1] + dt * v[k - 1]
            if k < b - 1:
                v[k] = vel * np.array([np.cos(yaw[k]), np.sin(yaw[k]), 0.0])
    q = np.array([quat_from_euler((y_, 0.0, 0.0)) for y_ in yaw])
    samples = _imu_from_truth(t, v, q, noise, [seed, 2])
    segment = np.full(n, "markov", dtype=object)
    return samples, Truth(t, r, v, q, modes, modes == 3, segment)
