import numpy as np
import pytest

from jmnav.exceptions import ConfigError
from jmnav.rotations import euler_from_quat, rotmat_from_quat
from jmnav.strapdown import ATT, POS, VEL, ImuSample, NavState, NoiseConfig, error_transition, propagate, sample_interval

from conftest import fd_jacobian, random_sample, random_state

LEVEL = np.array([1.0, 0, 0, 0])


def test_stationary_level_force_balance():
    cfg = NoiseConfig()
    x = NavState([1, 2, 3], [0.5, 0, 0], LEVEL)
    y = propagate(x, ImuSample(0, [0, 0, 9.81], [0, 0, 0]), cfg)
    assert np.allclose(y.v, x.v, atol=1e-15)
    assert np.allclose(y.r, x.r + cfg.dt * x.v)


def test_free_fall():
    cfg = NoiseConfig()
    y = propagate(NavState(np.zeros(3), np.zeros(3), LEVEL), ImuSample(0, np.zeros(3), np.zeros(3)), cfg)
    assert np.allclose(y.v, cfg.dt * cfg.g)


def test_constant_yaw_rate_integrates_exactly():
    cfg = NoiseConfig()
    x = NavState(np.zeros(3), np.zeros(3), LEVEL)
    u = ImuSample(0, [0, 0, 9.81], [0, 0, 0.1])
    for _ in range(100):
        x = propagate(x, u, cfg)
    assert abs(euler_from_quat(x.q).yaw - 0.1) < 1e-9


def test_xi_passes_through():
    x = NavState(np.zeros(3), np.ones(3), LEVEL, xi=0.7)
    assert propagate(x, ImuSample(0, [0, 0, 9.81], np.zeros(3)), NoiseConfig()).xi == 0.7


def test_position_velocity_block_exact(rng):
    x, u = random_state(rng), random_sample(rng)
    F, _ = error_transition(x, u, NoiseConfig(), 0.01)
    assert np.array_equal(F[POS, VEL], 0.01 * np.eye(3))


@pytest.mark.parametrize("height", [False, True])
def test_F_matches_finite_differences(rng, height):
    cfg = NoiseConfig()
    for _ in range(20):
        x, u = random_state(rng, height), random_sample(rng)
        F, _ = error_transition(x, u, cfg, 0.01)
        J = fd_jacobian(lambda s: propagate(s, u, cfg, 0.01), x, x.error_dim)
        assert np.linalg.norm(J - F) / np.linalg.norm(F) < 1e-5


def test_height_assignment_row(rng):
    x = random_state(rng, height=True)
    F, _ = error_transition(x, random_sample(rng), NoiseConfig(), 0.01, assign_height=True)
    row = np.zeros(10)
    row[2] = 1.0
    assert np.array_equal(F[9], row)


def test_Q_zero_without_noise(rng):
    _, Q = error_transition(random_state(rng), random_sample(rng), NoiseConfig(sigma_s=0, sigma_w=0))
    assert not Q.any()


def test_Q_symmetric_psd(rng):
    _, Q = error_transition(random_state(rng), random_sample(rng), NoiseConfig())
    assert np.allclose(Q, Q.T)
    assert np.linalg.eigvalsh(Q).min() >= -1e-18
    assert np.allclose(np.diag(Q)[ATT], (0.01 * 0.002) ** 2)


def test_forward_backward_without_rotation(rng):
    cfg = NoiseConfig()
    x0 = NavState(rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(4))
    us = [ImuSample(0, rng.standard_normal(3), np.zeros(3)) for _ in range(200)]
    x = x0
    for u in us:
        x = propagate(x, u, cfg)
    # exact inverse of one step when the attitude is constant
    C = rotmat_from_quat(x.q)
    r, v = x.r, x.v
    for u in reversed(us):
        v = v - cfg.dt * (C @ u.s + cfg.g)
        r = r - cfg.dt * v
    assert np.allclose(r, x0.r, atol=1e-9)
    assert np.allclose(v, x0.v, atol=1e-9)
    assert np.allclose(x.q, x0.q, atol=1e-15)


def test_sample_interval_guards():
    cfg = NoiseConfig()
    assert sample_interval(None, 1.0, cfg) == cfg.dt
    assert sample_interval(1.0, 1.02, cfg) == pytest.approx(0.02)
    with pytest.raises(ConfigError):
        sample_interval(1.0, 1.0, cfg)
    with pytest.raises(ConfigError):
        sample_interval(1.0, 1.5, cfg)


def test_noise_config_validation():
    with pytest.raises(ConfigError):
        NoiseConfig(dt=0.0)
    with pytest.raises(ConfigError):
        NoiseConfig(sigma_s=-1.0)
