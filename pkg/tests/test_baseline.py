import numpy as np
import pytest

from jmnav.baseline import DetectorConfig, detect_stance, run_zupt_ins, shoe_statistic
from jmnav.exceptions import ConfigError, DegenerateWindow
from jmnav.filterbank import level_prior
from jmnav.models import single_mode_model
from jmnav.rotations import rotmat_from_quat
from jmnav.strapdown import ImuSample, NoiseConfig, propagate

from conftest import random_quat

CFG = DetectorConfig()


def ideal_window(n=5):
    return np.tile([0, 0, 9.81, 0, 0, 0], (n, 1)).astype(float)


def test_stationary_window_scores_zero():
    assert shoe_statistic(ideal_window(), CFG) == pytest.approx(0.0, abs=1e-20)


def test_rate_term():
    w = ideal_window()
    w[:, 3] = 1.0
    assert shoe_statistic(w, CFG) == pytest.approx(1.0 / CFG.sigma_g**2)


def test_rotation_invariance(rng):
    w = ideal_window() + 0.1 * rng.standard_normal((5, 6))
    C = rotmat_from_quat(random_quat(rng))
    rotated = np.column_stack([w[:, :3] @ C.T, w[:, 3:] @ C.T])
    assert shoe_statistic(rotated, CFG) == pytest.approx(shoe_statistic(w, CFG), rel=1e-10)


def test_accepts_samples_and_time_column():
    w = ideal_window()
    samples = [ImuSample(0.0, r[:3], r[3:]) for r in w]
    with_t = np.column_stack([np.arange(5), w])
    assert shoe_statistic(samples, CFG) == shoe_statistic(with_t, CFG) == shoe_statistic(w, CFG)


def test_degenerate_and_bad_windows():
    with pytest.raises(DegenerateWindow):
        shoe_statistic(np.zeros((5, 6)), CFG)
    with pytest.raises(ConfigError):
        shoe_statistic(ideal_window(4), CFG)
    for kwargs in ({"window": 0}, {"gamma": -1.0}, {"sigma_a": 0.0}):
        with pytest.raises(ConfigError):
            DetectorConfig(**kwargs)


def test_detector_is_deterministic(walk_data):
    a, Ta = detect_stance(walk_data[0], CFG)
    b, Tb = detect_stance(walk_data[0].copy(), CFG)
    assert np.array_equal(a, b) and np.array_equal(Ta, Tb)


def test_detector_finds_stances(walk_data):
    data, truth = walk_data
    stance, _ = detect_stance(data, CFG)
    hit = (stance & truth.stance).sum() / truth.stance.sum()
    false = (stance & ~truth.stance).sum() / (~truth.stance).sum()
    assert hit > 0.8 and false < 0.01


def test_all_stance_drift_small(stationary_data):
    traj = run_zupt_ins(stationary_data[0], CFG)
    assert np.linalg.norm(traj.r[-1]) < 0.05
    assert traj.map_mode.min() == 2


def test_gamma_zero_is_dead_reckoning(walk_data):
    data = walk_data[0][:300]
    traj = run_zupt_ins(data, DetectorConfig(gamma=0.0))
    prior = level_prior(data[:20], single_mode_model())
    x, cfg = prior.mean, NoiseConfig()
    for k in range(1, len(data)):
        x = propagate(x, ImuSample(data[k, 0], data[k, 1:4], data[k, 4:7]), cfg, data[k, 0] - data[k - 1, 0])
    assert np.allclose(traj.r[-1], x.r, atol=1e-12)
    assert np.all(traj.map_mode == 1) and not traj.loglik.any()


def test_gamma_inf_updates_every_sample(walk_data):
    traj = run_zupt_ins(walk_data[0][:200], DetectorConfig(gamma=np.inf))
    assert np.all(traj.map_mode == 2)
    assert np.all(traj.loglik[1:] != 0.0)


def test_high_threshold_shortens_track():
    from jmnav.gaitsim import preset_profile, simulate

    data, truth = simulate(preset_profile("walk", 60.0, seed=1))
    tuned = run_zupt_ins(data, DetectorConfig(gamma=3e4))
    loose = run_zupt_ins(data, DetectorConfig(gamma=3e5))
    along = lambda traj: traj.r[-1, 0] - truth.r[-1, 0]  # noqa: E731
    assert along(loose) < 0.0
    assert along(loose) < along(tuned)


def test_sigma_v_validation(walk_data):
    with pytest.raises(ConfigError):
        run_zupt_ins(walk_data[0][:50], CFG, sigma_v=0.0)
