import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from jmnav.eskf import Constraint, GaussianBelief, update
from jmnav.filterbank import FilterBank
from jmnav.models import varying_gait_model
from jmnav.rotations import (
    euler_from_quat,
    polar_project,
    quat_from_euler,
    quat_increment,
    rotmat_from_quat,
)
from jmnav.strapdown import ImuSample, NavState

finite = st.floats(-10.0, 10.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
quat = st.tuples(finite, finite, finite, finite).filter(lambda q: np.linalg.norm(q) > 1e-3).map(
    lambda q: np.array(q) / np.linalg.norm(q)
)


@given(quat)
def test_rotation_is_orthonormal(q):
    C = rotmat_from_quat(q)
    assert np.allclose(C.T @ C, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(C), 1.0)


@given(quat, vec3)
def test_increment_keeps_unit_norm(q, w):
    assert abs(np.linalg.norm(quat_increment(q, w)) - 1.0) < 1e-12


@given(st.floats(0, 6.28), st.floats(-1.5, 1.5), st.floats(0, 6.28))
def test_euler_round_trip(yaw, pitch, roll):
    q = quat_from_euler((yaw, pitch, roll))
    back = quat_from_euler(euler_from_quat(q))
    assert np.allclose(rotmat_from_quat(back), rotmat_from_quat(q), atol=1e-10)


@given(st.lists(quat, min_size=2, max_size=5), st.data())
def test_polar_projection_is_rotation(qs, data):
    w = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=len(qs), max_size=len(qs))))
    w /= w.sum()
    M = sum(wi * rotmat_from_quat(q) for wi, q in zip(w, qs))
    if np.linalg.svd(M, compute_uv=False)[-1] < 1e-6:
        return
    C = polar_project(M)
    assert np.allclose(C.T @ C, np.eye(3), atol=1e-10)
    assert np.isclose(np.linalg.det(C), 1.0)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_update_keeps_covariance_psd(seed, m):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((9, 9))
    prior = GaussianBelief(NavState(rng.standard_normal(3), rng.standard_normal(3), np.array([1.0, 0, 0, 0])), A @ A.T + 1e-6 * np.eye(9))
    H = rng.standard_normal((m, 9))
    post, ll = update(prior, Constraint(rng.standard_normal(m), H, np.eye(m) * rng.uniform(1e-4, 1.0)))
    assert np.isfinite(ll)
    assert np.allclose(post.cov, post.cov.T)
    assert np.linalg.eigvalsh(post.cov).min() > -1e-9
    assert np.trace(post.cov) <= np.trace(prior.cov) + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bank_weights_stay_normalized(seed):
    rng = np.random.default_rng(seed)
    prior = GaussianBelief(NavState(np.zeros(3), np.zeros(3), np.array([1.0, 0, 0, 0])), 0.01 * np.eye(9))
    bank = FilterBank(varying_gait_model(), prior)
    for k in range(1, 30):
        s = np.array([0, 0, 9.81]) + rng.standard_normal(3) * rng.choice([0.01, 3.0])
        bank.step(ImuSample(0.01 * k, s, rng.standard_normal(3) * 0.5))
        assert abs(bank.weights.sum() - 1.0) < 1e-9
        assert len(bank.weights) <= 9
