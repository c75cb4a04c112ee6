import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from jmnav.estimators import FilterBankNavigator, ZuptNavigator
from jmnav.exceptions import ConfigError
from jmnav.filterbank import run_filter_bank
from jmnav.models import VARYING_GAIT_PI_LEARNED, varying_gait_model


def test_fixed_matrix_matches_run_filter_bank(walk_data):
    data = walk_data[0][:600]
    nav = FilterBankNavigator(learn=False).fit(data)
    assert nav.learn_report_ is None and nav.n_modes_ == 3
    assert np.array_equal(nav.transition_, VARYING_GAIT_PI_LEARNED)
    ref = run_filter_bank(data, varying_gait_model())
    assert np.array_equal(nav.predict(data), ref.map_mode)
    assert np.allclose(nav.predict_proba(data), ref.mode_posterior)
    X = nav.transform(data)
    assert X.shape == (600, 9)
    assert np.allclose(X[:, :3], ref.r) and np.allclose(X[:, 6:], ref.euler)


def test_outputs_share_one_pass(walk_data):
    data = walk_data[0][:300]
    nav = FilterBankNavigator(learn=False).fit(data)
    first = nav.navigate(data)
    assert nav.navigate(data.copy()) is first
    assert nav.navigate(data[:200]) is not first


def test_fit_learns_and_score(walk_data):
    data = walk_data[0][:800]
    nav = FilterBankNavigator(max_iter=3, tol_loglik=1e-2).fit([data[:400], data[400:]])
    assert nav.learn_report_ is not None
    assert np.allclose(nav.transition_.sum(axis=0), 1.0)
    assert np.isfinite(nav.score(data))
    assert nav.score([data[:400], data[400:]]) == pytest.approx(nav.learn_report_.loglik_trace[-1], abs=1e-6)


def test_params_and_clone():
    nav = FilterBankNavigator(model="same-height", max_leaves=5, sigma_h=0.02)
    twin = clone(nav)
    assert twin.get_params() == nav.get_params()
    assert twin.set_params(max_leaves=None).max_leaves is None
    assert clone(ZuptNavigator(gamma=1e5)).gamma == 1e5


def test_not_fitted(walk_data):
    with pytest.raises(NotFittedError):
        FilterBankNavigator().predict(walk_data[0][:50])
    with pytest.raises(NotFittedError):
        ZuptNavigator().transform(walk_data[0][:50])


@pytest.mark.parametrize(
    "X",
    [
        np.zeros((10, 6)),
        np.column_stack([np.zeros(10), np.ones((10, 6))]),
        np.full((10, 7), np.nan),
        np.zeros((1, 7)),
    ],
)
def test_input_validation(X):
    nav = FilterBankNavigator(learn=False).fit(np.column_stack([np.arange(5) * 0.01, np.tile([0, 0, 9.81, 0, 0, 0], (5, 1))]))
    with pytest.raises((ConfigError, ValueError)):
        nav.predict(X)


def test_unknown_model():
    with pytest.raises(ConfigError):
        FilterBankNavigator(model="hopping", learn=False).fit(np.zeros((3, 7)) + np.arange(3)[:, None])


def test_zupt_navigator(walk_data):
    data, truth = walk_data
    nav = ZuptNavigator(gamma=3e4).fit()
    assert nav.n_modes_ == 2
    modes = nav.predict(data)
    assert set(np.unique(modes)) <= {1, 2}
    assert nav.predict_proba(data).shape == (len(data), 2)
    stance = truth.stance
    assert np.mean(modes[stance] == 2) > 0.5 and np.mean(modes[~stance] == 1) > 0.9
    assert np.linalg.norm(nav.transform(data)[-1, :3] - truth.r[-1]) < 1.0
    with pytest.raises(ConfigError):
        ZuptNavigator(sigma_v=0.0).fit()
