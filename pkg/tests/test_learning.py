import numpy as np
import pytest

from jmnav.exceptions import ConfigError, NotConverged
from jmnav.filterbank import FilterBank, level_prior
from jmnav.gaitsim import preset_profile, simulate, simulate_markov
from jmnav.learning import (
    LearnConfig,
    _SoftmaxColumns,
    default_free_mask,
    learn_transition_matrix,
    log_marginal_likelihood,
)
from jmnav.models import (
    KIND_H0,
    KIND_NONE,
    STATIONARY_NOISE,
    VARYING_GAIT_PI_INIT,
    VARYING_GAIT_PI_LEARNED,
    MotionModel,
    TransitionMatrix,
    same_height_model,
    single_mode_model,
    varying_gait_model,
)

from conftest import enumerate_sequences


@pytest.fixture(scope="module")
def markov_data():
    return simulate_markov(VARYING_GAIT_PI_LEARNED, 4000, seed=11)


@pytest.fixture(scope="module")
def learned(markov_data):
    cfg = LearnConfig([markov_data[0]])
    return learn_transition_matrix(cfg, varying_gait_model(), VARYING_GAIT_PI_INIT)


def test_empty_dataset_is_zero():
    assert log_marginal_likelihood([], varying_gait_model()) == 0.0


def test_single_mode_equals_kalman_prediction_error(stationary_data):
    data = stationary_data[0][:500]
    model = single_mode_model("stationary")
    bank = FilterBank(model, level_prior(data[:20], model), t0=data[0, 0])
    from jmnav.strapdown import ImuSample

    total = sum(bank.step(ImuSample(r[0], r[1:4], r[4:7])) for r in data[1:])
    assert log_marginal_likelihood(data, model) == pytest.approx(total, abs=1e-8)


def test_two_mode_toy_matches_enumeration(rng):
    pi = np.array([[0.7, 0.4], [0.3, 0.6]])
    model = MotionModel("toy", TransitionMatrix(pi, np.ones((2, 2), bool)), (KIND_NONE, KIND_H0), (None, STATIONARY_NOISE))
    s = np.array([0.0, 0.0, 9.81]) + 0.05 * rng.standard_normal((4, 3))
    w = 0.02 * rng.standard_normal((4, 3))
    data = np.column_stack([np.arange(4) * 0.01, s, w])
    prior = level_prior(data, model)
    ref, total = enumerate_sequences(model, prior, data, total=True)
    assert len(ref) == 16
    bank = FilterBank(model, prior, max_leaves=None, t0=0.0)
    got = bank.sequence_loglik(data).sum()
    assert got == pytest.approx(total, abs=1e-10)


def test_unpruned_likelihood_matches_enumeration(walk_data):
    data = walk_data[0][95:102]
    model = varying_gait_model()
    prior = level_prior(walk_data[0][:20], model)
    _, total = enumerate_sequences(model, prior, data, total=True)
    got = FilterBank(model, prior, max_leaves=None, t0=data[0, 0]).sequence_loglik(data).sum()
    assert got == pytest.approx(total, abs=1e-10)


def test_analytic_gradient_matches_central_differences(markov_data):
    data = markov_data[0][:1500]
    model = varying_gait_model()
    pi0 = model.transition.with_values(VARYING_GAIT_PI_INIT)
    param = _SoftmaxColumns(pi0, default_free_mask(pi0))
    phi = param.encode(pi0.values) + 0.3
    prior = level_prior(data[:20], model)

    def f(p, grad=False):
        m = model.with_transition(param.decode(p))
        out = FilterBank(m, prior, t0=data[0, 0]).sequence_loglik(data, return_grad=grad)
        return (out[0].sum(), out[1]) if grad else out.sum()

    value, G = f(phi, grad=True)
    analytic = param.chain(phi, G)
    h = 1e-5
    fd = np.array([(f(phi + h * e) - f(phi - h * e)) / (2 * h) for e in np.eye(phi.size)])
    assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-4)


def test_softmax_round_trip():
    pi0 = same_height_model().transition
    param = _SoftmaxColumns(pi0, default_free_mask(pi0))
    back = param.decode(param.encode(pi0.values))
    assert np.allclose(back, pi0.values, atol=1e-15)
    assert np.array_equal(back[:, 1], [0.0, 0.0, 1.0])


def test_learned_matrix_recovers_truth(learned):
    free = learned.free
    err = np.abs(learned.pi.values - VARYING_GAIT_PI_LEARNED)[free].max()
    assert err < 0.05
    assert learned.converged
    assert learned.iterations <= 15


def test_learned_matrix_invariants(learned):
    pi = learned.pi.values
    assert np.allclose(pi.sum(axis=0), 1.0, atol=1e-12)
    assert pi[2, 0] == 0.0 and pi[0, 2] == 0.0
    assert np.all(np.diff(learned.loglik_trace) >= -1e-9)
    assert learned.occupancy.sum() == pytest.approx(100.0, abs=0.1)
    assert set(learned.to_dict()) == {"pi", "loglik_trace", "iterations", "converged", "occupancy"}


def test_rerun_on_own_output_is_fixed_point(markov_data, learned):
    again = learn_transition_matrix(LearnConfig([markov_data[0]]), varying_gait_model(), learned.pi)
    assert again.iterations <= 2
    assert np.abs(again.pi.values - learned.pi.values).max() < 1e-3


def test_same_height_keeps_pinned_entry():
    data, _ = simulate(preset_profile("stairs", 20.0, seed=2))
    model = same_height_model()
    rep = learn_transition_matrix(LearnConfig([data], max_iter=3), model, model.transition)
    assert np.array_equal(rep.pi.values[:, 1], [0.0, 0.0, 1.0])
    assert rep.pi.values[1, 2] == 0.0
    assert np.allclose(rep.pi.values.sum(axis=0), 1.0, atol=1e-12)


@pytest.mark.parametrize("method,gradient", [("bfgs", "analytic"), ("scoring", "central"), ("scoring", "forward")])
def test_alternative_optimizers_ascend(markov_data, method, gradient):
    cfg = LearnConfig([markov_data[0][:1500]], max_iter=3, method=method, gradient=gradient)
    rep = learn_transition_matrix(cfg, varying_gait_model(), VARYING_GAIT_PI_INIT)
    assert rep.loglik_trace[-1] > rep.loglik_trace[0]
    assert np.all(np.diff(rep.loglik_trace) >= -1e-9)


def test_strict_raises_not_converged_with_report(markov_data):
    cfg = LearnConfig([markov_data[0][:1000]], max_iter=1)
    with pytest.raises(NotConverged) as info:
        learn_transition_matrix(cfg, varying_gait_model(), VARYING_GAIT_PI_INIT, strict=True)
    assert info.value.report is not None and not info.value.report.converged


def test_invalid_free_masks_and_inits(markov_data):
    data = [markov_data[0][:200]]
    model = varying_gait_model()
    with pytest.raises(ConfigError):
        learn_transition_matrix(LearnConfig(data), model, np.full((3, 3), 1 / 3))
    free = np.zeros((3, 3), bool)
    free[0, 0] = True
    with pytest.raises(ConfigError):
        learn_transition_matrix(LearnConfig(data, free=free), model)
    free = default_free_mask(model.transition)
    free[2, 0] = True
    with pytest.raises(ConfigError):
        learn_transition_matrix(LearnConfig(data, free=free), model)
    pi = VARYING_GAIT_PI_INIT.copy()
    pi[:, 0] = [1.0, 0.0, 0.0]
    with pytest.raises(ConfigError):
        learn_transition_matrix(LearnConfig(data), model, pi)


def test_learn_config_validation():
    for kwargs in ({"max_iter": 0}, {"tol_loglik": 0}, {"method": "newton"}, {"gradient": "exact"}, {"align": 0}):
        with pytest.raises(ConfigError):
            LearnConfig([], **kwargs)
    with pytest.raises(ConfigError):
        log_marginal_likelihood([np.zeros((5, 6))], varying_gait_model())
