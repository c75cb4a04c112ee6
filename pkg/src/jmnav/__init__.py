"""Tightly integrated motion-mode classification and inertial navigation."""

from .baseline import DetectorConfig, run_zupt_ins
from .estimators import FilterBankNavigator, ZuptNavigator
from .filterbank import FilterBank, Trajectory, level_prior, run_filter_bank
from .gaitsim import preset_profile, simulate, simulate_markov
from .learning import LearnConfig, LearnReport, learn_transition_matrix, log_marginal_likelihood
from .models import MotionModel, TransitionMatrix, same_height_model, single_mode_model, varying_gait_model
from .strapdown import ImuSample, NavState, NoiseConfig

__version__ = "0.1.0"

__all__ = [
    "DetectorConfig",
    "FilterBank",
    "FilterBankNavigator",
    "ImuSample",
    "LearnConfig",
    "LearnReport",
    "MotionModel",
    "NavState",
    "NoiseConfig",
    "Trajectory",
    "TransitionMatrix",
    "ZuptNavigator",
    "learn_transition_matrix",
    "level_prior",
    "log_marginal_likelihood",
    "preset_profile",
    "run_filter_bank",
    "run_zupt_ins",
    "same_height_model",
    "simulate",
    "simulate_markov",
    "single_mode_model",
    "varying_gait_model",
]
