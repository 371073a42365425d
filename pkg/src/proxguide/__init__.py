"""Proximal guidance for inversion-based diffusion editing, on desk-scale denoisers."""

__version__ = "0.1.0"

from .schedule import NoiseSchedule, linear_beta_schedule, subsample
from .models import (Condition, InjectionMode, MixtureOracle, MixturePredictor, TokenDenoiser,
                     epsilon_attention, epsilon_grad_condition, epsilon_mixture)
from .ddim import (ConvergenceError, Trajectory, ddim_invert_step, ddim_step, invert_trajectory,
                   predict_z0, reconstruct)
from .prox import ThresholdSpec, hard_threshold, prox_apply, quantile_abs, soft_threshold
from .proxnpi import GuidanceConfig, cfg_combine, npi_edit, proxnpi_edit, reconstruction_guidance
from .nti import NullSchedule, nti_edit, nti_optimize
from .masactrl import BranchConfig, interp_condition, npi_with_masactrl_edit, proxmasactrl_edit

__all__ = [
    "NoiseSchedule", "linear_beta_schedule", "subsample",
    "Condition", "InjectionMode", "MixtureOracle", "MixturePredictor", "TokenDenoiser",
    "epsilon_attention", "epsilon_grad_condition", "epsilon_mixture",
    "ConvergenceError", "Trajectory", "ddim_invert_step", "ddim_step", "invert_trajectory",
    "predict_z0", "reconstruct",
    "ThresholdSpec", "hard_threshold", "prox_apply", "quantile_abs", "soft_threshold",
    "GuidanceConfig", "cfg_combine", "npi_edit", "proxnpi_edit", "reconstruction_guidance",
    "NullSchedule", "nti_edit", "nti_optimize",
    "BranchConfig", "interp_condition", "npi_with_masactrl_edit", "proxmasactrl_edit",
]
