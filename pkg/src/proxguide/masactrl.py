"""Dual-branch mutual self-attention control with proximal guidance.

A reconstruction branch denoises the inverted latent under the source
condition (guidance scale 1) and captures each attention block's keys and
values. A synthesis branch starting from the same latent attends over those
captured features and combines

    eps = eps_null + w * prox(eps_tar - eps_null)

where ``eps_null`` uses ``interp_condition(alpha, c_src, c_null)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ddim import Trajectory, ddim_step, invert_trajectory
from .models import Condition, InjectionMode, TokenDenoiser
from .prox import ThresholdSpec, prox_apply
from .proxnpi import cfg_combine, step_diagnostics
from .schedule import NoiseSchedule

__all__ = ["BranchConfig", "interp_condition", "proxmasactrl_edit", "npi_with_masactrl_edit"]

CAPTURE_CONDITIONS = ("src", "null")


@dataclass(frozen=True)
class BranchConfig:
    """Synthesis-branch settings.

    ``capture_condition='null'`` makes the unconditional term query features
    from an extra null-conditioned pass on the reconstruction latent instead
    of the source-conditioned one.
    """

    alpha: float = 1.0
    injection_uncond: InjectionMode = InjectionMode.SOURCE
    injection_cond: InjectionMode = InjectionMode.SOURCE
    inject_start_step: int = 0
    capture_condition: str = "src"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        object.__setattr__(self, "injection_uncond", InjectionMode.parse(self.injection_uncond))
        object.__setattr__(self, "injection_cond", InjectionMode.parse(self.injection_cond))
        if self.inject_start_step < 0:
            raise ValueError("inject_start_step must be >= 0")
        if self.capture_condition not in CAPTURE_CONDITIONS:
            raise ValueError(f"capture_condition must be one of {CAPTURE_CONDITIONS}")


def interp_condition(alpha: float, c_src: Condition, c_null: Condition) -> Condition:
    """``(1 - alpha) * c_src + alpha * c_null``; alpha=1 gives the null condition."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if c_src.logits.shape != c_null.logits.shape or c_src.shift.shape != c_null.shift.shape:
        raise ValueError("conditions differ in dimension")
    return Condition((1.0 - alpha) * c_src.logits + alpha * c_null.logits,
                     (1.0 - alpha) * c_src.shift + alpha * c_null.shift)


def _dual_branch(z0, c_src, c_tar, c_uncond, w, branch_cfg, combine, denoiser, schedule,
                 c_null, inversion_mode, inversion):
    if inversion is None:
        inversion = invert_trajectory(z0, c_src, denoiser, schedule, mode=inversion_mode)
    z_rec = np.array(inversion.terminal, dtype=np.float64)
    z_syn = z_rec.copy()
    pairs = schedule.transitions()
    rec = Trajectory([pairs[0][0]], [z_rec.copy()], [], [])
    syn = Trajectory([pairs[0][0]], [z_syn.copy()], [], [])
    for i, (t, t_prev) in enumerate(pairs):
        eps_hat, feats = denoiser.forward(z_rec, t, c_src)
        feats_uncond = feats
        if branch_cfg.capture_condition == "null":
            _, feats_uncond = denoiser.forward(z_rec, t, c_null)
        active = i >= branch_cfg.inject_start_step
        mode_u = branch_cfg.injection_uncond if active else InjectionMode.NONE
        mode_c = branch_cfg.injection_cond if active else InjectionMode.NONE
        eps_u, _ = denoiser.forward(z_syn, t, c_uncond, mode_u, feats_uncond)
        eps_t, _ = denoiser.forward(z_syn, t, c_tar, mode_c, feats)
        eps, diag = combine(eps_u, eps_t)
        diag["t"] = int(t)
        diag["uncond_gap"] = float(np.max(np.abs(eps - eps_u)))
        z_rec = ddim_step(z_rec, eps_hat, t, t_prev, schedule)
        z_syn = ddim_step(z_syn, eps, t, t_prev, schedule)
        diag["divergence"] = float(np.linalg.norm(z_syn - z_rec))
        for traj, z, e in ((rec, z_rec, eps_hat), (syn, z_syn, eps)):
            traj.timesteps.append(t_prev)
            traj.latents.append(z)
            traj.eps.append(e)
        rec.diagnostics.append({"t": int(t)})
        syn.diagnostics.append(diag)
    return rec, syn


def proxmasactrl_edit(z0, c_src: Condition, c_tar: Condition, w: float, branch_cfg: BranchConfig,
                      threshold: ThresholdSpec, denoiser: TokenDenoiser, schedule: NoiseSchedule,
                      c_null: Optional[Condition] = None, inversion_mode: str = "naive",
                      inversion: Optional[Trajectory] = None):
    """Run both branches in lockstep; returns ``(reconstruction, synthesis)``."""
    c_null = c_null if c_null is not None else denoiser.null_condition()
    c_uncond = interp_condition(branch_cfg.alpha, c_src, c_null)

    def combine(eps_u, eps_t):
        d = eps_t - eps_u
        pd, mask, lam = prox_apply(d, threshold)
        return eps_u + w * pd, step_diagnostics(0, d, pd, mask, lam)

    return _dual_branch(z0, c_src, c_tar, c_uncond, w, branch_cfg, combine, denoiser, schedule,
                        c_null, inversion_mode, inversion)


def npi_with_masactrl_edit(z0, c_src: Condition, c_tar: Condition, w: float,
                           branch_cfg: BranchConfig, denoiser: TokenDenoiser,
                           schedule: NoiseSchedule, c_null: Optional[Condition] = None,
                           inversion_mode: str = "naive", inversion: Optional[Trajectory] = None):
    """Ablation variant: the source condition replaces the null in the synthesis combiner.

    No thresholding; ``alpha`` is ignored. Kept for side-by-side diagnostics.
    """
    c_null = c_null if c_null is not None else denoiser.null_condition()

    def combine(eps_u, eps_t):
        return cfg_combine(eps_u, eps_t, w), {"diff_norm": float(np.linalg.norm(eps_t - eps_u))}

    return _dual_branch(z0, c_src, c_tar, c_src, w, branch_cfg, combine, denoiser, schedule,
                        c_null, inversion_mode, inversion)
