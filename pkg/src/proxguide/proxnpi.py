"""Guided editing from an inverted latent.

All editors start from DDIM inversion of the source latent under the source
condition at guidance scale 1, then sample with the source condition in the
unconditional slot of classifier-free guidance (negative-prompt inversion).
:func:`proxnpi_edit` additionally thresholds the editing direction and can
pull the predicted clean latent toward the source on unedited entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ddim import Trajectory, ddim_step, invert_trajectory, predict_z0, renoise
from .models import Condition, Predictor
from .prox import ThresholdSpec, prox_apply
from .schedule import NoiseSchedule

__all__ = [
    "GuidanceConfig",
    "cfg_combine",
    "reconstruction_guidance",
    "npi_edit",
    "proxnpi_edit",
    "step_diagnostics",
]


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 7.5
    threshold: ThresholdSpec = field(default_factory=ThresholdSpec)
    recon_enabled: bool = False
    eta: float = 0.1
    t_rec: int = 400

    def __post_init__(self):
        if not self.w >= 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.w}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")

    def check_schedule(self, schedule: NoiseSchedule):
        if self.recon_enabled and not 0 <= self.t_rec <= schedule.T:
            raise ValueError(f"t_rec={self.t_rec} outside schedule range [0, {schedule.T}]")


def cfg_combine(eps_uncond, eps_cond, w: float) -> np.ndarray:
    """``eps_uncond + w (eps_cond - eps_uncond)``; exactly ``eps_cond`` at w=1."""
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(f"shape mismatch {eps_uncond.shape} vs {eps_cond.shape}")
    if w == 1:
        return eps_cond.copy()
    return eps_uncond + w * (eps_cond - eps_uncond)


def reconstruction_guidance(z0_hat, z0, mask, eta: float) -> np.ndarray:
    """One masked gradient step of ``0.5 ||z0_hat - z0||^2`` with step ``eta``.

    Equals ``z0_hat - eta * M * (z0_hat - z0)``.
    """
    z0_hat = np.asarray(z0_hat, dtype=np.float64)
    z0 = np.asarray(z0, dtype=np.float64)
    mask = np.asarray(mask)
    if not (z0_hat.shape == z0.shape == mask.shape):
        raise ValueError(f"shape mismatch {z0_hat.shape}, {z0.shape}, {mask.shape}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    # convex form so eta=1 lands on z0 exactly and unmasked entries pass through untouched
    return np.where(mask, (1.0 - eta) * z0_hat + eta * z0, z0_hat)


def step_diagnostics(t, d, pd, mask, lam) -> dict:
    return {
        "t": int(t),
        "effective_lambda": float(lam),
        "clamp_fraction": float(np.mean(pd == 0.0)),
        "mask_coverage": float(np.mean(mask)),
        "diff_norm": float(np.linalg.norm(d)),
        "prox_norm": float(np.linalg.norm(pd)),
        "mask": mask,
    }


def _start(z0, c_src, predictor, schedule, inversion_mode, inversion):
    if inversion is None:
        inversion = invert_trajectory(z0, c_src, predictor, schedule, mode=inversion_mode)
    if inversion.timesteps[-1] != schedule.T or len(inversion) != len(schedule):
        raise ValueError("inversion trajectory does not match the schedule")
    return np.array(inversion.terminal, dtype=np.float64)


def npi_edit(z0, c_src: Condition, c_tar: Condition, w: float, predictor: Predictor,
             schedule: NoiseSchedule, inversion_mode: str = "naive",
             inversion: Optional[Trajectory] = None) -> Trajectory:
    """Negative-prompt inversion edit: CFG with the source condition as negative."""
    z = _start(z0, c_src, predictor, schedule, inversion_mode, inversion)
    pairs = schedule.transitions()
    ts, latents, used, diags = [pairs[0][0]], [z.copy()], [], []
    for t, t_prev in pairs:
        eps_src = predictor(z, t, c_src)
        eps_tar = predictor(z, t, c_tar)
        eps = cfg_combine(eps_src, eps_tar, w)
        z = ddim_step(z, eps, t, t_prev, schedule)
        ts.append(t_prev)
        latents.append(z)
        used.append(eps)
        diags.append({"t": t, "diff_norm": float(np.linalg.norm(eps_tar - eps_src))})
    return Trajectory(ts, latents, used, diags)


def proxnpi_edit(z0, c_src: Condition, c_tar: Condition, cfg: GuidanceConfig,
                 predictor: Predictor, schedule: NoiseSchedule, inversion_mode: str = "naive",
                 inversion: Optional[Trajectory] = None) -> Trajectory:
    """Proximal negative-prompt inversion edit.

    Per step: ``eps = eps_src + w * prox(eps_tar - eps_src)``, mask
    ``M = |eps_tar - eps_src| <= lam``. When reconstruction guidance is on
    and ``t < t_rec`` the predicted clean latent is moved toward ``z0`` on
    ``M`` before re-noising; otherwise the step is the plain DDIM update,
    which is the same map as predict-then-renoise.
    """
    cfg.check_schedule(schedule)
    z0 = np.asarray(z0, dtype=np.float64)
    z = _start(z0, c_src, predictor, schedule, inversion_mode, inversion)
    pairs = schedule.transitions()
    ts, latents, used, diags = [pairs[0][0]], [z.copy()], [], []
    for t, t_prev in pairs:
        eps_src = predictor(z, t, c_src)
        eps_tar = predictor(z, t, c_tar)
        d = eps_tar - eps_src
        pd, mask, lam = prox_apply(d, cfg.threshold)
        eps = eps_src + cfg.w * pd
        diag = step_diagnostics(t, d, pd, mask, lam)
        if cfg.recon_enabled and t < cfg.t_rec:
            z0_hat = predict_z0(z, eps, t, schedule)
            guided = reconstruction_guidance(z0_hat, z0, mask, cfg.eta)
            diag.update(masked_errors(z0_hat, guided, z0, mask))
            z = renoise(guided, eps, t_prev, schedule)
        else:
            diag["guided"] = False
            z = ddim_step(z, eps, t, t_prev, schedule)
        ts.append(t_prev)
        latents.append(z)
        used.append(eps)
        diags.append(diag)
    return Trajectory(ts, latents, used, diags)


def masked_errors(before, after, z0, mask) -> dict:
    n = max(int(mask.sum()), 1)
    return {
        "guided": True,
        "masked_mse_before": float(np.sum(mask * (before - z0) ** 2) / n),
        "masked_mse_after": float(np.sum(mask * (after - z0) ** 2) / n),
        "masked_max_dev_after": float(np.max(np.where(mask, np.abs(after - z0), 0.0), initial=0.0)),
    }
