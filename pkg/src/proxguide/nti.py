"""Null-condition optimization (null-text inversion baseline).

For each step from the noisiest down, the unconditional condition is tuned
so that one guided DDIM step from the tracked latent lands on the matching
latent of the scale-1 inversion trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .ddim import Trajectory, ddim_step, invert_trajectory
from .models import Condition, Predictor, epsilon_grad_condition
from .proxnpi import cfg_combine
from .schedule import NoiseSchedule

__all__ = ["NullSchedule", "nti_optimize", "nti_edit"]

log = logging.getLogger(__name__)

EARLY_STOP_LOSS = 1e-8
MAX_HALVINGS = 10


@dataclass
class NullSchedule:
    """Optimized null conditions in synthesis order (noisiest step first)."""

    conditions: List[Condition]
    initial_losses: List[float]
    final_losses: List[float]
    start: np.ndarray
    w: float
    source: Optional[Condition] = None
    loss_histories: List[List[float]] = field(default_factory=list)
    flagged_steps: List[int] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.conditions) == len(self.initial_losses) == len(self.final_losses)):
            raise ValueError("null schedule fields disagree in length")

    def __len__(self):
        return len(self.conditions)


def _guided_step(z, t, t_prev, null: Condition, eps_cond, w, predictor, schedule):
    eps = cfg_combine(predictor(z, t, null), eps_cond, w)
    return ddim_step(z, eps, t, t_prev, schedule), eps


def _loss_grad(z, t, t_prev, null, eps_cond, target, w, predictor, schedule, fd_step):
    z_prev, _ = _guided_step(z, t, t_prev, null, eps_cond, w, predictor, schedule)
    r = (z_prev - target).reshape(-1)
    a_t, a_p = schedule.alpha(t), schedule.alpha(t_prev)
    # d z_prev / d eps_uncond = b (1 - w) I with b the DDIM noise coefficient
    b = np.sqrt(a_p) * (np.sqrt(1.0 / a_p - 1.0) - np.sqrt(1.0 / a_t - 1.0))
    vjp = getattr(predictor, "condition_vjp", None)
    if vjp is not None:
        jtr = vjp(z, t, null, r)
    else:
        jtr = epsilon_grad_condition(z, t, null, predictor, fd_step).T @ r
    return 2.0 * b * (1.0 - w) * jtr


def _loss(z, t, t_prev, null, eps_cond, target, w, predictor, schedule):
    z_prev, _ = _guided_step(z, t, t_prev, null, eps_cond, w, predictor, schedule)
    return float(np.sum((z_prev - target) ** 2))


def nti_optimize(z0, cond: Condition, w: float, predictor: Predictor, schedule: NoiseSchedule,
                 inner_iters: int = 10, lr: float = 0.1, inversion_mode: str = "naive",
                 inversion: Optional[Trajectory] = None, null: Optional[Condition] = None,
                 loss_tol: float = 1e-4, fd_step: float = 1e-4):
    """Tune per-step null conditions so the scale-``w`` rollout tracks the inversion.

    Gradient descent with backtracking: a step that does not lower the loss
    is halved (up to 10 times) and only improving steps are accepted. Steps
    ending above ``loss_tol`` are logged and listed in ``flagged_steps``.
    Gradients use the predictor's ``condition_vjp`` when it has one, else
    central finite differences.

    Returns ``(NullSchedule, Trajectory)``; the trajectory is the tracked
    rollout from the inverted latent down to label 0.
    """
    if w < 1:
        raise ValueError(f"guidance scale must be >= 1, got {w}")
    if inner_iters < 1:
        raise ValueError("inner_iters must be >= 1")
    if not lr > 0:
        raise ValueError("lr must be positive")
    if inversion is None:
        inversion = invert_trajectory(z0, cond, predictor, schedule, mode=inversion_mode)
    if null is None:
        null = Condition.null(cond.num_logits, cond.shift.size)

    z = np.array(inversion.terminal, dtype=np.float64)
    start = z.copy()
    pairs = schedule.transitions()
    ts, latents, used, diags = [pairs[0][0]], [z.copy()], [], []
    conds, init_losses, final_losses, histories, flagged = [], [], [], [], []
    k = cond.num_logits
    for t, t_prev in pairs:
        target = inversion.at(t_prev)
        eps_cond = predictor(z, t, cond)
        vec = null.vector()
        loss = _loss(z, t, t_prev, null, eps_cond, target, w, predictor, schedule)
        history = [loss]
        for _ in range(inner_iters):
            if loss < EARLY_STOP_LOSS:
                break
            grad = _loss_grad(z, t, t_prev, null, eps_cond, target, w, predictor, schedule, fd_step)
            step = lr
            for _ in range(MAX_HALVINGS + 1):
                cand = Condition.from_vector(vec - step * grad, k)
                cand_loss = _loss(z, t, t_prev, cand, eps_cond, target, w, predictor, schedule)
                if cand_loss < loss:
                    break
                step *= 0.5
            else:
                break
            null, vec, loss = cand, cand.vector(), cand_loss
            history.append(loss)
        if loss > loss_tol:
            flagged.append(t)
            log.debug("null optimization at t=%d ended with loss %.3e", t, loss)
        z, eps = _guided_step(z, t, t_prev, null, eps_cond, w, predictor, schedule)
        conds.append(null)
        init_losses.append(history[0])
        final_losses.append(loss)
        histories.append(history)
        ts.append(t_prev)
        latents.append(z)
        used.append(eps)
        diags.append({"t": t, "initial_loss": history[0], "final_loss": loss,
                      "inner_steps": len(history) - 1})
    if flagged:
        log.warning("null optimization left %d of %d steps above loss %.1e (worst %.3e)",
                    len(flagged), len(pairs), loss_tol, max(final_losses))
    nulls = NullSchedule(conds, init_losses, final_losses, start, float(w), cond,
                         histories, flagged)
    return nulls, Trajectory(ts, latents, used, diags)


def nti_edit(z0, c_src: Condition, c_tar: Condition, null_schedule: NullSchedule, w: float,
             predictor: Predictor, schedule: NoiseSchedule) -> Trajectory:
    """Sample with ``c_tar`` as condition and the optimized nulls as negatives."""
    pairs = schedule.transitions()
    if len(null_schedule) != len(pairs):
        raise ValueError(f"null schedule has {len(null_schedule)} steps, schedule has {len(pairs)}")
    if w != null_schedule.w:
        raise ValueError(f"null schedule was optimized for w={null_schedule.w}, got w={w}")
    if null_schedule.source is not None and null_schedule.source != c_src:
        raise ValueError("null schedule was optimized for a different source condition")
    z = np.array(null_schedule.start, dtype=np.float64)
    ts, latents, used, diags = [pairs[0][0]], [z.copy()], [], []
    for (t, t_prev), null in zip(pairs, null_schedule.conditions):
        eps_cond = predictor(z, t, c_tar)
        z, eps = _guided_step(z, t, t_prev, null, eps_cond, w, predictor, schedule)
        ts.append(t_prev)
        latents.append(z)
        used.append(eps)
        diags.append({"t": t})
    diags[-1]["mse_to_source"] = float(np.mean((z - np.asarray(z0)) ** 2))
    return Trajectory(ts, latents, used, diags)
