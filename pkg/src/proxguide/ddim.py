"""Deterministic DDIM stepping, inversion and reconstruction.

All step functions take timestep *labels* and look up ``alpha_bar`` in the
schedule, so they work unchanged on subsampled schedules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .models import Condition, Predictor
from .schedule import NoiseSchedule

__all__ = [
    "Trajectory",
    "ConvergenceError",
    "ddim_step",
    "ddim_invert_step",
    "predict_z0",
    "renoise",
    "invert_trajectory",
    "reconstruct",
    "MAX_FIXED_POINT_ITERS",
    "FIXED_POINT_TOL",
]

MAX_FIXED_POINT_ITERS = 20
FIXED_POINT_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """An implicit inversion step did not reach the residual tolerance."""


@dataclass
class Trajectory:
    """Latents along a monotone sequence of timestep labels.

    ``eps`` holds the noise used for each transition and ``diagnostics`` one
    dict per transition, both in execution order (entry ``i`` moves
    ``latents[i]`` to ``latents[i+1]``).
    """

    timesteps: List[int]
    latents: List[np.ndarray]
    eps: Optional[List[np.ndarray]] = None
    diagnostics: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if len(self.timesteps) != len(self.latents):
            raise ValueError("timesteps and latents differ in length")
        d = np.diff(np.asarray(self.timesteps))
        if len(d) and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("trajectory timesteps must be strictly monotone")

    @property
    def terminal(self) -> np.ndarray:
        return self.latents[-1]

    @property
    def increasing(self) -> bool:
        return len(self.timesteps) < 2 or self.timesteps[1] > self.timesteps[0]

    def at(self, t: int) -> np.ndarray:
        return self.latents[self.timesteps.index(int(t))]

    def __len__(self):
        return len(self.timesteps)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite values in DDIM step input")


def _check_pair(z, eps, t, t_prev):
    if not t > t_prev >= 0:
        raise ValueError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if np.shape(z) != np.shape(eps):
        raise ValueError(f"latent shape {np.shape(z)} != noise shape {np.shape(eps)}")
    _check_finite(z, eps)


def _coef(a):
    return np.sqrt(1.0 / a - 1.0)


def ddim_step(z_t, eps, t: int, t_prev: int, schedule: NoiseSchedule) -> np.ndarray:
    """One deterministic DDIM update from label ``t`` down to ``t_prev``."""
    _check_pair(z_t, eps, t, t_prev)
    a_t, a_p = schedule.alpha(t), schedule.alpha(t_prev)
    return np.sqrt(a_p / a_t) * z_t + np.sqrt(a_p) * (_coef(a_p) - _coef(a_t)) * eps


def ddim_invert_step(z_prev, eps, t: int, t_prev: int, schedule: NoiseSchedule) -> np.ndarray:
    """Algebraic inverse of :func:`ddim_step` for the same ``eps``."""
    _check_pair(z_prev, eps, t, t_prev)
    a_t, a_p = schedule.alpha(t), schedule.alpha(t_prev)
    return np.sqrt(a_t / a_p) * z_prev + np.sqrt(a_t) * (_coef(a_t) - _coef(a_p)) * eps


def predict_z0(z_t, eps, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Clean-sample estimate ``(z_t - sqrt(1 - a_t) eps) / sqrt(a_t)``."""
    if np.shape(z_t) != np.shape(eps):
        raise ValueError(f"latent shape {np.shape(z_t)} != noise shape {np.shape(eps)}")
    _check_finite(z_t, eps)
    a = schedule.alpha(t)
    return z_t / np.sqrt(a) - _coef(a) * eps


def renoise(z0_hat, eps, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Forward reparametrization ``sqrt(a_t) z0 + sqrt(1 - a_t) eps``."""
    a = schedule.alpha(t)
    return np.sqrt(a) * z0_hat + np.sqrt(1.0 - a) * eps


def invert_trajectory(z0, cond: Condition, predictor: Predictor, schedule: NoiseSchedule,
                      mode: str = "naive", max_iters: int = MAX_FIXED_POINT_ITERS,
                      tol: float = FIXED_POINT_TOL) -> Trajectory:
    """DDIM-invert ``z0`` to the noisiest label of ``schedule``.

    ``naive`` evaluates the noise at the previous (less noisy) latent.
    ``exact`` solves ``z_t = invert(z_prev, eps(z_t, t))`` by fixed-point
    iteration seeded with the naive estimate; iteration continues past
    ``tol`` while the residual keeps shrinking, and a final residual above
    ``tol`` raises :class:`ConvergenceError`. The noise that produced each
    stored latent is cached in ``Trajectory.eps``.
    """
    if mode not in ("naive", "exact"):
        raise ValueError(f"unknown inversion mode {mode!r}")
    z = np.array(z0, dtype=np.float64)
    _check_finite(z)
    ts = [int(t) for t in schedule.timesteps]
    latents = [z.copy()]
    cached = []
    diags = []
    for i in range(len(ts) - 1):
        t_prev, t = ts[i], ts[i + 1]
        eps = predictor(z, t_prev, cond)
        z_next = ddim_invert_step(z, eps, t, t_prev, schedule)
        residual = float("nan")
        iters = 0
        if mode == "exact":
            residual = np.inf
            for iters in range(1, max_iters + 1):
                eps_k = predictor(z_next, t, cond)
                z_k = ddim_invert_step(z, eps_k, t, t_prev, schedule)
                new_residual = float(np.max(np.abs(z_k - z_next)))
                if new_residual >= residual and residual <= tol:
                    break
                z_next, eps, residual = z_k, eps_k, new_residual
                if residual == 0.0:
                    break
            if not residual <= tol:
                raise ConvergenceError(
                    f"fixed-point inversion at t={t} stalled with residual {residual:.3e} "
                    f"after {max_iters} iterations")
        z = z_next
        latents.append(z.copy())
        cached.append(eps)
        diags.append({"t": t, "fixed_point_residual": residual, "fixed_point_iters": iters})
    return Trajectory(ts, latents, cached, diags)


def reconstruct(zT, cond: Condition, predictor: Predictor, schedule: NoiseSchedule,
                cached_eps: Optional[List[np.ndarray]] = None) -> Trajectory:
    """Sample from ``zT`` back to label 0 with plain conditional DDIM.

    With ``cached_eps`` (from an inversion on the same schedule), each step
    reuses the stored noise and the round trip is exact up to rounding.
    """
    pairs = schedule.transitions()
    if cached_eps is not None and len(cached_eps) != len(pairs):
        raise ValueError(f"cached_eps has {len(cached_eps)} entries, schedule has {len(pairs)} steps")
    z = np.array(zT, dtype=np.float64)
    ts = [pairs[0][0]]
    latents = [z.copy()]
    used = []
    for i, (t, t_prev) in enumerate(pairs):
        idx = len(pairs) - 1 - i
        eps = cached_eps[idx] if cached_eps is not None else predictor(z, t, cond)
        z = ddim_step(z, eps, t, t_prev, schedule)
        ts.append(t_prev)
        latents.append(z)
        used.append(eps)
    return Trajectory(ts, latents, used, [{"t": t} for t, _ in pairs])
