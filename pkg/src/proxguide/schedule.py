"""Discrete noise schedules.

A schedule stores the cumulative signal coefficients ``alpha_bar`` for a
sequence of integer timestep labels. Index 0 is the data end (label 0);
the last entry is the most heavily noised step. Subsampled schedules keep
the original labels so predictors always see true timesteps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NoiseSchedule", "linear_beta_schedule", "subsample", "DEFAULT_T", "DEFAULT_STEPS"]

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_STEPS = 50


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative signal coefficients over labelled timesteps.

    Attributes:
        alpha_bar: shape (N+1,), strictly decreasing, entries in (0, 1].
        timesteps: shape (N+1,), strictly increasing integer labels,
            ``timesteps[0] == 0``.
    """

    alpha_bar: np.ndarray
    timesteps: np.ndarray

    def __post_init__(self):
        ab = np.array(self.alpha_bar, dtype=np.float64)
        ts = np.array(self.timesteps, dtype=np.int64)
        if ab.ndim != 1 or ab.shape != ts.shape:
            raise ValueError("alpha_bar and timesteps must be 1-D of equal length")
        if ab.size < 2:
            raise ValueError("schedule needs at least two entries")
        if not np.all(np.isfinite(ab)) or np.any(ab <= 0) or np.any(ab > 1):
            raise ValueError("alpha_bar entries must be finite and in (0, 1]")
        if np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if ts[0] != 0 or np.any(np.diff(ts) <= 0):
            raise ValueError("timesteps must start at 0 and strictly increase")
        ab.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "timesteps", ts)
        object.__setattr__(self, "_index", {int(t): i for i, t in enumerate(ts)})

    @property
    def T(self) -> int:
        """Largest timestep label."""
        return int(self.timesteps[-1])

    @property
    def num_steps(self) -> int:
        return len(self.timesteps) - 1

    def alpha(self, t: int) -> float:
        """``alpha_bar`` at timestep label ``t``."""
        try:
            return float(self.alpha_bar[self._index[int(t)]])
        except KeyError:
            raise ValueError(f"timestep {t} is not in this schedule") from None

    def __contains__(self, t) -> bool:
        return int(t) in self._index

    def transitions(self):
        """(t, t_prev) label pairs for synthesis order, noisiest first."""
        ts = [int(t) for t in self.timesteps]
        return [(ts[i + 1], ts[i]) for i in reversed(range(len(ts) - 1))]

    def __len__(self):
        return len(self.timesteps)

    def __repr__(self):
        return (f"NoiseSchedule(num_steps={self.num_steps}, T={self.T}, "
                f"alpha_bar[0]={self.alpha_bar[0]:.6g}, alpha_bar[-1]={self.alpha_bar[-1]:.6g})")


def _cumulative_alpha(betas) -> np.ndarray:
    betas = np.asarray(betas, dtype=np.float64)
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def linear_beta_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                         beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """DDPM linear-beta schedule with ``alpha_bar[0] = 1``."""
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, int(T))
    return NoiseSchedule(_cumulative_alpha(betas), np.arange(int(T) + 1))


def subsample(schedule: NoiseSchedule, num_steps: int) -> NoiseSchedule:
    """Evenly strided schedule with ``num_steps`` transitions.

    Labels are ``round(linspace(0, T, num_steps + 1))`` picked from the
    parent schedule, so ``num_steps == schedule.num_steps`` is the identity.
    """
    n = schedule.num_steps
    if int(num_steps) != num_steps or num_steps < 2 or num_steps > n:
        raise ValueError(f"num_steps must be in [2, {n}], got {num_steps}")
    idx = np.round(np.linspace(0, n, int(num_steps) + 1)).astype(np.int64)
    return NoiseSchedule(schedule.alpha_bar[idx], schedule.timesteps[idx])
