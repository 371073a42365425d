"""Thresholding proximal operators and dynamic thresholds.

The configured threshold ``lam`` is the *comparison* threshold for both
penalties and for the edit mask: hard thresholding keeps ``|x| > lam``,
soft thresholding shrinks by ``lam``, and the mask marks ``|x| <= lam`` as
unedited. For the L0 penalty weight ``mu`` of the textbook objective
``0.5 (z - x)^2 + mu [z != 0]`` the comparison threshold is
``sqrt(2 mu)``; see :func:`l0_weight_to_threshold`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ThresholdSpec",
    "soft_threshold",
    "hard_threshold",
    "l0_weight_to_threshold",
    "quantile_abs",
    "resolve_lambda",
    "prox_apply",
]

PENALTIES = ("l0", "l1", "none")
MODES = ("fixed", "quantile")


def soft_threshold(x, lam: float):
    """Shrink toward zero by ``lam``; entries with ``|x| <= lam`` become 0."""
    if lam < 0:
        raise ValueError(f"threshold must be nonnegative, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def hard_threshold(x, tau: float):
    """Keep entries with ``|x| > tau``, zero the rest (ties go to zero)."""
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) > tau, x, 0.0)


def l0_weight_to_threshold(mu: float) -> float:
    return float(np.sqrt(2.0 * mu))


def quantile_abs(d, q: float) -> float:
    """``q``-quantile of ``|d|`` by linear interpolation of order statistics."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile must be in [0, 1], got {q}")
    a = np.abs(np.asarray(d, dtype=np.float64)).reshape(-1)
    if a.size == 0:
        raise ValueError("cannot take a quantile of an empty field")
    return float(np.quantile(a, q, method="linear"))


@dataclass(frozen=True)
class ThresholdSpec:
    """How to pick the threshold and which penalty to apply.

    ``mode='quantile'`` reads ``value`` as a quantile of ``|d|`` resolved
    per call; ``mode='fixed'`` uses ``value`` directly.
    """

    mode: str = "quantile"
    value: float = 0.7
    penalty: str = "l0"

    def __post_init__(self):
        mode = str(self.mode).lower()
        penalty = str(self.penalty).lower()
        if mode not in MODES:
            raise ValueError(f"threshold mode must be one of {MODES}, got {self.mode!r}")
        if penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")
        value = float(self.value)
        if mode == "quantile" and not 0.0 <= value <= 1.0:
            raise ValueError(f"quantile must be in [0, 1], got {value}")
        if mode == "fixed" and not value >= 0.0:
            raise ValueError(f"fixed threshold must be >= 0, got {value}")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "penalty", penalty)
        object.__setattr__(self, "value", value)

    @classmethod
    def quantile(cls, q: float, penalty: str = "l0") -> "ThresholdSpec":
        return cls("quantile", q, penalty)

    @classmethod
    def fixed(cls, lam: float, penalty: str = "l0") -> "ThresholdSpec":
        return cls("fixed", lam, penalty)

    @classmethod
    def identity(cls) -> "ThresholdSpec":
        return cls("fixed", 0.0, "none")


def resolve_lambda(d, spec: ThresholdSpec) -> float:
    if spec.mode == "quantile":
        return quantile_abs(d, spec.value)
    return spec.value


def prox_apply(d, spec: ThresholdSpec):
    """Threshold ``d`` according to ``spec``.

    Returns ``(out, mask, lam)`` where ``mask`` is True on unedited entries
    (``|d| <= lam``) and ``lam`` is the resolved threshold.
    """
    d = np.asarray(d, dtype=np.float64)
    lam = resolve_lambda(d, spec)
    mask = np.abs(d) <= lam
    if spec.penalty == "l0":
        out = hard_threshold(d, lam)
    elif spec.penalty == "l1":
        out = soft_threshold(d, lam)
    else:
        out = d.copy()
    return out, mask, lam
