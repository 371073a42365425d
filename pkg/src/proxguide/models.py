"""Noise predictors.

Every predictor is a callable ``predictor(z, t, cond) -> eps`` where ``t`` is
a timestep label of the schedule the predictor was bound to. Two concrete
predictors are provided:

* :class:`MixturePredictor` -- the exact noise prediction of a conditional
  isotropic Gaussian mixture (closed-form marginal score), smooth in both the
  latent and the condition.
* :class:`TokenDenoiser` -- a small seeded (untrained) self-attention network
  whose key/value features can be captured from one branch and injected
  into another.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .schedule import NoiseSchedule, linear_beta_schedule

__all__ = [
    "Condition",
    "MixtureOracle",
    "MixturePredictor",
    "epsilon_mixture",
    "mixture_responsibilities",
    "InjectionMode",
    "TokenDenoiser",
    "epsilon_attention",
    "epsilon_grad_condition",
    "Predictor",
]

Predictor = Callable[[np.ndarray, int, "Condition"], np.ndarray]


@dataclass(frozen=True, eq=False)
class Condition:
    """Conditioning vector: mixture-selection logits plus a latent-sized shift.

    The null condition has all-zero logits and zero shift.
    """

    logits: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64).reshape(-1)
        shift = np.array(self.shift, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(shift))):
            raise ValueError("condition entries must be finite")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def null(cls, num_logits: int, latent_size: int) -> "Condition":
        return cls(np.zeros(num_logits), np.zeros(latent_size))

    @classmethod
    def from_logits(cls, logits, latent_size: int) -> "Condition":
        return cls(logits, np.zeros(latent_size))

    @classmethod
    def from_vector(cls, vec, num_logits: int) -> "Condition":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:num_logits], vec[num_logits:])

    @property
    def num_logits(self) -> int:
        return self.logits.size

    @property
    def size(self) -> int:
        return self.logits.size + self.shift.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.logits, self.shift])

    def __eq__(self, other):
        if not isinstance(other, Condition):
            return NotImplemented
        return (np.array_equal(self.logits, other.logits)
                and np.array_equal(self.shift, other.shift))

    def __hash__(self):
        return hash((self.logits.tobytes(), self.shift.tobytes()))


# --------------------------------------------------------------------------
# Gaussian-mixture oracle
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixtureOracle:
    """Isotropic Gaussian mixture over latents of shape ``latent_shape``.

    Component ``k`` is ``Normal(means[k], scales[k]**2 * I)`` with prior
    weight ``weights[k]`` (normalized on construction).
    """

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    latent_shape: tuple = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        s = np.array(self.scales, dtype=np.float64).reshape(-1)
        shape = tuple(self.latent_shape) if self.latent_shape else None
        m = np.array(self.means, dtype=np.float64)
        if m.ndim == 1:
            m = m[None, :]
        m = m.reshape(m.shape[0], -1)
        if shape is None:
            shape = (m.shape[1],)
        if int(np.prod(shape)) != m.shape[1]:
            raise ValueError(f"means of size {m.shape[1]} do not fit latent_shape {shape}")
        if not (w.size == s.size == m.shape[0]):
            raise ValueError("weights, means and scales disagree on component count")
        if np.any(w <= 0) or np.any(s <= 0):
            raise ValueError("weights and scales must be strictly positive")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(w)) and np.all(np.isfinite(s))):
            raise ValueError("oracle parameters must be finite")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "latent_shape", shape)

    @property
    def num_components(self) -> int:
        return self.weights.size

    @property
    def latent_dim(self) -> int:
        return self.means.shape[1]

    def null_condition(self) -> Condition:
        return Condition.null(self.num_components, self.latent_dim)

    def condition(self, logits, shift=None) -> Condition:
        if shift is None:
            shift = np.zeros(self.latent_dim)
        return Condition(logits, shift)

    def sample(self, rng: np.random.Generator, cond: Optional[Condition] = None) -> np.ndarray:
        """Draw one clean latent, optionally under a condition's reweighting."""
        cond = cond or self.null_condition()
        w = _mixing_weights(self, cond)
        k = rng.choice(self.num_components, p=w)
        x = self.means[k] + cond.shift + self.scales[k] * rng.standard_normal(self.latent_dim)
        return x.reshape(self.latent_shape)

    def predictor(self, schedule: NoiseSchedule) -> "MixturePredictor":
        return MixturePredictor(self, schedule)


def _mixing_weights(oracle: MixtureOracle, cond: Condition) -> np.ndarray:
    if cond.num_logits != oracle.num_components:
        raise ValueError(f"condition has {cond.num_logits} logits, oracle has "
                         f"{oracle.num_components} components")
    a = cond.logits + np.log(oracle.weights)
    a = a - a.max()
    w = np.exp(a)
    return w / w.sum()


def _mixture_terms(z, t, cond, oracle, schedule):
    """Shared pieces of the marginal score at timestep label ``t``."""
    z = np.asarray(z, dtype=np.float64)
    if z.size != oracle.latent_dim:
        raise ValueError(f"latent of size {z.size} does not match oracle dimension {oracle.latent_dim}")
    if cond.shift.size != oracle.latent_dim:
        raise ValueError("condition shift does not match oracle dimension")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent contains non-finite values")
    a = schedule.alpha(t)
    zf = z.reshape(-1)
    centers = np.sqrt(a) * (oracle.means + cond.shift)          # (K, D)
    var = a * oracle.scales ** 2 + (1.0 - a)                    # (K,)
    diff = zf[None, :] - centers                                # (K, D)
    log_w = np.log(_mixing_weights(oracle, cond))
    log_p = log_w - 0.5 * oracle.latent_dim * np.log(var) - 0.5 * np.sum(diff ** 2, axis=1) / var
    log_p -= log_p.max()
    r = np.exp(log_p)
    r /= r.sum()
    return a, diff, var, r


def mixture_responsibilities(z, t, cond: Condition, oracle: MixtureOracle,
                             schedule: NoiseSchedule) -> np.ndarray:
    """Posterior component probabilities of ``z`` under the time-``t`` marginal."""
    return _mixture_terms(z, t, cond, oracle, schedule)[3]


def epsilon_mixture(z, t, cond: Condition, oracle: MixtureOracle,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Exact noise prediction ``-sqrt(1 - a_t) * grad log p_t(z | cond)``."""
    a, diff, var, r = _mixture_terms(z, t, cond, oracle, schedule)
    eps = np.sqrt(1.0 - a) * ((r / var) @ diff)
    return eps.reshape(np.shape(z))


@dataclass(frozen=True, eq=False)
class MixturePredictor:
    """A :class:`MixtureOracle` bound to the schedule its labels refer to."""

    oracle: MixtureOracle
    schedule: NoiseSchedule

    def __call__(self, z, t, cond: Condition) -> np.ndarray:
        return epsilon_mixture(z, t, cond, self.oracle, self.schedule)

    def condition_jacobian(self, z, t, cond: Condition) -> np.ndarray:
        """Analytic d(eps)/d(cond.vector()), shape (latent_size, cond.size)."""
        a, diff, var, r = _mixture_terms(z, t, cond, self.oracle, self.schedule)
        c = np.sqrt(1.0 - a)
        e = c * diff / var[:, None]                     # per-component eps, (K, D)
        eps = r @ e
        # logits: d eps / d l_j = r_j (e_j - eps)
        j_logits = (r[:, None] * (e - eps[None, :])).T  # (D, K)
        # shift: d log r_k / ds = g_k - sum_i r_i g_i,  g_k = sqrt(a) diff_k / v_k
        g = np.sqrt(a) * diff / var[:, None]
        g_bar = r @ g
        j_shift = (e * r[:, None]).T @ (g - g_bar[None, :])
        j_shift -= np.eye(diff.shape[1]) * (c * np.sqrt(a) * np.sum(r / var))
        return np.concatenate([j_logits, j_shift], axis=1)

    def condition_vjp(self, z, t, cond: Condition, v) -> np.ndarray:
        """``J^T v`` for the condition Jacobian without forming the D x D block."""
        a, diff, var, r = _mixture_terms(z, t, cond, self.oracle, self.schedule)
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        c = np.sqrt(1.0 - a)
        e = c * diff / var[:, None]
        eps = r @ e
        ev = e @ v                                       # (K,)
        g_logits = r * (ev - eps @ v)
        g = np.sqrt(a) * diff / var[:, None]
        g_bar = r @ g
        g_shift = (r * ev) @ (g - g_bar[None, :]) - v * (c * np.sqrt(a) * np.sum(r / var))
        return np.concatenate([g_logits, g_shift])


# --------------------------------------------------------------------------
# Token self-attention denoiser
# --------------------------------------------------------------------------

class InjectionMode(str, enum.Enum):
    """Which key/value set a consuming branch attends over."""

    SOURCE = "source"   # injected keys/values only
    JOINT = "joint"     # own and injected keys/values concatenated
    NONE = "none"       # ordinary self-attention

    @classmethod
    def parse(cls, value) -> "InjectionMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown injection mode {value!r}; expected source, joint or none") from None


def _softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    ex = np.exp(x)
    return ex / ex.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class TokenDenoiser:
    """Seeded residual self-attention network over a (tokens, embed) grid.

    The latent is read as ``token_count`` tokens of width ``embed_dim``.
    Each block computes its own keys and values; these are returned as
    captured features ``[(K_1, V_1), ...]`` so another branch can consume
    them through an :class:`InjectionMode`.

    The output is ``sqrt(1 - alpha_bar_t) * z + gain * tanh(net(z))``: the
    exact noise predictor for standard-normal data plus a bounded attention
    term, which keeps DDIM inversion stable while every conditioning and
    injection effect still flows through the attention blocks.
    """

    token_count: int = 16
    embed_dim: int = 16
    head_count: int = 2
    num_blocks: int = 2
    num_logits: int = 4
    seed: int = 0
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    gain: float = 0.1
    params: dict = field(init=False, repr=False)
    schedule: NoiseSchedule = field(init=False, repr=False)

    def __post_init__(self):
        if min(self.token_count, self.embed_dim, self.head_count, self.num_blocks, self.num_logits) < 1:
            raise ValueError("denoiser dimensions must be positive")
        if self.embed_dim % self.head_count:
            raise ValueError("embed_dim must be divisible by head_count")
        rng = np.random.default_rng(self.seed)
        d = self.embed_dim

        def mat(n_in, n_out, gain=1.0):
            return rng.standard_normal((n_in, n_out)) * (gain / np.sqrt(n_in))

        blocks = []
        for _ in range(self.num_blocks):
            blocks.append({
                "wq": mat(d, d), "wk": mat(d, d), "wv": mat(d, d), "wo": mat(d, d, 0.5),
                "w1": mat(d, 2 * d), "w2": mat(2 * d, d, 0.5),
            })
        params = {
            "blocks": blocks,
            "w_time": mat(d, d, 0.5),
            "w_cond": mat(self.num_logits, d, 0.5),
            "w_out": mat(d, d),
        }
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "schedule", linear_beta_schedule(self.T, self.beta_start, self.beta_end))

    @property
    def latent_shape(self) -> tuple:
        return (self.token_count, self.embed_dim)

    @property
    def latent_size(self) -> int:
        return self.token_count * self.embed_dim

    def null_condition(self) -> Condition:
        return Condition.null(self.num_logits, self.latent_size)

    def _time_embedding(self, t) -> np.ndarray:
        half = self.embed_dim // 2
        freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
        ang = float(t) * freqs
        emb = np.concatenate([np.sin(ang), np.cos(ang)])
        if emb.size < self.embed_dim:
            emb = np.concatenate([emb, [0.0]])
        return emb @ self.params["w_time"]

    def _attend(self, q, k, v):
        n_heads = self.head_count
        dh = self.embed_dim // n_heads
        out = np.empty_like(q)
        for h in range(n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            w = _softmax(q[:, sl] @ k[:, sl].T / np.sqrt(dh), axis=-1)
            out[:, sl] = w @ v[:, sl]
        return out

    def forward(self, z, t, cond: Condition, injection=InjectionMode.NONE,
                injected: Optional[Sequence] = None):
        """Return ``(eps, captured)``; see :func:`epsilon_attention`."""
        mode = InjectionMode.parse(injection)
        z = np.asarray(z, dtype=np.float64)
        if z.size != self.latent_size:
            raise ValueError(f"latent of size {z.size} cannot be read as {self.latent_shape} tokens")
        if not np.all(np.isfinite(z)):
            raise ValueError("latent contains non-finite values")
        if cond.num_logits != self.num_logits or cond.shift.size != self.latent_size:
            raise ValueError("condition does not match denoiser dimensions")
        if mode is not InjectionMode.NONE:
            self._check_features(injected)

        x = z.reshape(self.latent_shape)
        h = (x + self._time_embedding(t)[None, :]
             + (cond.logits @ self.params["w_cond"])[None, :]
             + cond.shift.reshape(self.latent_shape))
        captured = []
        for b, blk in enumerate(self.params["blocks"]):
            q = h @ blk["wq"]
            k = h @ blk["wk"]
            v = h @ blk["wv"]
            captured.append((k, v))
            if mode is InjectionMode.SOURCE:
                k, v = injected[b]
            elif mode is InjectionMode.JOINT:
                k = np.concatenate([k, injected[b][0]], axis=0)
                v = np.concatenate([v, injected[b][1]], axis=0)
            h = h + self._attend(q, k, v) @ blk["wo"]
            h = h + np.tanh(h @ blk["w1"]) @ blk["w2"]
        base = np.sqrt(1.0 - self.schedule.alpha(t)) * x
        eps = base + self.gain * np.tanh(h @ self.params["w_out"])
        return eps.reshape(z.shape), captured

    def _check_features(self, injected):
        if injected is None:
            raise ValueError("injection mode source/joint requires captured features")
        if len(injected) != self.num_blocks:
            raise ValueError(f"expected features for {self.num_blocks} blocks, got {len(injected)}")
        for k, v in injected:
            if np.shape(k) != self.latent_shape or np.shape(v) != self.latent_shape:
                raise ValueError(f"injected feature shape {np.shape(k)}/{np.shape(v)} "
                                 f"does not match {self.latent_shape}")

    def __call__(self, z, t, cond: Condition) -> np.ndarray:
        return self.forward(z, t, cond)[0]


def epsilon_attention(z, t, cond: Condition, model: TokenDenoiser,
                      injection=InjectionMode.NONE, injected=None):
    """Noise prediction of ``model`` plus its own captured key/value features.

    ``source`` replaces each block's keys and values with ``injected``;
    ``joint`` attends over own and injected sets concatenated. Queries are
    always the model's own.
    """
    return model.forward(z, t, cond, injection, injected)


# --------------------------------------------------------------------------
# Condition sensitivity
# --------------------------------------------------------------------------

def epsilon_grad_condition(z, t, cond: Condition, predictor: Predictor, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference Jacobian of ``predictor`` w.r.t. the condition.

    Returns an array of shape (latent_size, cond.size), columns ordered as
    ``cond.vector()`` (logits first, then shift).
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    base = cond.vector()
    k = cond.num_logits
    z_size = np.size(z)
    jac = np.empty((z_size, base.size))
    for i in range(base.size):
        up = base.copy()
        dn = base.copy()
        up[i] += h
        dn[i] -= h
        e_up = np.asarray(predictor(z, t, Condition.from_vector(up, k))).reshape(-1)
        e_dn = np.asarray(predictor(z, t, Condition.from_vector(dn, k))).reshape(-1)
        jac[:, i] = (e_up - e_dn) / (2.0 * h)
    return jac
