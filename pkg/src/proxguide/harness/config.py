"""Run configuration: bundled defaults, TOML/JSON loading and scenario building."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..masactrl import BranchConfig
from ..models import Condition, MixtureOracle, TokenDenoiser
from ..prox import ThresholdSpec
from ..proxnpi import GuidanceConfig
from ..schedule import linear_beta_schedule, subsample

__all__ = ["ConfigError", "RunConfig", "Scenario", "load_config", "default_config", "pattern"]

SECTIONS = ("schedule", "oracle", "denoiser", "conditions", "guidance", "nti", "masactrl")
TOP_LEVEL = ("seed", "steps", "inversion", "predictor")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def default_config() -> dict:
    text = resources.files("proxguide").joinpath("data/default.toml").read_text()
    return tomllib.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides: dict | None = None) -> "RunConfig":
    """Defaults, then ``path`` (TOML, or a run manifest JSON), then ``overrides``."""
    raw = default_config()
    if path is not None:
        path = Path(path)
        try:
            if path.suffix == ".json":
                data = json.loads(path.read_text())
                data = data.get("config", data)
            else:
                data = tomllib.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        raw = _merge(raw, _threshold_override(raw, data))
    if overrides:
        raw = _merge(raw, _threshold_override(raw, overrides))
    cfg = RunConfig(raw)
    cfg.validate()
    return cfg


def _threshold_override(base: dict, over: dict) -> dict:
    """Setting one of quantile/lambda in a layer clears the other from lower layers."""
    g = over.get("guidance", {})
    if "quantile" in g and "lambda" in g:
        raise ConfigError("guidance.quantile and guidance.lambda are mutually exclusive")
    base_g = base.setdefault("guidance", {})
    if "quantile" in g:
        base_g.pop("lambda", None)
    if "lambda" in g:
        base_g.pop("quantile", None)
    return over


_PATTERNS = ("blob", "wave", "ramp", "ring", "stripes")


def pattern(name: str, grid: int) -> np.ndarray:
    """Smooth unit-scale test image on a ``grid x grid`` lattice."""
    c = (grid - 1) / 2.0
    yy, xx = (np.mgrid[:grid, :grid] - c) / max(c, 1.0)
    if name == "blob":
        return 2.0 * np.exp(-(xx ** 2 + yy ** 2) / 0.3) - 0.5
    if name == "wave":
        return np.cos(np.pi * xx) * np.cos(np.pi * yy)
    if name == "ramp":
        return xx + 0.5 * yy
    if name == "ring":
        r = np.sqrt(xx ** 2 + yy ** 2)
        return 1.5 * np.exp(-((r - 0.6) ** 2) / 0.05) - 0.5
    if name == "stripes":
        return np.sin(3 * np.pi * yy)
    raise ConfigError(f"unknown pattern {name!r}; choose from {_PATTERNS}")


@dataclass
class Scenario:
    schedule: object
    base_schedule: object
    predictor: object
    z0: np.ndarray
    c_src: Condition
    c_tar: Condition
    c_null: Condition


class RunConfig:
    """Validated view over the nested config dict."""

    def __init__(self, raw: dict):
        self.raw = raw

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def __getitem__(self, key):
        return self.raw[key]

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    # -- validation -------------------------------------------------------
    def validate(self):
        unknown = set(self.raw) - set(SECTIONS) - set(TOP_LEVEL)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if self.raw.get("inversion") not in ("naive", "exact"):
            raise ConfigError(f"inversion must be naive or exact, got {self.raw.get('inversion')!r}")
        if self.raw.get("predictor") not in ("mixture", "attention"):
            raise ConfigError(f"predictor must be mixture or attention, got {self.raw.get('predictor')!r}")
        if not isinstance(self.raw.get("seed"), int):
            raise ConfigError("seed must be an integer")
        g = self.section("guidance")
        if ("quantile" in g) == ("lambda" in g):
            raise ConfigError("exactly one of guidance.quantile and guidance.lambda must be set")
        try:
            self.schedule()
            self.oracle()
            self.guidance().check_schedule(self.base_schedule())
            self.branch()
            self.nti_params()
            c_src, c_tar = self._condition_logits()
            if len(c_src) != len(c_tar):
                raise ConfigError("source and target conditions differ in length")
            if len(c_src) != len(self.section("oracle")["scales"]):
                raise ConfigError("condition length must equal the number of oracle components")
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    # -- builders ---------------------------------------------------------
    def base_schedule(self):
        s = self.section("schedule")
        return linear_beta_schedule(int(s["T"]), float(s["beta_start"]), float(s["beta_end"]))

    def schedule(self):
        return subsample(self.base_schedule(), int(self.raw["steps"]))

    def oracle(self) -> MixtureOracle:
        o = self.section("oracle")
        grid = int(o["grid"])
        if "means" in o:
            means = np.asarray(o["means"], dtype=np.float64).reshape(len(o["means"]), -1)
        else:
            means = np.stack([pattern(p, grid).reshape(-1) for p in o["patterns"]])
            means = float(o.get("amplitude", 1.0)) * means
        weights = o.get("weights", [1.0] * len(means))
        return MixtureOracle(weights, means, o["scales"], (grid, grid))

    def denoiser(self) -> TokenDenoiser:
        d = self.section("denoiser")
        grid = int(self.section("oracle")["grid"])
        return TokenDenoiser(
            token_count=int(d.get("token_count", grid)),
            embed_dim=int(d.get("embed_dim", grid)),
            head_count=int(d.get("head_count", 2)),
            num_blocks=int(d.get("num_blocks", 2)),
            num_logits=len(self.section("conditions")["source"]),
            seed=int(d.get("seed", 0)),
            T=int(self.section("schedule")["T"]),
            beta_start=float(self.section("schedule")["beta_start"]),
            beta_end=float(self.section("schedule")["beta_end"]),
            gain=float(d.get("gain", 0.1)),
        )

    def threshold(self) -> ThresholdSpec:
        g = self.section("guidance")
        prox = str(g.get("prox", "l0"))
        if "lambda" in g:
            return ThresholdSpec.fixed(float(g["lambda"]), prox)
        return ThresholdSpec.quantile(float(g["quantile"]), prox)

    def guidance(self) -> GuidanceConfig:
        g = self.section("guidance")
        return GuidanceConfig(w=float(g["w"]), threshold=self.threshold(),
                              recon_enabled=bool(g.get("recon", False)),
                              eta=float(g.get("eta", 0.1)), t_rec=int(g.get("t_rec", 400)))

    def branch(self) -> BranchConfig:
        m = self.section("masactrl")
        return BranchConfig(alpha=float(m.get("alpha", 1.0)),
                            injection_uncond=m.get("inject_uncond", "source"),
                            injection_cond=m.get("inject_cond", "source"),
                            inject_start_step=int(m.get("inject_start_step", 0)),
                            capture_condition=str(m.get("capture_condition", "src")))

    def nti_params(self) -> dict:
        n = self.section("nti")
        inner, lr = int(n.get("inner_iters", 10)), float(n.get("lr", 0.1))
        loss_tol = float(n.get("loss_tol", 1e-4))
        if inner < 1 or not lr > 0 or not loss_tol >= 0:
            raise ConfigError("nti.inner_iters must be >= 1, nti.lr > 0 and nti.loss_tol >= 0")
        return {"inner_iters": inner, "lr": lr, "loss_tol": loss_tol}

    def _condition_logits(self):
        c = self.section("conditions")
        return [float(v) for v in c["source"]], [float(v) for v in c["target"]]

    def scenario(self, kind: str | None = None) -> Scenario:
        """Build schedule, predictor, source latent and conditions.

        ``kind`` overrides the configured predictor (``mixture`` or ``attention``).
        The source latent is a seeded draw from the oracle's source component
        in both cases.
        """
        kind = kind or self.raw["predictor"]
        base = self.base_schedule()
        schedule = subsample(base, int(self.raw["steps"]))
        oracle = self.oracle()
        rng = np.random.default_rng(self.raw["seed"])
        k = int(self.section("oracle").get("source_component", 0))
        if not 0 <= k < oracle.num_components:
            raise ConfigError(f"source_component {k} out of range")
        z0 = oracle.means[k] + oracle.scales[k] * rng.standard_normal(oracle.latent_dim)
        z0 = z0.reshape(oracle.latent_shape)
        src, tar = self._condition_logits()
        size = oracle.latent_dim
        if kind == "mixture":
            predictor = oracle.predictor(base)
        else:
            predictor = self.denoiser()
            if predictor.latent_size != size:
                raise ConfigError("denoiser token grid does not match the oracle grid")
        return Scenario(schedule, base, predictor, z0,
                        Condition.from_logits(src, size), Condition.from_logits(tar, size),
                        Condition.null(len(src), size))
