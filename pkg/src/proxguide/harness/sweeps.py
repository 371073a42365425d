"""Ablation sweeps over the canonical scenario, plus the prox closed-form table.

Every sweep writes a cell table (one row per grid cell, failed cells keep
their row with ``status`` set to the error) and a long per-step table.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import replace

import numpy as np

from ..ddim import invert_trajectory, predict_z0, reconstruct
from ..masactrl import proxmasactrl_edit
from ..models import InjectionMode
from ..prox import ThresholdSpec, hard_threshold, prox_apply, soft_threshold
from ..proxnpi import GuidanceConfig, masked_errors, npi_edit, proxnpi_edit, reconstruction_guidance
from .config import RunConfig
from .io import write_csv
from .runner import run_staged

__all__ = [
    "ablate_threshold",
    "ablate_recon",
    "ablate_masactrl",
    "prox_table",
    "brute_force_prox",
    "SWEEPS",
    "THRESHOLD_QUANTILES",
    "RECON_ETAS",
    "RECON_T_RECS",
    "MASACTRL_ALPHAS",
]

log = logging.getLogger(__name__)

THRESHOLD_QUANTILES = (0.60, 0.70, 0.80, 0.85, 0.90, 0.95)
THRESHOLD_PENALTIES = ("l0", "l1")
THRESHOLD_WS = (7.5, 15.0)
RECON_ETAS = (0.01, 0.05, 0.1, 0.5, 1.0)
RECON_T_RECS = (400, 600)
MASACTRL_ALPHAS = (0.0, 0.5, 1.0)
MASACTRL_MODES = ("source", "joint", "none")


def _cell(fn, row, steps_out):
    try:
        res, steps = fn()
        row.update(res)
        row["status"] = "ok"
        steps_out.extend(steps)
    except Exception as exc:  # noqa: BLE001 - failed cells are recorded, the sweep goes on
        log.warning("sweep cell %s failed: %s", row, exc)
        row["status"] = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def ablate_threshold(cfg: RunConfig, quantiles=THRESHOLD_QUANTILES, penalties=THRESHOLD_PENALTIES,
                     ws=THRESHOLD_WS):
    """Grid over guidance scale x penalty x quantile (recon guidance off).

    Returns ``(cells, steps)``: cells carry the terminal edit deviation from
    the plain DDIM reconstruction and the mean clamp fraction; steps carry
    the per-step prox norm and effective threshold along the cell's own
    trajectory. Since every cell follows a different trajectory, steps also
    carry ``prox_norm_ref``: the prox norm of the cell's operator applied to
    a shared guidance difference, taken along the unthresholded edit at the
    same ``w``, so cells are comparable at a fixed input.
    """
    sc = cfg.scenario("mixture")
    inv = invert_trajectory(sc.z0, sc.c_src, sc.predictor, sc.schedule, mode=cfg["inversion"])
    rec = reconstruct(inv.terminal, sc.c_src, sc.predictor, sc.schedule)
    ref_diffs = {}
    for w in ws:
        ref = npi_edit(sc.z0, sc.c_src, sc.c_tar, w, sc.predictor, sc.schedule, inversion=inv)
        ref_diffs[float(w)] = [sc.predictor(z, t, sc.c_tar) - sc.predictor(z, t, sc.c_src)
                               for z, t in zip(ref.latents[:-1], ref.timesteps[:-1])]
    cells, steps = [], []
    for w, penalty, q in itertools.product(ws, penalties, quantiles):
        key = {"w": float(w), "penalty": penalty, "quantile": float(q)}

        def body(key=key):
            g = GuidanceConfig(w=key["w"], threshold=ThresholdSpec.quantile(key["quantile"], key["penalty"]))
            edit = proxnpi_edit(sc.z0, sc.c_src, sc.c_tar, g, sc.predictor, sc.schedule, inversion=inv)
            res = {"deviation": float(np.linalg.norm(edit.terminal - rec.terminal)),
                   "mean_clamp_fraction": float(np.mean([d["clamp_fraction"] for d in edit.diagnostics])),
                   "terminal_mse": float(np.mean((edit.terminal - sc.z0) ** 2))}
            spec = g.threshold
            st = [{**key, "step": i + 1, "t": d["t"], "prox_norm": d["prox_norm"],
                   "diff_norm": d["diff_norm"], "effective_lambda": d["effective_lambda"],
                   "clamp_fraction": d["clamp_fraction"],
                   "prox_norm_ref": float(np.linalg.norm(prox_apply(ref_diffs[key["w"]][i], spec)[0]))}
                  for i, d in enumerate(edit.diagnostics)]
            return res, st

        cells.append(_cell(body, dict(key), steps))
    return cells, steps


def ablate_recon(cfg: RunConfig, etas=RECON_ETAS, t_recs=RECON_T_RECS):
    """Grid over reconstruction-guidance step size x cutoff.

    The threshold comes from the config (default 70% quantile, L0). Cells
    report the masked-region MSE of the terminal latent against the source
    (mask from the final step) and the edit deviation; steps report the
    masked MSE of the predicted clean latent before and after guidance, both
    along the cell's own trajectory and (``masked_mse_ref_*``) for the
    guidance applied to the predicted clean latent and mask of a shared
    reference edit without reconstruction guidance.
    """
    sc = cfg.scenario("mixture")
    base = cfg.guidance()
    inv = invert_trajectory(sc.z0, sc.c_src, sc.predictor, sc.schedule, mode=cfg["inversion"])
    rec = reconstruct(inv.terminal, sc.c_src, sc.predictor, sc.schedule)
    ref = proxnpi_edit(sc.z0, sc.c_src, sc.c_tar, replace(base, recon_enabled=False), sc.predictor,
                       sc.schedule, inversion=inv)
    ref_z0 = [(predict_z0(z, e, t, sc.schedule), d["mask"])
              for z, e, t, d in zip(ref.latents, ref.eps, ref.timesteps, ref.diagnostics)]
    cells, steps = [], []
    for t_rec, eta in itertools.product(t_recs, etas):
        key = {"t_rec": int(t_rec), "eta": float(eta)}

        def body(key=key):
            g = replace(base, recon_enabled=True, eta=key["eta"], t_rec=key["t_rec"])
            edit = proxnpi_edit(sc.z0, sc.c_src, sc.c_tar, g, sc.predictor, sc.schedule, inversion=inv)
            mask = edit.diagnostics[-1]["mask"]
            n = max(int(mask.sum()), 1)
            res = {"masked_mse": float(np.sum(mask * (edit.terminal - sc.z0) ** 2) / n),
                   "deviation": float(np.linalg.norm(edit.terminal - rec.terminal)),
                   "terminal_mse": float(np.mean((edit.terminal - sc.z0) ** 2))}
            st = []
            for i, d in enumerate(edit.diagnostics):
                row = {**key, "step": i + 1, "t": d["t"], "guided": d["guided"],
                       "masked_mse_before": d.get("masked_mse_before"),
                       "masked_mse_after": d.get("masked_mse_after"),
                       "masked_max_dev_after": d.get("masked_max_dev_after"),
                       "mask_coverage": d["mask_coverage"]}
                if d["guided"]:
                    z0_hat, m = ref_z0[i]
                    probe = masked_errors(z0_hat, reconstruction_guidance(z0_hat, sc.z0, m, key["eta"]),
                                           sc.z0, m)
                    row["masked_mse_ref_before"] = probe["masked_mse_before"]
                    row["masked_mse_ref_after"] = probe["masked_mse_after"]
                st.append(row)
            return res, st

        cells.append(_cell(body, dict(key), steps))
    return cells, steps


def ablate_masactrl(cfg: RunConfig, alphas=MASACTRL_ALPHAS, modes=MASACTRL_MODES, quantiles=None):
    """Grid over null interpolation alpha x unconditional injection mode x quantile.

    The conditional term keeps the configured injection mode. Cells report
    the terminal divergence of the synthesis branch from the reconstruction
    branch and summary statistics of the synthesized latent.
    """
    sc = cfg.scenario("attention")
    base_branch = cfg.branch()
    threshold = cfg.threshold()
    if quantiles is None:
        quantiles = (threshold.value if threshold.mode == "quantile" else 0.7, 1.0)
    w = cfg.guidance().w
    inv = invert_trajectory(sc.z0, sc.c_src, sc.predictor, sc.schedule, mode=cfg["inversion"])
    cells, steps = [], []
    for q, alpha, mode in itertools.product(quantiles, alphas, modes):
        key = {"quantile": float(q), "alpha": float(alpha), "inject_uncond": mode}

        def body(key=key):
            branch = replace(base_branch, alpha=key["alpha"],
                             injection_uncond=InjectionMode.parse(key["inject_uncond"]))
            spec = ThresholdSpec.quantile(key["quantile"], threshold.penalty)
            rec, syn = proxmasactrl_edit(sc.z0, sc.c_src, sc.c_tar, w, branch, spec, sc.predictor,
                                         sc.schedule, c_null=sc.c_null, inversion=inv)
            res = {"divergence": float(np.linalg.norm(syn.terminal - rec.terminal)),
                   "synth_mean": float(np.mean(syn.terminal)),
                   "synth_std": float(np.std(syn.terminal)),
                   "max_uncond_gap": max(d["uncond_gap"] for d in syn.diagnostics)}
            st = [{**key, "step": i + 1, "t": d["t"], "divergence": d["divergence"],
                   "uncond_gap": d["uncond_gap"], "clamp_fraction": d["clamp_fraction"]}
                  for i, d in enumerate(syn.diagnostics)]
            return res, st

        cells.append(_cell(body, dict(key), steps))
    return cells, steps


SWEEPS = {
    "ablate-threshold": (ablate_threshold,
                         ["w", "penalty", "quantile", "status", "deviation", "mean_clamp_fraction",
                          "terminal_mse"],
                         ["w", "penalty", "quantile", "step", "t", "prox_norm", "diff_norm",
                          "effective_lambda", "clamp_fraction", "prox_norm_ref"]),
    "ablate-recon": (ablate_recon,
                     ["t_rec", "eta", "status", "masked_mse", "deviation", "terminal_mse"],
                     ["t_rec", "eta", "step", "t", "guided", "masked_mse_before", "masked_mse_after",
                      "masked_max_dev_after", "mask_coverage", "masked_mse_ref_before",
                      "masked_mse_ref_after"]),
    "ablate-masactrl": (ablate_masactrl,
                        ["quantile", "alpha", "inject_uncond", "status", "divergence", "synth_mean",
                         "synth_std", "max_uncond_gap"],
                        ["quantile", "alpha", "inject_uncond", "step", "t", "divergence", "uncond_gap",
                         "clamp_fraction"]),
}


def run_sweep(name: str, cfg: RunConfig, out_dir) -> dict:
    fn, cell_header, step_header = SWEEPS[name]
    stem = name.replace("-", "_")

    def body(stage):
        cells, steps = fn(cfg)
        write_csv(stage / f"{stem}.csv", cell_header, cells)
        write_csv(stage / f"{stem}_steps.csv", step_header, steps)
        return {"cells": len(cells), "failed_cells": sum(c["status"] != "ok" for c in cells)}

    return run_staged(name, cfg, out_dir, body)


# --------------------------------------------------------------------------
# closed forms vs brute force
# --------------------------------------------------------------------------

def brute_force_prox(x, lam: float, penalty: str, grid_step: float = 1e-4, span: float | None = None):
    """Minimize the proximal objective over a uniform grid around each ``x``.

    ``penalty='l1'`` uses ``lam * |z|``; ``penalty='l0'`` uses the weight
    ``lam`` on ``[z != 0]``. The grid always contains 0 and ``x`` itself
    rounded to the grid; ties resolve toward 0. The search window is
    ``x +- span`` (default ``lam + 0.5``), which contains every minimizer.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if span is None:
        span = lam + 0.5
    out = np.empty_like(x)
    offsets = np.arange(-span, span + grid_step / 2, grid_step)
    for i, xi in enumerate(x):
        centre = np.round(xi / grid_step) * grid_step
        z = np.concatenate([[0.0], centre + offsets])
        if penalty == "l1":
            obj = 0.5 * (z - xi) ** 2 + lam * np.abs(z)
        elif penalty == "l0":
            obj = 0.5 * (z - xi) ** 2 + lam * (z != 0)
        else:
            raise ValueError(f"unknown penalty {penalty!r}")
        best = obj.min()
        cands = z[obj <= best]
        out[i] = cands[np.argmin(np.abs(cands))]
    return out


def prox_table(lams=(0.01, 0.1, 1.0), n: int = 1000, seed: int = 0, grid_step: float = 1e-4):
    """Max deviation of the closed-form operators from grid-search minimizers."""
    rng = np.random.default_rng(seed)
    rows = []
    for lam in lams:
        x = rng.uniform(-3.0, 3.0, n) * max(1.0, lam)
        soft = soft_threshold(x, lam)
        hard = hard_threshold(x, np.sqrt(2.0 * lam))
        rows.append({
            "lambda": lam,
            "n": n,
            "soft_max_dev": float(np.max(np.abs(soft - brute_force_prox(x, lam, "l1", grid_step)))),
            "hard_max_dev": float(np.max(np.abs(hard - brute_force_prox(x, lam, "l0", grid_step)))),
            "grid_step": grid_step,
        })
    return rows
