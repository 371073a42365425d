"""Single-run pipelines: invert, reconstruct, edit, nti, masactrl."""

from __future__ import annotations

import os
import shutil
import tempfile
import time
from pathlib import Path

import numpy as np

from .. import __version__
from ..ddim import Trajectory, invert_trajectory, predict_z0, reconstruct
from ..masactrl import proxmasactrl_edit
from ..nti import NullSchedule, nti_edit, nti_optimize
from ..proxnpi import proxnpi_edit
from .config import RunConfig
from .io import render_latent_pgm, write_csv, write_json

__all__ = ["run", "COMMANDS", "metrics_rows", "trajectory_rows", "METRICS_HEADER", "PipelineError"]

METRICS_HEADER = ["step", "t", "recon_mse", "divergence", "clamp_fraction",
                  "effective_lambda", "mask_coverage"]


class PipelineError(RuntimeError):
    """Numerical failure inside a pipeline."""


def metrics_rows(traj: Trajectory, z0, reference: Trajectory | None, schedule):
    """One row per executed transition.

    ``recon_mse`` compares the clean-sample prediction at the step's input
    latent with ``z0``; ``divergence`` is the distance of the step's output
    latent from ``reference`` at the same label.
    """
    z0 = np.asarray(z0)
    rows = []
    for i, diag in enumerate(traj.diagnostics):
        t, t_next = traj.timesteps[i], traj.timesteps[i + 1]
        t_noisy = max(t, t_next)
        z_noisy = traj.latents[i] if t >= t_next else traj.latents[i + 1]
        z0_hat = predict_z0(z_noisy, traj.eps[i], t_noisy, schedule)
        div = 0.0
        if reference is not None:
            div = float(np.linalg.norm(traj.latents[i + 1] - reference.at(t_next)))
        rows.append({
            "step": i + 1,
            "t": t,
            "recon_mse": float(np.mean((z0_hat - z0) ** 2)),
            "divergence": div,
            "clamp_fraction": diag.get("clamp_fraction", 0.0),
            "effective_lambda": diag.get("effective_lambda", 0.0),
            "mask_coverage": diag.get("mask_coverage", 0.0),
        })
    return rows


def trajectory_rows(traj: Trajectory):
    keys = sorted({k for d in traj.diagnostics for k, v in d.items()
                   if k != "t" and np.ndim(v) == 0})
    header = ["step", "t", "t_next", "latent_norm", "latent_mean", "latent_min", "latent_max"] + keys
    rows = []
    for i, diag in enumerate(traj.diagnostics):
        z = traj.latents[i + 1]
        row = {"step": i + 1, "t": traj.timesteps[i], "t_next": traj.timesteps[i + 1],
               "latent_norm": float(np.linalg.norm(z)), "latent_mean": float(np.mean(z)),
               "latent_min": float(np.min(z)), "latent_max": float(np.max(z))}
        row.update({k: diag.get(k) for k in keys})
        rows.append(row)
    return header, rows


def _write_traj(stage, name, traj):
    header, rows = trajectory_rows(traj)
    write_csv(stage / name, header, rows)


def _mse(a, b) -> float:
    return float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))


def _invert(cfg: RunConfig, sc):
    return invert_trajectory(sc.z0, sc.c_src, sc.predictor, sc.schedule, mode=cfg["inversion"])


def _run_invert(cfg, stage):
    sc = cfg.scenario()
    inv = _invert(cfg, sc)
    write_csv(stage / "metrics.csv", METRICS_HEADER, metrics_rows(inv, sc.z0, None, sc.schedule))
    _write_traj(stage, "trajectory.csv", inv)
    render_latent_pgm(sc.z0, stage / "source.pgm")
    render_latent_pgm(inv.terminal, stage / "terminal.pgm")
    return {"terminal_norm": float(np.linalg.norm(inv.terminal)),
            "max_fixed_point_residual": max((d["fixed_point_residual"] for d in inv.diagnostics
                                             if np.isfinite(d["fixed_point_residual"])), default=None)}


def _run_reconstruct(cfg, stage):
    sc = cfg.scenario()
    inv = _invert(cfg, sc)
    cached = inv.eps if cfg["inversion"] == "exact" else None
    rec = reconstruct(inv.terminal, sc.c_src, sc.predictor, sc.schedule, cached_eps=cached)
    write_csv(stage / "metrics.csv", METRICS_HEADER, metrics_rows(rec, sc.z0, inv, sc.schedule))
    _write_traj(stage, "trajectory.csv", rec)
    render_latent_pgm(rec.terminal, stage / "terminal.pgm")
    return {"terminal_mse": _mse(rec.terminal, sc.z0), "used_cached_eps": cached is not None}


def _run_edit(cfg, stage):
    sc = cfg.scenario()
    inv = _invert(cfg, sc)
    guidance = cfg.guidance()
    edit = proxnpi_edit(sc.z0, sc.c_src, sc.c_tar, guidance, sc.predictor, sc.schedule, inversion=inv)
    rec = reconstruct(inv.terminal, sc.c_src, sc.predictor, sc.schedule)
    write_csv(stage / "metrics.csv", METRICS_HEADER, metrics_rows(edit, sc.z0, inv, sc.schedule))
    _write_traj(stage, "trajectory.csv", edit)
    render_latent_pgm(sc.z0, stage / "source.pgm")
    render_latent_pgm(edit.terminal, stage / "terminal.pgm")
    return {"terminal_mse": _mse(edit.terminal, sc.z0),
            "edit_deviation": float(np.linalg.norm(edit.terminal - rec.terminal)),
            "mean_clamp_fraction": float(np.mean([d["clamp_fraction"] for d in edit.diagnostics]))}


def _run_nti(cfg, stage):
    sc = cfg.scenario()
    inv = _invert(cfg, sc)
    w = cfg.guidance().w
    params = cfg.nti_params()
    nulls, tracked = nti_optimize(sc.z0, sc.c_src, w, sc.predictor, sc.schedule,
                                  inversion=inv, **params)
    plain = NullSchedule([sc.c_null] * len(nulls), [0.0] * len(nulls), [0.0] * len(nulls),
                         nulls.start, nulls.w, sc.c_src)
    unopt = nti_edit(sc.z0, sc.c_src, sc.c_src, plain, w, sc.predictor, sc.schedule)
    edit = nti_edit(sc.z0, sc.c_src, sc.c_tar, nulls, w, sc.predictor, sc.schedule)

    k = sc.c_src.num_logits
    header = (["step", "t"] + [f"logit_{i}" for i in range(k)]
              + [f"shift_{i}" for i in range(sc.c_src.shift.size)] + ["initial_loss", "final_loss"])
    rows = []
    for i, ((t, _), c) in enumerate(zip(sc.schedule.transitions(), nulls.conditions)):
        rows.append([i + 1, t, *c.vector(), nulls.initial_losses[i], nulls.final_losses[i]])
    write_csv(stage / "null_schedule.csv", header, rows)
    write_csv(stage / "metrics.csv", METRICS_HEADER, metrics_rows(tracked, sc.z0, inv, sc.schedule))
    _write_traj(stage, "trajectory.csv", tracked)
    _write_traj(stage, "trajectory_edit.csv", edit)
    render_latent_pgm(tracked.terminal, stage / "terminal.pgm")
    render_latent_pgm(edit.terminal, stage / "terminal_edit.pgm")
    nti_mse, plain_mse = _mse(tracked.terminal, sc.z0), _mse(unopt.terminal, sc.z0)
    return {"terminal_mse": nti_mse, "unoptimized_terminal_mse": plain_mse,
            "improvement_ratio": plain_mse / nti_mse if nti_mse > 0 else None,
            "flagged_steps": len(nulls.flagged_steps),
            "loss_never_increased": all(f <= i for f, i in zip(nulls.final_losses, nulls.initial_losses))}


def _run_masactrl(cfg, stage):
    sc = cfg.scenario("attention")
    inv = _invert(cfg, sc)
    rec, syn = proxmasactrl_edit(sc.z0, sc.c_src, sc.c_tar, cfg.guidance().w, cfg.branch(),
                                 cfg.threshold(), sc.predictor, sc.schedule, c_null=sc.c_null,
                                 inversion=inv)
    write_csv(stage / "metrics.csv", METRICS_HEADER, metrics_rows(syn, sc.z0, rec, sc.schedule))
    _write_traj(stage, "trajectory_recon.csv", rec)
    _write_traj(stage, "trajectory_synth.csv", syn)
    render_latent_pgm(rec.terminal, stage / "terminal_recon.pgm")
    render_latent_pgm(syn.terminal, stage / "terminal_synth.pgm")
    return {"divergence": float(np.linalg.norm(syn.terminal - rec.terminal)),
            "recon_terminal_mse": _mse(rec.terminal, sc.z0),
            "mean_clamp_fraction": float(np.mean([d["clamp_fraction"] for d in syn.diagnostics]))}


COMMANDS = {
    "invert": _run_invert,
    "reconstruct": _run_reconstruct,
    "edit": _run_edit,
    "nti": _run_nti,
    "masactrl": _run_masactrl,
}


def run_staged(command: str, cfg: RunConfig, out_dir, body) -> dict:
    """Run ``body(stage) -> summary`` in a staging directory, then publish.

    On any exception the staging directory is removed and nothing is
    published to ``out_dir``.
    """
    out_dir = Path(out_dir)
    parent = out_dir.parent if str(out_dir.parent) else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.staging-", dir=parent))
    try:
        start = time.perf_counter()
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            try:
                summary = body(stage)
            except FloatingPointError as exc:
                raise PipelineError(f"floating point failure: {exc}") from exc
        wall = time.perf_counter() - start
        outputs = sorted(p.name for p in stage.iterdir())
        manifest = {"command": command, "config": cfg.to_dict(), "version": __version__,
                    "wall_time_s": wall, "summary": summary, "outputs": outputs}
        write_json(stage / "manifest.json", manifest)
        out_dir.mkdir(parents=True, exist_ok=True)
        for p in stage.iterdir():
            os.replace(p, out_dir / p.name)
        return manifest
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def run(command: str, cfg: RunConfig, out_dir) -> dict:
    """Execute one pipeline and write its artifacts plus ``manifest.json``."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    return run_staged(command, cfg, out_dir, lambda stage: COMMANDS[command](cfg, stage))
