import json
import time

import numpy as np
import pytest

from proxguide.harness.cli import main
from proxguide.harness.config import ConfigError, load_config, pattern
from proxguide.harness.io import fmt, read_csv, read_pgm, render_latent_pgm, write_csv
from proxguide.harness.runner import METRICS_HEADER, run
from proxguide.harness.sweeps import ablate_recon, ablate_threshold, brute_force_prox, prox_table, run_sweep


# -- PGM -----------------------------------------------------------------------

def test_pgm_constant_is_mid_gray(tmp_path):
    px = render_latent_pgm(np.full((4, 5), -3.2), tmp_path / "c.pgm")
    assert px.shape == (4, 5) and np.all(px == 128)
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), px)


def test_pgm_min_max_and_round_trip(tmp_path, rng):
    x = rng.normal(size=(16, 16))
    render_latent_pgm(x, tmp_path / "x.pgm")
    back = read_pgm(tmp_path / "x.pgm")
    assert back[np.unravel_index(x.argmin(), x.shape)] == 0
    assert back[np.unravel_index(x.argmax(), x.shape)] == 255
    normalized = (x - x.min()) / (x.max() - x.min())
    assert np.max(np.abs(back / 255.0 - normalized)) <= 1 / 255
    raw = (tmp_path / "x.pgm").read_bytes()
    assert raw.startswith(b"P5\n16 16\n255\n") and len(raw) == 13 + 256


def test_pgm_rejects_non_2d(tmp_path):
    with pytest.raises(ValueError):
        render_latent_pgm(np.zeros(8), tmp_path / "bad.pgm")
    assert not (tmp_path / "bad.pgm").exists()


# -- CSV -----------------------------------------------------------------------------

def test_csv_round_trips_doubles(tmp_path, rng):
    vals = rng.normal(size=20) * 10.0 ** rng.integers(-30, 30, 20)
    write_csv(tmp_path / "v.csv", ["i", "v", "flag", "empty"],
              [{"i": i, "v": v, "flag": i % 2 == 0} for i, v in enumerate(vals)])
    rows = read_csv(tmp_path / "v.csv")
    assert [float(r["v"]) for r in rows] == list(vals)
    assert rows[0]["flag"] == "1" and rows[0]["empty"] == ""
    assert fmt(np.float64(0.1)) == "0.10000000000000001"


# -- config ------------------------------------------------------------------------------

def test_default_config_is_valid():
    cfg = load_config()
    assert cfg["steps"] == 50 and cfg.guidance().w == 7.5
    assert cfg.threshold().value == 0.7 and cfg.threshold().penalty == "l0"


def test_overrides_replace_threshold_kind():
    cfg = load_config(overrides={"guidance": {"lambda": 0.05}})
    assert cfg.threshold().mode == "fixed" and "quantile" not in cfg.section("guidance")
    with pytest.raises(ConfigError):
        load_config(overrides={"guidance": {"lambda": 0.05, "quantile": 0.5}})


def test_toml_file_then_flags(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("steps = 20\n[guidance]\nw = 3.0\n")
    cfg = load_config(path, {"guidance": {"w": 4.0}})
    assert cfg["steps"] == 20 and cfg.guidance().w == 4.0


@pytest.mark.parametrize("over", [{"steps": 1}, {"inversion": "fast"}, {"bogus": 1}, {"seed": "x"},
                                  {"conditions": {"source": [1.0, 0.0]}},
                                  {"guidance": {"t_rec": 5000, "recon": True}},
                                  {"masactrl": {"alpha": 2.0}}, {"nti": {"lr": -1.0}}])
def test_invalid_config_rejected(over):
    with pytest.raises(ConfigError):
        load_config(overrides=over)


def test_patterns():
    for name in ("blob", "wave", "ramp", "ring", "stripes"):
        p = pattern(name, 8)
        assert p.shape == (8, 8) and np.all(np.isfinite(p))
    with pytest.raises(ConfigError):
        pattern("spiral", 8)


# -- pipelines ---------------------------------------------------------------------------

@pytest.mark.parametrize("command", ["invert", "reconstruct", "edit", "nti", "masactrl"])
def test_run_writes_artifacts(tmp_path, command):
    manifest = run(command, load_config(), tmp_path / command)
    out = tmp_path / command
    assert (out / "manifest.json").exists() and (out / "metrics.csv").exists()
    assert any(p.suffix == ".pgm" for p in out.iterdir())
    assert any(p.name.startswith("trajectory") for p in out.iterdir())
    rows = read_csv(out / "metrics.csv")
    assert list(rows[0]) == METRICS_HEADER and len(rows) == 50
    for r in rows:
        for key in METRICS_HEADER[2:]:
            assert float(r[key]) >= 0
    on_disk = json.loads((out / "manifest.json").read_text())
    assert on_disk["command"] == command and on_disk["version"] and on_disk["wall_time_s"] >= 0
    assert sorted(on_disk["outputs"]) == sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    assert not [p for p in tmp_path.iterdir() if "staging" in p.name]


def test_exact_reconstruct_manifest(tmp_path):
    manifest = run("reconstruct", load_config(overrides={"inversion": "exact"}), tmp_path)
    assert manifest["summary"]["terminal_mse"] <= 1e-10


def test_edit_under_ten_seconds(tmp_path):
    start = time.perf_counter()
    run("edit", load_config(), tmp_path)
    assert time.perf_counter() - start < 10.0


def test_nti_outputs(tmp_path):
    manifest = run("nti", load_config(), tmp_path)
    rows = read_csv(tmp_path / "null_schedule.csv")
    assert len(rows) == 50 and "final_loss" in rows[0] and "logit_0" in rows[0]
    assert manifest["summary"]["loss_never_increased"] is True
    assert manifest["summary"]["improvement_ratio"] > 1


def test_rerun_from_manifest_is_byte_identical(tmp_path):
    run("edit", load_config(overrides={"guidance": {"recon": True}}), tmp_path / "a")
    run("edit", load_config(tmp_path / "a" / "manifest.json"), tmp_path / "b")
    for name in ("metrics.csv", "trajectory.csv", "terminal.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_failed_run_leaves_nothing(tmp_path):
    cfg = load_config(overrides={"oracle": {"amplitude": 1e200}})
    with pytest.raises(Exception):
        run("edit", cfg, tmp_path / "out")
    assert list(tmp_path.iterdir()) == []


# -- sweeps ---------------------------------------------------------------------------------

def test_sweep_marks_failed_cells(run_config):
    cells, steps = ablate_recon(run_config, etas=(0.1, 2.0), t_recs=(400,))
    assert len(cells) == 2
    assert cells[0]["status"] == "ok" and cells[1]["status"].startswith("error")
    assert {s["eta"] for s in steps} == {0.1}


@pytest.mark.parametrize("name, n_cells", [("ablate-threshold", 24), ("ablate-recon", 10),
                                           ("ablate-masactrl", 18)])
def test_sweep_tables(tmp_path, run_config, name, n_cells):
    manifest = run_sweep(name, run_config, tmp_path)
    stem = name.replace("-", "_")
    cells = read_csv(tmp_path / f"{stem}.csv")
    assert len(cells) == n_cells and manifest["summary"]["cells"] == n_cells
    assert all(c["status"] == "ok" for c in cells)
    assert len(read_csv(tmp_path / f"{stem}_steps.csv")) == n_cells * 50


def test_threshold_sweep_reaches_reconstruction_at_q1(run_config):
    cells, _ = ablate_threshold(
        run_config, quantiles=(0.95, 1.0), penalties=("l0", "l1"), ws=(7.5,))
    by_q = {(c["penalty"], c["quantile"]): c["deviation"] for c in cells}
    for pen in ("l0", "l1"):
        assert by_q[(pen, 1.0)] == 0.0 < by_q[(pen, 0.95)]


def test_brute_force_prox_ties_to_zero():
    assert brute_force_prox([0.2], 0.2, "l1")[0] == 0.0
    assert brute_force_prox([np.sqrt(0.2)], 0.1, "l0", grid_step=1e-3)[0] in (0.0, pytest.approx(np.sqrt(0.2), abs=1e-3))
    with pytest.raises(ValueError):
        brute_force_prox([1.0], 0.1, "l2")


def test_prox_table_within_grid_step():
    for row in prox_table(n=200):
        assert row["soft_max_dev"] <= row["grid_step"] and row["hard_max_dev"] <= row["grid_step"]


# -- CLI ---------------------------------------------------------------------------------------

def test_cli_success_and_summary(tmp_path, capsys):
    assert main(["edit", "--out", str(tmp_path), "--w", "5", "--prox", "l1", "--quantile", "0.8"]) == 0
    cfg = json.loads((tmp_path / "manifest.json").read_text())["config"]
    assert cfg["guidance"]["w"] == 5.0 and cfg["guidance"]["prox"] == "l1" and cfg["guidance"]["quantile"] == 0.8
    assert "terminal_mse" in capsys.readouterr().out


def test_cli_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PROX_OUT_DIR", str(tmp_path / "env"))
    assert main(["invert"]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def exit_code(argv):
    """``main`` return code, treating argparse usage errors the same way."""
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


@pytest.mark.parametrize("argv", [["edit", "--quantile", "1.5"], ["edit", "--quantile", "0.5", "--lambda", "0.1"],
                                  ["ablate-recon"], ["edit", "--steps", "5000"], ["masactrl", "--alpha", "3"],
                                  ["edit", "--config", "/nonexistent.toml"], ["edit", "--t-rec", "9999", "--recon"]])
def test_cli_config_errors_exit_1(tmp_path, capsys, argv):
    assert exit_code(argv + ["--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err.strip()
    assert err and "\n" not in err
    assert not (tmp_path / "o").exists()


def test_cli_unknown_command_exit_1(capsys):
    assert exit_code(["frobnicate"]) == 1


def test_cli_numerical_failure_exit_2(tmp_path, capsys):
    assert main(["reconstruct", "--inversion", "exact", "--steps", "2", "--out", str(tmp_path / "o")]) == 2
    assert "numerical failure" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    big = tmp_path / "big.toml"
    big.write_text("[oracle]\namplitude = 1e200\n")
    assert main(["edit", "--config", str(big), "--out", str(tmp_path / "o")]) == 2
    assert list(p.name for p in tmp_path.iterdir()) == ["big.toml"]


def test_cli_prox_table(capsys):
    assert main(["prox-table", "--n", "100"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("lambda,") and len(lines) == 4
