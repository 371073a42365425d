"""
Ablation tables
===============

Run the three sweeps on the canonical scenario and print compact summaries.
CSV files land in ``$PROX_OUT_DIR`` (default ``./demo_out``).
"""

import os
from collections import defaultdict
from pathlib import Path

from proxguide.harness import load_config, run_sweep
from proxguide.harness.io import read_csv

out = Path(os.environ.get("PROX_OUT_DIR", "demo_out"))
cfg = load_config(overrides={"seed": 0})

run_sweep("ablate-threshold", cfg, out / "threshold")
print("threshold sweep: deviation from reconstruction")
table = defaultdict(dict)
for row in read_csv(out / "threshold" / "ablate_threshold.csv"):
    table[(row["w"], row["penalty"])][row["quantile"]] = float(row["deviation"])
for (w, pen), cells in table.items():
    print(f"  w={float(w):<4g} {pen}: " + "  ".join(f"{float(q):.2f}:{v:6.3f}" for q, v in cells.items()))

run_sweep("ablate-recon", cfg, out / "recon")
print("\nreconstruction-guidance sweep: masked-region MSE")
for row in read_csv(out / "recon" / "ablate_recon.csv"):
    print(f"  T_rec={row['t_rec']} eta={float(row['eta']):<5g} {float(row['masked_mse']):.3e}")

run_sweep("ablate-masactrl", cfg, out / "masactrl")
print("\nattention-control sweep: synthesis divergence from reconstruction")
for row in read_csv(out / "masactrl" / "ablate_masactrl.csv"):
    print(f"  q={float(row['quantile']):.1f} alpha={float(row['alpha']):.1f} {row['inject_uncond']:6s} "
          f"{float(row['divergence']):.4f}")
print("\nwrote", out.resolve())
