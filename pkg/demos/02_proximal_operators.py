"""
Soft and hard thresholding as proximal operators
=================================================

The two closed forms against a brute-force grid minimizer, and the dynamic
quantile threshold used inside the editing loop.
"""

import numpy as np

from proxguide import ThresholdSpec, hard_threshold, prox_apply, quantile_abs, soft_threshold
from proxguide.harness.sweeps import brute_force_prox, prox_table
from proxguide.prox import l0_weight_to_threshold

x = np.linspace(-1.0, 1.0, 9)
print("x          ", np.round(x, 3))
print("soft(x,.2) ", np.round(soft_threshold(x, 0.2), 3))
print("hard(x,.45)", np.round(hard_threshold(x, 0.45), 3))

# An L0 weight mu corresponds to the hard cut sqrt(2 mu).
mu = 0.1
print("L0 weight", mu, "-> hard threshold", l0_weight_to_threshold(mu))
print("grid argmin at x=0.5:", brute_force_prox([0.5], mu, "l0")[0], "closed form:",
      hard_threshold(0.5, l0_weight_to_threshold(mu)))

print("\nclosed form vs grid search, 1000 scalars each")
for row in prox_table():
    print(f"  lambda={row['lambda']:<5g} soft {row['soft_max_dev']:.2e}  hard {row['hard_max_dev']:.2e}")

# Inside the editing loop the threshold is a quantile of |d|, recomputed per step.
print("\nquantile of |[0.1,-0.2,0.3,-0.4]| at 0.7:", quantile_abs([0.1, -0.2, 0.3, -0.4], 0.7))
d = np.random.default_rng(0).normal(size=256)
for q in (0.6, 0.7, 0.9, 1.0):
    for pen in ("l0", "l1"):
        out, mask, lam = prox_apply(d, ThresholdSpec.quantile(q, pen))
        print(f"  q={q:.1f} {pen}: lambda={lam:.3f} zeroed={np.mean(out == 0):.3f} "
              f"norm={np.linalg.norm(out):.3f}")
