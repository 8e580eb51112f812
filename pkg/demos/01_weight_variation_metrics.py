"""How weight variation is measured.

Builds two tiny weight snapshots by hand and walks through the three
distance metrics (symmetric KL of softmax-normalized tensors, L2,
1 - cosine), the all-tensors vs final-tensor scopes, and the trailing
rolling average used for plotting.

Run:  python3 demos/01_weight_variation_metrics.py
"""

import math

import numpy as np

from taskpace import MetricKind, WeightSnapshot, rolling_average, softmax_normalize, symmetric_kl, weight_variation

# --- softmax turns a weight tensor into a probability distribution --------

v = np.array([0.0, math.log(2)])
print("softmax([0, ln 2])          =", softmax_normalize(v), "(exactly [1/3, 2/3])")
print("softmax is shift-invariant:  ", softmax_normalize(v + 100.0))

# --- symmetric KL between two tensors --------------------------------------

a = np.array([0.0, math.log(2)])
b = np.array([0.0, 0.0])
print("\nsym-KL([0, ln2], [0, 0])    =", symmetric_kl(a, b))
print("closed form (1/6) ln 2      =", math.log(2) / 6)

# --- snapshots and the averaged variation ----------------------------------

rng = np.random.default_rng(0)
weights = {
    "embed": rng.normal(size=32),
    "ffn.w": rng.normal(size=64),
    "out.w": rng.normal(size=16),
}
before = WeightSnapshot.from_arrays(weights.items(), step=0)

# simulate one update: small random nudge on every tensor
after_weights = {k: w + 0.01 * rng.normal(size=w.shape) for k, w in weights.items()}
after = WeightSnapshot.from_arrays(after_weights.items(), step=1)

print("\nvariation between consecutive snapshots:")
for kind in ("symmetric-kl", "l2", "inverse-cosine"):
    for scope in ("all-layers", "last-layer"):
        value = weight_variation(before, after, MetricKind(kind, scope))
        print(f"  {kind:15s} {scope:11s} -> {value:.6e}")

# --- rolling average --------------------------------------------------------

series = [abs(math.sin(t / 5)) + 0.1 * rng.random() for t in range(30)]
smooth = rolling_average(series, window=10)
print("\ntrailing rolling average (window 10):")
print("  raw   ", " ".join(f"{v:.2f}" for v in series[:12]), "...")
print("  rolled", " ".join(f"{v:.2f}" for v in smooth[:12]), "...")
