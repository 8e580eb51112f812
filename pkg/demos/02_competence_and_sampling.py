"""Per-task smoothing and competence-based task sampling.

Feeds a noisy variation sequence through the exponential smoothing at
several weights to show how the curve calms down, then demonstrates the
two phases of the task sampler: uniform over never-trained tasks first,
softmax over smoothed variations afterwards.

Run:  python3 demos/02_competence_and_sampling.py
"""

import numpy as np

from taskpace import CompetenceTable, sample_next_task

rng = np.random.default_rng(1)

# --- smoothing at different weights ----------------------------------------

raw = np.abs(np.sin(np.arange(400) / 40.0)) + rng.normal(0, 0.15, size=400).clip(-0.3, 0.3)
raw = np.abs(raw)
print("smoothing weight -> variance of the smoothed series")
for w in (0.0, 0.9, 0.99, 0.995, 0.999):
    table = CompetenceTable(["t"], w)
    smoothed = [table.smooth_update("t", float(v)) for v in raw]
    print(f"  w={w:<6} var={np.var(smoothed):.5f}")

# --- sampling: unseen tasks come first -------------------------------------

table = CompetenceTable(["de", "fr", "it"], 0.995)
table.smooth_update("de", 0.8)
picks = [sample_next_task(table, "de", ["de", "fr", "it"], rng) for _ in range(10)]
print("\nwith fr and it never trained, the sampler explores them first:")
print("  picks:", picks)

# --- sampling: then follows the competence softmax --------------------------

table.smooth_update("fr", 2.0)   # weights still moving a lot -> low competence
table.smooth_update("it", 3.0)   # even less competent
n = 20000
picks = [sample_next_task(table, "de", ["de", "fr", "it"], rng) for _ in range(n)]
p_it = picks.count("it") / n
print("\nonce everything was seen, higher smoothed variation wins more draws:")
print(f"  P(it) ~= {p_it:.3f}   (softmax of [2, 3] -> {1/(1+np.exp(-1)):.3f})")
print(f"  P(fr) ~= {picks.count('fr') / n:.3f}")
print("  the current task is never drawn:", "de" not in picks)
