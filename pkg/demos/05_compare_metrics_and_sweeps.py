"""Metric comparison tables and hyperparameter sweeps (miniature).

First trains a single-task model while recording all six variation
series (3 metrics x 2 scopes, sampled every few steps plus a rolling
average) the way the metric-comparison experiment does, then runs a tiny
smoothing-weight sweep and prints the resulting table.

Run:  python3 demos/05_compare_metrics_and_sweeps.py
"""

import tempfile
from pathlib import Path

from taskpace import RunConfig, run_compare_metrics, run_sweep
from taskpace.runlog import read_csv

# --- compare-metrics on one task -------------------------------------------

out = Path(tempfile.mkdtemp())
cfg = RunConfig.from_file(None, {"seed": 3}).with_updates(**{
    "out_dir": str(out),
    "total_steps": 300,
    "trainer.d_model": 32,
    "trainer.n_layers": 1,
    "trainer.ffn_dim": 64,
    "trainer.batch_tokens": 256,
    "trainer.warmup_steps": 150,
    "tasks.family.pairs": [],
    "tasks.family.single_size": 500,
    "tasks.family.dev_size": 50,
    "tasks.family.test_size": 50,
    "compare_metrics.sample_every": 5,
    "compare_metrics.window": 20,
})
print("training one task while sampling all six metric series ...")
result = run_compare_metrics(cfg)
header, rows = read_csv(out / "metrics.csv")
print("series:", header[1:])
print("rolled peak steps:", result.summary["rolled_peak_step"])
print(f"tables: {out / 'metrics.csv'} and metrics_raw.csv")

# --- a small smoothing-weight sweep -----------------------------------------

sweep_out = Path(tempfile.mkdtemp())
sweep_cfg = RunConfig.from_file(None, {"seed": 3}).with_updates(**{
    "out_dir": str(sweep_out),
    "total_steps": 120,
    "eval_every": 60,
    "tasks.family.pairs": [{"hrl_size": 200, "lrl_size": 40, "relatedness": 0.8}],
    "tasks.family.dev_size": 30,
    "tasks.family.test_size": 30,
    "trainer.d_model": 32,
    "trainer.n_layers": 1,
    "trainer.ffn_dim": 64,
    "trainer.batch_tokens": 256,
    "trainer.warmup_steps": 60,
})
print("\nsweeping the smoothing weight (one seeded run per value) ...")
rows, csv_path = run_sweep(sweep_cfg, "w", [0.99, 0.995, 0.999])
header, table = read_csv(csv_path)
print("  " + " | ".join(header[:7]))
for row in table:
    print("  " + " | ".join(row[:7]))
print(f"table: {csv_path}")
print("\nfull grids from the command line:")
print("  taskpace sweep --seed 3 --param w --values 0.99,0.995,0.999,0.9995")
print("  taskpace sweep --seed 3 --param alpha --values 0.9,0.95,1.0,1.1,1.2")
