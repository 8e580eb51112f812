"""A complete (miniature) experiment.

Generates a related HRL/LRL task pair, trains the small transformer under
the self-paced scheduler for a few hundred steps, then prints the report:
switch counts per 100-step bucket, per-task update shares, and the event
timeline.  Uses reduced dimensions so it finishes in about a minute; drop
the overrides to reproduce the full desk-scale setup (HRL 5000 / LRL 500,
d_model 64, 3000 steps).

Run:  python3 demos/04_end_to_end_run.py
"""

import tempfile

from taskpace import RunConfig, run_report, run_training

out_dir = tempfile.mkdtemp()
cfg = RunConfig.from_file(None, {"seed": 12}).with_updates(**{
    "out_dir": out_dir,
    "strategy": "self-paced",
    "total_steps": 400,
    "eval_every": 100,
    "tasks.family.pairs": [{"hrl_size": 800, "lrl_size": 80, "relatedness": 0.8}],
    "tasks.family.dev_size": 50,
    "tasks.family.test_size": 50,
    "trainer.d_model": 32,
    "trainer.n_layers": 1,
    "trainer.ffn_dim": 64,
    "trainer.batch_tokens": 512,
    "trainer.warmup_steps": 100,
})

print(f"training 400 steps into {out_dir} ...")
result = run_training(cfg, verbose=True)

print("\nsummary:")
print("  switches:    ", result.summary["switch_count"])
print("  updates:     ", result.summary["updates_by_task"])
print("  dev accuracy:", {k: round(v, 3) for k, v in result.summary["final_token_acc"].items()})

print("\nreport:")
run_report(result.log_path, verbose=True)

print("\nthe same experiment from the command line:")
print(f"  taskpace run --seed 12 --out {out_dir}  # desk-scale defaults")
print(f"  taskpace report --log {out_dir}/run.jsonl")
