"""The switching rule, on scripted variation sequences.

Uses the harness's scripted mode (injected raw variation values, no model
in the loop) to show the three canonical behaviors of the decision rule
"switch when the smoothed variation drops below alpha times its previous
value":

* monotone decreasing variation -> the scheduler switches every 2 steps
  (the minimum stay, because a fresh task is always trained twice);
* monotone increasing variation -> it never leaves the first task;
* a flat sequence separates alpha < 1 (never fires: one smoothing step
  can shrink the average by at most a factor w) from alpha > 1 (fires at
  every opportunity).

Run:  python3 demos/03_scheduler_traces.py
"""

import tempfile

from taskpace import RunConfig, run_training
from taskpace.runlog import read_log


def scripted_run(d_values, alpha):
    cfg = RunConfig.from_file(None, {"seed": 7}).with_updates(**{
        "out_dir": tempfile.mkdtemp(),
        "total_steps": len(d_values),
        "alpha": alpha,
        "scripted_d": list(d_values),
        "tasks.family.pairs": [{"hrl_size": 4, "lrl_size": 2, "relatedness": 1.0}],
        "tasks.family.dev_size": 2,
        "tasks.family.test_size": 2,
    })
    result = run_training(cfg)
    steps = [r for r in read_log(result.log_path) if r["kind"] == "step"]
    return [r["task"] for r in steps], [r["step"] for r in steps if r["event"]]


def show(title, tasks, switches):
    print(f"\n{title}")
    print("  tasks:   ", " ".join(t[0] for t in tasks))  # h/l initials
    print("  switches:", switches or "none")


decreasing = [1.0 - 0.02 * t for t in range(1, 21)]
tasks, switches = scripted_run(decreasing, alpha=1.0)
show("decreasing variation (model keeps getting comfortable):", tasks, switches)

increasing = [1.0 + 0.02 * t for t in range(1, 21)]
tasks, switches = scripted_run(increasing, alpha=1.0)
show("increasing variation (model keeps struggling):", tasks, switches)

flat = [1.0] * 20
for alpha in (0.9, 1.1):
    tasks, switches = scripted_run(flat, alpha=alpha)
    show(f"flat variation, alpha={alpha}:", tasks, switches)
