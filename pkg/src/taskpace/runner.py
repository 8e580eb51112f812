"""Experiment orchestration: the training loop and the four commands.

``run_training`` drives one run: draw a batch for the current task,
update the model, measure the weight variation between the consecutive
snapshots, fold it into the per-task moving average, let the scheduler
decide whether to switch, and log one JSONL record per step.  Everything
is seeded; two runs with the same config and seed write byte-identical
logs, and a run resumed from a checkpoint makes the same decisions as the
uninterrupted one.

The other entry points (``run_compare_metrics``, ``run_sweep``,
``run_report``) and the offline decision replay live here too.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .competence import CompetenceTable
from .config import RunConfig
from .errors import ConfigError, DivergenceError, InvalidInputError
from .metrics import MetricKind, rolling_average, weight_variation
from .model import ModelDims, TransformerModel, token_stats_from_cache
from .runlog import LOG_VERSION, RunLogWriter, read_log, write_csv
from .scheduler import (
    ScheduleEvent,
    SchedulerState,
    alternation_step,
    pick_initial_task,
    self_paced_step,
    warmup_gate,
)
from .tasks import (
    TaskFamily,
    count_examples_by_task,
    export_family,
    generate_task_family,
    load_family,
    make_batch,
    make_shuffled_batch,
    pad_batch,
)
from .training import AdamState, apply_update, load_checkpoint, save_checkpoint

# named rng streams derived from the master seed
_STREAMS = {"model": 1, "dropout": 2, "batch": 3, "sched": 4}

_EVAL_CHUNK = 64

_SERIES_NAMES = (
    "symmetric-kl_all-layers",
    "symmetric-kl_last-layer",
    "l2_all-layers",
    "l2_last-layer",
    "inverse-cosine_all-layers",
    "inverse-cosine_last-layer",
)


def derive_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAMS[stream]]))


@dataclass
class RunResult:
    out_dir: Path
    log_path: Path
    header: dict
    summary: dict


def build_family(cfg: RunConfig) -> TaskFamily:
    if cfg.corpus_dir is not None:
        return load_family(cfg.corpus_dir)
    return generate_task_family(cfg.seed, **cfg.family_kwargs())


def _series_key(metric: MetricKind) -> str:
    return f"{metric.kind}_{metric.scope}"


def _metric_for(name: str) -> MetricKind:
    kind, scope = name.rsplit("_", 1)
    return MetricKind(kind=kind, scope=scope)


def evaluate_model(model: TransformerModel, family: TaskFamily, tcfg) -> dict:
    """Per-task dev loss and teacher-forced token accuracy (dropout off)."""
    out = {}
    for task_id in family.task_ids:
        dev = family.corpora[task_id].dev
        loss_sum = 0.0
        correct = 0
        total = 0
        for i in range(0, len(dev), _EVAL_CHUNK):
            batch = pad_batch(dev[i:i + _EVAL_CHUNK])
            loss, cache = model.forward_loss(
                batch, dropout=0.0, label_smoothing=tcfg.label_smoothing
            )
            n = cache["n_tokens"]
            loss_sum += loss * n
            c, t = token_stats_from_cache(cache)
            correct += c
            total += t
        out[task_id] = {
            "dev_loss": loss_sum / total,
            "token_acc": correct / total,
        }
    return out


def _mean_dev_loss(per_task: dict) -> float:
    return sum(v["dev_loss"] for v in per_task.values()) / len(per_task)


def _make_header(cfg: RunConfig, command: str, family: TaskFamily,
                 initial_event: ScheduleEvent | None, resumed_from: int | None) -> dict:
    from dataclasses import asdict

    header = {
        "kind": "header",
        "log_version": LOG_VERSION,
        "command": command,
        "config": cfg.header_dict(),
        "resolved_trainer": asdict(cfg.trainer()),
        "tasks": [s.as_dict() for s in family.specs],
    }
    if initial_event is not None:
        header["initial_event"] = initial_event.as_dict()
    if resumed_from is not None:
        header["resumed_from_step"] = resumed_from
    return header


class _Counters:
    def __init__(self, task_ids):
        self.task_ids = list(task_ids)
        self.updates = {t: 0 for t in self.task_ids}
        self.postwarmup_updates = {t: 0 for t in self.task_ids}
        self.examples = {t: 0 for t in self.task_ids}
        self.switches = 0
        self.clips = 0

    def as_dict(self) -> dict:
        return {
            "updates": self.updates,
            "postwarmup_updates": self.postwarmup_updates,
            "examples": self.examples,
            "switches": self.switches,
            "clips": self.clips,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "_Counters":
        c = cls(payload["updates"].keys())
        c.updates = dict(payload["updates"])
        c.postwarmup_updates = dict(payload["postwarmup_updates"])
        c.examples = dict(payload["examples"])
        c.switches = payload["switches"]
        c.clips = payload["clips"]
        return c


def run_training(cfg: RunConfig, log_name: str = "run.jsonl",
                 resume_from=None, verbose: bool = False) -> RunResult:
    """Execute one full training run (or a scripted scheduler-only run)."""
    cfg.require_seed()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    family = build_family(cfg)
    tcfg = cfg.trainer()
    metric = cfg.metric()
    roles = family.roles
    if cfg.hrl_warmup and "hrl" not in roles.values():
        raise ConfigError("hrl_warmup requires at least one task with the hrl role")
    scripted = cfg.scripted_d is not None

    rng_drop = derive_rng(cfg.seed, "dropout")
    rng_batch = derive_rng(cfg.seed, "batch")
    rng_sched = derive_rng(cfg.seed, "sched")

    model = opt = None
    mixed_ema = None
    best = {"loss": None, "step": None}
    start_step = 1

    if resume_from is not None:
        model, opt, ckpt_step, meta = load_checkpoint(resume_from)
        if ckpt_step >= cfg.total_steps:
            raise ConfigError(
                f"checkpoint is at step {ckpt_step}, already past total_steps"
            )
        start_step = ckpt_step + 1
        state = SchedulerState.from_dict(meta["scheduler"])
        table = CompetenceTable.from_dict(meta["competence"])
        counters = _Counters.from_dict(meta["counters"])
        best = meta["best"]
        mixed_ema = meta["mixed_ema"]
        rng_drop.bit_generator.state = meta["rng"]["dropout"]
        rng_batch.bit_generator.state = meta["rng"]["batch"]
        rng_sched.bit_generator.state = meta["rng"]["sched"]
        initial_event = None
        prev_snapshot = model.snapshot(ckpt_step)
    else:
        if not scripted:
            dims = ModelDims(
                vocab_size=family.vocab_size,
                d_model=tcfg.d_model,
                n_heads=tcfg.n_heads,
                n_layers=tcfg.n_layers,
                ffn_dim=tcfg.ffn_dim,
                max_len=family.max_seq_len() + 2,
            )
            model = TransformerModel(dims, derive_rng(cfg.seed, "model"))
            opt = AdamState(model.params)
            prev_snapshot = model.snapshot(0)
        state = SchedulerState(
            current_task=family.task_ids[0],
            strategy=cfg.strategy,
            alpha=cfg.alpha,
            hrl_warmup=cfg.hrl_warmup,
            warmup_steps=tcfg.warmup_steps,
        )
        allowed = warmup_gate(1, state, roles)
        state.current_task = pick_initial_task(family.task_ids, allowed)
        table = CompetenceTable(family.task_ids, cfg.smoothing_weight)
        counters = _Counters(family.task_ids)
        initial_event = ScheduleEvent(0, state.current_task, state.current_task, "initial")

    if cfg.export_corpus:
        export_family(family, out_dir / "corpus")

    n_tasks = len(family.task_ids)
    log_path = out_dir / log_name
    writer = RunLogWriter(log_path)
    header = _make_header(cfg, "run", family, initial_event,
                          None if resume_from is None else start_step - 1)
    writer.write(header)

    try:
        for t in range(start_step, cfg.total_steps + 1):
            trained_task = None if cfg.strategy == "shuffled" else state.current_task
            if scripted:
                d_raw = float(cfg.scripted_d[t - 1])
                loss = lr = grad_norm = None
                clipped = False
                examples = {tid: 0 for tid in family.task_ids}
            else:
                if cfg.strategy == "shuffled":
                    pairs = make_shuffled_batch(family, tcfg.batch_tokens, rng_batch)
                else:
                    pairs = make_batch(family, trained_task, tcfg.batch_tokens, rng_batch)
                raw_counts = count_examples_by_task(family, pairs)
                examples = {tid: raw_counts.get(tid, 0) for tid in family.task_ids}
                batch = pad_batch(pairs)
                loss, cache = model.forward_loss(
                    batch, dropout=tcfg.dropout, rng=rng_drop,
                    label_smoothing=tcfg.label_smoothing,
                )
                if not np.isfinite(loss):
                    raise DivergenceError("non-finite loss", step=t)
                grads = model.backward(cache)
                lr, grad_norm, clipped = apply_update(model, grads, opt, tcfg, t)
                snapshot = model.snapshot(t)
                d_raw = weight_variation(prev_snapshot, snapshot, metric)
                prev_snapshot = snapshot

            # scheduler decision (the chosen task takes effect at t + 1)
            event = None
            if cfg.strategy == "shuffled":
                if mixed_ema is None:
                    mixed_ema = d_raw
                else:
                    w = cfg.smoothing_weight
                    mixed_ema = (1.0 - w) * d_raw + w * mixed_ema
                d_smooth = mixed_ema
            else:
                d_smooth = table.smooth_update(trained_task, d_raw, step=t)
                allowed = warmup_gate(t + 1, state, roles)
                gate_active = len(allowed) < n_tasks
                if cfg.strategy == "self-paced":
                    d_prev = table.entry(trained_task).lagged
                    event = self_paced_step(
                        state, table, d_smooth, d_prev, t, allowed, rng_sched, gate_active
                    )
                else:
                    event = alternation_step(state, allowed, t, gate_active)

            if trained_task is not None:
                counters.updates[trained_task] += 1
                if t > tcfg.warmup_steps:
                    counters.postwarmup_updates[trained_task] += 1
            for tid, n in examples.items():
                counters.examples[tid] += n
            if event is not None:
                counters.switches += 1
            if clipped:
                counters.clips += 1

            writer.write({
                "kind": "step",
                "step": t,
                "task": trained_task,
                "d_raw": d_raw,
                "d_smooth": d_smooth,
                "lr": lr,
                "loss": loss,
                "grad_norm": grad_norm,
                "clipped": clipped,
                "examples": examples,
                "event": None if event is None else event.as_dict(),
            })

            if not scripted and (t % cfg.eval_every == 0 or t == cfg.total_steps):
                per_task = evaluate_model(model, family, tcfg)
                mean_loss = _mean_dev_loss(per_task)
                is_best = best["loss"] is None or mean_loss < best["loss"]
                if is_best:
                    best = {"loss": mean_loss, "step": t}
                writer.write({
                    "kind": "eval",
                    "step": t,
                    "tasks": {tid: per_task[tid] for tid in family.task_ids},
                    "mean_dev_loss": mean_loss,
                    "is_best": is_best,
                })
                if verbose:
                    accs = " ".join(
                        f"{tid}={per_task[tid]['token_acc']:.3f}" for tid in family.task_ids
                    )
                    print(f"step {t}: dev loss {mean_loss:.4f} acc {accs}", flush=True)
                meta = {
                    "scheduler": state.as_dict(),
                    "competence": table.as_dict(),
                    "counters": counters.as_dict(),
                    "best": best,
                    "mixed_ema": mixed_ema,
                    "rng": {
                        "dropout": rng_drop.bit_generator.state,
                        "batch": rng_batch.bit_generator.state,
                        "sched": rng_sched.bit_generator.state,
                    },
                }
                save_checkpoint(out_dir / "last.npz", model, opt, t, meta)
                if is_best:
                    save_checkpoint(out_dir / "best.npz", model, opt, t, meta)
                final_eval = per_task
    except DivergenceError as exc:
        writer.write({"kind": "abort", "step": exc.step, "reason": str(exc)})
        writer.close()
        raise

    summary = {
        "kind": "summary",
        "completed": True,
        "total_steps": cfg.total_steps,
        "switch_count": counters.switches,
        "updates_by_task": counters.updates,
        "postwarmup_updates_by_task": counters.postwarmup_updates,
        "examples_by_task": counters.examples,
        "clip_count": counters.clips,
        "final_task": state.current_task,
        "best_dev_loss": best["loss"],
        "best_dev_step": best["step"],
        "final_mean_dev_loss": None if scripted else _mean_dev_loss(final_eval),
        "final_token_acc": None if scripted else {
            tid: final_eval[tid]["token_acc"] for tid in family.task_ids
        },
    }
    writer.write(summary)
    writer.close()
    return RunResult(out_dir=out_dir, log_path=log_path, header=header, summary=summary)


# ---------------------------------------------------------------------------
# compare-metrics
# ---------------------------------------------------------------------------


def run_compare_metrics(cfg: RunConfig, verbose: bool = False) -> RunResult:
    """Train one model on one task, sampling all six metric/scope series.

    Variations are measured between snapshots ``sample_every`` steps apart
    and the emitted table also carries the window rolling average.
    """
    cfg.require_seed()
    family = build_family(cfg)
    if len(family.task_ids) != 1:
        raise ConfigError(
            "compare-metrics needs a single-task family "
            "(tasks.family.single_size)"
        )
    task_id = family.task_ids[0]
    tcfg = cfg.trainer()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng_drop = derive_rng(cfg.seed, "dropout")
    rng_batch = derive_rng(cfg.seed, "batch")
    dims = ModelDims(
        vocab_size=family.vocab_size,
        d_model=tcfg.d_model,
        n_heads=tcfg.n_heads,
        n_layers=tcfg.n_layers,
        ffn_dim=tcfg.ffn_dim,
        max_len=family.max_seq_len() + 2,
    )
    model = TransformerModel(dims, derive_rng(cfg.seed, "model"))
    opt = AdamState(model.params)

    log_path = out_dir / "compare_metrics.jsonl"
    writer = RunLogWriter(log_path)
    header = _make_header(cfg, "compare-metrics", family, None, None)
    writer.write(header)

    series: dict[str, list[float]] = {name: [] for name in _SERIES_NAMES}
    sample_steps: list[int] = []
    # the first sample point only sets the baseline: freshly initialized
    # bias vectors are all zeros, which the inverse-cosine metric rejects
    prev_sample = None
    try:
        for t in range(1, cfg.total_steps + 1):
            pairs = make_batch(family, task_id, tcfg.batch_tokens, rng_batch)
            batch = pad_batch(pairs)
            loss, cache = model.forward_loss(
                batch, dropout=tcfg.dropout, rng=rng_drop,
                label_smoothing=tcfg.label_smoothing,
            )
            if not np.isfinite(loss):
                raise DivergenceError("non-finite loss", step=t)
            grads = model.backward(cache)
            apply_update(model, grads, opt, tcfg, t)
            if t % cfg.sample_every == 0:
                snap = model.snapshot(t)
                if prev_sample is not None:
                    record = {"kind": "sample", "step": t, "loss": loss}
                    for name in _SERIES_NAMES:
                        value = weight_variation(prev_sample, snap, _metric_for(name))
                        series[name].append(value)
                        record[name] = value
                    sample_steps.append(t)
                    writer.write(record)
                prev_sample = snap
                if verbose and t % (cfg.sample_every * 50) == 0:
                    print(f"step {t}: loss {loss:.4f}", flush=True)
    except DivergenceError as exc:
        writer.write({"kind": "abort", "step": exc.step, "reason": str(exc)})
        writer.close()
        raise

    rolled = {name: rolling_average(series[name], cfg.window) for name in _SERIES_NAMES}
    header_row = ["step", *_SERIES_NAMES]
    write_csv(
        out_dir / "metrics_raw.csv", header_row,
        ([step, *(series[name][i] for name in _SERIES_NAMES)]
         for i, step in enumerate(sample_steps)),
    )
    write_csv(
        out_dir / "metrics.csv", header_row,
        ([step, *(rolled[name][i] for name in _SERIES_NAMES)]
         for i, step in enumerate(sample_steps)),
    )

    per_task = evaluate_model(model, family, tcfg)
    peaks = {}
    for name in _SERIES_NAMES:
        values = rolled[name]
        peaks[name] = sample_steps[int(np.argmax(values))] if values else None
    summary = {
        "kind": "summary",
        "completed": True,
        "total_steps": cfg.total_steps,
        "n_samples": len(sample_steps),
        "rolled_peak_step": peaks,
        "final_mean_dev_loss": _mean_dev_loss(per_task),
        "final_token_acc": {tid: per_task[tid]["token_acc"] for tid in family.task_ids},
    }
    writer.write(summary)
    writer.close()
    return RunResult(out_dir=out_dir, log_path=log_path, header=header, summary=summary)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

_SWEEP_PARAMS = {"w": "smoothing_weight", "alpha": "alpha"}

_SWEEP_HEADER = [
    "param", "value", "seed", "total_steps", "best_dev_loss", "best_dev_step",
    "final_mean_dev_loss", "final_mean_token_acc", "switch_count",
]


def run_sweep(cfg: RunConfig, param: str, values, verbose: bool = False):
    """One run per value, identical seed and config otherwise."""
    cfg.require_seed()
    if param not in _SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {sorted(_SWEEP_PARAMS)}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    out_dir = Path(cfg.out_dir)
    rows = []
    for value in values:
        sub = cfg.with_updates(**{
            _SWEEP_PARAMS[param]: float(value),
            "out_dir": str(out_dir / f"{param}_{value}"),
        })
        result = run_training(sub, verbose=verbose)
        s = result.summary
        acc = s["final_token_acc"]
        mean_acc = None if acc is None else sum(acc.values()) / len(acc)
        rows.append([
            param, float(value), cfg.seed, s["total_steps"], s["best_dev_loss"],
            s["best_dev_step"], s["final_mean_dev_loss"], mean_acc, s["switch_count"],
        ])
    csv_path = write_csv(out_dir / "sweep.csv", _SWEEP_HEADER, rows)
    return rows, csv_path


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

BUCKET_SIZE = 100


def run_report(log_path, out_dir=None, verbose: bool = False) -> dict:
    """Switch counts per 100-step bucket, per-task shares, event timeline."""
    records = read_log(log_path)
    header = records[0]
    steps = [r for r in records if r["kind"] == "step"]
    if not steps:
        raise InvalidInputError("log contains no step records")
    task_ids = [t["id"] for t in header["tasks"]]
    warmup = header["resolved_trainer"]["warmup_steps"]
    out = Path(out_dir) if out_dir is not None else Path(log_path).parent

    events = []
    if "initial_event" in header:
        events.append(header["initial_event"])
    events.extend(r["event"] for r in steps if r["event"] is not None)

    total_steps = max(r["step"] for r in steps)
    n_buckets = (total_steps + BUCKET_SIZE - 1) // BUCKET_SIZE
    bucket_rows = []
    for b in range(n_buckets):
        lo, hi = b * BUCKET_SIZE + 1, min((b + 1) * BUCKET_SIZE, total_steps)
        in_bucket = [e for e in events if e["trigger"] != "initial" and lo <= e["step"] <= hi]
        into = {tid: 0 for tid in task_ids}
        for e in in_bucket:
            into[e["to_task"]] += 1
        bucket_rows.append([lo, hi, len(in_bucket), *(into[tid] for tid in task_ids)])
    switches_path = write_csv(
        out / "switches.csv",
        ["bucket_start", "bucket_end", "switches_total",
         *(f"switches_into_{tid}" for tid in task_ids)],
        bucket_rows,
    )

    mono_steps = [r for r in steps if r["task"] is not None]
    post = [r for r in mono_steps if r["step"] > warmup]
    updates = {tid: sum(1 for r in mono_steps if r["task"] == tid) for tid in task_ids}
    post_updates = {tid: sum(1 for r in post if r["task"] == tid) for tid in task_ids}
    example_counts = {tid: 0 for tid in task_ids}
    for r in steps:
        for tid, n in r["examples"].items():
            example_counts[tid] += n
    n_mono, n_post = len(mono_steps), len(post)
    n_examples = sum(example_counts.values())
    share_rows = []
    shares = {}
    for tid in task_ids:
        update_share = updates[tid] / n_mono if n_mono else None
        post_share = post_updates[tid] / n_post if n_post else None
        example_share = example_counts[tid] / n_examples if n_examples else None
        shares[tid] = {
            "updates": updates[tid],
            "update_share": update_share,
            "postwarmup_updates": post_updates[tid],
            "postwarmup_update_share": post_share,
            "examples": example_counts[tid],
            "example_share": example_share,
        }
        share_rows.append([
            tid, updates[tid], update_share, post_updates[tid], post_share,
            example_counts[tid], example_share,
        ])
    shares_path = write_csv(
        out / "shares.csv",
        ["task", "updates", "update_share", "postwarmup_updates",
         "postwarmup_update_share", "examples", "example_share"],
        share_rows,
    )

    events_path = write_csv(
        out / "events.csv",
        ["step", "from_task", "to_task", "trigger"],
        ([e["step"], e["from_task"], e["to_task"], e["trigger"]] for e in events),
    )

    report = {
        "total_steps": total_steps,
        "warmup_steps": warmup,
        "switch_count": sum(1 for e in events if e["trigger"] != "initial"),
        "buckets": bucket_rows,
        "shares": shares,
        "paths": {
            "switches": str(switches_path),
            "shares": str(shares_path),
            "events": str(events_path),
        },
    }
    if verbose:
        print(f"steps: {total_steps}, switches: {report['switch_count']}")
        for tid in task_ids:
            s = shares[tid]
            post_share = s["postwarmup_update_share"]
            post_text = "n/a" if post_share is None else f"{post_share:.3f}"
            print(
                f"  {tid}: updates {s['updates']}"
                f" (post-warmup share {post_text}),"
                f" examples {s['examples']}"
            )
        print(f"tables: {out}")
    return report


# ---------------------------------------------------------------------------
# offline decision replay
# ---------------------------------------------------------------------------


def replay_decisions(records: list[dict]) -> list[str]:
    """Re-run the self-paced decision logic over a log's smoothed-variation
    column and return the task sequence it implies.

    Uses only the header (config, task roles, seed) and the per-step
    ``d_smooth`` values, so it independently reconstructs what the live
    scheduler did.
    """
    header = records[0]
    cfg = header["config"]
    if cfg["strategy"] != "self-paced":
        raise InvalidInputError("replay applies to self-paced logs")
    if "initial_event" not in header:
        raise InvalidInputError(
            "resumed logs are not standalone-replayable; replay the original run"
        )
    roles = {t["id"]: t["role"] for t in header["tasks"]}
    ids = list(roles)
    state = SchedulerState(
        current_task=header["initial_event"]["to_task"],
        strategy="self-paced",
        alpha=cfg["alpha"],
        hrl_warmup=cfg["hrl_warmup"],
        warmup_steps=header["resolved_trainer"]["warmup_steps"],
    )
    table = CompetenceTable(ids, cfg["smoothing_weight"])
    rng = derive_rng(cfg["seed"], "sched")
    tasks_out: list[str] = []
    for r in records:
        if r["kind"] != "step":
            continue
        t = r["step"]
        tasks_out.append(state.current_task)
        entry = table.entry(state.current_task)
        entry.lagged = entry.smoothed
        entry.smoothed = r["d_smooth"]
        entry.seen = True
        entry.last_step = t
        allowed = warmup_gate(t + 1, state, roles)
        self_paced_step(
            state, table, r["d_smooth"], entry.lagged, t, allowed, rng,
            gate_active=len(allowed) < len(ids),
        )
    return tasks_out
