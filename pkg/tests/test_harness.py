"""End-to-end harness tests: scripted scheduler runs, real micro-runs,
determinism, resume, replay, reports, sweeps, and the CLI contract."""

import json
from pathlib import Path

import numpy as np
import pytest

from taskpace.cli import main as cli_main
from taskpace.config import RunConfig
from taskpace.errors import ConfigError, DivergenceError
from taskpace.runlog import read_csv, read_log
from taskpace.runner import (
    replay_decisions,
    run_compare_metrics,
    run_report,
    run_sweep,
    run_training,
)

TINY_FAMILY = {
    "tasks.family.pairs": [{"hrl_size": 60, "lrl_size": 20, "relatedness": 0.8}],
    "tasks.family.dev_size": 10,
    "tasks.family.test_size": 10,
}
TINY_TRAINER = {
    "trainer.d_model": 16,
    "trainer.n_layers": 1,
    "trainer.ffn_dim": 32,
    "trainer.batch_tokens": 128,
    "trainer.warmup_steps": 20,
}


def make_cfg(tmp_path, seed=5, **updates):
    merged = {"out_dir": str(tmp_path / "run"), **TINY_FAMILY, **TINY_TRAINER,
              "total_steps": 40, "eval_every": 20, **updates}
    return RunConfig.from_file(None, {"seed": seed}).with_updates(**merged)


def scripted_cfg(tmp_path, d_values, **updates):
    return make_cfg(
        tmp_path,
        scripted_d=list(d_values),
        total_steps=updates.pop("total_steps", len(d_values)),
        **updates,
    )


def step_records(log_path):
    return [r for r in read_log(log_path) if r["kind"] == "step"]


class TestScriptedTraces:
    def test_decreasing_variation_switches_every_two_steps(self, tmp_path):
        d = [1.0 - 0.001 * t for t in range(1, 25)]
        res = run_training(scripted_cfg(tmp_path, d))
        steps = step_records(res.log_path)
        switch_steps = [r["step"] for r in steps if r["event"]]
        assert switch_steps == list(range(2, 25, 2))
        tasks = [r["task"] for r in steps]
        assert tasks == (["hrl", "hrl", "lrl", "lrl"] * 6)

    def test_increasing_variation_never_switches(self, tmp_path):
        d = [1.0 + 0.001 * t for t in range(1, 25)]
        res = run_training(scripted_cfg(tmp_path, d))
        steps = step_records(res.log_path)
        assert all(r["event"] is None for r in steps)
        assert {r["task"] for r in steps} == {"hrl"}

    def test_alpha_grid_diverges_on_same_sequence(self, tmp_path):
        d = [1.0] * 24
        switch_counts = {}
        for alpha in (0.9, 1.1):
            res = run_training(scripted_cfg(tmp_path / str(alpha), d, alpha=alpha))
            switch_counts[alpha] = res.summary["switch_count"]
        assert switch_counts[0.9] == 0
        assert switch_counts[1.1] == 12

    def test_two_update_minimum_in_log(self, tmp_path):
        rng = np.random.default_rng(0)
        d = rng.uniform(0.1, 1.0, size=60).tolist()
        res = run_training(scripted_cfg(tmp_path, d, alpha=1.1))
        tasks = [r["task"] for r in step_records(res.log_path)]
        runs = []
        count = 1
        for prev, cur in zip(tasks, tasks[1:]):
            if cur == prev:
                count += 1
            else:
                runs.append(count)
                count = 1
        assert all(n >= 2 for n in runs)

    def test_hrl_warmup_pins_scheduler_to_hrl(self, tmp_path):
        d = np.linspace(1.0, 0.1, 40).tolist()
        res = run_training(scripted_cfg(tmp_path, d, hrl_warmup=True))
        steps = step_records(res.log_path)
        warmup = 20
        assert all(r["task"] == "hrl" for r in steps if r["step"] <= warmup)
        assert any(r["task"] == "lrl" for r in steps if r["step"] > warmup)

    def test_alternation_with_hrl_warmup_emits_warmup_end(self, tmp_path):
        d = [1.0] * 40
        res = run_training(scripted_cfg(tmp_path, d, strategy="alternation",
                                        hrl_warmup=True))
        steps = step_records(res.log_path)
        warmup = 20
        assert all(r["task"] == "hrl" for r in steps if r["step"] <= warmup)
        triggers = [r["event"]["trigger"] for r in steps if r["event"]]
        assert triggers.count("warmup-end") == 1
        assert triggers[0] == "warmup-end"


class TestRealRuns:
    def test_all_strategies_complete_and_log_consistently(self, tmp_path):
        for strategy in ("self-paced", "alternation", "shuffled"):
            cfg = make_cfg(tmp_path / strategy, strategy=strategy)
            res = run_training(cfg)
            records = read_log(res.log_path)
            steps = [r for r in records if r["kind"] == "step"]
            assert [r["step"] for r in steps] == list(range(1, 41))
            assert records[0]["kind"] == "header"
            assert records[-1]["kind"] == "summary"
            assert res.summary["completed"] is True
            assert all(np.isfinite(r["loss"]) for r in steps)
            assert all(r["d_raw"] >= 0.0 for r in steps)
            if strategy == "shuffled":
                assert all(r["task"] is None for r in steps)
            assert (Path(cfg.out_dir) / "best.npz").exists()
            assert (Path(cfg.out_dir) / "last.npz").exists()

    def test_alternation_cycles_tasks(self, tmp_path):
        res = run_training(make_cfg(tmp_path, strategy="alternation"))
        tasks = [r["task"] for r in step_records(res.log_path)]
        assert tasks[:4] == ["hrl", "lrl", "hrl", "lrl"]
        counts = {t: tasks.count(t) for t in ("hrl", "lrl")}
        assert counts == {"hrl": 20, "lrl": 20}

    def test_identical_seed_and_config_are_byte_identical(self, tmp_path):
        r1 = run_training(make_cfg(tmp_path / "a"))
        r2 = run_training(make_cfg(tmp_path / "b"))
        assert Path(r1.log_path).read_bytes() == Path(r2.log_path).read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        r1 = run_training(make_cfg(tmp_path / "a", seed=5))
        r2 = run_training(make_cfg(tmp_path / "b", seed=6))
        assert Path(r1.log_path).read_bytes() != Path(r2.log_path).read_bytes()

    def test_resume_reproduces_decisions(self, tmp_path):
        full = run_training(make_cfg(tmp_path / "full"))
        partial_cfg = make_cfg(tmp_path / "part", total_steps=20)
        run_training(partial_cfg)
        resumed = run_training(
            make_cfg(tmp_path / "resumed"),
            resume_from=Path(partial_cfg.out_dir) / "last.npz",
        )
        full_tail = [(r["step"], r["task"], r["d_raw"], r["d_smooth"])
                     for r in step_records(full.log_path) if r["step"] > 20]
        resumed_steps = [(r["step"], r["task"], r["d_raw"], r["d_smooth"])
                         for r in step_records(resumed.log_path)]
        assert resumed_steps == full_tail

    def test_smoothing_column_reproducible_from_raw(self, tmp_path):
        res = run_training(make_cfg(tmp_path))
        steps = step_records(res.log_path)
        w = 0.995
        smoothed = {}
        for r in steps:
            prev = smoothed.get(r["task"])
            expected = r["d_raw"] if prev is None else (1 - w) * r["d_raw"] + w * prev
            assert r["d_smooth"] == expected
            smoothed[r["task"]] = expected

    def test_replay_matches_logged_decisions_real_run(self, tmp_path):
        res = run_training(make_cfg(tmp_path, total_steps=60, eval_every=30))
        records = read_log(res.log_path)
        replayed = replay_decisions(records)
        assert replayed == [r["task"] for r in step_records(res.log_path)]

    def test_replay_matches_logged_decisions_scripted(self, tmp_path):
        rng = np.random.default_rng(3)
        d = rng.uniform(0.1, 1.0, size=80).tolist()
        res = run_training(scripted_cfg(tmp_path, d, alpha=1.05))
        records = read_log(res.log_path)
        assert replay_decisions(records) == [r["task"] for r in step_records(res.log_path)]

    def test_divergent_run_aborts_with_flagged_log(self, tmp_path):
        cfg = make_cfg(tmp_path, **{"trainer.lr_scale": 1e300})
        with np.errstate(all="ignore"), pytest.raises(DivergenceError):
            run_training(cfg)
        records = read_log(Path(cfg.out_dir) / "run.jsonl")
        assert records[-1]["kind"] == "abort"

    def test_corpus_export_option(self, tmp_path):
        cfg = make_cfg(tmp_path, export_corpus=True)
        run_training(cfg)
        assert (Path(cfg.out_dir) / "corpus" / "family.json").exists()
        assert (Path(cfg.out_dir) / "corpus" / "hrl.train.tsv").exists()

    def test_run_from_exported_corpus_matches_generated(self, tmp_path):
        """A run reproduced from fixed corpus files draws the same batches
        and makes the same decisions as the generating run."""
        gen_cfg = make_cfg(tmp_path / "gen", export_corpus=True)
        gen = run_training(gen_cfg)
        loaded_cfg = make_cfg(tmp_path / "loaded").with_updates(**{
            "tasks.corpus_dir": str(Path(gen_cfg.out_dir) / "corpus"),
        })
        loaded = run_training(loaded_cfg)
        gen_steps = [(r["step"], r["task"], r["d_raw"])
                     for r in step_records(gen.log_path)]
        loaded_steps = [(r["step"], r["task"], r["d_raw"])
                        for r in step_records(loaded.log_path)]
        assert gen_steps == loaded_steps

    def test_replay_honors_warmup_gate(self, tmp_path):
        d = np.linspace(1.0, 0.1, 50).tolist()
        res = run_training(scripted_cfg(tmp_path, d, hrl_warmup=True))
        records = read_log(res.log_path)
        assert replay_decisions(records) == [r["task"] for r in step_records(res.log_path)]

    def test_eight_task_family_schedules_and_replays(self, tmp_path):
        rng = np.random.default_rng(8)
        d = rng.uniform(0.1, 1.0, size=120).tolist()
        cfg = scripted_cfg(tmp_path, d, alpha=1.1, **{
            "tasks.family.pairs": [
                {"hrl_size": 46, "lrl_size": 2, "relatedness": 0.8},
                {"hrl_size": 31, "lrl_size": 2, "relatedness": 0.8},
                {"hrl_size": 25, "lrl_size": 5, "relatedness": 0.8},
                {"hrl_size": 17, "lrl_size": 10, "relatedness": 0.8},
            ],
        })
        res = run_training(cfg)
        records = read_log(res.log_path)
        steps = step_records(res.log_path)
        assert len({r["task"] for r in steps}) == 8
        assert replay_decisions(records) == [r["task"] for r in steps]


class TestReport:
    def test_alternation_bucket_counts(self, tmp_path):
        d = [1.0] * 200
        res = run_training(scripted_cfg(tmp_path, d, strategy="alternation"))
        report = run_report(res.log_path)
        header, rows = read_csv(report["paths"]["switches"])
        assert header[:3] == ["bucket_start", "bucket_end", "switches_total"]
        for row in rows:
            assert int(row[2]) == 100          # total switches per full bucket
            assert int(row[3]) == 50           # into hrl
            assert int(row[4]) == 50           # into lrl

    def test_shares_sum_to_one(self, tmp_path):
        res = run_training(make_cfg(tmp_path))
        report = run_report(res.log_path)
        update_total = sum(s["update_share"] for s in report["shares"].values())
        example_total = sum(s["example_share"] for s in report["shares"].values())
        assert abs(update_total - 1.0) < 1e-12
        assert abs(example_total - 1.0) < 1e-12

    def test_shuffled_run_reports_example_shares(self, tmp_path):
        res = run_training(make_cfg(tmp_path, strategy="shuffled"))
        report = run_report(res.log_path)
        for s in report["shares"].values():
            assert s["updates"] == 0
            assert s["update_share"] is None
            assert s["examples"] > 0

    def test_event_timeline_csv(self, tmp_path):
        d = np.linspace(1.0, 0.5, 30).tolist()
        res = run_training(scripted_cfg(tmp_path, d))
        report = run_report(res.log_path)
        header, rows = read_csv(report["paths"]["events"])
        assert header == ["step", "from_task", "to_task", "trigger"]
        assert rows[0][3] == "initial"
        assert all(r[3] in ("initial", "variation-decrease", "alternation-cycle",
                            "warmup-end") for r in rows)

    def test_report_counts_match_summary(self, tmp_path):
        res = run_training(make_cfg(tmp_path, total_steps=60, eval_every=30))
        report = run_report(res.log_path)
        assert report["switch_count"] == res.summary["switch_count"]
        for task, share in report["shares"].items():
            assert share["updates"] == res.summary["updates_by_task"][task]


class TestSweep:
    def test_single_value_sweep_equals_plain_run(self, tmp_path):
        cfg = make_cfg(tmp_path / "sweep", smoothing_weight=0.9)
        rows, csv_path = run_sweep(cfg, "w", [0.9])
        plain = run_training(make_cfg(tmp_path / "plain", smoothing_weight=0.9))
        sweep_log = Path(cfg.out_dir) / "w_0.9" / "run.jsonl"
        assert sweep_log.read_bytes() == Path(plain.log_path).read_bytes()
        header, table = read_csv(csv_path)
        assert len(table) == 1
        assert float(table[0][1]) == 0.9

    def test_sweep_runs_one_row_per_value(self, tmp_path):
        cfg = make_cfg(tmp_path, total_steps=24, eval_every=12)
        rows, csv_path = run_sweep(cfg, "alpha", [0.9, 1.1])
        header, table = read_csv(csv_path)
        assert [r[0] for r in table] == ["alpha", "alpha"]
        assert [float(r[1]) for r in table] == [0.9, 1.1]

    def test_empty_values_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            run_sweep(make_cfg(tmp_path), "w", [])

    def test_unknown_param_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            run_sweep(make_cfg(tmp_path), "gamma", [1.0])


class TestCompareMetrics:
    def single_cfg(self, tmp_path, **updates):
        merged = {
            "out_dir": str(tmp_path / "cmp"),
            "tasks.family.pairs": [],
            "tasks.family.single_size": 60,
            "tasks.family.dev_size": 10,
            "tasks.family.test_size": 10,
            **TINY_TRAINER,
            "total_steps": 40,
            "compare_metrics.sample_every": 5,
            "compare_metrics.window": 4,
            **updates,
        }
        return RunConfig.from_file(None, {"seed": 7}).with_updates(**merged)

    def test_emits_six_equal_length_nonnegative_series(self, tmp_path):
        cfg = self.single_cfg(tmp_path)
        res = run_compare_metrics(cfg)
        for name in ("metrics.csv", "metrics_raw.csv"):
            header, rows = read_csv(Path(cfg.out_dir) / name)
            assert len(header) == 7  # step + six series
            # 40 steps sampled every 5; the first sample is the baseline
            assert len(rows) == 7
            for row in rows:
                assert all(float(v) >= 0.0 for v in row[1:])

    def test_requires_single_task_family(self, tmp_path):
        cfg = make_cfg(tmp_path)
        with pytest.raises(ConfigError):
            run_compare_metrics(cfg)

    def test_deterministic(self, tmp_path):
        r1 = run_compare_metrics(self.single_cfg(tmp_path / "a"))
        r2 = run_compare_metrics(self.single_cfg(tmp_path / "b"))
        assert Path(r1.log_path).read_bytes() == Path(r2.log_path).read_bytes()
        a = (Path(r1.out_dir) / "metrics.csv").read_bytes()
        b = (Path(r2.out_dir) / "metrics.csv").read_bytes()
        assert a == b


class TestCli:
    def write_config(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("""
version: 1
total_steps: 24
eval_every: 12
trainer:
  d_model: 16
  n_layers: 1
  ffn_dim: 32
  batch_tokens: 128
  warmup_steps: 12
tasks:
  family:
    pairs:
      - {hrl_size: 60, lrl_size: 20, relatedness: 0.8}
    dev_size: 10
    test_size: 10
""")
        return path

    def test_run_exits_zero(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "out"
        code = cli_main(["run", "--config", str(cfg), "--seed", "3",
                         "--out", str(out)])
        assert code == 0
        assert (out / "run.jsonl").exists()

    def test_flag_overrides_apply(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "out"
        code = cli_main(["run", "--config", str(cfg), "--seed", "3",
                         "--out", str(out), "--strategy", "alternation",
                         "--steps", "12"])
        assert code == 0
        records = read_log(out / "run.jsonl")
        assert records[0]["config"]["strategy"] == "alternation"
        assert records[0]["config"]["total_steps"] == 12

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("version: 1\nnot_a_key: 2\n")
        code = cli_main(["run", "--config", str(bad), "--seed", "1"])
        assert code == 2

    def test_missing_log_is_io_error(self, tmp_path):
        code = cli_main(["report", "--log", str(tmp_path / "absent.jsonl")])
        assert code == 4

    def test_corrupt_log_is_io_error(self, tmp_path, capsys):
        path = tmp_path / "log.jsonl"
        path.write_text('{"kind":"header"}\nnot json\n')
        code = cli_main(["report", "--log", str(path)])
        assert code == 4
        assert "line 2" in capsys.readouterr().err

    def test_divergence_exit_code(self, tmp_path):
        cfg = self.write_config(tmp_path)
        text = cfg.read_text().replace("  d_model: 16", "  d_model: 16\n  lr_scale: 1.0e+300")
        cfg.write_text(text)
        with np.errstate(all="ignore"):
            code = cli_main(["run", "--config", str(cfg), "--seed", "3",
                             "--out", str(tmp_path / "d")])
        assert code == 3

    def test_report_runs_on_real_log(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "out"
        assert cli_main(["run", "--config", str(cfg), "--seed", "3",
                         "--out", str(out)]) == 0
        assert cli_main(["report", "--log", str(out / "run.jsonl")]) == 0
        assert (out / "shares.csv").exists()

    def test_sweep_cli(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "sweep"
        code = cli_main(["sweep", "--config", str(cfg), "--seed", "3",
                         "--out", str(out), "--param", "alpha",
                         "--values", "0.9,1.1", "--steps", "12"])
        assert code == 0
        assert (out / "sweep.csv").exists()
