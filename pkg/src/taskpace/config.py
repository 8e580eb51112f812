"""Run configuration: a single versioned YAML file, strictly validated.

Unknown keys are rejected with their full path.  CLI flags override file
keys before validation.  The documented schema lives in docs/FORMATS.md;
:data:`DEFAULTS` is the authoritative set of keys and default values.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .metrics import METRIC_KINDS, METRIC_SCOPES, MetricKind
from .scheduler import STRATEGIES
from .training import PROFILES, TrainerConfig, from_profile

CONFIG_VERSION = 1

DEFAULTS: dict = {
    "version": CONFIG_VERSION,
    "seed": None,
    "out_dir": "runs/out",
    "strategy": "self-paced",
    "alpha": 1.0,
    "smoothing_weight": 0.995,
    "hrl_warmup": False,
    "total_steps": 3000,
    "eval_every": 250,
    "export_corpus": False,
    "scripted_d": None,
    "metric": {"kind": "symmetric-kl", "scope": "all-layers"},
    "trainer": {
        "profile": "default",
        "d_model": 64,
        "n_heads": 2,
        "n_layers": 2,
        "ffn_dim": 256,
        "batch_tokens": 1024,
        "warmup_steps": None,   # None -> profile value
        "lr_scale": None,
        "dropout": None,
        "grad_clip_norm": None,  # None -> profile value; 0 -> explicitly off
        "label_smoothing": 0.1,
        "adam_betas": [0.9, 0.998],
        "adam_eps": 1e-9,
    },
    "tasks": {
        "corpus_dir": None,
        "family": {
            "pairs": [{"hrl_size": 5000, "lrl_size": 500, "relatedness": 0.8}],
            "single_size": None,
            "content_tokens": 20,
            "min_len": 6,
            "max_len": 12,
            "dev_size": 200,
            "test_size": 200,
        },
    },
    "compare_metrics": {"sample_every": 10, "window": 100},
}


def _merge_strict(base: dict, override: dict, path: str = "") -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            merged[key] = _merge_strict(base[key], value, where)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _normalize(raw: dict) -> dict:
    # single_size replaces the built-in default pair list; an explicitly
    # provided pairs list still conflicts and is rejected by validation
    fam = raw["tasks"]["family"]
    if fam["single_size"] is not None and fam["pairs"] == DEFAULTS["tasks"]["family"]["pairs"]:
        fam["pairs"] = []
    return raw


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    # -- accessors ----------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def out_dir(self) -> str:
        return self.raw["out_dir"]

    @property
    def strategy(self) -> str:
        return self.raw["strategy"]

    @property
    def alpha(self) -> float:
        return float(self.raw["alpha"])

    @property
    def smoothing_weight(self) -> float:
        return float(self.raw["smoothing_weight"])

    @property
    def hrl_warmup(self) -> bool:
        return bool(self.raw["hrl_warmup"])

    @property
    def total_steps(self) -> int:
        return int(self.raw["total_steps"])

    @property
    def eval_every(self) -> int:
        return int(self.raw["eval_every"])

    @property
    def scripted_d(self) -> list[float] | None:
        return self.raw["scripted_d"]

    @property
    def export_corpus(self) -> bool:
        return bool(self.raw["export_corpus"])

    @property
    def sample_every(self) -> int:
        return int(self.raw["compare_metrics"]["sample_every"])

    @property
    def window(self) -> int:
        return int(self.raw["compare_metrics"]["window"])

    def metric(self) -> MetricKind:
        m = self.raw["metric"]
        return MetricKind(kind=m["kind"], scope=m["scope"])

    def trainer(self) -> TrainerConfig:
        t = self.raw["trainer"]
        betas = t["adam_betas"]
        return from_profile(
            t["profile"],
            d_model=t["d_model"],
            n_heads=t["n_heads"],
            n_layers=t["n_layers"],
            ffn_dim=t["ffn_dim"],
            batch_tokens=t["batch_tokens"],
            warmup_steps=t["warmup_steps"],
            lr_scale=t["lr_scale"],
            dropout=t["dropout"],
            grad_clip_norm=t["grad_clip_norm"],
            label_smoothing=t["label_smoothing"],
            adam_beta1=betas[0],
            adam_beta2=betas[1],
            adam_eps=t["adam_eps"],
        )

    def family_kwargs(self) -> dict:
        fam = self.raw["tasks"]["family"]
        return {
            "pairs": fam["pairs"],
            "single_size": fam["single_size"],
            "content_tokens": fam["content_tokens"],
            "min_len": fam["min_len"],
            "max_len": fam["max_len"],
            "dev_size": fam["dev_size"],
            "test_size": fam["test_size"],
        }

    @property
    def corpus_dir(self) -> str | None:
        return self.raw["tasks"]["corpus_dir"]

    def header_dict(self) -> dict:
        """Config echo for the run-log header.  ``out_dir`` is excluded so
        the same run written elsewhere produces byte-identical logs."""
        echo = copy.deepcopy(self.raw)
        echo.pop("out_dir")
        return echo

    # -- construction -------------------------------------------------------

    def with_updates(self, **updates) -> "RunConfig":
        """Copy with top-level (or dotted, e.g. ``trainer.profile``) keys
        replaced; the result is re-validated."""
        raw = copy.deepcopy(self.raw)
        for key, value in updates.items():
            node = raw
            parts = key.split(".")
            for part in parts[:-1]:
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        cfg = RunConfig(raw=_normalize(raw))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        data: dict = {}
        if path is not None:
            loaded = yaml.safe_load(Path(path).read_text())
            if loaded is None:
                loaded = {}
            if not isinstance(loaded, dict):
                raise ConfigError("config file must contain a mapping")
            _require("version" in loaded, "config file must declare 'version'")
            _require(loaded["version"] == CONFIG_VERSION,
                     f"unsupported config version {loaded['version']!r}")
            data = loaded
        raw = _normalize(_merge_strict(DEFAULTS, data))
        cfg = cls(raw=raw)
        if overrides:
            cfg = cfg.with_updates(**{k: v for k, v in overrides.items() if v is not None})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        raw = self.raw
        _require(raw["version"] == CONFIG_VERSION,
                 f"unsupported config version {raw['version']!r}")
        _require(raw["strategy"] in STRATEGIES,
                 f"strategy must be one of {STRATEGIES}, got {raw['strategy']!r}")
        _require(isinstance(raw["alpha"], (int, float)) and raw["alpha"] > 0,
                 "alpha must be a positive number")
        _require(isinstance(raw["smoothing_weight"], (int, float))
                 and 0.0 <= raw["smoothing_weight"] < 1.0,
                 "smoothing_weight must be in [0, 1)")
        _require(isinstance(raw["total_steps"], int) and raw["total_steps"] >= 1,
                 "total_steps must be a positive integer")
        _require(isinstance(raw["eval_every"], int) and raw["eval_every"] >= 1,
                 "eval_every must be a positive integer")
        _require(raw["metric"]["kind"] in METRIC_KINDS,
                 f"metric.kind must be one of {METRIC_KINDS}")
        _require(raw["metric"]["scope"] in METRIC_SCOPES,
                 f"metric.scope must be one of {METRIC_SCOPES}")
        _require(raw["trainer"]["profile"] in PROFILES,
                 f"trainer.profile must be one of {tuple(PROFILES)}")
        betas = raw["trainer"]["adam_betas"]
        _require(isinstance(betas, list) and len(betas) == 2,
                 "trainer.adam_betas must be a two-element list")
        scripted = raw["scripted_d"]
        if scripted is not None:
            _require(isinstance(scripted, list) and len(scripted) >= raw["total_steps"],
                     "scripted_d must list at least total_steps values")
            _require(all(isinstance(v, (int, float)) and v >= 0 for v in scripted),
                     "scripted_d values must be non-negative numbers")
        tasks = raw["tasks"]
        fam = tasks["family"]
        if tasks["corpus_dir"] is None:
            has_pairs = bool(fam["pairs"])
            has_single = fam["single_size"] is not None
            _require(has_pairs != has_single,
                     "tasks.family needs either pairs or single_size (not both)")
            if has_pairs:
                for i, pair in enumerate(fam["pairs"]):
                    _require(isinstance(pair, dict)
                             and set(pair) == {"hrl_size", "lrl_size", "relatedness"},
                             f"tasks.family.pairs[{i}] needs hrl_size, lrl_size, relatedness")
        if raw["seed"] is not None:
            _require(isinstance(raw["seed"], int), "seed must be an integer")
        # instantiating the trainer config runs its own checks
        self.trainer()

    def require_seed(self) -> None:
        if self.seed is None:
            raise ConfigError("a seed is required (pass --seed)")
