"""Optimization: noam learning-rate schedule, Adam, gradient clipping,
trainer profiles, and checkpoint files.

Two named profiles are provided.  ``default`` uses dropout 0.1, learning
rate scale 2 and no clipping; ``regularized`` raises dropout to 0.3 and
the scale to 10, doubles the warmup, and re-normalizes gradients whose
global norm exceeds 5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DivergenceError, InvalidInputError
from .model import ModelDims, TransformerModel

CHECKPOINT_VERSION = 1

DESK_WARMUP_STEPS = 200

PROFILES = {
    "default": {
        "dropout": 0.1,
        "lr_scale": 2.0,
        "grad_clip_norm": None,
        "warmup_steps": DESK_WARMUP_STEPS,
    },
    "regularized": {
        "dropout": 0.3,
        "lr_scale": 10.0,
        "grad_clip_norm": 5.0,
        "warmup_steps": 2 * DESK_WARMUP_STEPS,
    },
}


@dataclass(frozen=True)
class TrainerConfig:
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    ffn_dim: int = 256
    batch_tokens: int = 1024
    warmup_steps: int = DESK_WARMUP_STEPS
    lr_scale: float = 2.0
    dropout: float = 0.1
    grad_clip_norm: float | None = None
    label_smoothing: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.998
    adam_eps: float = 1e-9

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0.0:
            raise ConfigError("grad_clip_norm must be positive (or None to disable)")
        if self.warmup_steps < 1 or self.batch_tokens < 1:
            raise ConfigError("warmup_steps and batch_tokens must be positive")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")


def from_profile(name: str, **overrides) -> TrainerConfig:
    """Build a TrainerConfig from a named profile; explicit keyword
    arguments (not None) override the profile's values."""
    if name not in PROFILES:
        raise ConfigError(f"unknown trainer profile {name!r}")
    merged = dict(PROFILES[name])
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    # grad_clip_norm 0 means "explicitly disabled"
    if merged.get("grad_clip_norm") == 0:
        merged["grad_clip_norm"] = None
    return replace(TrainerConfig(), **merged)


def noam_lr(step: int, d_model: int, warmup_steps: int, scale: float) -> float:
    """``scale * d_model**-0.5 * min(step**-0.5, step * warmup_steps**-1.5)``.

    Rises linearly from zero for ``warmup_steps`` updates, then decays with
    the inverse square root of the step; the two branches meet exactly at
    ``step == warmup_steps``.
    """
    if step < 1:
        raise InvalidInputError("noam_lr is defined for step >= 1")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


class AdamState:
    """First/second moment accumulators, one pair per parameter tensor."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}
        self.t = 0


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_gradients(grads, max_norm: float | None) -> tuple[float, bool]:
    """Re-normalize gradients in place when their global norm exceeds
    ``max_norm``.  Returns the pre-clip norm and whether clipping fired."""
    norm = global_grad_norm(grads)
    if max_norm is None or norm <= max_norm:
        return norm, False
    scale = max_norm / norm
    for g in grads.values():
        g *= scale
    return norm, True


def apply_update(model: TransformerModel, grads, opt: AdamState,
                 config: TrainerConfig, step: int) -> tuple[float, float, bool]:
    """Clip, then take one Adam step at the noam learning rate for ``step``.

    Updates the model in place and returns ``(lr, grad_norm, clipped)``.
    """
    norm, clipped = clip_gradients(grads, config.grad_clip_norm)
    if not np.isfinite(norm):
        raise DivergenceError("non-finite gradient norm", step=step)
    lr = noam_lr(step, config.d_model, config.warmup_steps, config.lr_scale)
    opt.t += 1
    bc1 = 1.0 - config.adam_beta1 ** opt.t
    bc2 = 1.0 - config.adam_beta2 ** opt.t
    for name, g in grads.items():
        m = opt.m[name]
        v = opt.v[name]
        m *= config.adam_beta1
        m += (1.0 - config.adam_beta1) * g
        v *= config.adam_beta2
        v += (1.0 - config.adam_beta2) * (g * g)
        model.params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
        if not np.all(np.isfinite(model.params[name])):
            raise DivergenceError(f"non-finite values in {name!r} after update", step=step)
    return lr, norm, clipped


# ---------------------------------------------------------------------------
# Checkpoints: one .npz holding named tensors plus a JSON metadata header
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: TransformerModel, opt: AdamState, step: int,
                    meta: dict | None = None) -> None:
    """Write a versioned checkpoint: every parameter tensor under
    ``param/<name>``, Adam moments under ``adam_m/`` and ``adam_v/``, and a
    JSON header (version, dims, step, extra metadata) under ``meta_json``."""
    arrays = {}
    for name, p in model.params.items():
        arrays[f"param/{name}"] = p
    for name, m in opt.m.items():
        arrays[f"adam_m/{name}"] = m
    for name, v in opt.v.items():
        arrays[f"adam_v/{name}"] = v
    header = {
        "version": CHECKPOINT_VERSION,
        "dims": model.dims.as_dict(),
        "step": int(step),
        "adam_t": int(opt.t),
        "meta": meta or {},
    }
    arrays["meta_json"] = np.array(json.dumps(header))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[TransformerModel, AdamState, int, dict]:
    """Inverse of :func:`save_checkpoint`.

    Returns ``(model, adam_state, step, meta)``.
    """
    with np.load(path) as data:
        header = json.loads(str(data["meta_json"][()]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {header.get('version')!r}")
        dims = ModelDims(**header["dims"])
        params = {
            key[len("param/"):]: data[key]
            for key in data.files if key.startswith("param/")
        }
        model = TransformerModel.from_params(dims, params)
        opt = AdamState(model.params)
        opt.t = int(header["adam_t"])
        for name in model.params:
            opt.m[name] = np.array(data[f"adam_m/{name}"], dtype=np.float64)
            opt.v[name] = np.array(data[f"adam_v/{name}"], dtype=np.float64)
    return model, opt, int(header["step"]), header["meta"]
