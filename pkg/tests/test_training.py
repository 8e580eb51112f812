"""Optimizer, schedule, clipping and checkpoint tests."""

import numpy as np
import pytest

from taskpace.errors import ConfigError, DivergenceError, InvalidInputError
from taskpace.model import ModelDims, TransformerModel
from taskpace.tasks import generate_task_family, make_batch, pad_batch
from taskpace.training import (
    AdamState,
    TrainerConfig,
    apply_update,
    clip_gradients,
    from_profile,
    global_grad_norm,
    load_checkpoint,
    noam_lr,
    save_checkpoint,
)

TINY = ModelDims(vocab_size=11, d_model=8, n_heads=2, n_layers=1, ffn_dim=16, max_len=16)


class TestNoamSchedule:
    def test_branches_meet_at_warmup(self):
        for warmup in (10, 100, 4000):
            w = warmup
            rising = w * w ** -1.5
            decaying = w ** -0.5
            assert abs(rising - decaying) < 1e-15
            assert abs(noam_lr(w, 64, w, 2.0) - 2.0 * 64 ** -0.5 * w ** -0.5) < 1e-15

    def test_reference_values(self):
        assert abs(noam_lr(100, 64, 100, 2.0) - 0.025) < 1e-12
        assert abs(noam_lr(400, 64, 100, 2.0) - 0.0125) < 1e-12

    def test_closed_form_at_key_steps(self):
        d_model, warmup, scale = 64, 200, 2.0
        for step in (1, warmup, 4 * warmup):
            expected = scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)
            assert abs(noam_lr(step, d_model, warmup, scale) - expected) < 1e-12

    def test_linear_rise_then_inverse_sqrt_decay(self):
        lrs = [noam_lr(s, 64, 100, 2.0) for s in range(1, 301)]
        assert all(b > a for a, b in zip(lrs[:99], lrs[1:100]))
        assert all(b < a for a, b in zip(lrs[100:299], lrs[101:300]))

    def test_step_zero_rejected(self):
        with pytest.raises(InvalidInputError):
            noam_lr(0, 64, 100, 2.0)


class TestProfiles:
    def test_default_profile(self):
        cfg = from_profile("default")
        assert cfg.dropout == 0.1
        assert cfg.lr_scale == 2.0
        assert cfg.grad_clip_norm is None
        assert cfg.warmup_steps == 200

    def test_regularized_profile(self):
        cfg = from_profile("regularized")
        assert cfg.dropout == 0.3
        assert cfg.lr_scale == 10.0
        assert cfg.grad_clip_norm == 5.0
        assert cfg.warmup_steps == 400  # doubled warmup

    def test_overrides_win(self):
        cfg = from_profile("regularized", warmup_steps=32, grad_clip_norm=0)
        assert cfg.warmup_steps == 32
        assert cfg.grad_clip_norm is None

    def test_unknown_profile_rejected(self):
        with pytest.raises(ConfigError):
            from_profile("extreme")

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            TrainerConfig(dropout=1.0)
        with pytest.raises(ConfigError):
            TrainerConfig(grad_clip_norm=-1.0)


class TestClipping:
    def test_norm_ten_clipped_to_five(self):
        grads = {"a": np.full(25, 2.0), "b": np.zeros(4)}
        assert abs(global_grad_norm(grads) - 10.0) < 1e-12
        norm, clipped = clip_gradients(grads, 5.0)
        assert clipped and abs(norm - 10.0) < 1e-12
        assert abs(global_grad_norm(grads) - 5.0) < 1e-9

    def test_disabled_clip_leaves_gradients_alone(self):
        grads = {"a": np.full(25, 2.0)}
        norm, clipped = clip_gradients(grads, None)
        assert not clipped
        np.testing.assert_array_equal(grads["a"], 2.0)

    def test_below_threshold_untouched(self):
        grads = {"a": np.full(4, 0.5)}
        _, clipped = clip_gradients(grads, 5.0)
        assert not clipped
        np.testing.assert_array_equal(grads["a"], 0.5)


class TestAdam:
    def test_zero_gradients_leave_parameters_unchanged(self):
        model = TransformerModel(TINY, np.random.default_rng(0))
        before = {k: v.copy() for k, v in model.params.items()}
        opt = AdamState(model.params)
        grads = {k: np.zeros_like(v) for k, v in model.params.items()}
        apply_update(model, grads, opt, from_profile("default"), step=1)
        for name in before:
            assert np.max(np.abs(model.params[name] - before[name])) < 1e-12

    def test_update_moves_against_gradient(self):
        model = TransformerModel(TINY, np.random.default_rng(1))
        opt = AdamState(model.params)
        grads = {k: np.zeros_like(v) for k, v in model.params.items()}
        grads["out.w"] += 1.0
        before = model.params["out.w"].copy()
        lr, _, _ = apply_update(model, grads, opt, from_profile("default"), step=1)
        assert np.all(model.params["out.w"] < before)
        assert lr == noam_lr(1, 64, 200, 2.0)

    def test_nonfinite_gradients_raise_divergence(self):
        model = TransformerModel(TINY, np.random.default_rng(2))
        opt = AdamState(model.params)
        grads = {k: np.zeros_like(v) for k, v in model.params.items()}
        grads["out.w"][0, 0] = np.inf
        with pytest.raises(DivergenceError):
            apply_update(model, grads, opt, from_profile("default"), step=7)


class TestLearnability:
    def test_loss_decreases_on_a_small_task(self):
        """A few hundred updates on a tiny cipher task beat the initial loss."""
        fam = generate_task_family(13, single_size=200, dev_size=5, test_size=5)
        dims = ModelDims(vocab_size=fam.vocab_size, d_model=16, n_heads=2,
                         n_layers=1, ffn_dim=32, max_len=fam.max_seq_len() + 2)
        model = TransformerModel(dims, np.random.default_rng(3))
        opt = AdamState(model.params)
        cfg = from_profile("default", d_model=16, batch_tokens=192, warmup_steps=50)
        rng_b = np.random.default_rng(4)
        rng_d = np.random.default_rng(5)
        first_loss = None
        for t in range(1, 501):
            batch = pad_batch(make_batch(fam, "solo", cfg.batch_tokens, rng_b))
            loss, cache = model.forward_loss(batch, dropout=cfg.dropout, rng=rng_d)
            if first_loss is None:
                first_loss = loss
            grads = model.backward(cache)
            apply_update(model, grads, opt, cfg, t)
        assert loss < first_loss * 0.75


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        model = TransformerModel(TINY, np.random.default_rng(6))
        opt = AdamState(model.params)
        opt.t = 12
        opt.m["out.w"] += 0.25
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, model, opt, step=34, meta={"note": "x"})
        loaded_model, loaded_opt, step, meta = load_checkpoint(path)
        assert step == 34 and meta == {"note": "x"}
        assert loaded_opt.t == 12
        for name in model.params:
            np.testing.assert_array_equal(loaded_model.params[name], model.params[name])
            np.testing.assert_array_equal(loaded_opt.m[name], opt.m[name])
            np.testing.assert_array_equal(loaded_opt.v[name], opt.v[name])

    def test_version_enforced(self, tmp_path):
        model = TransformerModel(TINY, np.random.default_rng(7))
        opt = AdamState(model.params)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, model, opt, step=1)
        import json

        data = dict(np.load(path))
        header = json.loads(str(data["meta_json"][()]))
        header["version"] = 99
        data["meta_json"] = np.array(json.dumps(header))
        with open(path, "wb") as fh:
            np.savez(fh, **data)
        with pytest.raises(ConfigError):
            load_checkpoint(path)
