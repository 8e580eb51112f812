"""A small encoder-decoder transformer in numpy with hand-written
reverse-mode gradients.

Everything is float64 so the analytic gradients can be checked against
central finite differences to tight tolerances.  The forward pass caches
all intermediates; :meth:`TransformerModel.backward` walks them in
reverse.  Parameters live in one insertion-ordered dict so weight
snapshots have a stable tensor order; the output projection is the final
tensor by construction (it has no bias).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import InvalidInputError
from .metrics import WeightSnapshot

_LN_EPS = 1e-5
_MASK_BIAS = -1e9


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    ffn_dim: int = 256
    max_len: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise InvalidInputError("d_model must be divisible by n_heads")
        if self.d_model % 2 != 0:
            raise InvalidInputError("d_model must be even (sinusoidal positions)")
        if min(self.vocab_size, self.n_layers, self.ffn_dim, self.max_len) < 1:
            raise InvalidInputError("all model dimensions must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d_model, 2, dtype=np.float64) * (-np.log(10000.0) / d_model))
    table = np.zeros((max_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div)
    return table


# ---------------------------------------------------------------------------
# Primitive layers (forward + backward)
# ---------------------------------------------------------------------------


def _affine(x, w, b=None):
    # collapse leading axes so BLAS sees one big matmul instead of a
    # per-example loop
    y2 = x.reshape(-1, w.shape[0]) @ w
    if b is not None:
        y2 += b
    return y2.reshape(*x.shape[:-1], w.shape[1])


def _linear_bwd(x, w, dy):
    din, dout = w.shape
    x2 = x.reshape(-1, din)
    dy2 = dy.reshape(-1, dout)
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, dw, db


def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _ln_bwd(dy, cache):
    xhat, inv, g = cache
    lead = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=lead)
    db = dy.sum(axis=lead)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _dropout_fwd(x, p, rng):
    if p <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def _dropout_bwd(dy, mask):
    return dy if mask is None else dy * mask


def _attn_fwd(params, prefix, xq, xkv, bias, n_heads):
    """Multi-head attention.  ``bias`` is an additive mask broadcastable to
    (B, heads, Tq, Tk); masked positions carry a large negative value."""
    wq, bq = params[f"{prefix}.wq"], params[f"{prefix}.bq"]
    wk, bk = params[f"{prefix}.wk"], params[f"{prefix}.bk"]
    wv, bv = params[f"{prefix}.wv"], params[f"{prefix}.bv"]
    wo, bo = params[f"{prefix}.wo"], params[f"{prefix}.bo"]
    B, tq, d = xq.shape
    tk = xkv.shape[1]
    dh = d // n_heads

    q = _affine(xq, wq, bq).reshape(B, tq, n_heads, dh).transpose(0, 2, 1, 3)
    k = _affine(xkv, wk, bk).reshape(B, tk, n_heads, dh).transpose(0, 2, 1, 3)
    v = _affine(xkv, wv, bv).reshape(B, tk, n_heads, dh).transpose(0, 2, 1, 3)

    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh) + bias
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)

    ctx = (p @ v).transpose(0, 2, 1, 3).reshape(B, tq, d)
    out = _affine(ctx, wo, bo)
    return out, (xq, xkv, q, k, v, p, ctx)


def _attn_bwd(params, prefix, dout, cache, grads, n_heads):
    xq, xkv, q, k, v, p, ctx = cache
    wq = params[f"{prefix}.wq"]
    wk = params[f"{prefix}.wk"]
    wv = params[f"{prefix}.wv"]
    wo = params[f"{prefix}.wo"]
    B, tq, d = xq.shape
    tk = xkv.shape[1]
    dh = d // n_heads

    dctx, dwo, dbo = _linear_bwd(ctx, wo, dout)
    grads[f"{prefix}.wo"] += dwo
    grads[f"{prefix}.bo"] += dbo

    dctx_h = dctx.reshape(B, tq, n_heads, dh).transpose(0, 2, 1, 3)
    dp = dctx_h @ v.transpose(0, 1, 3, 2)
    dv = p.transpose(0, 1, 3, 2) @ dctx_h
    dscores = (dp - (dp * p).sum(axis=-1, keepdims=True)) * p
    dq = (dscores @ k) / np.sqrt(dh)
    dk = (dscores.transpose(0, 1, 3, 2) @ q) / np.sqrt(dh)

    dq = dq.transpose(0, 2, 1, 3).reshape(B, tq, d)
    dk = dk.transpose(0, 2, 1, 3).reshape(B, tk, d)
    dv = dv.transpose(0, 2, 1, 3).reshape(B, tk, d)

    dxq, dwq, dbq = _linear_bwd(xq, wq, dq)
    grads[f"{prefix}.wq"] += dwq
    grads[f"{prefix}.bq"] += dbq
    dxk, dwk, dbk = _linear_bwd(xkv, wk, dk)
    grads[f"{prefix}.wk"] += dwk
    grads[f"{prefix}.bk"] += dbk
    dxv, dwv, dbv = _linear_bwd(xkv, wv, dv)
    grads[f"{prefix}.wv"] += dwv
    grads[f"{prefix}.bv"] += dbv
    return dxq, dxk + dxv


def _ffn_fwd(params, prefix, x):
    w1, b1 = params[f"{prefix}.w1"], params[f"{prefix}.b1"]
    w2, b2 = params[f"{prefix}.w2"], params[f"{prefix}.b2"]
    pre = _affine(x, w1, b1)
    h = np.maximum(pre, 0.0)
    return _affine(h, w2, b2), (x, pre, h)


def _ffn_bwd(params, prefix, dy, cache, grads):
    x, pre, h = cache
    w1 = params[f"{prefix}.w1"]
    w2 = params[f"{prefix}.w2"]
    dh, dw2, db2 = _linear_bwd(h, w2, dy)
    grads[f"{prefix}.w2"] += dw2
    grads[f"{prefix}.b2"] += db2
    dpre = dh * (pre > 0.0)
    dx, dw1, db1 = _linear_bwd(x, w1, dpre)
    grads[f"{prefix}.w1"] += dw1
    grads[f"{prefix}.b1"] += db1
    return dx


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------


class TransformerModel:
    """Pre-norm encoder-decoder transformer over integer token ids."""

    def __init__(self, dims: ModelDims, rng: np.random.Generator | None = None):
        self.dims = dims
        self.pos = sinusoidal_positions(dims.max_len, dims.d_model)
        self.params: dict[str, np.ndarray] = {}
        if rng is not None:
            self._init_params(rng)

    # -- construction -----------------------------------------------------

    def _xavier(self, rng, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    def _init_attn(self, rng, prefix, d):
        for name in ("wq", "wk", "wv", "wo"):
            self.params[f"{prefix}.{name}"] = self._xavier(rng, d, d)
            self.params[f"{prefix}.{name.replace('w', 'b')}"] = np.zeros(d)

    def _init_ln(self, prefix, d):
        self.params[f"{prefix}.g"] = np.ones(d)
        self.params[f"{prefix}.b"] = np.zeros(d)

    def _init_ffn(self, rng, prefix, d, f):
        self.params[f"{prefix}.w1"] = self._xavier(rng, d, f)
        self.params[f"{prefix}.b1"] = np.zeros(f)
        self.params[f"{prefix}.w2"] = self._xavier(rng, f, d)
        self.params[f"{prefix}.b2"] = np.zeros(d)

    def _init_params(self, rng):
        d, f, v = self.dims.d_model, self.dims.ffn_dim, self.dims.vocab_size
        self.params["src_embed"] = rng.normal(0.0, d ** -0.5, size=(v, d))
        self.params["tgt_embed"] = rng.normal(0.0, d ** -0.5, size=(v, d))
        for i in range(self.dims.n_layers):
            p = f"enc{i}"
            self._init_ln(f"{p}.ln1", d)
            self._init_attn(rng, f"{p}.attn", d)
            self._init_ln(f"{p}.ln2", d)
            self._init_ffn(rng, f"{p}.ffn", d, f)
        self._init_ln("enc_ln", d)
        for i in range(self.dims.n_layers):
            p = f"dec{i}"
            self._init_ln(f"{p}.ln1", d)
            self._init_attn(rng, f"{p}.self", d)
            self._init_ln(f"{p}.ln2", d)
            self._init_attn(rng, f"{p}.cross", d)
            self._init_ln(f"{p}.ln3", d)
            self._init_ffn(rng, f"{p}.ffn", d, f)
        self._init_ln("dec_ln", d)
        # no bias: the output projection stays the final snapshot tensor
        self.params["out.w"] = self._xavier(rng, d, v)

    @classmethod
    def from_params(cls, dims: ModelDims, params: dict[str, np.ndarray]) -> "TransformerModel":
        template = cls(dims, np.random.default_rng(0))
        if list(template.params) != list(params):
            raise InvalidInputError("parameter names do not match the model layout")
        model = cls(dims, rng=None)
        model.params = {
            name: np.array(params[name], dtype=np.float64) for name in template.params
        }
        for name, arr in model.params.items():
            if arr.shape != template.params[name].shape:
                raise InvalidInputError(f"parameter {name!r} has the wrong shape")
        return model

    # -- snapshots ----------------------------------------------------------

    def snapshot(self, step: int) -> WeightSnapshot:
        return WeightSnapshot.from_arrays(self.params.items(), step)

    # -- forward / backward -------------------------------------------------

    def _validate_batch(self, src, tgt_in, tgt_out, pad_id):
        v = self.dims.vocab_size
        for name, ids in (("src", src), ("tgt_in", tgt_in), ("tgt_out", tgt_out)):
            if ids.ndim != 2:
                raise InvalidInputError(f"{name} must be a 2-d integer array")
            if ids.min() < 0 or ids.max() >= v:
                raise InvalidInputError(f"{name} contains ids outside [0, {v})")
            if ids.shape[1] > self.dims.max_len:
                raise InvalidInputError(
                    f"{name} length {ids.shape[1]} exceeds max_len {self.dims.max_len}"
                )
        if src.shape[0] != tgt_in.shape[0] or tgt_in.shape != tgt_out.shape:
            raise InvalidInputError("batch arrays disagree on shape")
        if np.any((tgt_out != pad_id).sum(axis=1) == 0):
            raise InvalidInputError("every example needs a non-empty target")

    def forward_loss(self, batch, dropout: float = 0.0, rng=None,
                     label_smoothing: float = 0.1, pad_id: int = 0):
        """Label-smoothed cross entropy averaged over non-pad target tokens.

        Returns ``(loss, cache)``; the cache feeds :meth:`backward` and also
        carries the token log-probabilities for evaluation.
        """
        if dropout > 0.0 and rng is None:
            raise InvalidInputError("dropout requires an rng")
        src = np.asarray(batch["src"], dtype=np.int64)
        tgt_in = np.asarray(batch["tgt_in"], dtype=np.int64)
        tgt_out = np.asarray(batch["tgt_out"], dtype=np.int64)
        self._validate_batch(src, tgt_in, tgt_out, pad_id)

        dims = self.dims
        params = self.params
        scale = np.sqrt(dims.d_model)
        ts, tt = src.shape[1], tgt_in.shape[1]

        src_bias = np.where(src != pad_id, 0.0, _MASK_BIAS)[:, None, None, :]
        causal = np.triu(np.full((tt, tt), _MASK_BIAS), k=1)[None, None, :, :]
        tgt_bias = np.where(tgt_in != pad_id, 0.0, _MASK_BIAS)[:, None, None, :] + causal

        # encoder
        x = params["src_embed"][src] * scale + self.pos[:ts]
        x, src_drop = _dropout_fwd(x, dropout, rng)
        enc_caches = []
        for i in range(dims.n_layers):
            p = f"enc{i}"
            h1, ln1c = _ln_fwd(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
            a, ac = _attn_fwd(params, f"{p}.attn", h1, h1, src_bias, dims.n_heads)
            a, adrop = _dropout_fwd(a, dropout, rng)
            x = x + a
            h2, ln2c = _ln_fwd(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
            ff, fc = _ffn_fwd(params, f"{p}.ffn", h2)
            ff, fdrop = _dropout_fwd(ff, dropout, rng)
            x = x + ff
            enc_caches.append((ln1c, ac, adrop, ln2c, fc, fdrop))
        memory, enc_lnc = _ln_fwd(x, params["enc_ln.g"], params["enc_ln.b"])

        # decoder
        y = params["tgt_embed"][tgt_in] * scale + self.pos[:tt]
        y, tgt_drop = _dropout_fwd(y, dropout, rng)
        dec_caches = []
        for i in range(dims.n_layers):
            p = f"dec{i}"
            h1, ln1c = _ln_fwd(y, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
            a, sc = _attn_fwd(params, f"{p}.self", h1, h1, tgt_bias, dims.n_heads)
            a, sdrop = _dropout_fwd(a, dropout, rng)
            y = y + a
            h2, ln2c = _ln_fwd(y, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
            c, cc = _attn_fwd(params, f"{p}.cross", h2, memory, src_bias, dims.n_heads)
            c, cdrop = _dropout_fwd(c, dropout, rng)
            y = y + c
            h3, ln3c = _ln_fwd(y, params[f"{p}.ln3.g"], params[f"{p}.ln3.b"])
            ff, fc = _ffn_fwd(params, f"{p}.ffn", h3)
            ff, fdrop = _dropout_fwd(ff, dropout, rng)
            y = y + ff
            dec_caches.append((ln1c, sc, sdrop, ln2c, cc, cdrop, ln3c, fc, fdrop))
        y_final, dec_lnc = _ln_fwd(y, params["dec_ln.g"], params["dec_ln.b"])

        logits = _affine(y_final, params["out.w"])
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

        mask = (tgt_out != pad_id)
        n_tokens = int(mask.sum())
        eps = label_smoothing
        v = dims.vocab_size
        logp_y = np.take_along_axis(logp, tgt_out[..., None], axis=-1)[..., 0]
        token_loss = -((1.0 - eps) * logp_y + (eps / v) * logp.sum(axis=-1))
        loss = float((token_loss * mask).sum() / n_tokens)

        cache = {
            "src": src, "tgt_in": tgt_in, "tgt_out": tgt_out,
            "mask": mask, "n_tokens": n_tokens, "label_smoothing": eps,
            "src_drop": src_drop, "tgt_drop": tgt_drop,
            "enc": enc_caches, "enc_lnc": enc_lnc, "memory": memory,
            "dec": dec_caches, "dec_lnc": dec_lnc,
            "y_final": y_final, "logp": logp,
        }
        return loss, cache

    def backward(self, cache) -> dict[str, np.ndarray]:
        dims = self.dims
        params = self.params
        grads = {name: np.zeros_like(arr) for name, arr in params.items()}
        scale = np.sqrt(dims.d_model)
        d = dims.d_model

        logp = cache["logp"]
        tgt_out = cache["tgt_out"]
        mask = cache["mask"]
        eps = cache["label_smoothing"]
        v = dims.vocab_size

        probs = np.exp(logp)
        q = np.full_like(probs, eps / v)
        np.put_along_axis(
            q, tgt_out[..., None],
            np.take_along_axis(q, tgt_out[..., None], axis=-1) + (1.0 - eps),
            axis=-1,
        )
        dlogits = (probs - q) * mask[..., None] / cache["n_tokens"]

        y_final = cache["y_final"]
        dlogits2 = dlogits.reshape(-1, v)
        grads["out.w"] += y_final.reshape(-1, d).T @ dlogits2
        d_final = (dlogits2 @ params["out.w"].T).reshape(y_final.shape)
        dy, dg, db = _ln_bwd(d_final, cache["dec_lnc"])
        grads["dec_ln.g"] += dg
        grads["dec_ln.b"] += db

        d_memory = np.zeros_like(cache["memory"])
        for i in reversed(range(dims.n_layers)):
            p = f"dec{i}"
            ln1c, sc, sdrop, ln2c, cc, cdrop, ln3c, fc, fdrop = cache["dec"][i]
            dff = _dropout_bwd(dy, fdrop)
            dh3 = _ffn_bwd(params, f"{p}.ffn", dff, fc, grads)
            dx, dg, db = _ln_bwd(dh3, ln3c)
            grads[f"{p}.ln3.g"] += dg
            grads[f"{p}.ln3.b"] += db
            dy = dy + dx

            dc = _dropout_bwd(dy, cdrop)
            dh2, dmem = _attn_bwd(params, f"{p}.cross", dc, cc, grads, dims.n_heads)
            d_memory += dmem
            dx, dg, db = _ln_bwd(dh2, ln2c)
            grads[f"{p}.ln2.g"] += dg
            grads[f"{p}.ln2.b"] += db
            dy = dy + dx

            da = _dropout_bwd(dy, sdrop)
            dq, dkv = _attn_bwd(params, f"{p}.self", da, sc, grads, dims.n_heads)
            dx, dg, db = _ln_bwd(dq + dkv, ln1c)
            grads[f"{p}.ln1.g"] += dg
            grads[f"{p}.ln1.b"] += db
            dy = dy + dx

        demb = _dropout_bwd(dy, cache["tgt_drop"]) * scale
        np.add.at(grads["tgt_embed"], cache["tgt_in"].reshape(-1), demb.reshape(-1, d))

        dx, dg, db = _ln_bwd(d_memory, cache["enc_lnc"])
        grads["enc_ln.g"] += dg
        grads["enc_ln.b"] += db
        for i in reversed(range(dims.n_layers)):
            p = f"enc{i}"
            ln1c, ac, adrop, ln2c, fc, fdrop = cache["enc"][i]
            dff = _dropout_bwd(dx, fdrop)
            dh2 = _ffn_bwd(params, f"{p}.ffn", dff, fc, grads)
            dxi, dg, db = _ln_bwd(dh2, ln2c)
            grads[f"{p}.ln2.g"] += dg
            grads[f"{p}.ln2.b"] += db
            dx = dx + dxi

            da = _dropout_bwd(dx, adrop)
            dq, dkv = _attn_bwd(params, f"{p}.attn", da, ac, grads, dims.n_heads)
            dxi, dg, db = _ln_bwd(dq + dkv, ln1c)
            grads[f"{p}.ln1.g"] += dg
            grads[f"{p}.ln1.b"] += db
            dx = dx + dxi

        demb = _dropout_bwd(dx, cache["src_drop"]) * scale
        np.add.at(grads["src_embed"], cache["src"].reshape(-1), demb.reshape(-1, d))
        return grads


def token_stats_from_cache(cache) -> tuple[int, int]:
    """(correct, total) token counts under teacher forcing."""
    pred = cache["logp"].argmax(axis=-1)
    mask = cache["mask"]
    correct = int(((pred == cache["tgt_out"]) & mask).sum())
    return correct, int(mask.sum())
