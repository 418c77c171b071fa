"""Micro-transformer numeric core shared by the generator and the ranker.

One set of pre-layernorm blocks serves both models; the generator applies a
causal attention mask and a per-position vocabulary head, the ranker runs
bidirectional attention with mean pooling into a 2-way head. Forward and
backward passes are written out explicitly; correctness is pinned by the
finite-difference tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    vocab_size: int
    n_ctx: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    causal: bool = True
    n_classes: int = 0  # 0: per-position LM head over vocab; >0: pooled classifier

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_head(self):
        return self.d_model // self.n_heads

    @property
    def head_width(self):
        return self.n_classes if self.n_classes else self.vocab_size

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict:
    """Fresh parameters. The output head starts at zero so an untrained model
    predicts the uniform distribution."""
    rng = np.random.default_rng(seed)
    d, ff = config.d_model, config.d_ff

    def w(*shape, scale=0.02):
        return (rng.standard_normal(shape) * scale).astype(dtype)

    params = {
        "tok_emb": w(config.vocab_size, d),
        "pos_emb": w(config.n_ctx, d),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        params[p + "ln1.g"] = np.ones(d, dtype=dtype)
        params[p + "ln1.b"] = np.zeros(d, dtype=dtype)
        params[p + "attn.wq"] = w(d, d)
        params[p + "attn.bq"] = np.zeros(d, dtype=dtype)
        params[p + "attn.wk"] = w(d, d)
        params[p + "attn.bk"] = np.zeros(d, dtype=dtype)
        params[p + "attn.wv"] = w(d, d)
        params[p + "attn.bv"] = np.zeros(d, dtype=dtype)
        params[p + "attn.wo"] = w(d, d, scale=0.02 / math.sqrt(2 * config.n_layers))
        params[p + "attn.bo"] = np.zeros(d, dtype=dtype)
        params[p + "ln2.g"] = np.ones(d, dtype=dtype)
        params[p + "ln2.b"] = np.zeros(d, dtype=dtype)
        params[p + "mlp.w1"] = w(d, ff)
        params[p + "mlp.b1"] = np.zeros(ff, dtype=dtype)
        params[p + "mlp.w2"] = w(ff, d, scale=0.02 / math.sqrt(2 * config.n_layers))
        params[p + "mlp.b2"] = np.zeros(d, dtype=dtype)
    params["ln_f.g"] = np.ones(d, dtype=dtype)
    params["ln_f.b"] = np.zeros(d, dtype=dtype)
    params["head.w"] = np.zeros((d, config.head_width), dtype=dtype)
    params["head.b"] = np.zeros(config.head_width, dtype=dtype)
    return params


# --- primitive layers -------------------------------------------------------


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return g * xhat + b, (xhat, inv_std, g)


def _layernorm_bwd(dy, cache):
    xhat, inv_std, g = cache
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_bwd(x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _attention_bias(config: ModelConfig, pad_mask, dtype):
    """Additive [B, 1, T, T] bias: -inf on masked keys. Only keys are masked,
    so no row is ever fully masked (BOS is always real)."""
    B, T = pad_mask.shape
    neg = np.array(-1e9, dtype=dtype)
    bias = np.where(pad_mask[:, None, None, :], dtype(0), neg)
    if config.causal:
        causal = np.triu(np.ones((T, T), dtype=bool), k=1)
        bias = bias + np.where(causal, neg, dtype(0))[None, None]
    return bias


# --- trunk forward / backward ----------------------------------------------


def _split_heads(x, n_heads):
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _trunk_forward(params, config: ModelConfig, ids, pad_mask, need_cache):
    """Embeddings + transformer blocks + final layernorm.

    Returns (y [B,T,d], cache). Cache is None unless requested.
    """
    dtype = params["tok_emb"].dtype
    B, T = ids.shape
    if T > config.n_ctx:
        raise ValueError(f"sequence length {T} exceeds context {config.n_ctx}")
    bias = _attention_bias(config, pad_mask, dtype.type)
    x = params["tok_emb"][ids] + params["pos_emb"][:T][None]
    layer_caches = []
    for i in range(config.n_layers):
        p = f"layers.{i}."
        a, ln1_cache = _layernorm_fwd(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = _split_heads(a @ params[p + "attn.wq"] + params[p + "attn.bq"], config.n_heads)
        k = _split_heads(a @ params[p + "attn.wk"] + params[p + "attn.bk"], config.n_heads)
        v = _split_heads(a @ params[p + "attn.wv"] + params[p + "attn.bv"], config.n_heads)
        att = q @ k.transpose(0, 1, 3, 2) / math.sqrt(config.d_head) + bias
        probs = _softmax(att)
        o = _merge_heads(probs @ v)
        attn_out = o @ params[p + "attn.wo"] + params[p + "attn.bo"]
        x1 = x + attn_out
        m, ln2_cache = _layernorm_fwd(x1, params[p + "ln2.g"], params[p + "ln2.b"])
        h = m @ params[p + "mlp.w1"] + params[p + "mlp.b1"]
        hact = _gelu_fwd(h)
        f = hact @ params[p + "mlp.w2"] + params[p + "mlp.b2"]
        x2 = x1 + f
        if need_cache:
            layer_caches.append((ln1_cache, a, q, k, v, probs, o, ln2_cache, m, h, hact, x))
        x = x2
    y, lnf_cache = _layernorm_fwd(x, params["ln_f.g"], params["ln_f.b"])
    cache = (layer_caches, lnf_cache, ids, T) if need_cache else None
    return y, cache


def _trunk_backward(dy, params, config: ModelConfig, cache, grads):
    layer_caches, lnf_cache, ids, T = cache
    dx, dg, db = _layernorm_bwd(dy, lnf_cache)
    grads["ln_f.g"] = dg
    grads["ln_f.b"] = db
    for i in reversed(range(config.n_layers)):
        p = f"layers.{i}."
        ln1_cache, a, q, k, v, probs, o, ln2_cache, m, h, hact, x_in = layer_caches[i]
        # mlp branch
        df = dx  # gradient into f (residual passes dx through unchanged)
        grads[p + "mlp.w2"] = hact.reshape(-1, hact.shape[-1]).T @ df.reshape(-1, df.shape[-1])
        grads[p + "mlp.b2"] = df.sum(axis=(0, 1))
        dhact = df @ params[p + "mlp.w2"].T
        dh = dhact * _gelu_bwd(h)
        grads[p + "mlp.w1"] = m.reshape(-1, m.shape[-1]).T @ dh.reshape(-1, dh.shape[-1])
        grads[p + "mlp.b1"] = dh.sum(axis=(0, 1))
        dm = dh @ params[p + "mlp.w1"].T
        dx1_from_ln2, dg2, db2 = _layernorm_bwd(dm, ln2_cache)
        grads[p + "ln2.g"] = dg2
        grads[p + "ln2.b"] = db2
        dx1 = dx + dx1_from_ln2
        # attention branch
        dattn_out = dx1
        grads[p + "attn.wo"] = o.reshape(-1, o.shape[-1]).T @ dattn_out.reshape(-1, dattn_out.shape[-1])
        grads[p + "attn.bo"] = dattn_out.sum(axis=(0, 1))
        do = _split_heads(dattn_out @ params[p + "attn.wo"].T, config.n_heads)
        dprobs = do @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ do
        datt = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        datt = datt / math.sqrt(config.d_head)
        dq = datt @ k
        dk = datt.transpose(0, 1, 3, 2) @ q
        da = np.zeros_like(a)
        flat_a = a.reshape(-1, a.shape[-1])
        for name, dz in (("q", dq), ("k", dk), ("v", dv)):
            dz = _merge_heads(dz)
            flat_dz = dz.reshape(-1, dz.shape[-1])
            grads[p + f"attn.w{name}"] = flat_a.T @ flat_dz
            grads[p + f"attn.b{name}"] = dz.sum(axis=(0, 1))
            da += dz @ params[p + f"attn.w{name}"].T
        dx_from_ln1, dg1, db1 = _layernorm_bwd(da, ln1_cache)
        grads[p + "ln1.g"] = dg1
        grads[p + "ln1.b"] = db1
        dx = dx1 + dx_from_ln1
    dtok = np.zeros_like(params["tok_emb"])
    np.add.at(dtok, ids, dx)
    grads["tok_emb"] = dtok
    dpos = np.zeros_like(params["pos_emb"])
    dpos[:T] = dx.sum(axis=0)
    grads["pos_emb"] = dpos


# --- language-model head ----------------------------------------------------


def lm_logits(params, config: ModelConfig, ids, pad_mask=None):
    """Next-token logits at every position, [B, T, V]."""
    if pad_mask is None:
        pad_mask = np.ones(ids.shape, dtype=bool)
    y, _ = _trunk_forward(params, config, ids, pad_mask, need_cache=False)
    return y @ params["head.w"] + params["head.b"]


def lm_loss_and_grads(params, config: ModelConfig, ids, target_mask, pad_mask=None):
    """Masked next-token cross-entropy and gradients.

    `target_mask[b, t]` true means the token ids[b, t] is a training target,
    predicted from the prefix ids[b, :t]. Loss is the mean negative
    log-probability over masked positions.
    """
    if pad_mask is None:
        pad_mask = target_mask | (ids != 0)
    n_targets = int(target_mask.sum())
    if n_targets == 0:
        raise ValueError("no target positions in batch")
    y, cache = _trunk_forward(params, config, ids, pad_mask, need_cache=True)
    logits = y @ params["head.w"] + params["head.b"]
    logp = log_softmax(logits[:, :-1])
    next_ids = ids[:, 1:]
    mask = target_mask[:, 1:]
    B, Tm1, V = logp.shape
    picked = np.take_along_axis(logp, next_ids[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / n_targets

    dlogits = np.zeros_like(logits)
    probs = np.exp(logp)
    dslice = probs * mask[..., None]
    np.put_along_axis(
        dslice, next_ids[..., None],
        np.take_along_axis(dslice, next_ids[..., None], axis=-1) - mask[..., None],
        axis=-1,
    )
    dlogits[:, :-1] = dslice / n_targets

    grads = {}
    flat_y = y.reshape(-1, y.shape[-1])
    flat_dl = dlogits.reshape(-1, dlogits.shape[-1])
    grads["head.w"] = flat_y.T @ flat_dl
    grads["head.b"] = dlogits.sum(axis=(0, 1))
    dy = dlogits @ params["head.w"].T
    _trunk_backward(dy, params, config, cache, grads)
    return float(loss), grads


def lm_token_logprobs(params, config: ModelConfig, ids, target_mask, pad_mask=None):
    """Log-probability of each masked realized token, in position order."""
    if pad_mask is None:
        pad_mask = target_mask | (ids != 0)
    logits = lm_logits(params, config, ids, pad_mask)
    logp = log_softmax(logits[:, :-1])
    out = []
    for b in range(ids.shape[0]):
        row = []
        for t in range(1, ids.shape[1]):
            if target_mask[b, t]:
                row.append(float(logp[b, t - 1, ids[b, t]]))
        out.append(row)
    return out


# --- pooled classifier head -------------------------------------------------


def classifier_logits(params, config: ModelConfig, ids, pad_mask=None):
    if pad_mask is None:
        pad_mask = np.ones(ids.shape, dtype=bool)
    y, _ = _trunk_forward(params, config, ids, pad_mask, need_cache=False)
    pooled = _mean_pool(y, pad_mask)
    return pooled @ params["head.w"] + params["head.b"]


def _mean_pool(y, pad_mask):
    m = pad_mask[..., None].astype(y.dtype)
    return (y * m).sum(axis=1) / m.sum(axis=1)


def classifier_loss_and_grads(params, config: ModelConfig, ids, labels, pad_mask=None):
    """2-way cross-entropy over mean-pooled states; returns (loss, grads)."""
    if pad_mask is None:
        pad_mask = np.ones(ids.shape, dtype=bool)
    B = ids.shape[0]
    y, cache = _trunk_forward(params, config, ids, pad_mask, need_cache=True)
    pooled = _mean_pool(y, pad_mask)
    logits = pooled @ params["head.w"] + params["head.b"]
    logp = log_softmax(logits)
    loss = -logp[np.arange(B), labels].mean()

    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    grads = {}
    grads["head.w"] = pooled.T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["head.w"].T
    m = pad_mask[..., None].astype(y.dtype)
    dy = dpooled[:, None, :] * m / m.sum(axis=1, keepdims=True)
    _trunk_backward(dy, params, config, cache, grads)
    return float(loss), grads


# --- optimizer --------------------------------------------------------------


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            params[key] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def cast_params(params, dtype):
    return {k: v.astype(dtype) for k, v in params.items()}
