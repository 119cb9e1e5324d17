"""Batched transformer building blocks with explicit reverse-mode gradients.

Everything operates on (batch, tokens, d_model) activations.  Each *_fwd
returns (output, cache); the matching *_bwd consumes the cache and returns
the input gradient plus parameter gradients.  Parameters arrive as a mapping
from dotted names to arrays (see model.param_order for the naming scheme) so
these functions stay ignorant of the surrounding architecture.

Attention masks keys only: a PAD key receives exactly zero weight from every
query, while PAD queries still produce (unused, finite) rows.  The masked
softmax hands back all-zero rows when a query has no valid key.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels as K

LN_EPS = 1e-5


def dropout_fwd(x, rate, rng):
    """Inverted dropout.  rng=None or rate=0 disables it (identity, no cache)."""
    if rng is None or rate <= 0.0:
        return x, None
    keep = (rng.random(size=x.shape) >= rate).astype(x.dtype)
    keep /= x.dtype.type(1.0 - rate)
    return x * keep, keep


def dropout_bwd(dy, keep):
    if keep is None:
        return dy
    return dy * keep


def ln_fwd(x, gain, bias):
    b, t, d = x.shape
    x2 = x.reshape(b * t, d)
    y2, mean, rstd = K.layer_norm_fwd(x2, gain, bias, LN_EPS)
    return y2.reshape(b, t, d), (x2, mean, rstd)


def ln_bwd(dy, gain, cache):
    x2, mean, rstd = cache
    b, t, d = dy.shape
    dx2, dgain, dbias = K.layer_norm_bwd(dy.reshape(b * t, d), x2, gain, mean, rstd)
    return dx2.reshape(b, t, d), dgain, dbias


def linear_bwd(dy, x, w):
    """Gradients of y = x @ w + b given upstream dy."""
    dn = dy.reshape(-1, dy.shape[-1])
    xn = x.reshape(-1, x.shape[-1])
    dw = xn.T @ dn
    db = dn.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def attention_fwd(x, valid, p, prefix, n_heads, rate, rng):
    """Bidirectional multi-head self-attention with key-validity masking."""
    bsz, t, d = x.shape
    dh = d // n_heads
    q = x @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]
    k = x @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"]
    v = x @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"]
    qh = q.reshape(bsz, t, n_heads, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(bsz, t, n_heads, dh).transpose(0, 2, 1, 3)
    vh = v.reshape(bsz, t, n_heads, dh).transpose(0, 2, 1, 3)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    key_valid = np.broadcast_to(valid[:, None, None, :], scores.shape)
    probs = K.masked_softmax_fwd(
        scores.reshape(-1, t), key_valid.reshape(-1, t)
    ).reshape(scores.shape)
    ctx = (probs @ vh).transpose(0, 2, 1, 3).reshape(bsz, t, d)
    out = ctx @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]
    out, keep = dropout_fwd(out, rate, rng)
    return out, (x, qh, kh, vh, probs, ctx, keep)


def attention_bwd(dout, cache, p, prefix, n_heads):
    x, qh, kh, vh, probs, ctx, keep = cache
    bsz, t, d = x.shape
    dh = d // n_heads
    dout = dropout_bwd(dout, keep)
    dctx, dwo, dbo = linear_bwd(dout, ctx, p[f"{prefix}.wo"])
    dctxh = dctx.reshape(bsz, t, n_heads, dh).transpose(0, 2, 1, 3)
    dprobs = dctxh @ vh.transpose(0, 1, 3, 2)
    dvh = probs.transpose(0, 1, 3, 2) @ dctxh
    dscores = K.masked_softmax_bwd(
        probs.reshape(-1, t), dprobs.reshape(-1, t)
    ).reshape(probs.shape) * (1.0 / math.sqrt(dh))
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dq = dqh.transpose(0, 2, 1, 3).reshape(bsz, t, d)
    dk = dkh.transpose(0, 2, 1, 3).reshape(bsz, t, d)
    dv = dvh.transpose(0, 2, 1, 3).reshape(bsz, t, d)
    dx_q, dwq, dbq = linear_bwd(dq, x, p[f"{prefix}.wq"])
    dx_k, dwk, dbk = linear_bwd(dk, x, p[f"{prefix}.wk"])
    dx_v, dwv, dbv = linear_bwd(dv, x, p[f"{prefix}.wv"])
    grads = {
        f"{prefix}.wq": dwq, f"{prefix}.bq": dbq,
        f"{prefix}.wk": dwk, f"{prefix}.bk": dbk,
        f"{prefix}.wv": dwv, f"{prefix}.bv": dbv,
        f"{prefix}.wo": dwo, f"{prefix}.bo": dbo,
    }
    return dx_q + dx_k + dx_v, grads


def ff_fwd(x, p, prefix, rate, rng):
    """Position-wise feed-forward with exact-erf GELU."""
    h = x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]
    a = K.gelu_fwd(h)
    out = a @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]
    out, keep = dropout_fwd(out, rate, rng)
    return out, (x, h, a, keep)


def ff_bwd(dout, cache, p, prefix):
    x, h, a, keep = cache
    dout = dropout_bwd(dout, keep)
    da, dw2, db2 = linear_bwd(dout, a, p[f"{prefix}.w2"])
    dh = K.gelu_bwd(h, da)
    dx, dw1, db1 = linear_bwd(dh, x, p[f"{prefix}.w1"])
    grads = {
        f"{prefix}.w1": dw1, f"{prefix}.b1": db1,
        f"{prefix}.w2": dw2, f"{prefix}.b2": db2,
    }
    return dx, grads


def block_fwd(x, valid, p, prefix, n_heads, rate, rng):
    """Pre-norm residual block: x + attn(ln(x)), then x + ff(ln(x))."""
    a_in, c_ln1 = ln_fwd(x, p[f"{prefix}.ln1.gain"], p[f"{prefix}.ln1.bias"])
    a_out, c_attn = attention_fwd(a_in, valid, p, f"{prefix}.attn", n_heads, rate, rng)
    x1 = x + a_out
    f_in, c_ln2 = ln_fwd(x1, p[f"{prefix}.ln2.gain"], p[f"{prefix}.ln2.bias"])
    f_out, c_ff = ff_fwd(f_in, p, f"{prefix}.ff", rate, rng)
    return x1 + f_out, (c_ln1, c_attn, c_ln2, c_ff)


def block_bwd(dy, cache, p, prefix, n_heads):
    c_ln1, c_attn, c_ln2, c_ff = cache
    grads = {}
    df_in, g = ff_bwd(dy, c_ff, p, f"{prefix}.ff")
    grads.update(g)
    dx1, dgain, dbias = ln_bwd(df_in, p[f"{prefix}.ln2.gain"], c_ln2)
    grads[f"{prefix}.ln2.gain"] = dgain
    grads[f"{prefix}.ln2.bias"] = dbias
    dx1 = dx1 + dy
    da_in, g = attention_bwd(dx1, c_attn, p, f"{prefix}.attn", n_heads)
    grads.update(g)
    dx, dgain, dbias = ln_bwd(da_in, p[f"{prefix}.ln1.gain"], c_ln1)
    grads[f"{prefix}.ln1.gain"] = dgain
    grads[f"{prefix}.ln1.bias"] = dbias
    return dx + dx1, grads


def stack_fwd(x, valid, p, prefix, n_layers, n_heads, rate, rng):
    """n_layers pre-norm blocks followed by a final layer norm."""
    caches = []
    for i in range(n_layers):
        x, c = block_fwd(x, valid, p, f"{prefix}{i}", n_heads, rate, rng)
        caches.append(c)
    y, c_norm = ln_fwd(x, p[f"{prefix}_norm.gain"], p[f"{prefix}_norm.bias"])
    return y, (caches, c_norm)


def stack_bwd(dy, cache, p, prefix, n_layers, n_heads):
    caches, c_norm = cache
    dx, dgain, dbias = ln_bwd(dy, p[f"{prefix}_norm.gain"], c_norm)
    grads = {f"{prefix}_norm.gain": dgain, f"{prefix}_norm.bias": dbias}
    for i in reversed(range(n_layers)):
        dx, g = block_bwd(dx, caches[i], p, f"{prefix}{i}", n_heads)
        grads.update(g)
    return dx, grads


def sinusoidal_table(max_tokens, d_model, dtype=np.float32):
    """Fixed sin/cos position table (even columns sin, odd columns cos)."""
    half = (d_model + 1) // 2
    pos = np.arange(max_tokens, dtype=np.float64)[:, None]
    freq = 1.0 / (10000.0 ** (2.0 * np.arange(half) / d_model))
    ang = pos * freq
    table = np.zeros((max_tokens, d_model))
    table[:, 0::2] = np.sin(ang)[:, : table[:, 0::2].shape[1]]
    table[:, 1::2] = np.cos(ang)[:, : table[:, 1::2].shape[1]]
    return table.astype(dtype)
