"""Pure-numpy implementations of the hot numeric kernels.

Reference semantics for the compiled backend in ``_fast.pyx``: both backends
must agree on every operation to within floating-point noise.  All functions
preserve the dtype of their array inputs (float32 or float64).

Shape conventions: ``layer_norm_*`` and ``softmax_xent`` operate on 2-D row
batches; ``masked_softmax_*`` on 2-D score rows with a 0/1 key-validity mask;
``gelu_*`` elementwise on any shape; ``adamw_update`` in place on 1-D views.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

BACKEND = "python"

_SQRT1_2 = math.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def layer_norm_fwd(x, gain, bias, eps):
    """Row-wise layer norm.  Returns (y, mean, rstd) with per-row stats."""
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    var = (centered * centered).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = centered * rstd[:, None] * gain + bias
    return y, mean, rstd


def layer_norm_bwd(dy, x, gain, mean, rstd):
    """Backward of layer_norm_fwd.  Returns (dx, dgain, dbias)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dyg = dy * gain
    dx = rstd[:, None] * (
        dyg
        - dyg.mean(axis=1, keepdims=True)
        - xhat * (dyg * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgain, dbias


def gelu_fwd(x):
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x * _SQRT1_2))


def gelu_bwd(x, dy):
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def masked_softmax_fwd(scores, valid):
    """Softmax over each row restricted to positions where valid != 0.

    Invalid positions get probability exactly 0.  Rows with no valid position
    come back all-zero instead of NaN.
    """
    masked = np.where(valid != 0, scores, -np.inf)
    m = masked.max(axis=1)
    m_safe = np.where(np.isfinite(m), m, scores.dtype.type(0))
    e = np.exp(np.where(valid != 0, scores - m_safe[:, None], -np.inf))
    denom = e.sum(axis=1)
    denom = np.where(denom == 0, scores.dtype.type(1), denom)
    return e / denom[:, None]


def masked_softmax_bwd(probs, dprobs):
    inner = (probs * dprobs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


def softmax_xent(logits, targets):
    """Per-row cross entropy against integer targets.

    Returns (losses, dlogits) where dlogits is the gradient of the summed
    (not averaged) loss: softmax(logits) minus the one-hot target.
    """
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(logits.shape[0])
    losses = (m[:, 0] + np.log(s[:, 0])) - logits[rows, targets]
    dlogits = e / s
    dlogits[rows, targets] -= 1.0
    return losses, dlogits


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    """One decoupled-weight-decay Adam step, in place on flat arrays.

    bc1/bc2 are the bias corrections 1 - beta^t for the current step t.
    Decay is applied to the incoming parameter value (before the moment
    update), matching the decoupled formulation.
    """
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    denom = np.sqrt(v / bc2) + eps
    p -= (lr / bc1) * (m / denom)
