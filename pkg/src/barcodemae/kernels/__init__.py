"""Numeric kernels with a compiled core and a pure-numpy fallback.

The Cython extension (``_fast``) is preferred when it was built; otherwise the
numpy implementations in ``pyback`` are used.  Set ``BARCODEMAE_KERNELS=python``
or ``=c`` to force a backend (forcing ``c`` raises if the extension is
missing).  ``benchmarks/bench_kernels.py`` compares the two.

All wrappers normalize array layout (contiguity, flattening) so the two
backends are call-compatible.
"""

from __future__ import annotations

import os

import numpy as np

from . import pyback

_requested = os.environ.get("BARCODEMAE_KERNELS", "").strip().lower()

if _requested in ("", "c", "fast", "compiled"):
    try:
        from . import _fast as _impl

        BACKEND = "c"
    except ImportError:
        if _requested:
            raise ImportError(
                "BARCODEMAE_KERNELS requested the compiled backend but the "
                "barcodemae.kernels._fast extension is not built"
            )
        _impl = pyback
        BACKEND = "python"
elif _requested in ("python", "py", "numpy"):
    _impl = pyback
    BACKEND = "python"
else:
    raise ValueError(f"unrecognized BARCODEMAE_KERNELS value: {_requested!r}")


def get_backend(name=None):
    """Return the module implementing the kernels for `name` (default: active)."""
    if name is None:
        return _impl
    if name == "python":
        return pyback
    if name == "c":
        from . import _fast

        return _fast
    raise ValueError(f"unknown kernel backend: {name!r}")


def _c2(a):
    return np.ascontiguousarray(a)


def layer_norm_fwd(x, gain, bias, eps, impl=None):
    impl = impl or _impl
    return impl.layer_norm_fwd(_c2(x), _c2(gain), _c2(bias), float(eps))


def layer_norm_bwd(dy, x, gain, mean, rstd, impl=None):
    impl = impl or _impl
    return impl.layer_norm_bwd(_c2(dy), _c2(x), _c2(gain), _c2(mean), _c2(rstd))


def gelu_fwd(x, impl=None):
    impl = impl or _impl
    flat = _c2(x).reshape(-1)
    return impl.gelu_fwd(flat).reshape(x.shape)


def gelu_bwd(x, dy, impl=None):
    impl = impl or _impl
    flat_x = _c2(x).reshape(-1)
    flat_dy = _c2(dy).reshape(-1)
    return impl.gelu_bwd(flat_x, flat_dy).reshape(x.shape)


def masked_softmax_fwd(scores, valid, impl=None):
    impl = impl or _impl
    return impl.masked_softmax_fwd(_c2(scores), np.ascontiguousarray(valid, dtype=np.uint8))


def masked_softmax_bwd(probs, dprobs, impl=None):
    impl = impl or _impl
    return impl.masked_softmax_bwd(_c2(probs), _c2(dprobs))


def softmax_xent(logits, targets, impl=None):
    impl = impl or _impl
    return impl.softmax_xent(_c2(logits), np.ascontiguousarray(targets, dtype=np.int64))


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2, impl=None):
    """In-place step on the (C-contiguous) parameter tensor and its moments."""
    impl = impl or _impl
    for arr in (p, m, v):
        if not arr.flags["C_CONTIGUOUS"]:
            raise ValueError("adamw_update requires C-contiguous tensors")
    impl.adamw_update(
        p.reshape(-1),
        _c2(g).reshape(-1),
        m.reshape(-1),
        v.reshape(-1),
        float(lr),
        float(beta1),
        float(beta2),
        float(eps),
        float(weight_decay),
        float(bc1),
        float(bc2),
    )
