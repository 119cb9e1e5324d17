#!/usr/bin/env python3
"""Timing comparison of the compiled kernel backend against the numpy one.

Runs every kernel on transformer-shaped inputs under both backends, checks
that the outputs agree, and prints microseconds per call plus the speedup.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --rows 4096 --cols 128 --repeats 200
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from barcodemae import kernels


def timed(fn, repeats):
    fn()  # warm up and materialize any lazy allocation
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best * 1e6


def build_cases(rows, cols, vocab, rng):
    x = rng.standard_normal((rows, cols)).astype(np.float32)
    dy = rng.standard_normal((rows, cols)).astype(np.float32)
    gain = rng.standard_normal(cols).astype(np.float32)
    bias = rng.standard_normal(cols).astype(np.float32)
    valid = (rng.random((rows, cols)) < 0.9).astype(np.uint8)
    logits = rng.standard_normal((rows, vocab)).astype(np.float32)
    targets = rng.integers(0, vocab, size=rows)

    y, mean, rstd = kernels.layer_norm_fwd(x, gain, bias, 1e-5)
    probs = kernels.masked_softmax_fwd(x, valid)

    def adam_state():
        return (
            x.copy().reshape(-1),
            dy.copy().reshape(-1),
            np.zeros(rows * cols, dtype=np.float32),
            np.zeros(rows * cols, dtype=np.float32),
        )

    cases = [
        ("layer_norm_fwd", lambda impl: kernels.layer_norm_fwd(x, gain, bias, 1e-5, impl=impl)),
        ("layer_norm_bwd", lambda impl: kernels.layer_norm_bwd(dy, x, gain, mean, rstd, impl=impl)),
        ("gelu_fwd", lambda impl: kernels.gelu_fwd(x, impl=impl)),
        ("gelu_bwd", lambda impl: kernels.gelu_bwd(x, dy, impl=impl)),
        ("masked_softmax_fwd", lambda impl: kernels.masked_softmax_fwd(x, valid, impl=impl)),
        ("masked_softmax_bwd", lambda impl: kernels.masked_softmax_bwd(probs, dy, impl=impl)),
        ("softmax_xent", lambda impl: kernels.softmax_xent(logits, targets, impl=impl)),
    ]

    def adam_case(impl):
        p, g, m, v = adam_state()
        kernels.adamw_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1e-5, 0.1, 0.001, impl=impl)

    cases.append(("adamw_update", adam_case))
    return cases


def agreement_check(rows, cols, vocab, rng, c_impl, py_impl):
    """The two backends must agree before timings mean anything."""
    x = rng.standard_normal((rows, cols)).astype(np.float32)
    gain = rng.standard_normal(cols).astype(np.float32)
    bias = rng.standard_normal(cols).astype(np.float32)
    valid = (rng.random((rows, cols)) < 0.9).astype(np.uint8)
    logits = rng.standard_normal((rows, vocab)).astype(np.float32)
    targets = rng.integers(0, vocab, size=rows)

    yc, _, _ = kernels.layer_norm_fwd(x, gain, bias, 1e-5, impl=c_impl)
    yp, _, _ = kernels.layer_norm_fwd(x, gain, bias, 1e-5, impl=py_impl)
    np.testing.assert_allclose(yc, yp, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(
        kernels.masked_softmax_fwd(x, valid, impl=c_impl),
        kernels.masked_softmax_fwd(x, valid, impl=py_impl),
        rtol=1e-5,
        atol=1e-7,
    )
    lc, gc_ = kernels.softmax_xent(logits, targets, impl=c_impl)
    lp, gp = kernels.softmax_xent(logits, targets, impl=py_impl)
    np.testing.assert_allclose(lc, lp, rtol=1e-5)
    np.testing.assert_allclose(gc_, gp, rtol=1e-5, atol=1e-7)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=2048, help="batch*tokens rows")
    parser.add_argument("--cols", type=int, default=64, help="model width")
    parser.add_argument("--vocab", type=int, default=259, help="output head size")
    parser.add_argument("--repeats", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    try:
        c_impl = kernels.get_backend("c")
    except ImportError:
        print("compiled backend not built; nothing to compare")
        return 1
    py_impl = kernels.get_backend("python")

    rng = np.random.default_rng(args.seed)
    agreement_check(args.rows, args.cols, args.vocab, rng, c_impl, py_impl)
    cases = build_cases(args.rows, args.cols, args.vocab, rng)

    print(f"rows={args.rows} cols={args.cols} vocab={args.vocab} repeats={args.repeats}")
    print(f"{'kernel':<20} {'compiled us':>12} {'numpy us':>12} {'speedup':>8}")
    for name, call in cases:
        t_c = timed(lambda: call(c_impl), args.repeats)
        t_py = timed(lambda: call(py_impl), args.repeats)
        print(f"{name:<20} {t_c:>12.1f} {t_py:>12.1f} {t_py / t_c:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
