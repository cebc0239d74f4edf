#!/usr/bin/env python3
"""Compare the numba kernel backend against the pure-numpy fallback.

Runs each hot kernel on identical inputs under both backends, checks the
outputs agree, and reports per-kernel wall times plus speedup.  Usage::

    python benchmarks/bench_kernels.py [--repeats N] [--size PX]

The numba backend is imported directly (bypassing the ``LCCOUNT_KERNELS``
dispatch) so both implementations can be timed in one process.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from lccount.kernels import _reference

try:
    from lccount.kernels import _jit
except ImportError:
    _jit = None


def _relabel_canonical(labels):
    """Map a labeling to first-appearance order so partitions compare."""
    out = np.zeros_like(labels)
    seen = {}
    flat = labels.ravel()
    canon = out.ravel()
    for i in range(flat.size):
        v = flat[i]
        if v == 0:
            continue
        if v not in seen:
            seen[v] = len(seen) + 1
        canon[i] = seen[v]
    return out


def make_cases(rng, size):
    """One representative invocation per kernel: (name, args, comparator)."""
    x = rng.standard_normal((16, size, size))
    w = rng.standard_normal((24, 16, 3, 3))
    b = rng.standard_normal(24)
    gy = rng.standard_normal((24, size, size))
    feat = rng.standard_normal((8, size, size))
    gup = rng.standard_normal((8, 2 * size, 2 * size))
    mask = rng.random((4 * size, 4 * size)) < 0.55
    cost = rng.random((2 * size, 2 * size))
    domain = rng.random((2 * size, 2 * size)) < 0.7
    dom_idx = np.flatnonzero(domain.ravel())
    picks = rng.choice(dom_idx, size=min(12, dom_idx.size), replace=False)
    seed_rows = (picks // domain.shape[1]).astype(np.int64)
    seed_cols = (picks % domain.shape[1]).astype(np.int64)

    exact = lambda got, want: np.array_equal(got, want)
    close = lambda got, want: np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def labels_agree(got, want):
        return np.array_equal(_relabel_canonical(np.asarray(got[0])),
                              _relabel_canonical(np.asarray(want[0]))) \
            and got[1] == want[1]

    return [
        ("conv2d_forward", (x, w, b, 1, 1), close),
        ("conv2d_input_grad", (gy, w, 1, 1, size, size), close),
        ("conv2d_param_grad", (x, gy, 3, 3, 1, 1),
         lambda g, v: close(g[0], v[0]) and close(g[1], v[1])),
        ("upsample2x", (feat,), close),
        ("upsample2x_grad", (gup,), close),
        ("label_components", (mask,), labels_agree),
        ("edt_squared", (mask,), exact),
        ("watershed_flood", (cost, domain, seed_rows, seed_cols), exact),
    ]


def time_call(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timed repetitions per kernel (best is kept)")
    parser.add_argument("--size", type=int, default=64,
                        help="base spatial size for the synthetic inputs")
    args = parser.parse_args(argv)

    if _jit is None:
        print("numba backend unavailable; nothing to compare", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    cases = make_cases(rng, args.size)

    # first call per kernel compiles the numba version; do it before timing
    for name, call_args, _ in cases:
        getattr(_jit, name)(*call_args)

    print(f"{'kernel':22s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}  match")
    all_match = True
    for name, call_args, agree in cases:
        t_ref, out_ref = time_call(getattr(_reference, name), call_args,
                                   args.repeats)
        t_jit, out_jit = time_call(getattr(_jit, name), call_args,
                                   args.repeats)
        match = agree(out_jit, out_ref)
        all_match = all_match and match
        print(f"{name:22s} {t_ref * 1e3:9.2f}ms {t_jit * 1e3:9.2f}ms "
              f"{t_ref / t_jit:7.1f}x  {'yes' if match else 'NO'}")
    if not all_match:
        print("backend outputs disagree", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
