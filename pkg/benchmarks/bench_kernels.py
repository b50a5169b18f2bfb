"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both paths are checked for equal output before timing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from uada import _kernels as k


def cases(rng):
    x = rng.random((64, 16, 16, 16))
    cols_shape = (64, 16, 16, 16)
    cols = rng.random((64 * 16 * 16, 16 * 9))
    img = rng.random((64, 3, 16, 16))
    src_y = rng.integers(-1, 16, size=(16, 16))
    src_x = rng.integers(-1, 16, size=(16, 16))
    pooled, arg = k.maxpool2_np(x)
    g = rng.random(pooled.shape)
    return [
        ("gather", (img, src_y, src_x), k.gather_np, k.gather_nb),
        ("im2col 3x3", (x, 3, 1), k.im2col_np, k.im2col_nb),
        ("col2im 3x3", (cols, cols_shape, 3, 1), k.col2im_np, k.col2im_nb),
        ("maxpool2", (x,), k.maxpool2_np, k.maxpool2_nb),
        ("maxpool2 backward", (g, arg, x.shape), k.maxpool2_backward_np, k.maxpool2_backward_nb),
    ]


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    if not k.HAVE_NUMBA:
        print("numba is not importable; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call_args, f_np, f_nb in cases(rng):
        f_nb(*call_args)  # compile
        if not same(f_np(*call_args), f_nb(*call_args)):
            print(f"{name}: outputs differ")
            return 1
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
