"""Time the compiled and numpy conv kernels on a few shapes.

Run with ``python benchmarks/bench_kernels.py``.  Also checks that both
backends return bit-identical arrays.
"""

import argparse
import timeit

import numpy as np

from s2hprune import kernels

SHAPES = [
    # (batch, channels, height, width, kernel, stride)
    (8, 4, 16, 16, 3, 1),
    (32, 8, 16, 16, 3, 1),
    (32, 16, 32, 32, 3, 2),
    (64, 3, 28, 28, 5, 1),
]


def bench(shape, repeat):
    b, c, h, w, k, s = shape
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((b, c, h, w))
    rows = []
    cols = None
    for backend in ("python", "compiled"):
        fn = lambda: kernels.im2col(xp, k, k, s, backend=backend)  # noqa: E731
        out = fn()
        if cols is None:
            cols = out
        elif not np.array_equal(cols, out):
            raise AssertionError(f"im2col backends disagree for {shape}")
        t_im = min(timeit.repeat(fn, number=1, repeat=repeat))
        back = lambda: kernels.col2im(cols, xp.shape, k, k, s, backend=backend)  # noqa: E731
        t_col = min(timeit.repeat(back, number=1, repeat=repeat))
        rows.append((backend, t_im, t_col))
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if kernels.BACKEND != "compiled":
        print("compiled kernels not built; only the python backend is available")
        return 1
    print(f"{'shape (B,C,H,W,k,s)':<28}{'backend':<10}{'im2col ms':>11}{'col2im ms':>11}")
    for shape in SHAPES:
        rows = bench(shape, args.repeat)
        for backend, t_im, t_col in rows:
            print(f"{str(shape):<28}{backend:<10}{t_im * 1e3:>11.3f}{t_col * 1e3:>11.3f}")
        py, cc = rows[0], rows[1]
        print(f"{'':<28}{'speedup':<10}{py[1] / cc[1]:>10.2f}x{py[2] / cc[2]:>10.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
