"""Time the numba and numpy variants of each hot kernel on representative shapes.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from zeroair import _kernels as K


def cases(rng):
    # im2col/col2im for a 3x3 conv over a 16-image batch of 32x32x32 feature maps
    n, c, h, w, kh, kw, stride = 16, 32, 32, 32, 3, 3, 1
    hp, wp = h + 2, w + 2
    xp = rng.standard_normal((n, c, hp, wp))
    cols = rng.standard_normal((n * h * w, c * kh * kw))
    # mixture posterior mean over 3x32x32 images
    x = rng.standard_normal((16, 3 * 32 * 32))
    means = rng.uniform(-1, 1, size=(8, 3 * 32 * 32))
    var = np.full_like(means, 0.01)
    logw = np.log(np.full(8, 1 / 8))
    yield "im2col", (xp, kh, kw, stride, h, w), K.im2col_numba, K.im2col_numpy
    yield "col2im", (cols, n, c, hp, wp, kh, kw, stride, h, w), K.col2im_numba, K.col2im_numpy
    yield "gmm_posterior_mean", (x, means, var, logw, 0.5), K.gmm_posterior_mean_numba, K.gmm_posterior_mean_numpy


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"active backend: {K.BACKEND}")
    print(f"{'kernel':<20} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  max abs diff")
    for name, call_args, fast, ref in cases(rng):
        fast(*call_args)  # compile outside the timed region
        a, b = fast(*call_args), ref(*call_args)
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat)) * 1e3
        t_ref = min(timeit.repeat(lambda: ref(*call_args), number=1, repeat=args.repeat)) * 1e3
        diff = float(np.abs(np.asarray(a) - np.asarray(b)).max())
        print(f"{name:<20} {t_fast:>10.2f} {t_ref:>10.2f} {t_ref / t_fast:>7.2f}x  {diff:.2e}")


if __name__ == "__main__":
    main()
