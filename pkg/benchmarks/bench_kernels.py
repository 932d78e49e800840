"""Timing comparison of the numba and pure-numpy kernel paths.

Runs each hot kernel on the shapes the models actually use (64x64 image
convs, 16x16 latent convs, mask dilation) and reports best-of-N wall times
for both backends plus the speedup. The two paths are bit-identical in
output; this script is only about speed. Usage:

    python benchmarks/bench_kernels.py [--repeats 7]
"""

import argparse
import time

import numpy as np

from latentblend import backend, kernels

F32 = np.float32


def conv_cols(rng, n, h, w, c):
    return rng.standard_normal((n, h, w, c)).astype(F32)


def build_cases(rng):
    cases = []

    # im2col / col2im across encoder, decoder and denoiser conv shapes
    for tag, (n, h, w, c), stride in [
        ("enc 64x64x3 s1", (16, 64, 64, 3), 1),
        ("enc 64x64x32 s2", (16, 64, 64, 32), 2),
        ("enc 32x32x48 s2", (16, 32, 32, 48), 2),
        ("den 16x16x64 s1", (32, 16, 16, 64), 1),
        ("den mid 8x8x96 s1", (32, 8, 8, 96), 1),
    ]:
        x = conv_cols(rng, n, h, w, c)
        cases.append((f"im2col {tag}",
                      lambda x=x, s=stride: kernels._im2col_np(x, 3, 3, s, 1),
                      lambda x=x, s=stride: kernels._im2col_nb(x, 3, 3, s, 1)))
        cols = kernels._im2col_np(x, 3, 3, stride, 1)
        shape = x.shape
        cases.append((f"col2im {tag}",
                      lambda cols=cols, shape=shape, s=stride:
                          kernels._col2im_np(cols, shape, 3, 3, s, 1),
                      lambda cols=cols, shape=shape, s=stride:
                          kernels._col2im_nb(cols, *shape, 3, 3, s, 1)))

    up = conv_cols(rng, 32, 8, 8, 96)
    cases.append(("upsample2 8->16 x96",
                  lambda: kernels._upsample2_np(up),
                  lambda: kernels._upsample2_nb(up)))
    dy = conv_cols(rng, 32, 16, 16, 96)
    cases.append(("upsample2_back 16->8 x96",
                  lambda: kernels._upsample2_back_np(dy),
                  lambda: kernels._upsample2_back_nb(dy)))

    mask = (rng.random((16, 16)) < 0.2).astype(np.uint8)
    for k in (3, 7):
        cases.append((f"dilate 16x16 k={k}",
                      lambda m=mask, k=k: kernels._dilate_np(m, k),
                      lambda m=mask, k=k: kernels._dilate_nb(m, k)))
    return cases


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()

    if not backend._HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    cases = build_cases(rng)

    # first call pays the JIT compile; warm both paths before timing
    for _, fn_np, fn_nb in cases:
        fn_np()
        fn_nb()

    width = max(len(name) for name, _, _ in cases)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  speedup")
    for name, fn_np, fn_nb in cases:
        t_np = best_of(fn_np, args.repeats)
        t_nb = best_of(fn_nb, args.repeats)
        print(f"{name:<{width}}  {t_np * 1e3:>8.3f}ms  {t_nb * 1e3:>8.3f}ms  "
              f"{t_np / t_nb:>6.2f}x")


if __name__ == "__main__":
    main()
