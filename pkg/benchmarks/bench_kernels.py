"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from malgray import _pykernels
from malgray.tensor import ops

try:
    from malgray import _kernels
except ImportError:  # not built
    _kernels = None


def cases(rng):
    x = rng.normal(size=(32, 16, 32, 32)).astype(np.float32)
    w = rng.normal(size=(32, 16, 3, 3)).astype(np.float32)
    b = np.zeros(32, np.float32)
    cols = None
    pool_in = rng.normal(size=(32, 32, 32, 32)).astype(np.float32)
    img = rng.integers(0, 256, size=(4096, 16), dtype=np.uint8)
    out = ops.conv2d_forward(x, w, b, 1, 1)
    dout = rng.normal(size=out.shape).astype(np.float32)

    def make(k):
        nonlocal cols
        cols = k.im2col(x, 3, 3, 1, 1)
        pooled, arg = k.maxpool_forward(pool_in, 2, 2)
        dp = np.ones_like(pooled)
        return {
            "im2col 32x16x32x32 k3": lambda: k.im2col(x, 3, 3, 1, 1),
            "col2im 32x16x32x32 k3": lambda: k.col2im(cols, x.shape, 3, 3, 1, 1),
            "maxpool fwd 32x32x32x32": lambda: k.maxpool_forward(pool_in, 2, 2),
            "maxpool bwd 32x32x32x32": lambda: k.maxpool_backward(dp, arg, pool_in.shape),
            "resize 16x4096 -> 256x256": lambda: k.resize_bilinear(img, 256, 256),
            "conv fwd+bwd (end to end)": lambda: (ops.conv2d_forward(x, w, b, 1, 1, kernels=k),
                                                  ops.conv2d_backward(dout, x, w, 1, 1, kernels=k)),
        }

    return make


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    make = cases(np.random.default_rng(0))
    py = make(_pykernels)
    cy = make(_kernels) if _kernels else {}
    print(f"{'kernel':28s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in py.items():
        tp = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        if name in cy:
            tc = min(timeit.repeat(cy[name], number=1, repeat=args.repeat)) * 1e3
            print(f"{name:28s} {tp:10.2f} {tc:10.2f} {tp / tc:7.2f}x")
        else:
            print(f"{name:28s} {tp:10.2f} {'-':>10s}")


if __name__ == "__main__":
    main()
