"""Per-kernel timing comparison: compiled Cython vs numpy reference.

Run as ``python benchmarks/bench_kernels.py``. Prints a table over small and
large workload shapes; this data is what decided the per-op routing in
``latentworld.kernels`` (compiled wins the fused row kernels, numpy's SIMD
ufuncs win the transcendental-heavy elementwise ops).
"""

import os
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np

from latentworld.kernels import implementations


def bench(fn, repeats=50):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def cases():
    rng = np.random.default_rng(0)
    small = (rng.standard_normal((256, 48)) * 2).astype(np.float32)
    large = (rng.standard_normal((7392, 462)) * 2).astype(np.float32)
    for label, x in (("small 256x48", small), ("large 7392x462", large)):
        gy = rng.standard_normal(x.shape).astype(np.float32)
        gain = np.ones(x.shape[1], np.float32)
        bias = np.zeros(x.shape[1], np.float32)
        yield f"gelu_forward {label}", lambda m, x=x: m.gelu_forward(x)
        yield f"gelu_backward {label}", lambda m, x=x, gy=gy: m.gelu_backward(x, gy)
        yield f"softmax_forward {label}", lambda m, x=x: m.softmax_forward(x)
        yield f"layernorm_forward {label}", (
            lambda m, x=x, g=gain, b=bias: m.layernorm_forward(x, g, b, 1e-5))

        def ln_bwd(m, x=x, g=gain, gy=gy):
            y, mean, rstd = m.layernorm_forward(x, g, np.zeros_like(g), 1e-5)
            return m.layernorm_backward(x, g, mean, rstd, gy)

        yield f"layernorm_backward {label}", ln_bwd
    p = rng.standard_normal((3072, 48)).astype(np.float32)
    g = rng.standard_normal(p.shape).astype(np.float32)

    def adamw(m, p=p, g=g):
        m.adamw_update(p.copy(), g, np.zeros_like(p), np.zeros_like(p),
                       1e-3, 0.9, 0.95, 1e-8, 0.04, 7)

    yield "adamw_update 3072x48", adamw
    img = rng.random((32, 32)).astype(np.float32)
    yield "bilinear_resize 32->32", lambda m, i=img: m.bilinear_resize(i, 32, 32, 1.0, 2.0, 30.0, 29.0)


def main():
    impls = implementations()
    names = [name for name, _ in impls]
    print(f"{'kernel':38s} " + " ".join(f"{n:>12s}" for n in names) + "   winner")
    for label, fn in cases():
        times = [bench(lambda m=mod: fn(m)) for _, mod in impls]
        winner = names[int(np.argmin(times))] if len(times) > 1 else names[0]
        cols = " ".join(f"{t:10.3f}ms" for t in times)
        print(f"{label:38s} {cols}   {winner}")
    if len(impls) == 1:
        print("\ncompiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
