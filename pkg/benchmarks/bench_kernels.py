"""Time each kernel under the numba and pure-numpy backends.

Shapes mirror one batched 68-landmark forward pass of the descriptor stages.
Run with ``python benchmarks/bench_kernels.py [--repeat N]``; the last column
is the numpy/numba time ratio.
"""
import argparse
import time

import numpy as np

from lddr.kernels import _numba, _numpy
from lddr.net import STAGE_INPUT_SIZES, init_random_weights, shared_engine, standard_stages

N_LANDMARKS = 68


def best_of(fn, args, repeat):
    fn(*args)  # warm-up, and the numba compile on first use
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    yield "im2col stage1 conv1", "im2col", (rng.random((N_LANDMARKS, 92, 92, 3)), 11, 11, 4, 0, 21, 21)
    yield "im2col stage3 conv2", "im2col", (rng.random((N_LANDMARKS, 16, 16, 48)), 5, 5, 1, 0, 12, 12)
    yield "maxpool stage1 max1", "maxpool", (rng.random((N_LANDMARKS, 21, 21, 96)), 3, 2, 1, 11, 11)
    yield "maxpool stage3 max2", "maxpool", (rng.random((N_LANDMARKS, 12, 12, 256)), 3, 2, 1, 7, 7)
    yield "lrn stage3 norm2", "lrn", (rng.standard_normal((N_LANDMARKS, 12, 12, 256)) * 20, 5, 1e-4, 0.75, 2.0)
    img = rng.random((224, 224, 3))
    m = N_LANDMARKS * 92 * 92
    yield "bilinear 68x92x92", "bilinear_gather", (img, rng.uniform(-4, 228, m), rng.uniform(-4, 228, m))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-forward", action="store_true", help="only time the individual kernels")
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    print(f"{'case':<24}{'numba ms':>10}{'numpy ms':>10}{'ratio':>8}")
    for label, name, kargs in kernel_cases(rng):
        fast, ref = getattr(_numba, name), getattr(_numpy, name)
        diff = np.max(np.abs(fast(*kargs) - ref(*kargs)))
        if diff > 1e-12:
            raise SystemExit(f"{label}: backends disagree by {diff:.3g}")
        tn, tp = best_of(fast, kargs, args.repeat), best_of(ref, kargs, args.repeat)
        print(f"{label:<24}{tn * 1e3:>10.2f}{tp * 1e3:>10.2f}{tp / tn:>8.2f}")

    if args.skip_forward:
        return
    # end to end: the engine picks its backend at import, so only the active one is timed
    from lddr.kernels import BACKEND

    engine = shared_engine(init_random_weights(11), standard_stages())
    print(f"\nforward, 68 patches, backend={BACKEND}")
    for stage, size in enumerate(STAGE_INPUT_SIZES, 1):
        patches = rng.random((N_LANDMARKS, size, size, 3))
        t = best_of(engine.forward_batch, (stage, patches), max(1, args.repeat // 2))
        print(f"stage {stage} ({size}px){'':<10}{t * 1e3:>10.1f} ms")


if __name__ == "__main__":
    main()
