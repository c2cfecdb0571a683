"""Benchmark the numba kernels against the pure-numpy fallback.

Times the four hot kernels plus one full CNN training step under each
backend and prints a table with speedups. Usage:

    python benchmarks/benchmark_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from stormnet import kernels
from stormnet.losses_optim import loss_and_grad, make_optimizer
from stormnet.models import ModelSpec, build
from stormnet.rng import Rng


def timed(fn, repeats):
    fn()  # warm up (numba compiles here)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def kernel_cases(rng):
    a = rng.uniform((256, 512), -1.0, 1.0)
    b = rng.uniform((512, 128), -1.0, 1.0)
    x = rng.uniform((32, 48, 48, 8), -1.0, 1.0)
    w = rng.uniform((3, 3, 8, 16), -1.0, 1.0)
    xpad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    gz = rng.uniform((32, 48, 48, 16), -1.0, 1.0)
    pool_in = rng.uniform((32, 48, 48, 16))
    raw = np.empty(2_000_000, dtype=np.uint64)

    def rng_fill(backend):
        state = Rng(7)._state.copy()
        backend.xoshiro_fill(state, raw)

    return {
        "matmul 256x512x128": lambda be: be.matmul(a, b),
        "conv2d  32x48x48 8->16": lambda be: be.conv2d(xpad, w),
        "conv2d backward": lambda be: be.conv2d_backward(xpad, w, gz, True, True),
        "maxpool 32x48x48x16": lambda be: be.maxpool2x2(pool_in),
        "rng fill 2M draws": rng_fill,
    }


def train_step_case(backend_name):
    kernels.set_backend(backend_name)
    rng = Rng(3)
    x = rng.uniform((32, 48, 48, 4))
    y = (rng.uniform((32, 1)) < 0.5).astype(np.float64)
    model = build(ModelSpec(kind="cnn", input_shape=(48, 48, 4), conv_blocks=(8, 16, 32),
                            dense_head=(64,), output="sigmoid-scalar", seed=1))
    model.set_mode("train")
    opt = make_optimizer("adam", 1e-3)

    def step():
        out = model.forward(x)
        _, grad = loss_and_grad("bce", out, y)
        model.backward(grad)
        opt.step(model.parameters(), model.gradients())

    return step


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = Rng(1)
    cases = kernel_cases(rng)
    results = {}
    for name, case in cases.items():
        results[name] = {}
        for backend_name in ("numpy", "numba"):
            be = kernels.get_backend(backend_name)
            results[name][backend_name] = timed(lambda: case(be), args.repeats)

    original = kernels.active_backend()
    try:
        for backend_name in ("numpy", "numba"):
            step = train_step_case(backend_name)
            results.setdefault("cnn train step (batch 32)", {})[backend_name] = timed(
                step, args.repeats)
    finally:
        kernels.set_backend(original)

    width = max(len(k) for k in results) + 2
    print(f"{'case':<{width}}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, times in results.items():
        speedup = times["numpy"] / times["numba"]
        print(f"{name:<{width}}{times['numpy'] * 1e3:>10.2f}ms"
              f"{times['numba'] * 1e3:>10.2f}ms{speedup:>9.1f}x")


if __name__ == "__main__":
    main()
