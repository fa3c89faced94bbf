"""Benchmark the compiled kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Microbenchmarks hit each kernel on fine-tune-sized buffers; the train-step
benchmark runs a full forward+backward under each backend in a subprocess
(backend selection happens at import time).
"""

import argparse
import importlib
import os
import subprocess
import sys
import time

import numpy as np


def timeit(fn, repeats):
    fn()  # warmup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats):
    from vitgrade.kernels import numpy_backend

    backends = [numpy_backend]
    try:
        backends.append(importlib.import_module("vitgrade.kernels.cython_adapter"))
    except ImportError:
        print("compiled kernels unavailable; benchmarking numpy only")

    rng = np.random.default_rng(0)
    # shapes from the desk-scale fine-tune: B=32, T=65, D=64, hidden=256
    x_ln = rng.normal(size=(32 * 65, 64)).astype(np.float32)
    w = rng.normal(size=64).astype(np.float32)
    b = rng.normal(size=64).astype(np.float32)
    dy_ln = rng.normal(size=x_ln.shape).astype(np.float32)
    x_sm = rng.normal(size=(32 * 4 * 65, 65)).astype(np.float32)
    x_gelu = rng.normal(size=(32 * 65, 256)).astype(np.float32)
    dy_gelu = rng.normal(size=x_gelu.shape).astype(np.float32)
    xs = rng.uniform(0, 64, 1500)
    ys = rng.uniform(0, 64, 1500)

    cases = {
        "gelu [2080,256]": lambda k: k.gelu(x_gelu),
        "gelu_grad": lambda k: k.gelu_grad(x_gelu, dy_gelu),
        "layernorm [2080,64]": lambda k: k.layernorm(x_ln, w, b, 1e-6),
        "layernorm_grad": lambda k: k.layernorm_grad(
            x_ln, w, *k.layernorm(x_ln, w, b, 1e-6)[1:], dy_ln),
        "softmax [8320,65]": lambda k: k.softmax_rows(x_sm),
        "softmax_grad": lambda k: k.softmax_rows_grad(
            k.softmax_rows(x_sm), np.ones_like(x_sm)),
        "stamp 1500 pts": lambda k: k.stamp_gaussian_max(
            np.zeros((64, 64)), xs, ys, 1.0),
    }

    name_w = max(len(n) for n in cases)
    header = f"{'kernel':<{name_w}}" + "".join(f"  {b.NAME:>10}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    for label, fn in cases.items():
        times = [timeit(lambda k=k: fn(k), repeats) for k in backends]
        row = f"{label:<{name_w}}" + "".join(f"  {t * 1e3:>8.3f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:>7.2f}x"
        print(row)


_STEP_SNIPPET = """
import time
import numpy as np
from vitgrade import kernels
from vitgrade.model import ModelConfig, init_params, loss_and_grads

cfg = ModelConfig(img_size=64, patch_size=8, embed_dim=64, depth=4,
                  num_heads=4, num_classes=4, in_channels=1)
params = init_params(cfg, seed=0)
rng = np.random.default_rng(0)
images = rng.uniform(0, 1, size=(32, 1, 64, 64)).astype(np.float32)
labels = rng.integers(1, 5, 32)
loss_and_grads(cfg, params, images, labels)  # warmup
best = float("inf")
for _ in range(5):
    t0 = time.perf_counter()
    loss_and_grads(cfg, params, images, labels)
    best = min(best, time.perf_counter() - t0)
print(f"{kernels.backend_name()}: {best * 1e3:.1f}ms / step (batch 32)")
"""


def bench_train_step():
    print("\nfull forward+backward step (tiny fine-tune config):")
    for backend in ("numpy", "cython"):
        env = dict(os.environ, VITGRADE_KERNELS=backend)
        proc = subprocess.run([sys.executable, "-c", _STEP_SNIPPET], env=env,
                              capture_output=True, text=True)
        out = proc.stdout.strip() or proc.stderr.strip().splitlines()[-1]
        print(f"  {out}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    bench_kernels(args.repeats)
    bench_train_step()
