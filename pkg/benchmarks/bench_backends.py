"""Compare the compiled and pure-Python kernel backends.

Times the three kernel families behind the backend seam (batched FFT,
bilinear warp forward/backward, row scatter-add) plus one full model
training iteration under each backend.

Run:  python3 benchmarks/bench_backends.py
"""

import time

import numpy as np

import sscm.backend as backend
from sscm import data, train
from sscm.model import SSCMModel, desk_config


def timeit(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(name):
    backend.select(name)
    rng = np.random.default_rng(0)
    rows = []

    re = rng.normal(size=(512, 256)).astype(np.float32)
    im = rng.normal(size=(512, 256)).astype(np.float32)
    rows.append(("fft1d_batch 512x256", timeit(lambda: backend.fft1d_batch(re, im, False))))

    feat = rng.normal(size=(32, 128, 128)).astype(np.float32)
    dx = rng.uniform(-1, 1, (128, 128)).astype(np.float32)
    dy = rng.uniform(-1, 1, (128, 128)).astype(np.float32)
    gout = rng.normal(size=(32, 128, 128)).astype(np.float32)
    rows.append(("warp fwd 32x128x128", timeit(lambda: backend.bilinear_warp_forward(feat, dx, dy))))
    rows.append(("warp bwd 32x128x128", timeit(lambda: backend.bilinear_warp_backward(feat, dx, dy, gout))))

    vals = rng.normal(size=(16384, 32)).astype(np.float32)
    idx = rng.integers(0, 4096, 16384).astype(np.int64)
    rows.append(("scatter_add 16k rows", timeit(lambda: backend.scatter_add_rows(vals, idx, 4096))))

    pair = data.generate_phantom_pair(data.PhantomSpec(seed=0, size=64, scale=4))
    model = SSCMModel(desk_config(), seed=0)
    cfg = train.TrainConfig(iterations=1, seed=0)
    train.train(model, [pair], cfg)  # warm caches
    rows.append(("train iteration 64x64", timeit(
        lambda: train.train(model, [pair], cfg), repeat=3)))
    return rows


def main():
    available = backend.available_backends()
    print(f"backends available: {', '.join(available)}\n")
    results = {name: dict(bench_kernels(name)) for name in available}
    backend.select("auto")
    width = max(len(k) for r in results.values() for k in r)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>12}" for n in results)
    print(header)
    print("-" * len(header))
    for key in next(iter(results.values())):
        line = f"{key:<{width}}  "
        line += "  ".join(f"{results[n][key] * 1e3:>10.2f}ms" for n in results)
        if len(results) == 2 and all(key in r for r in results.values()):
            a, b = (results[n][key] for n in results)
            line += f"  ({b / a:.1f}x)" if a < b else f"  ({a / b:.1f}x)"
        print(line)


if __name__ == "__main__":
    main()
