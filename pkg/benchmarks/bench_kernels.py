"""Compare the compiled LSTM kernels with the NumPy fallback.

Times the raw sequence kernels in-process, then one full training step per
backend in a child process (the backend is fixed at import time).

    python3 benchmarks/bench_kernels.py [--batch 32 --window 16 --features 6 --hidden 32]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np


def best_of(fn, repeat=5):
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def kernel_times(args):
    from dannte import kernels
    rng = np.random.default_rng(0)
    B, W, F, H = args.batch, args.window, args.features, args.hidden
    x = rng.normal(size=(B, W, F))
    w, u = rng.normal(scale=0.3, size=(4 * H, F)), rng.normal(scale=0.3, size=(4 * H, H))
    b, dh = rng.normal(scale=0.1, size=4 * H), rng.normal(size=(B, H))
    out = {}
    for name in sorted(kernels.BACKENDS):
        k = kernels.get_backend(name)
        cache = k.lstm_forward(x, w, u, b)
        out[name] = {
            "forward": best_of(lambda: k.lstm_forward(x, w, u, b)),
            "final": best_of(lambda: k.lstm_final(x, w, u, b)),
            "backward": best_of(lambda: k.lstm_backward(x, w, u, *cache, dh)),
        }
    return out


def step_time(args):
    from dannte import layers as L
    from dannte.data import Batch
    from dannte.training import OptimizerState, TrainConfig, train_step
    rng = np.random.default_rng(0)
    B, W, F, H = args.batch, args.window, args.features, args.hidden
    half = B // 2
    batch = Batch(rng.normal(size=(B, W, F)), rng.normal(size=B),
                  np.r_[np.zeros(half), np.ones(half)], np.r_[np.ones(half), np.zeros(half)])
    cfg = TrainConfig(batch_size=B, window=W, hidden_size=H)
    model = L.init_model(F, hidden_size=H)
    opt = OptimizerState.for_params(model.parameters())
    return best_of(lambda: train_step(model, batch, cfg, opt))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--features", type=int, default=6)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--step-only", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args()
    if args.step_only:
        print(step_time(args))
        return

    print(f"B={args.batch} W={args.window} F={args.features} H={args.hidden}")
    times = kernel_times(args)
    for op in ("forward", "final", "backward"):
        row = "  ".join(f"{name} {times[name][op] * 1e6:9.1f} us" for name in sorted(times))
        speed = ""
        if "cython" in times:
            speed = f"  speedup x{times['python'][op] / times['cython'][op]:.1f}"
        print(f"{op:9s} {row}{speed}")

    steps = {}
    for name in sorted(times):
        env = dict(os.environ, DANNTE_KERNELS=name)
        res = subprocess.run([sys.executable, __file__, "--step-only", *sys.argv[1:]],
                             env=env, capture_output=True, text=True, check=True)
        steps[name] = float(res.stdout.strip())
    row = "  ".join(f"{name} {steps[name] * 1e3:9.3f} ms" for name in sorted(steps))
    speed = f"  speedup x{steps['python'] / steps['cython']:.1f}" if "cython" in steps else ""
    print(f"{'train_step':9s} {row}{speed}")


if __name__ == "__main__":
    main()
