"""Time the compiled and numpy kernel backends side by side.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--train-steps N]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from crossdehaze import kernels

# (input shape, weight shape, stride) for the layers of the default net at 24x24, batch 8
CONV_SHAPES = [
    ((8, 3, 26, 26), (8, 3, 3, 3), 1),
    ((8, 8, 26, 26), (16, 8, 3, 3), 2),
    ((8, 8, 24, 24), (16, 8, 1, 1), 1),
    ((8, 16, 14, 14), (16, 16, 3, 3), 1),
    ((8, 32, 8, 8), (16, 32, 3, 3), 1),
    ((8, 32, 6, 6), (64, 32, 1, 1), 1),
]


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(repeat):
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    names = list(backends)
    print("kernel timings in microseconds (best of %d)" % repeat)
    print("%-42s %-8s " % ("shape", "op") + " ".join("%10s" % n for n in names))
    for xs, ws, s in CONV_SHAPES:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        g = rng.standard_normal(backends["python"].conv2d_forward(x, w, s).shape).astype(np.float32)
        ops = {
            "fwd": lambda m: m.conv2d_forward(x, w, s),
            "bwd_in": lambda m: m.conv2d_backward_input(g, w, xs, s),
            "bwd_w": lambda m: m.conv2d_backward_weight(g, x, ws[2], s),
        }
        label = "%s*%s/%d" % (xs, ws, s)
        for op, f in ops.items():
            row = [best_of(lambda: f(backends[n]), repeat) * 1e6 for n in names]
            print("%-42s %-8s " % (label, op) + " ".join("%10.1f" % t for t in row))
    x = rng.standard_normal((24, 36, 36)).astype(np.float32)
    kv = np.hanning(11).astype(np.float32)
    row = [best_of(lambda: backends[n].sep_filter_valid(x, kv, kv), repeat) * 1e6 for n in names]
    print("%-42s %-8s " % ("(24,36,36) sep 11", "fwd") + " ".join("%10.1f" % t for t in row))
    x = rng.standard_normal(8 * 32 * 24 * 24).astype(np.float32)
    row = [best_of(lambda: backends[n].gelu_forward(x), repeat) * 1e6 for n in names]
    print("%-42s %-8s " % ("gelu %d" % x.size, "fwd") + " ".join("%10.1f" % t for t in row))


STEP_SCRIPT = """
import time
from crossdehaze import kernels
from crossdehaze.trainer import TrainConfig, make_desk_datasets, train
tgt, test, aux = make_desk_datasets(0, n_train=32, n_test=4, n_aux=32)
cfg = TrainConfig(total_steps=%d, use_internal=True)
t0 = time.perf_counter()
train(cfg, tgt)
print(kernels.BACKEND, (time.perf_counter() - t0) / cfg.total_steps * 1e3)
"""


def bench_training(steps):
    # each backend in its own process since the choice is made at import
    print("training step, ms (24x24, batch 8, %d steps)" % steps)
    for forced in ("", "python"):
        env = dict(os.environ, CROSSDEHAZE_KERNELS=forced)
        out = subprocess.run([sys.executable, "-c", STEP_SCRIPT % steps], env=env,
                             capture_output=True, text=True, check=True)
        name, ms = out.stdout.split()
        print("  %-8s %8.1f" % (name, float(ms)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--train-steps", type=int, default=30)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if args.train_steps > 0:
        bench_training(args.train_steps)


if __name__ == "__main__":
    main()
