"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 20] [--train-steps 10]

Kernel rows call both backends in-process. The last row times full stage-1
training steps in two subprocesses, one with ADACRED_PURE_PYTHON=1.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from adacred.numerics import kernels

TRAIN_SNIPPET = """
import time, numpy as np
from adacred.envs import KeyDoorEnv, collect
from adacred.dataset import OfflineDataset
from adacred.model import AdaCredModel, preset
from adacred.training import TrainConfig, Trainer
import tempfile
env = KeyDoorEnv()
ds = OfflineDataset(collect(env, 20, 30, 0, kind="eps-greedy", eps_values=(0.5,)))
model = AdaCredModel(preset("desk", ctx_len=10))
with tempfile.TemporaryDirectory() as d:
    tr = Trainer(model, ds, TrainConfig(stage=1, steps={steps}, batch_size=16), out_dir=d)
    tr.train_step()
    t = time.perf_counter()
    for _ in range({steps}):
        tr.train_step()
    print((time.perf_counter() - t) / {steps})
"""


def cases(rng):
    x = rng.standard_normal((16, 8, 28, 28)).astype(np.float32)
    cols = kernels.py.im2col(x, 3, 1)
    m = rng.standard_normal((4096, 64)).astype(np.float32)
    gain, bias = np.ones(64, np.float32), np.zeros(64, np.float32)
    _, xhat, rstd = kernels.py.layer_norm_forward(m, gain, bias, 1e-5)
    flat = m.reshape(-1).copy()
    return {
        "im2col": lambda k: k.im2col(x, 3, 1),
        "col2im": lambda k: k.col2im(cols, 8, 28, 28, 3, 1),
        "layer_norm_forward": lambda k: k.layer_norm_forward(m, gain, bias, 1e-5),
        "layer_norm_backward": lambda k: k.layer_norm_backward(m, xhat, rstd, gain),
        "gelu_forward": lambda k: k.gelu_forward(flat),
        "gelu_backward": lambda k: k.gelu_backward(flat, flat),
    }


def train_step_seconds(pure: bool, steps: int) -> float:
    env = {k: v for k, v in os.environ.items() if k != "ADACRED_PURE_PYTHON"}
    if pure:
        env["ADACRED_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(steps=steps)],
                         capture_output=True, text=True, env=env, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--train-steps", type=int, default=10, help="0 skips the training row")
    args = ap.parse_args(argv)
    if kernels.c is None:
        print("compiled kernels unavailable; only the numpy fallback can be timed")
    print(f"{'kernel':<22}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(kernels.py), number=1, repeat=args.repeat)) * 1e3
        if kernels.c is None:
            print(f"{name:<22}{t_py:>12.3f}{'-':>12}{'-':>10}")
            continue
        t_c = min(timeit.repeat(lambda: fn(kernels.c), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_py:>12.3f}{t_c:>12.3f}{t_py / t_c:>9.2f}x")
    if args.train_steps:
        t_py = train_step_seconds(True, args.train_steps) * 1e3
        t_c = train_step_seconds(False, args.train_steps) * 1e3
        print(f"{'train step (desk)':<22}{t_py:>12.1f}{t_c:>12.1f}{t_py / t_c:>9.2f}x")


if __name__ == "__main__":
    main()
