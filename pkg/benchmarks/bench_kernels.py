#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Times the four hot kernels plus a full model forward+backward at a small
(test) scale and the desk-preset scale. BLAS threads are pinned to one so
numbers are comparable across runs.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from imupose.nn import available_backends, get_kernels, init_model, model_loss_and_grads
from imupose.nn.model import Architecture

SCALES = {
    "small (B=32, 20x12, K=8, H=16)": dict(
        batch=32, arch=Architecture(conv_layers=1, kernels=8, kernel_h=5, kernel_w=12,
                                    lstm_units=16, window_steps=20, channels=12)),
    "desk (B=300, 40x30, K=16, H=32)": dict(
        batch=300, arch=Architecture(conv_layers=1, kernels=16, kernel_h=5, kernel_w=30,
                                     lstm_units=32, window_steps=40, channels=30)),
}


def _time(fn, repeats):
    fn()  # warm scratch buffers and caches
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000.0


def bench_scale(label: str, batch: int, arch: Architecture, repeats: int) -> None:
    rng = np.random.default_rng(0)
    model = init_model(arch, ("A", "B", "C"), seed=0)
    x = rng.standard_normal((batch, arch.window_steps, arch.channels))
    x4 = np.ascontiguousarray(x[..., None])
    y = rng.integers(0, 3, batch)
    kern_w = model.params["conv0.kernels"]
    bias = model.params["conv0.bias"]
    pads = arch.pads()
    h = arch.lstm_units
    pre = np.ascontiguousarray(rng.standard_normal((batch, arch.window_steps, 4 * h)))
    w_h = model.params["lstm0.w_h"]
    zeros = np.zeros((batch, h))
    print(f"\n{label}, {repeats} repeats, ms per call")
    header = f"  {'kernel':<16}" + "".join(f"{b:>12}" for b in available_backends())
    print(header)
    rows = {}
    for name in available_backends():
        k = get_kernels(name)
        conv_y = k.conv2d_forward(x4, kern_w, bias, pads)
        dy = np.ones_like(conv_y)
        fwd = k.lstm_forward_core(pre, w_h, zeros, zeros)
        dh = np.ones_like(fwd[0])
        rows.setdefault("conv2d_forward", {})[name] = _time(
            lambda: k.conv2d_forward(x4, kern_w, bias, pads), repeats)
        rows.setdefault("conv2d_backward", {})[name] = _time(
            lambda: k.conv2d_backward(x4, kern_w, dy, pads), repeats)
        rows.setdefault("lstm_forward", {})[name] = _time(
            lambda: k.lstm_forward_core(pre, w_h, zeros, zeros), repeats)
        rows.setdefault("lstm_backward", {})[name] = _time(
            lambda: k.lstm_backward_core(fwd[3], fwd[1], fwd[2], fwd[0],
                                         w_h, dh, zeros, zeros), repeats)
        rows.setdefault("model fwd+bwd", {})[name] = _time(
            lambda: model_loss_and_grads(model, x, y, rng=0, kernels=k), repeats)
    for kernel, times in rows.items():
        cells = "".join(f"{times[b]:>11.2f} " for b in available_backends())
        print(f"  {kernel:<16}{cells}")
    if len(available_backends()) == 2:
        speedup = rows["model fwd+bwd"]["numpy"] / rows["model fwd+bwd"]["compiled"]
        print(f"  compiled speedup on full pass: {speedup:.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=10)
    args = parser.parse_args()
    print("backends available:", ", ".join(available_backends()))
    with threadpool_limits(limits=1):
        for label, scale in SCALES.items():
            reps = args.repeats if scale["batch"] <= 32 else max(2, args.repeats // 3)
            bench_scale(label, scale["batch"], scale["arch"], reps)


if __name__ == "__main__":
    main()
