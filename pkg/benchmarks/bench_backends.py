"""Compare the compiled conv/pool kernels against the numpy fallback.

Times the raw kernels at the trunk's layer shapes, then a full forward +
backward + optimizer step of the three-head model, and prints a table with
per-backend timings and the compiled speedup.

Usage: python benchmarks/bench_backends.py [--batch 64] [--k 60] [--repeats 7]
"""

import argparse
import time

import numpy as np

from flowmtl.labels import TaskLabels
from flowmtl.model import MultiHeadNet, masked_mtl_loss, mtl_architecture
from flowmtl.nn import backend
from flowmtl.nn.adam import Adam, AdamConfig


def best_of(fn, repeats: int) -> float:
    """Best wall time in seconds over `repeats` calls (after one warmup)."""
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(batch: int, k: int, rng):
    """(name, fn-factory) pairs at the k=60 trunk's stage shapes."""
    shapes = [  # (length, in_channels, filters) per conv stage entry point
        (k, 2, 32),
        ((k - 4) // 2, 32, 64),
        (((k - 4) // 2 - 4) // 2, 64, 128),
    ]
    cases = []
    for length, c_in, filters in shapes:
        x = rng.standard_normal((batch, length, c_in))
        w = rng.standard_normal((filters, 3, c_in)) * 0.1
        b = rng.standard_normal(filters) * 0.1
        dy = rng.standard_normal((batch, length - 2, filters))
        label = f"({batch},{length},{c_in})->{filters}f"
        cases.append((f"conv1d forward  {label}",
                      lambda m, x=x, w=w, b=b: m.conv1d_forward(x, w, b)))
        cases.append((f"conv1d backward {label}",
                      lambda m, x=x, w=w, dy=dy: m.conv1d_backward(x, w, dy)))
    length, channels = (k - 4), 32
    xp = rng.standard_normal((batch, length, channels))
    out, idx = backend.get_backend().maxpool2_forward(xp)
    dyp = rng.standard_normal(out.shape)
    cases.append((f"maxpool2 forward  ({batch},{length},{channels})",
                  lambda m: m.maxpool2_forward(xp)))
    cases.append((f"maxpool2 backward ({batch},{length},{channels})",
                  lambda m: m.maxpool2_backward(dyp, idx, length)))
    return cases


def train_step_case(batch: int, k: int, rng):
    x = rng.uniform(-1.0, 1.0, size=(batch, k, 2))
    labels = [TaskLabels(y_bw=int(rng.integers(1, 6)),
                         y_dur=int(rng.integers(1, 6)),
                         y_traffic=int(rng.integers(1, 6)) if i % 4 == 0 else None)
              for i in range(batch)]
    model = MultiHeadNet(mtl_architecture(k), seed=0)
    adam = Adam(model.params(), AdamConfig(lr=1e-3))

    def step(_m):
        _, grads = masked_mtl_loss(model, x, labels, lam=5.0)
        for g in grads.values():
            g /= batch
        adam.step(grads)

    return f"full train step ({batch},{k},2)", step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--k", type=int, default=60)
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()

    names = backend.available_backends()
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.batch, args.k, rng)
    cases.append(train_step_case(args.batch, args.k, rng))

    print(f"backends: {', '.join(names)}   "
          f"(batch {args.batch}, k {args.k}, best of {args.repeats})")
    header = f"{'case':44s}" + "".join(f"{n:>12s}" for n in names)
    if len(names) > 1:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))

    restore = backend.backend_name()
    try:
        for label, fn in cases:
            times = {}
            for name in names:
                mod = backend.set_backend(name)
                times[name] = best_of(lambda m=mod: fn(m), args.repeats)
            row = f"{label:44s}" + "".join(
                f"{times[n] * 1e3:10.3f}ms" for n in names)
            if "numpy" in times and "compiled" in times:
                row += f"{times['numpy'] / times['compiled']:9.1f}x"
            print(row)
    finally:
        backend.set_backend(restore)


if __name__ == "__main__":
    main()
