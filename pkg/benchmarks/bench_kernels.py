"""Compare the compiled kernel backend against the pure-numpy fallback.

Times forward and backward passes over the conv/depthwise shapes that
dominate a MobileNet forward pass. Run from the repo root:

    python3 benchmarks/bench_kernels.py [--batch 4] [--repeat 5]
"""

import argparse
import time

import numpy as np

from sprout import kernels
from sprout.rng import Rng, mix64


def rand(shape, seed):
    rng = Rng(mix64(0xBE7C, seed))
    return rng.fill_uniform(int(np.prod(shape)), -1.0, 1.0).reshape(shape)


# (label, kind, in_ch, out_ch, ksize, stride, pad, spatial)
CASES = [
    ("stem conv 3x3 s2", "conv", 3, 32, 3, 2, (0, 1, 0, 1), 224),
    ("dw 3x3 s1 @112", "dw", 32, None, 3, 1, (1, 1, 1, 1), 112),
    ("dw 3x3 s1 @56", "dw", 128, None, 3, 1, (1, 1, 1, 1), 56),
    ("dw 3x3 s2 @28", "dw", 256, None, 3, 2, (0, 1, 0, 1), 28),
    ("pw 1x1 @28", "conv", 128, 256, 1, 1, (0, 0, 0, 0), 28),
    ("pw 1x1 @14", "conv", 512, 512, 1, 1, (0, 0, 0, 0), 14),
    ("pw 1x1 @7", "conv", 512, 1024, 1, 1, (0, 0, 0, 0), 7),
]


def build_case(case, batch):
    label, kind, cin, cout, k, stride, pad, hw = case
    x = rand((batch, hw, hw, cin), 11).astype(np.float32)
    if kind == "conv":
        kern = rand((k, k, cin, cout), 12).astype(np.float32) * 0.1
        fwd = lambda: kernels.conv2d(x, kern, stride, pad)
        y = fwd()
        dy = rand(y.shape, 13).astype(np.float32)
        bwd = lambda: kernels.conv2d_backward(x, kern, dy, stride, pad)
    else:
        kern = rand((k, k, cin), 12).astype(np.float32) * 0.1
        fwd = lambda: kernels.depthwise2d(x, kern, stride, pad)
        y = fwd()
        dy = rand(y.shape, 13).astype(np.float32)
        bwd = lambda: kernels.depthwise2d_backward(x, kern, dy, stride, pad)
    return label, fwd, bwd


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=4)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}   batch={args.batch} "
          f"repeat={args.repeat} (best-of)")
    if len(backends) < 2:
        print("compiled extension not built; timing the python backend only")

    header = f"{'case':<22}{'dir':<6}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    saved = kernels.backend_name()
    try:
        for case in CASES:
            rows = {"fwd": {}, "bwd": {}}
            for backend in backends:
                kernels.set_backend(backend)
                label, fwd, bwd = build_case(case, args.batch)
                fwd()                      # warm up, touches caches
                rows["fwd"][backend] = best_of(fwd, args.repeat)
                rows["bwd"][backend] = best_of(bwd, args.repeat)
            for direction in ("fwd", "bwd"):
                cells = "".join(f"{rows[direction][b] * 1e3:>10.2f}ms"
                                for b in backends)
                line = f"{label:<22}{direction:<6}{cells}"
                if len(backends) == 2:
                    ratio = rows[direction]["python"] / rows[direction]["ext"]
                    line += f"{ratio:>9.1f}x"
                print(line)
    finally:
        kernels.set_backend(saved)


if __name__ == "__main__":
    main()
