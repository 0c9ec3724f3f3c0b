"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from evgesture import kernels
from evgesture.ssm import SsmParams, selective_scan_backward, selective_scan_forward


def stamp_case(rng, n=200_000, frames=12, H=64, W=64):
    return (rng.integers(0, frames, n), rng.integers(1, 33_000, n), rng.integers(0, W, n),
            rng.integers(0, H, n), rng.choice(np.array([-1, 1], dtype=np.int8), n), frames, H, W)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    stamp = stamp_case(rng)
    p = SsmParams.init(32, 8, rng=rng)
    p.b_delta = np.array(0.5)
    x = rng.normal(size=(8, 24, 32))
    x_long = rng.normal(size=(4096, 32))
    _, cache = selective_scan_forward(x, p)
    gy = rng.normal(size=x.shape)

    cases = {
        "latest_stamp (200k events)": lambda: kernels.latest_stamp(*stamp),
        "scan forward (8x24x32, S=8)": lambda: selective_scan_forward(x, p),
        "scan backward (8x24x32, S=8)": lambda: selective_scan_backward(gy, cache),
        "scan forward (N=4096, F=32)": lambda: selective_scan_forward(x_long, p),
    }
    backends = kernels.available_backends()
    before = kernels.active_backend()
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    try:
        for name, fn in cases.items():
            times = {}
            for b in backends:
                kernels.use_backend(b)
                times[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            row = f"{name:32s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
            if "compiled" in times:
                row += f"  {times['python'] / times['compiled']:9.1f}x"
            print(row)
    finally:
        kernels.use_backend(before)


if __name__ == "__main__":
    main()
