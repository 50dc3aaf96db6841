"""Compare the compiled and pure-Python strapdown kernels on the same trace.

Usage: python3 benchmarks/bench_kernels.py [--seconds 60] [--repeat 5]
"""

import argparse
import time

import numpy as np

from sonicpose import kernels
from sonicpose.trace_model import generate_walk_trace


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=60.0, help="trace length")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    trace = generate_walk_trace(4.0, args.seconds, noise=(0.02, 0.002), seed=0)
    accel = np.ascontiguousarray(trace.imu.accel)
    gyro = np.ascontiguousarray(trace.imu.gyro)
    n = len(accel)
    dt = np.full(n, 1.0 / trace.imu_rate)
    zupt = np.zeros(n, np.uint8)
    init = np.zeros(16)
    init[6] = 1.0

    results = {}
    for name, fn in (("python", kernels.python_propagate), ("compiled", kernels.propagate)):
        if name == "compiled" and kernels.BACKEND != "cython":
            print("compiled kernel not built; skipping")
            continue
        out_p = np.empty((n, 3))
        out_q = np.empty((n, 4))

        def run():
            s = init.copy()
            fn(s, accel, gyro, dt, zupt, out_p, out_q, 0, n)

        results[name] = (_time(run, args.repeat), out_p.copy())
        print(f"{name:9s} {n} samples: {results[name][0] * 1e3:8.2f} ms")
    if len(results) == 2:
        speedup = results["python"][0] / results["compiled"][0]
        diff = np.max(np.abs(results["python"][1] - results["compiled"][1]))
        print(f"speedup x{speedup:.1f}, max position difference {diff:.3g} m")


if __name__ == "__main__":
    main()
