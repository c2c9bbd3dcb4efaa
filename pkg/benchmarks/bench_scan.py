"""Benchmark the scan-recurrence backends: compiled Cython kernel vs the
pure-PyTorch per-step loop vs the blocked parallel associative scan.

Run:  python benchmarks/bench_scan.py [--backward]
"""

import argparse
import time

import torch

from ssir.ssm import HAS_COMPILED, available_impls, linear_recurrence
from ssir.ssm.mamba import MambaBlock

torch.set_num_threads(1)


def time_impl(impl, a, b, backward, reps):
    # warmup + correctness anchor against the python loop
    out = linear_recurrence(a, b, impl=impl)
    ref = linear_recurrence(a, b, impl="python")
    err = (out - ref).abs().max().item()
    t0 = time.perf_counter()
    for _ in range(reps):
        if backward:
            aa = a.clone().requires_grad_(True)
            bb = b.clone().requires_grad_(True)
            linear_recurrence(aa, bb, impl=impl).sum().backward()
        else:
            linear_recurrence(a, b, impl=impl)
    return (time.perf_counter() - t0) / reps, err


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--backward", action="store_true",
                    help="time forward+backward instead of forward only")
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    print(f"compiled extension available: {HAS_COMPILED}")
    print(f"{'M':>5} {'L':>6} {'N':>3} | "
          + " | ".join(f"{i:>13}" for i in available_impls())
          + " | speedup vs python")
    cases = [(32, 256, 8), (32, 1024, 8), (128, 1024, 16), (8, 4096, 16)]
    for m, l, n in cases:
        gen = torch.Generator().manual_seed(0)
        a = torch.rand(m, l, n, generator=gen) * 0.99
        b = torch.randn(m, l, n, generator=gen)
        times = {}
        for impl in available_impls():
            dt, err = time_impl(impl, a, b, args.backward, args.reps)
            assert err < 1e-4, f"{impl} diverged from reference: {err}"
            times[impl] = dt
        row = " | ".join(f"{times[i] * 1e3:>10.2f} ms" for i in available_impls())
        others = [k for k in times if k != "python"]
        best = min(others, key=times.get) if others else None
        speed = times["python"] / times[best] if best else float("nan")
        print(f"{m:>5} {l:>6} {n:>3} | {row} | {best}: {speed:.1f}x")

    # end-to-end mamba block, both scan modes
    print("\nmamba block (B=4, L=1024, d=16), forward+backward:")
    for mode in ("sequential", "parallel"):
        blk = MambaBlock(16, d_state=8, scan_mode=mode)
        x = torch.randn(4, 1024, 16)
        blk(x).sum().backward()  # warmup
        t0 = time.perf_counter()
        for _ in range(args.reps):
            blk.zero_grad()
            blk(x).sum().backward()
        print(f"  {mode:>10}: {(time.perf_counter() - t0) / args.reps * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
