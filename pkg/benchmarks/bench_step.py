"""Compiled vs pure-Python dynamics step throughput.

    python3 benchmarks/bench_step.py [--batch 1 64 1024] [--steps 200]
"""
import argparse

from quadlab.dynamics import kernels
from quadlab.harness.bench import bench, format_records


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, nargs="+", default=[1, 64, 1024])
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()
    names = ["python"] if kernels.compiled_kernel is None else ["compiled", "python"]
    recs = bench(tuple(args.batch), args.steps, tuple(names))
    print(format_records(recs))
    if len(names) == 2:
        print()
        for b in args.batch:
            for mode in ("forward", "forward+vjp"):
                rate = {r["kernel"]: r["steps_per_s"] for r in recs if r["batch"] == b and r["mode"] == mode}
                print(f"batch {b:>5} {mode:<12} speedup {rate['compiled'] / rate['python']:.1f}x")


if __name__ == "__main__":
    main()
