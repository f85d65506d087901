"""Compare the compiled and interpreted kernel backends.

The backend is fixed at import time by the UAVRICE_BACKEND environment
variable, so each backend is timed in its own subprocess.  The workload is
the planner's hot path: inverting the fading-power cdf into an outage
quantile for a batch of Rician factors (one per trajectory slot).

Usage:
    python3 benchmarks/bench_backends.py [--sizes 130,1000,10000]
                                         [--repeats 7] [--eps 0.01]

The first numba call JIT-compiles (cached on disk); a warmup run keeps
that out of the timings.  Reported numbers are medians over --repeats.
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time


def run_worker(sizes, repeats, eps):
    """Time effective_power batches under the already-selected backend."""
    import numpy as np

    from uavrice import kernels

    rng = np.random.default_rng(12345)
    out = {"backend": kernels.backend_name(), "medians_s": {}}
    for size in sizes:
        k = 10.0 ** rng.uniform(0.0, 3.0, size)  # 0..30 dB
        kernels.effective_power(k[: min(size, 8)], eps)  # warmup / JIT
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            kernels.effective_power(k, eps)
            samples.append(time.perf_counter() - t0)
        out["medians_s"][str(size)] = statistics.median(samples)
    print(json.dumps(out))


def run_backend(backend, args):
    env = dict(os.environ, UAVRICE_BACKEND=backend)
    cmd = [sys.executable, os.path.abspath(__file__), "--worker",
           "--sizes", args.sizes, "--repeats", str(args.repeats),
           "--eps", str(args.eps)]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        return None
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="130,1000,10000",
                        help="comma-separated batch sizes")
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--eps", type=float, default=0.01)
    parser.add_argument("--worker", action="store_true",
                        help=argparse.SUPPRESS)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if args.worker:
        run_worker(sizes, args.repeats, args.eps)
        return

    results = {}
    for backend in ("numpy", "numba"):
        res = run_backend(backend, args)
        if res is None:
            print(f"{backend}: unavailable (see stderr)")
        else:
            results[backend] = res["medians_s"]

    if "numpy" in results and "numba" in results:
        print(f"{'batch':>8} {'numpy (ms)':>12} {'numba (ms)':>12} "
              f"{'speedup':>8}")
        for size in sizes:
            key = str(size)
            t_np = results["numpy"][key] * 1e3
            t_nb = results["numba"][key] * 1e3
            print(f"{size:>8} {t_np:>12.3f} {t_nb:>12.3f} "
                  f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
