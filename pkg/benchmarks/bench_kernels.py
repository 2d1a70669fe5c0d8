"""Compare the numba kernels with the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each row times the same call under both backends (after a warm-up call that
also triggers JIT compilation) and checks that the outputs agree.
"""

import argparse
import time

import numpy as np

from cexrepair import _kernels
from cexrepair.fixtures import train_disk_classifier
from cexrepair.network import random_network
from cexrepair.verify import VerifyConfig, verify


def best_time(fn, repeat):
    fn()  # warm-up / compile
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def compare(label, fn, repeat):
    results, timings = {}, {}
    for name in ("numpy", "numba"):
        with _kernels.use_backend(name):
            timings[name] = best_time(fn, repeat)
            results[name] = fn()
    agree = _agree(results["numpy"], results["numba"])
    speedup = timings["numpy"] / timings["numba"]
    print(f"{label:<38} {timings['numpy'] * 1e3:>10.3f} {timings['numba'] * 1e3:>10.3f} "
          f"{speedup:>8.2f}x  {'ok' if agree else 'MISMATCH'}")
    return agree


def _agree(a, b):
    if isinstance(a, tuple) and not hasattr(a, "status"):
        return all(_agree(x, y) for x, y in zip(a, b))
    if hasattr(a, "status"):
        return a.status == b.status
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--quick", action="store_true", help="smaller batches")
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    nets = {
        "2x16x16x2": random_network([2, 16, 16, 2], seed=0),
        "5x(50x6)x5": random_network([5] + [50] * 6 + [5], seed=0),
    }
    batches = (1, 64, 1024) if args.quick else (1, 64, 4096)
    print(f"{'kernel':<38} {'numpy ms':>10} {'numba ms':>10} {'speedup':>9}")
    ok = True
    for net_name, net in nets.items():
        params, dims, relu = net.packed
        n = net.input_dim
        for b in batches:
            X = rng.uniform(-1, 1, (b, n))
            ok &= compare(f"forward {net_name} batch={b}",
                          lambda: _kernels.forward_batch(params, dims, relu, X), args.repeat)
            LO = X - 0.05
            HI = X + 0.05
            ok &= compare(f"interval {net_name} batch={b}",
                          lambda: _kernels.interval_batch(params, dims, relu, LO, HI), args.repeat)

    task, disk_net, _, _ = train_disk_classifier(0, epochs=40 if args.quick else 150)
    wide = task.unsafe_property(box=((0.5, 0.95), (0.05, 0.95)))
    ok &= compare("verify disk classifier (wide box)",
                  lambda: verify(disk_net, wide, VerifyConfig()), max(1, args.repeat // 2))
    print("all outputs agree" if ok else "backend outputs differ")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
