"""Benchmark the compiled kernels against the numpy fallback.

Runs the hot operations (valid cross-correlation forward/backward, 2x2
max-pool) at the default first-layer scale plus a full shared-representation
forward/backward, and prints a timing table.

    python benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import time

import numpy as np

from tcmtl import kernels_py
from tcmtl.network import NetConfig, init_filters, net_backward, net_forward

try:
    from tcmtl import _kernels_c
except ImportError:
    _kernels_c = None


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    inp = np.ascontiguousarray(rng.standard_normal((1, 60, 60)))
    kernels = np.ascontiguousarray(rng.standard_normal((20, 1, 5, 5)))
    out = np.empty((20, 56, 56))
    gout = np.ascontiguousarray(rng.standard_normal(out.shape))
    pool_in = np.ascontiguousarray(rng.standard_normal((20, 56, 56)))
    pool_out = np.empty((20, 28, 28))
    pool_idx = np.empty((20, 28, 28), dtype=np.int64)

    cases = []
    backends = [("python", kernels_py)]
    if _kernels_c is not None:
        backends.append(("cython", _kernels_c))

    for name, mod in backends:
        cases.append((name, "conv2d forward 60x60x1 -> 56x56x20",
                      time_call(lambda m=mod: m.conv2d_forward(inp, kernels, 1, out), repeats)))
        gk = np.zeros_like(kernels)
        cases.append((name, "conv2d backward (kernels)",
                      time_call(lambda m=mod: m.conv2d_backward_kernels(gout, inp, 5, 1, gk),
                                repeats)))
        gi = np.zeros_like(inp)
        cases.append((name, "conv2d backward (input)",
                      time_call(lambda m=mod: m.conv2d_backward_input(gout, kernels, 1, gi),
                                repeats)))
        cases.append((name, "maxpool2 forward 56x56x20",
                      time_call(lambda m=mod: m.maxpool2_forward(pool_in, pool_out, pool_idx),
                                repeats)))
    return cases


def bench_network(repeats):
    config = NetConfig()
    bank = init_filters(config, 0)
    image = np.random.default_rng(1).standard_normal((1, 60, 60))

    def fwd():
        net_forward(image, bank, config)

    def fwd_bwd():
        feature, cache = net_forward(image, bank, config)
        net_backward(cache, np.ones_like(feature), bank, config)

    from tcmtl.backend import BACKEND_NAME
    return [(BACKEND_NAME, "default net forward (60x60)", time_call(fwd, repeats)),
            (BACKEND_NAME, "default net forward+backward", time_call(fwd_bwd, repeats))]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rows = bench_kernels(args.repeats) + bench_network(args.repeats)
    width = max(len(r[1]) for r in rows)
    print(f"{'backend':8} {'operation':{width}} {'best time':>12}")
    baseline = {}
    for backend, op, seconds in rows:
        note = ""
        if backend == "python":
            baseline[op] = seconds
        elif op in baseline:
            note = f"  ({baseline[op] / seconds:.1f}x vs python)"
        print(f"{backend:8} {op:{width}} {seconds * 1e3:9.3f} ms{note}")
    if _kernels_c is None:
        print("\ncompiled extension not built; showing the numpy fallback only")


if __name__ == "__main__":
    main()
