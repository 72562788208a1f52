#!/usr/bin/env python3
"""Compare the compiled extremization kernel against the numpy fallback.

Times full Bellman-style sweeps over synthetic product models of increasing
size (the dominant cost of robust value iteration) and a complete
pessimistic value iteration through the public synthesis path with each
backend forced in a subprocess.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def synthetic_csr(rng, n_states, n_actions, row_len):
    n_rows = n_states * n_actions
    sizes = np.full(n_rows, row_len, dtype=np.int64)
    row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(sizes, out=row_ptr[1:])
    cols = rng.integers(0, n_states, int(row_ptr[-1])).astype(np.int64)
    base = rng.dirichlet(np.ones(row_len), size=n_rows)
    lo = np.maximum(base - 0.2, 0.0).ravel()
    hi = np.minimum(base + 0.2, 1.0).ravel()
    values = rng.uniform(0, 1, n_states)
    return values, row_ptr, cols, lo, hi


def time_sweeps(impl, data, repeats):
    values, row_ptr, cols, lo, hi = data
    out = np.empty(len(row_ptr) - 1)
    impl.extremal_rows(values, row_ptr, cols, lo, hi, False, out)  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        impl.extremal_rows(values, row_ptr, cols, lo, hi, False, out)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_sweeps(repeats):
    from gpimdp._kernels import _core_py

    try:
        from gpimdp._kernels import _core
    except ImportError:
        _core = None
        print("note: compiled kernel not built; showing fallback only\n")

    rng = np.random.default_rng(0)
    print(f"{'states':>8} {'actions':>8} {'row len':>8} {'numpy (ms)':>12} "
          f"{'compiled (ms)':>14} {'speedup':>8}")
    for n_states, n_actions, row_len in [
        (200, 4, 50), (500, 4, 100), (2000, 4, 200), (2000, 4, 400), (8000, 4, 400),
    ]:
        data = synthetic_csr(rng, n_states, n_actions, row_len)
        t_py = time_sweeps(_core_py, data, repeats)
        if _core is not None:
            t_c = time_sweeps(_core, data, repeats)
            print(f"{n_states:>8} {n_actions:>8} {row_len:>8} {1e3 * t_py:>12.2f} "
                  f"{1e3 * t_c:>14.2f} {t_py / t_c:>7.1f}x")
        else:
            print(f"{n_states:>8} {n_actions:>8} {row_len:>8} {1e3 * t_py:>12.2f} "
                  f"{'-':>14} {'-':>8}")


_VI_SNIPPET = """
import json, time
import numpy as np
from gpimdp._kernels import backend_name
import sys
sys.path.insert(0, "tests")
from helpers import random_cyclic_instance, toy_pimdp
from gpimdp.synthesis import synthesize

rng = np.random.default_rng(1)
n, rows, acc, vio = random_cyclic_instance(rng, n_ordinary=60)
p = toy_pimdp(n, rows, acc, vio, n_actions=2)
p.build_csr()
t0 = time.perf_counter()
for _ in range(5):
    synthesize(p, tol=1e-9)
print(json.dumps({"backend": backend_name(), "seconds": (time.perf_counter() - t0) / 5}))
"""


def bench_vi():
    print("\nfull synthesis (60-state model, mean of 5 runs):")
    for backend in ("compiled", "python"):
        env = dict(os.environ, GPIMDP_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, "-c", _VI_SNIPPET], env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            print(f"  {backend}: unavailable ({proc.stderr.strip().splitlines()[-1]})")
            continue
        doc = json.loads(proc.stdout)
        print(f"  {doc['backend']:>9}: {1e3 * doc['seconds']:.1f} ms")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    bench_sweeps(args.repeats)
    bench_vi()
