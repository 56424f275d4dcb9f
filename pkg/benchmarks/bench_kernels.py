#!/usr/bin/env python3
"""Time the compiled kernels against the pure-Python reference.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Each kernel is run on identical inputs with both backends; outputs are
compared bit for bit before the timings are printed.
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from fscx import kernels, toys
from fscx.sim import BatchSimulator


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def bench_gauss_seidel(backend, repeat, n=20000):
    rng = np.random.default_rng(0)
    # random substochastic chain with 4 successors per row
    cols = rng.integers(0, n, size=(n, 4))
    vals = rng.random((n, 4))
    vals *= 0.95 / vals.sum(axis=1, keepdims=True)
    m = sp.csr_matrix((vals.ravel(), cols.ravel(), np.arange(0, 4 * n + 1, 4)), shape=(n, n))
    m.sum_duplicates()
    b = rng.random(n) * 0.05
    active = np.ones(n, dtype=np.uint8)

    def run():
        x = np.zeros(n)
        kernels.gauss_seidel(m.indptr, m.indices, m.data, b, x, active, 1e-9, 10**6, backend=backend)
        return x

    return _best(run, repeat)


def bench_batch_step(backend, repeat, steps=200):
    sim = BatchSimulator([toys.evade().model], total_lanes=1024, seed=1)
    A = sim.num_actions
    actions = np.random.default_rng(2).integers(0, A, size=(steps, sim.num_lanes))

    def run():
        state = sim.lane_initial.copy()
        nsteps = np.zeros(sim.num_lanes, dtype=np.int64)
        counter = np.zeros(sim.num_lanes, dtype=np.uint64)
        L = sim.num_lanes
        ex, raw = np.empty(L, dtype=np.int64), np.empty(L)
        done, rep, landed = np.empty(L, dtype=np.int8), np.empty(L, dtype=np.uint8), np.empty(L, dtype=np.int64)
        trace = np.empty((steps, L), dtype=np.int64)
        for t in range(steps):
            kernels.batch_step(state, nsteps, counter, actions[t], sim.lane_initial, sim.seed, A, sim.legal,
                               sim.legal_ptr, sim.legal_list, sim.row_ptr, sim.cumkey, sim.successor, sim.reward,
                               sim.terminal, sim.max_steps, ex, raw, done, rep, landed, backend=backend)
            trace[t] = state
        return trace

    return _best(run, repeat)


def bench_gae(backend, repeat, T=256, B=256):
    rng = np.random.default_rng(3)
    r, v = rng.random((T, B)), rng.random((T, B))
    d = (rng.random((T, B)) < 0.05).astype(np.uint8)
    last = rng.random(B)
    return _best(lambda: kernels.gae(r, v, d, last, 0.995, 0.95, backend=backend), repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        kernels.backend_module("cython")
    except ImportError:
        print("compiled extension not built; only the Python reference is available")
        return
    print(f"{'kernel':<14}{'python s':>12}{'cython s':>12}{'speedup':>10}  identical")
    for name, fn in (("gauss_seidel", bench_gauss_seidel), ("batch_step", bench_batch_step), ("gae", bench_gae)):
        tp, op = fn("python", 1)
        tc, oc = fn("cython", args.repeat)
        same = np.array_equal(op, oc)
        print(f"{name:<14}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
