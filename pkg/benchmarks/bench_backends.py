"""Benchmark: compiled core vs pure-Python fallback on the hot kernels.

Run from the repository root:

    python3 benchmarks/bench_backends.py [--quick]

Each workload runs on both backends with identical inputs; the report
shows wall time, speedup, and whether the outputs matched bitwise.
"""

import argparse
import time

import numpy as np

from potlatch.backend import get_core
from potlatch.engine import MASK_ALL, MV, _build_actions, _kernel_tables
from potlatch.kernel import TorusSpec, build_kernel


def _time(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return time.perf_counter() - t0, out


def _match(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_match(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return all(_match(a[k], b[k]) for k in a)
    if isinstance(a, float) or isinstance(a, bool):
        return a == b
    return np.array_equal(np.asarray(a), np.asarray(b))


def _match_close(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_match_close(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return all(_match_close(a[k], b[k]) for k in a)
    if isinstance(a, bool):
        return a == b
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float),
                       rtol=1e-12, atol=1e-15)


def workload_smoothing(scale: float):
    k = build_kernel(TorusSpec(1, 101))
    tabs = _kernel_tables(k)
    ts = np.geomspace(1.0, 50.0, 10)
    at, af = _build_actions(ts, False, None, 50.0)
    y0 = np.zeros(101)
    y0[0] = 1.0
    reps = max(2, int(200 * scale))
    args = (0, *tabs[:6], k.pi, tabs[6], tabs[7], y0, 0, 0.0, 0.0,
            at, af, len(ts), 50.0, 0, reps, 1, MV, False, False,
            False, True, False, None, None, False, False, 10**7)
    events = reps * 101 * 50
    return "smoothing T_101^1", events, lambda core: core.sim_batch(*args)


def workload_potlatch(scale: float):
    k = build_kernel(TorusSpec(2, 5))
    tabs = _kernel_tables(k)
    ts = np.array([0.0, 5.0, 20.0])
    at, af = _build_actions(ts, False, None, 20.0)
    reps = max(2, int(400 * scale))
    args = (1, *tabs[:6], k.pi, tabs[6], tabs[7], np.ones(25), 0, 0.0, 0.0,
            at, af, 3, 20.0, 0, reps, 2, MASK_ALL, False, False,
            False, True, False, None, None, False, False, 10**7)
    events = reps * 25 * 20
    return "potlatch T_5^2", events, lambda core: core.sim_batch(*args)


def workload_dual(scale: float):
    k = build_kernel(TorusSpec(1, 5))
    tabs = _kernel_tables(k)
    ts = np.array([1.0, 5.0, 15.0])
    reps = max(2, int(300 * scale))
    args = (*tabs[:3], np.ones(5), ts, 0, reps, 3, True, True, True, False, 10**7)
    events = reps * 5 * 15
    return "dual coupling T_5^1", events, lambda core: core.dual_batch(*args)


def workload_jacobi(scale: float):
    rng = np.random.default_rng(0)
    n = max(8, int(48 * scale))
    A = rng.normal(size=(n, n))
    A = A + A.T
    return f"jacobi eigh {n}x{n}", n**3, lambda core: core.jacobi_eigh(A)


def workload_volterra(scale: float):
    # fallback sums with np.dot, so the match is to rounding, not bitwise
    m = max(100, int(1500 * scale))
    g = 1.5 * np.exp(-np.linspace(0.0, 6.0, m))
    h = 6.0 / (m - 1)
    return f"volterra m={m}", m * m, lambda core: core.volterra_solve(g, h)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true",
                        help="smaller workloads (pure Python is slow)")
    args = parser.parse_args()
    scale = 0.25 if args.quick else 1.0

    compiled = get_core(False)
    fallback = get_core(True)
    if compiled.BACKEND_NAME != "compiled":
        print("compiled core not available; benchmarking the fallback only")

    header = f"{'workload':24s} {'units':>12s} {'compiled':>10s} {'python':>10s} {'speedup':>8s}  match"
    print(header)
    print("-" * len(header))
    for make in (workload_smoothing, workload_potlatch, workload_dual,
                 workload_jacobi, workload_volterra):
        name, units, run = make(scale)
        tc, out_c = _time(run, compiled)
        tp, out_p = _time(run, fallback)
        if compiled is fallback:
            label = "n/a"
        elif _match(out_c, out_p):
            label = "bitwise"
        elif _match_close(out_c, out_p):
            label = "~1e-12"
        else:
            label = "NO"
        print(f"{name:24s} {units:12d} {tc:9.3f}s {tp:9.3f}s "
              f"{tp / tc:7.1f}x  {label}")


if __name__ == "__main__":
    main()
