"""Compare the compiled core against the pure-Python fallback.

Runs the same workloads through both backends, checks that they agree and
prints wall-clock timings.

    python3 benchmarks/bench_backends.py [--repeat N] [--paths N]
"""
import argparse
import time

import numpy as np

from kinwkb import _backend, kappa_model
from kinwkb.hamiltonian_flow import CotangentState, FlowOptions, integrate_flow, variational_flow


def _best(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_flow(m, repeat):
    s0 = CotangentState.make([0.05, -0.02], [0.3, -0.1], [0.4, 0.2], [1.0, -0.5])
    rows = []
    for name, call in [
        ("flow t=0.5", lambda b: integrate_flow(m, s0, 0.5, FlowOptions(backend=b)).final.vector()),
        ("variational t=0.5", lambda b: variational_flow(m, s0, 0.5, FlowOptions(backend=b)).jac),
    ]:
        tc, a = _best(lambda: call("compiled"), repeat)
        tp, b = _best(lambda: call("python"), repeat)
        rows.append((name, tc, tp, float(np.max(np.abs(a - b)))))
    return rows


def bench_em(m, n, repeat):
    rng = np.random.default_rng(1)
    dw = rng.standard_normal((n, 2)) * 0.05
    T = np.ascontiguousarray(m.tensor)

    def step(backend):
        x = np.full((n, 2), 0.05)
        y = np.full((n, 2), 0.2)
        for _ in range(20):
            _backend.em_step(x, y, dw, 0.005, T, np.sqrt(0.5), backend)
        return np.hstack([x, y])

    tc, a = _best(lambda: step("compiled"), repeat)
    tp, b = _best(lambda: step("python"), repeat)
    return [(f"20 EM steps, {n} paths", tc, tp, float(np.max(np.abs(a - b))))]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--paths", type=int, default=100000)
    args = ap.parse_args(argv)
    if not _backend.COMPILED_AVAILABLE:
        raise SystemExit("compiled core not built; run `pip install -e . --no-build-isolation`")
    m = kappa_model(0.25)
    rows = bench_flow(m, args.repeat) + bench_em(m, args.paths, args.repeat)
    print(f"{'workload':28s} {'compiled [s]':>13s} {'python [s]':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, tc, tp, diff in rows:
        print(f"{name:28s} {tc:13.4f} {tp:11.4f} {tp / tc:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
