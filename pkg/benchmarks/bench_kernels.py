"""Compare the compiled kernels against the numpy/scipy fallback.

Run from the repository root after building the extension::

    python benchmarks/bench_kernels.py [--repeat 3]

Both backends are imported directly, so one process measures both.
"""
import argparse
import time

import numpy as np

from rigidlab import _pykernels

try:
    from rigidlab import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def grid_weights(n, rng):
    return [rng.uniform(0.5, 1.5, size=s) for s in ((n - 1, n), (n, n - 1), (n - 1, n - 1), (n - 1, n - 1))]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _pykernels)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))
    else:
        print("compiled extension not available; timing the fallback only")

    cases = []
    for n in (10_000, 1_000_000):
        B = rng.standard_normal((n, 2, 2))
        cases.append((f"so_residual_2d n={n}", lambda k, B=B: k.so_residual_2d(B)))
    for n in (201, 801):
        w = grid_weights(n, rng)
        # corner to corner: the compiled search can stop early, the fallback cannot
        cases.append((f"grid_dijkstra {n}x{n}",
                      lambda k, w=w, n=n: k.grid_dijkstra(*w, 0, n * n - 1)))

    print(f"{'kernel':28s}" + "".join(f"{name:>12s}" for name, _ in backends) + f"{'speedup':>10s}")
    for label, run in cases:
        t = [best_of(lambda k=k: run(k), args.repeat) for _, k in backends]
        speed = f"{t[0] / t[1]:9.1f}x" if len(t) > 1 else ""
        print(f"{label:28s}" + "".join(f"{v:12.4f}" for v in t) + speed)

    if _ckernels is not None:
        B = rng.standard_normal((1000, 2, 2))
        d0, _ = _pykernels.so_residual_2d(B)
        d1, _ = _ckernels.so_residual_2d(B)
        w = grid_weights(101, rng)
        g0 = _pykernels.grid_dijkstra(*w, 0, 101 * 101 - 1)
        g1 = _ckernels.grid_dijkstra(*w, 0, 101 * 101 - 1)
        print(f"max |dist difference| {np.max(np.abs(d0 - d1)):.2e}, "
              f"dijkstra difference {abs(g0 - g1):.2e}")


if __name__ == "__main__":
    main()
