"""Compare the compiled kernels with the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py``; prints one line per kernel and
grid size with the best-of-N wall time of each backend, the speedup and the
largest difference between their outputs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from mosco_flow import _kernels_py as pure
from mosco_flow.energies import GraphPDirichlet
from mosco_flow.prox import dual_lipschitz
from mosco_flow.simplex import TorusGrid

try:
    from mosco_flow import _ckernels as compiled
except ImportError:  # pragma: no cover - extension not built
    compiled = None


def _case(n, m):
    E = GraphPDirichlet(TorusGrid(n, m), 1.0)
    rng = np.random.default_rng(0)
    w = rng.normal(size=E.space.dim)
    winv = 1.0 / E.space.weights
    return E, w, winv


def bench_laplacian(backend, E, w, repeat):
    f = lambda: backend.edge_laplacian_apply(w, E.head, E.tail, E.coeff)  # noqa: E731
    return min(timeit.repeat(f, number=20, repeat=repeat)) / 20, f()


def bench_fista(backend, E, w, winv, repeat, iters=200):
    mu = dual_lipschitz(E)

    def f():
        z = np.zeros(E.num_edges)
        backend.tv_dual_fista(w, winv, E.head, E.tail, E.coeff, 0.05, mu, z, iters, 50, 0.0)
        return z

    return min(timeit.repeat(f, number=1, repeat=repeat)), f()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not available; nothing to compare")
        return 1
    print(f"{'kernel':<12}{'grid':<12}{'compiled s':>12}{'numpy s':>12}{'speedup':>9}{'max diff':>11}")
    for n, m in ((1, 1024), (2, 64), (2, 256), (3, 32)):
        E, w, winv = _case(n, m)
        for name, run in (("laplacian", lambda b: bench_laplacian(b, E, w, args.repeat)),
                          ("tv-fista", lambda b: bench_fista(b, E, w, winv, args.repeat))):
            tc, oc = run(compiled)
            tp, op = run(pure)
            diff = float(np.max(np.abs(np.asarray(oc) - np.asarray(op))))
            print(f"{name:<12}{f'n={n} m={m}':<12}{tc:>12.2e}{tp:>12.2e}{tp / tc:>9.1f}{diff:>11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
