"""Exact and combinatorial self-checks behind ``mosco-flow selftest``.

Each suite returns a :class:`SuiteResult`; the first failing case of a suite
is kept so the table can show it.  ``mutate="volume"`` perturbs the simplex
volume used by the continuum energy evaluation, which the energy-identity
suite must catch.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .. import energies
from ..energies import EdgePowerEnergy, GraphPDirichlet, QuadraticShrink
from ..prox import ProxOptions, prox
from ..simplex import (TorusGrid, all_simplex_vertices, incidence_counts, p1_mass_matrix,
                       simplex_vertex_positions, enumerate_simplices)
from ..space import WeightedSpace
from .rng import uniform_symmetric, uniform01


@dataclass
class SuiteResult:
    name: str
    cases: int
    failures: int
    seconds: float
    first_failure: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0


class _Tally:
    def __init__(self, name):
        self.name, self.cases, self.failures, self.first = name, 0, 0, ""
        self.start = time.perf_counter()

    def check(self, ok: bool, case: str):
        self.cases += 1
        if not ok:
            self.failures += 1
            self.first = self.first or case

    def result(self) -> SuiteResult:
        return SuiteResult(self.name, self.cases, self.failures, time.perf_counter() - self.start, self.first)


def counting_suite(dims=(1, 2, 3, 4), ms=(3, 4)) -> SuiteResult:
    """Every node lies in ``(n+1)!`` simplices and every edge in ``n!``."""
    t = _Tally("counting")
    for n, m in itertools.product(dims, ms):
        nodes, edges = incidence_counts(TorusGrid(n, m))
        for kind, counts, want in (("node", nodes, math.factorial(n + 1)), ("edge", edges, math.factorial(n))):
            bad = np.flatnonzero(counts != want)
            t.cases += counts.size
            t.failures += bad.size
            if bad.size and not t.first:
                t.first = f"n={n} m={m} {kind} {bad[0]}: {counts[bad[0]]} != {want}"
    return t.result()


def energy_identity_suite(dims=(1, 2, 3), ms=(3, 4), ps=(1.0, 1.5, 2.0, 3.0),
                          samples: int = 100, rtol: float = 1e-12) -> SuiteResult:
    """Graph energy of nodal data equals the orthotropic energy of its P1 interpolant."""
    t = _Tally("energy-identity")
    for n, m, p in itertools.product(dims, ms, ps):
        grid = TorusGrid(n, m)
        graph = GraphPDirichlet(grid, p)
        seed = 1000 * n + 10 * m + int(2 * p)
        data = uniform_symmetric(seed, samples * grid.num_nodes).reshape(samples, -1)
        for k, w in enumerate(data):
            a = graph.value(w)
            b = energies.eval_orthotropic_on_p1(grid, p, w)
            t.check(abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300),
                    f"n={n} m={m} p={p:g} sample {k}: {a!r} vs {b!r}")
    return t.result()


def _degree2_rule(pts: np.ndarray, f) -> float:
    """Vertex/edge-midpoint rule on one simplex, exact for quadratics (volume factor excluded)."""
    n = pts.shape[0] - 1
    c = (n + 1) * (n + 2)
    total = (2 - n) / c * sum(f(v) for v in pts)
    total += 4 / c * sum(f(0.5 * (pts[i] + pts[j])) for i, j in itertools.combinations(range(n + 1), 2))
    return total


def quadrature_suite(dims=(1, 2, 3), m: int = 3, samples: int = 5, rtol: float = 1e-12) -> SuiteResult:
    """Mass matrix against an independent degree-2 rule, plus its row sums."""
    t = _Tally("quadrature")
    for n in dims:
        grid = TorusGrid(n, m)
        mass = p1_mass_matrix(grid)
        rows = np.asarray(mass.sum(axis=1)).ravel()
        t.check(np.allclose(rows, grid.eps**n, rtol=rtol, atol=0),
                f"n={n}: mass row sums differ from the lumped weights")
        vol = grid.eps**n / math.factorial(n)
        refs = enumerate_simplices(grid)
        verts = all_simplex_vertices(grid)
        for k in range(samples):
            w = uniform_symmetric(77 + 10 * n + k, grid.num_nodes)
            quad = 0.0
            for ref, vs in zip(refs, verts):
                pos = simplex_vertex_positions(ref)
                # P1 function in local barycentric form; positions are not wrapped
                lam_of = _barycentric_solver(pos)
                quad += vol * _degree2_rule(pos, lambda x: float(w[vs] @ lam_of(x)) ** 2)
            form = float(w @ (mass @ w))
            t.check(abs(quad - form) <= rtol * abs(form), f"n={n} sample {k}: {form!r} vs rule {quad!r}")
    return t.result()


def _barycentric_solver(pos: np.ndarray):
    n = pos.shape[0] - 1
    A = np.vstack([pos.T, np.ones(n + 1)])
    inv = np.linalg.inv(A)
    return lambda x: inv @ np.append(x, 1.0)


def prox_suite(tol: float = 1e-12) -> SuiteResult:
    """Closed-form resolvents: quadratic shrink, linear p = 2 solve, two-node soft threshold."""
    t = _Tally("prox")
    opts = ProxOptions(tol=1e-13)
    weights = 0.5 + uniform01(5, 12)
    space = WeightedSpace(weights, "selftest-shrink")
    w = uniform_symmetric(6, 12)
    for lam in (0.01, 0.5, 3.0):
        got = prox(QuadraticShrink(space), w, lam, opts)[0].values
        t.check(np.max(np.abs(got - w / (1 + lam))) <= tol, f"shrink lam={lam}")

    for n, m in ((1, 4), (1, 8), (2, 4), (2, 8)):
        grid = TorusGrid(n, m)
        E = GraphPDirichlet(grid, 2.0)
        w = uniform_symmetric(10 * n + m, grid.num_nodes)
        lam = 0.05
        W = grid.space().weights
        dense = np.diag(W) + lam * E.laplacian().toarray()
        want = np.linalg.solve(dense, W * w)
        got = prox(E, w, lam, opts)[0].values
        t.check(np.max(np.abs(got - want)) <= 1e-10, f"p=2 graph n={n} m={m}")

    for a, b, c, y1, y2, lam in ((1.0, 1.0, 1.0, 1.0, 0.0, 0.1), (0.3, 2.0, 0.7, -0.4, 0.9, 0.05),
                                 (1.0, 2.0, 1.0, 0.2, 0.1, 1.0), (0.5, 0.5, 2.0, 3.0, -1.0, 0.25)):
        space = WeightedSpace([a, b], "selftest-pair")
        E = EdgePowerEnergy(space, 1.0, [0], [1], [c], label="pair-tv")
        x = prox(E, [y1, y2], lam, opts)[0].values
        d = y1 - y2
        if abs(d) <= lam * c * (1 / a + 1 / b):
            mean = (a * y1 + b * y2) / (a + b)
            want = np.array([mean, mean])
        else:
            s = math.copysign(1.0, d)
            want = np.array([y1 - lam * c * s / a, y2 + lam * c * s / b])
        t.check(np.max(np.abs(x - want)) <= tol, f"two-node a={a} b={b} c={c} y=({y1},{y2}) lam={lam}")
    return t.result()


@contextlib.contextmanager
def _mutation(kind):
    if kind is None:
        yield
        return
    if kind != "volume":
        raise ValueError(f"unknown mutation {kind!r}")
    original = energies.simplex_volume
    energies.simplex_volume = lambda grid: 1.01 * original(grid)
    try:
        yield
    finally:
        energies.simplex_volume = original


SUITES = (counting_suite, energy_identity_suite, quadrature_suite, prox_suite)


def run_selftest(mutate: str | None = None, out=print) -> bool:
    """Run every suite, print the table, return True iff all pass."""
    with _mutation(mutate):
        results = [suite() for suite in SUITES]
    out(f"{'suite':<18}{'cases':>8}{'failed':>8}{'seconds':>10}  status")
    for r in results:
        out(f"{r.name:<18}{r.cases:>8}{r.failures:>8}{r.seconds:>10.2f}  {'PASS' if r.passed else 'FAIL'}")
    for r in results:
        if not r.passed:
            out(f"first failure in {r.name}: {r.first_failure}")
    return all(r.passed for r in results)
