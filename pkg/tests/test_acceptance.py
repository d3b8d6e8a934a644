"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records PASS or FAIL for its criterion and prints the line as it
finishes; a summary with one line per criterion is printed when the module
ends.  Criteria that cannot be met as stated keep their real assertion and
are marked ``xfail(strict=True)``, so they report FAIL and would flag an
unexpected pass.

Run ``pytest tests/test_acceptance.py -v`` to see the lines.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from mosco_flow.connect import (boundary_layer_connector, graph_p1_connector, operator_norm_estimate,
                                vertical_average_connector)
from mosco_flow.energies import BoundaryLayer1D, GraphPDirichlet, ThinSlab2D
from mosco_flow.flow import FlowRunSpec, minimizing_movements, nsv_bound_check
from mosco_flow.lab.config import load_config
from mosco_flow.lab.experiments import monotonicity, parse_report, run_experiment
from mosco_flow.lab.selftest import counting_suite, energy_identity_suite, prox_suite
from mosco_flow.prox import ProxOptions, prox
from mosco_flow.simplex import TorusGrid, incidence_counts

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
CRITERIA = {
    1: "simplex incidence counts exact",
    2: "energy identity to 1e-12",
    3: "prox closed forms",
    4: "NSV bound and O(1/N) rate",
    5: "p=2 exact eigenmode decay to 1e-5",
    6: "graph to continuum",
    7: "boundary layer to dynamic BC",
    8: "tau limits",
    9: "contraction suites",
    10: "Mosco diagnostics",
    11: "determinism",
}
RESULTS: dict = {}  # criterion -> list of (part, ok, detail)
_reporter = None


def _emit(line):
    if _reporter is not None:
        _reporter.write_line(line)
    else:  # pragma: no cover - plain runner
        print(line)


def _record(num, part, ok, detail=""):
    RESULTS.setdefault(num, []).append((part, ok, detail))
    _emit(f"criterion {num} [{part}]: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())


@pytest.fixture(scope="module", autouse=True)
def _summary(request):
    global _reporter
    _reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    yield
    _emit("")
    _emit("acceptance summary")
    for num, title in CRITERIA.items():
        parts = RESULTS.get(num)
        failed = [p for p, ok, _ in parts if not ok] if parts else []
        status = "NOT RUN" if parts is None else "FAIL" if failed else "PASS"
        note = f"  (failing part: {', '.join(failed)})" if failed else ""
        _emit(f"{num:>2}. {status:<7} {title}{note}")
    _reporter = None


_RUNS: dict = {}


def _run_config(name, out_dir):
    cfg = load_config(CONFIGS / f"{name}.ini")
    cfg.output_dir = out_dir
    start = time.perf_counter()
    outcome = run_experiment(cfg)
    seconds = time.perf_counter() - start
    assert outcome.ok, outcome.failures
    return cfg, parse_report((out_dir / "report.csv").read_text()), seconds


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Run each config once per module, on demand."""
    base = tmp_path_factory.mktemp("acceptance")

    def get(name):
        if name not in _RUNS:
            _RUNS[name] = _run_config(name, base / name)
        return _RUNS[name]

    yield get
    _RUNS.clear()


# 1


def test_criterion_1_incidence_counts():
    start = time.perf_counter()
    bad = []
    for n in (1, 2, 3, 4):
        for m in (3, 4):
            nodes, edges = incidence_counts(TorusGrid(n, m))
            if np.any(nodes != math.factorial(n + 1)) or np.any(edges != math.factorial(n)):
                bad.append((n, m))
    seconds = time.perf_counter() - start
    ok = not bad and seconds <= 60
    # the self-test suite counts independently from the cube decomposition
    suite = counting_suite()
    ok = ok and suite.passed
    _record(1, "all nodes and edges", ok, f"{seconds:.1f}s, mismatches {bad}")
    assert not bad and suite.passed
    assert seconds <= 60


# 2


def test_criterion_2_energy_identity():
    start = time.perf_counter()
    res = energy_identity_suite(samples=100, rtol=1e-12)
    seconds = time.perf_counter() - start
    ok = res.passed and seconds <= 30
    _record(2, "100 samples x 24 (n,m,p)", ok, f"{res.cases} cases, {res.failures} failed, {seconds:.1f}s")
    assert res.cases == 2400
    assert res.passed, res.first_failure
    assert seconds <= 30


# 3


def test_criterion_3_prox_closed_forms():
    res = prox_suite(tol=1e-12)
    _record(3, "shrink, dense p=2, two-node TV", res.passed, f"{res.cases} cases")
    assert res.passed, res.first_failure


# 4

NSV_NS = (8, 16, 32, 64)


def _nsv_series(p):
    E = GraphPDirichlet(TorusGrid(1, 16), p)
    u0 = np.cos(2 * np.pi * np.arange(16) / 16)
    opts = ProxOptions(tol=1e-12)
    reps = []
    for N in NSV_NS:
        run = FlowRunSpec(E, u0, 0.1, N, opts)
        reps.append(nsv_bound_check(run, minimizing_movements(run.with_steps(64 * N))))
    return reps


_NSV: dict = {}


def _nsv(p):
    if p not in _NSV:
        _NSV[p] = _nsv_series(p)
    return _NSV[p]


@pytest.mark.parametrize("p", [1.0, 2.0])
def test_criterion_4_nsv_bound(p):
    reps = _nsv(p)
    ok = all(r.holds for r in reps)
    detail = ", ".join(f"N={r.N}: {r.sup_error_sq:.3g} <= {r.bound + r.budget:.3g}" for r in reps)
    _record(4, f"bound p={p:g}", ok, detail)
    assert ok


@pytest.mark.parametrize("p", [
    2.0,
    pytest.param(1.0, marks=pytest.mark.xfail(
        strict=True, reason="p = 1 sup-error^2 does not shrink by 1.8 at every doubling (ratio 1.71 at N = 8)")),
])
def test_criterion_4_rate(p):
    reps = _nsv(p)
    ratios = [a.sup_error_sq / b.sup_error_sq for a, b in zip(reps, reps[1:])]
    ok = all(r >= 1.8 for r in ratios)
    _record(4, f"rate p={p:g}", ok, "ratios " + ", ".join(f"{r:.3f}" for r in ratios))
    assert ok, ratios


# 5


def _eigen_setup():
    m, T, N = 16, 0.1, 4096
    eps = 1.0 / m
    rate = (2 - 2 * math.cos(2 * math.pi * eps)) / eps**2
    u0 = np.cos(2 * np.pi * np.arange(m) / m)
    return GraphPDirichlet(TorusGrid(1, m), 2.0), u0, T, N, rate


@pytest.mark.xfail(strict=True, reason="implicit Euler lags exp(-x) by about x^2/(2N) = 1.9e-3 relative at N = 4096")
def test_criterion_5_exact_decay():
    E, u0, T, N, rate = _eigen_setup()
    start = time.perf_counter()
    end = minimizing_movements(FlowRunSpec(E, u0, T, N, ProxOptions(tol=1e-12))).states[-1]
    seconds = time.perf_counter() - start
    want = math.exp(-rate * T) * u0
    rel = float(np.max(np.abs(end - want)) / np.max(np.abs(want)))
    ok = rel <= 1e-5 and seconds <= 10
    _record(5, "vs exp(-lambda T)", ok, f"relative error {rel:.3e}, {seconds:.1f}s")
    assert rel <= 1e-5
    assert seconds <= 10


def test_criterion_5_discrete_factor():
    # the computed states do carry the exact implicit-Euler factor
    E, u0, T, N, rate = _eigen_setup()
    start = time.perf_counter()
    end = minimizing_movements(FlowRunSpec(E, u0, T, N, ProxOptions(tol=1e-12))).states[-1]
    seconds = time.perf_counter() - start
    want = (1 + rate * T / N) ** (-N) * u0
    rel = float(np.max(np.abs(end - want)) / np.max(np.abs(want)))
    _record(5, "vs (1 + lambda T/N)^-N", rel <= 1e-10 and seconds <= 10, f"relative error {rel:.3e}, {seconds:.1f}s")
    assert rel <= 1e-10
    assert seconds <= 10


# 6


def test_criterion_6_graph_to_continuum(runs):
    cfg, rows, seconds = runs("graph_limit")
    assert cfg.eps_list == (1 / 8, 1 / 16, 1 / 32) and cfg.p == 2 and cfg.n == 1
    err = [r["sup_state_error"] for r in rows]
    ratio = err[2] / err[0]
    ok = err[0] > err[1] > err[2] and ratio <= 0.35 and seconds <= 120
    _record(6, "eps 1/8,1/16,1/32", ok,
            "errors " + ", ".join(f"{e:.4g}" for e in err) + f", ratio {ratio:.3f}, {seconds:.1f}s")
    assert err[0] > err[1] > err[2]
    assert ratio <= 0.35
    assert seconds <= 120


# 7


def test_criterion_7_boundary_layer(runs):
    cfg, rows, seconds = runs("boundary_layer")
    assert cfg.M == 256 and cfg.p == 2 and cfg.eps_list == (1 / 8, 1 / 16, 1 / 32)
    err = [r["sup_state_error"] for r in rows]
    ok = err[0] > err[1] > err[2] and seconds <= 120
    _record(7, "eps 1/8,1/16,1/32 at h = 1/256", ok,
            "errors " + ", ".join(f"{e:.4g}" for e in err) + f", {seconds:.1f}s")
    assert err[0] > err[1] > err[2]
    assert seconds <= 120


# 8

TAU_CONFIGS = [f"dynamic_bc_{mode}_p{p}" for mode in ("neumann", "dirichlet") for p in ("2", "1_5", "1")]
_TAU_SECONDS: list = []


@pytest.mark.parametrize("name", TAU_CONFIGS)
def test_criterion_8_tau_limits(runs, name):
    cfg, rows, seconds = runs(name)
    want = (1.0, 0.1, 0.01) if cfg.mode == "to_neumann" else (1.0, 10.0, 100.0)
    assert cfg.tau_list == want
    _TAU_SECONDS.append(seconds)
    err = [r["sup_state_error"] for r in rows]
    total = sum(_TAU_SECONDS)
    ok = err[0] > err[1] > err[2] and total <= 180
    _record(8, f"{cfg.mode} p={cfg.p:g}", ok,
            "errors " + ", ".join(f"{e:.4g}" for e in err) + f", {seconds:.1f}s (running total {total:.0f}s)")
    assert err[0] > err[1] > err[2]
    assert total <= 180


# 9


def test_criterion_9_connector_norms():
    cons = [graph_p1_connector(TorusGrid(1, m), 4 * m) for m in (4, 8, 16)]
    cons.append(graph_p1_connector(TorusGrid(2, 8), 32))
    g_minus = lambda x: 0.2 * np.sin(2 * np.pi * x)  # noqa: E731
    g_plus = lambda x: 1.0 + 0.3 * np.cos(2 * np.pi * x)  # noqa: E731
    cons += [vertical_average_connector(ThinSlab2D(32, 8, eps, 2.0, g_minus, g_plus)) for eps in (0.5, 0.25, 0.125)]
    cons += [boundary_layer_connector(BoundaryLayer1D.from_width(256, eps, 2.0)) for eps in (1 / 8, 1 / 16, 1 / 32)]
    norms = [operator_norm_estimate(c, 300).value for c in cons]
    ok = all(v <= 1 + 1e-10 for v in norms)
    _record(9, "connector norms", ok, f"max {max(norms):.15f} over {len(norms)} connectors")
    assert ok


def _pairs(count, dim, seed):
    rng = np.random.default_rng(seed)
    return [(rng.normal(size=dim), rng.normal(size=dim) * rng.uniform(0.01, 2.0)) for _ in range(count)]


def test_criterion_9_prox_and_step_nonexpansive():
    tol = 1e-11
    opts = ProxOptions(tol=tol)
    worst_prox = worst_step = 0.0
    ok = True
    for i, (a, b) in enumerate(_pairs(100, 16, 9)):
        p = (1.0, 1.5, 2.0, 3.0)[i % 4]
        E = GraphPDirichlet(TorusGrid(1, 16), p)
        W = E.space.weights
        lam = 0.01 * (1 + i % 5)
        ja = prox(E, a, lam, opts)[0].values
        jb = prox(E, b, lam, opts)[0].values
        r = math.sqrt(np.sum(W * (ja - jb) ** 2)) / math.sqrt(np.sum(W * (a - b) ** 2))
        worst_prox = max(worst_prox, r)
        # two minimizing-movement steps from the same pair
        ta = minimizing_movements(FlowRunSpec(E, a, 2 * lam, 2, opts)).states
        tb = minimizing_movements(FlowRunSpec(E, b, 2 * lam, 2, opts)).states
        d0 = math.sqrt(np.sum(W * (a - b) ** 2))
        for k in (1, 2):
            worst_step = max(worst_step, math.sqrt(np.sum(W * (ta[k] - tb[k]) ** 2)) / d0)
    ok = worst_prox <= 1 + 10 * tol and worst_step <= 1 + 10 * tol
    _record(9, "prox and MM steps, 100 pairs", ok, f"worst ratios {worst_prox:.12f}, {worst_step:.12f}")
    assert ok


# 10

MOSCO_CONFIGS = ["mosco_graph", "mosco_thin", "mosco_boundary_layer", "mosco_tau_neumann", "mosco_tau_dirichlet"]
REC_RES = ("rec_state_error", "rec_norm_error", "rec_energy_error",
           "res_state_error", "res_norm_error", "res_energy_error")


@pytest.mark.parametrize("name", MOSCO_CONFIGS)
def test_criterion_10_mosco_diagnostics(runs, name):
    cfg, rows, _ = runs(name)
    flags = monotonicity(rows)
    cols = REC_RES + (("lstar_defect",) if cfg.example == "graph" else ())
    bad = [c for c in cols if not flags[c]]
    _record(10, cfg.example, not bad, "non-decreasing: " + (", ".join(bad) if bad else "none"))
    assert not bad


# 11

ALL_CONFIGS = sorted(p.stem for p in CONFIGS.glob("*.ini"))


@pytest.mark.parametrize("name", ALL_CONFIGS)
def test_criterion_11_determinism(runs, tmp_path, name):
    runs(name)
    first = (_RUNS[name][0].output_dir / "report.csv").read_bytes()
    _run_config(name, tmp_path / "again")
    second = (tmp_path / "again" / "report.csv").read_bytes()
    _record(11, name, first == second, f"{len(first)} bytes")
    assert first == second
