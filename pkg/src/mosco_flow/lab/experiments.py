"""Sweep runner: builds each experiment from its config and writes the artifacts.

Every swept parameter becomes one row of ``report.csv`` with the columns in
:data:`REPORT_COLUMNS`, one ``traj_<param>.dat`` file, and one line of
``timing.csv``.  A JSON ``manifest`` records the config echo, the build, the
seed, a sha256 for every output file and the monotonicity flags of the
error columns.

Parameter points run concurrently on a thread pool (``MOSCO_FLOW_THREADS``
caps the worker count); results are collected and written in config order,
so ``report.csv`` does not depend on scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from .. import __version__
from .. import _kernels
from ..connect import (GraphExample, LayerExample, Level, MoscoExample, TauExample, ThinExample,
                       graph_p1_connector, limit_data, mollify_periodic, mosco_row)
from ..energies import GraphPDirichlet
from ..flow import (FlowFailure, FlowRunSpec, Trajectory, dump_trajectory, flow_distance,
                    minimizing_movements)
from ..prox import ProxFailure, ProxOptions, prox
from ..simplex import TorusGrid
from ..space import weighted_norm
from .config import ExperimentConfig
from .rng import uniform_symmetric

REPORT_COLUMNS = (
    "experiment", "param",
    "sup_state_error", "sup_norm_error", "h1_margin",
    "rec_state_error", "rec_norm_error", "rec_energy_error",
    "res_state_error", "res_norm_error", "res_energy_error",
    "lstar_defect", "prox_iterations",
)
# columns whose decrease along the sweep is reported in the manifest
TRACKED = REPORT_COLUMNS[2:3] + REPORT_COLUMNS[5:12]
NAN = float("nan")
RANDOM_MODES = 8


# -- initial data


def make_profile(name: str, seed: int = 0, periodic: bool = True) -> Callable:
    """Initial-data profile on ``[0, 1]`` (or on the unit torus, coordinate-wise).

    ``x`` may be 1D (points on a line) or ``(P, n)``.  Periodic variants use
    whole periods so they live on the torus; interval variants use the
    Neumann-compatible ``cos(pi x)`` and the Dirichlet-compatible ``sin(pi x)``.
    ``random`` is a Fourier series with ``RANDOM_MODES`` modes per coordinate,
    coefficients drawn from the SplitMix64 stream ``seed`` and damped by ``1/k``,
    so every grid of a sweep samples the same function.
    """
    freq = 2 * np.pi if periodic else np.pi

    def coords(x):
        x = np.asarray(x, dtype=float)
        return x[:, None] if x.ndim == 1 else x

    if name == "cosine":
        return lambda x: np.cos(freq * coords(x)[:, 0])
    if name == "sine":
        return lambda x: np.sin(freq * coords(x)[:, 0])
    if name == "bump":
        def bump(x):
            r2 = np.sum(((coords(x) - 0.5) / 0.3) ** 2, axis=1)
            return np.where(r2 < 1, (1 - r2) ** 2, 0.0)
        return bump
    if name == "step":
        return lambda x: np.all(np.abs(coords(x) - 0.5) < 0.25, axis=1).astype(float)
    if name == "random":
        coef = uniform_symmetric(seed, 2 * RANDOM_MODES * 4).reshape(4, RANDOM_MODES, 2)
        ks = np.arange(1, RANDOM_MODES + 1)

        def random(x):
            c = coords(x)
            out = np.zeros(c.shape[0])
            for d in range(c.shape[1]):
                arg = freq * np.outer(c[:, d], ks)
                if periodic:
                    basis = coef[d, :, 0] * np.cos(arg) + coef[d, :, 1] * np.sin(arg)
                else:
                    basis = coef[d, :, 0] * np.cos(arg)
                out += np.sum(basis / ks, axis=1)
            return out
        return random
    raise ValueError(f"unknown profile {name!r}")


# -- sweeps


def _lcm_resolution(ms, factor: int = 4) -> int:
    base = math.lcm(*ms)
    return base * max(1, -(-factor * max(ms) // base))


class FineGraphExample(MoscoExample):
    """Graph sweep whose limit is stood in for by the graph on the ``R^n`` sampling lattice.

    Used whenever no closed-form continuum resolvent is available
    (``p != 2``, ``n > 1`` or non-cosine data).
    """

    def __init__(self, ms, n, p, profile, lam, delta_power=0.5, R=None):
        self.name = "graph"
        self.ms = tuple(sorted(ms))
        self.params = tuple(sorted((1.0 / m for m in ms), reverse=True))
        self.n, self.p, self.lam = n, p, lam
        self.delta_power = delta_power
        self.profile = profile
        self.R = R or _lcm_resolution(self.ms)
        self.fine = TorusGrid(n, self.R)
        self.limit = GraphPDirichlet(self.fine, p)

    def level(self, eps) -> Level:
        grid = TorusGrid(self.n, int(round(1 / eps)))
        con = graph_p1_connector(grid, self.R)
        nodes = grid.node_positions()
        if self.n == 1:
            rec = mollify_periodic(self.profile, eps**self.delta_power, nodes[:, 0])
        else:
            rec = self.profile(nodes)
        return Level(eps, GraphPDirichlet(grid, self.p), con, rec)

    def limit_state(self):
        return self.profile(self.fine.node_positions())

    def limit_energy_value(self, x):
        return self.limit.value(x)

    def limit_resolvent(self, lam, opts):
        return prox(self.limit, self.limit_state(), lam, opts)[0].values


@dataclass
class Sweep:
    """An example plus how to start and compare flows at each of its levels."""

    experiment: str
    example: MoscoExample
    initial: Callable[[Level], np.ndarray] | None = None  # None: no flows (diagnostics only)
    reference: Callable[[], object] | None = None  # limit path: Trajectory or t -> values
    bench: bool = False


def _graph_example(cfg: ExperimentConfig, profile) -> MoscoExample:
    ms = [int(round(1 / e)) for e in cfg.eps_list]
    if cfg.n == 1 and cfg.p == 2 and cfg.initial_data == "cosine":
        return GraphExample(ms, R=_lcm_resolution(ms), delta_power=cfg.delta_power,
                            lam=cfg.diagnostic_lambda)
    return FineGraphExample(ms, cfg.n, cfg.p, profile, cfg.diagnostic_lambda, cfg.delta_power)


def _limit_flow(cfg: ExperimentConfig, energy, u0) -> Callable[[], Trajectory]:
    return lambda: minimizing_movements(FlowRunSpec(energy, u0, cfg.T, cfg.N, _opts(cfg),
                                                    cfg.lam_init or None))


def _opts(cfg: ExperimentConfig) -> ProxOptions:
    return ProxOptions(tol=cfg.tol, max_iter=cfg.max_iter)


def build_sweep(cfg: ExperimentConfig) -> Sweep:
    """Translate a validated config into a :class:`Sweep`."""
    name = cfg.experiment
    target = cfg.example if name == "mosco-check" else {
        "graph-limit": "graph", "prox-bench": "graph", "thin-domain": "thin",
        "boundary-layer": "boundary-layer",
        "dynamic-bc": "tau-neumann" if cfg.mode == "to_neumann" else "tau-dirichlet",
    }[name]
    lam = cfg.diagnostic_lambda

    if target == "graph":
        profile = make_profile(cfg.initial_data, cfg.seed, periodic=True)
        ex = _graph_example(cfg, profile)
        initial = lambda lev: profile(lev.connector.grid.node_positions())  # noqa: E731
        if isinstance(ex, GraphExample):
            xs = ex.x
            decay = 1.0 / (1.0 + 4 * math.pi**2 * cfg.lam_init)

            def reference():
                return lambda t: decay * math.exp(-4 * math.pi**2 * t) * np.cos(2 * np.pi * xs)
        else:
            fine = ex

            def reference():
                traj = _limit_flow(cfg, fine.limit, fine.limit_state())()
                return traj.at
        if name == "mosco-check":
            return Sweep(name, ex)
        return Sweep(name, ex, initial, reference, bench=name == "prox-bench")

    if target == "thin":
        profile = make_profile(cfg.initial_data, cfg.seed, periodic=False)
        ex = ThinExample(cfg.eps_list, cfg.Mx, cfg.My, cfg.p, lam, profile=profile)
        reference = _limit_flow(cfg, ex.limit, ex.limit_state())
    elif target == "boundary-layer":
        profile = make_profile(cfg.initial_data, cfg.seed, periodic=False)
        ex = LayerExample(cfg.eps_list, cfg.M, cfg.p, lam, profile=profile)
        reference = _limit_flow(cfg, ex.limit, ex.limit_state())
    else:
        mode = "to_neumann" if target == "tau-neumann" else "to_dirichlet"
        profile = make_profile(cfg.initial_data, cfg.seed, periodic=False)
        ex = TauExample(mode, cfg.tau_list, cfg.M, cfg.p, lam, profile=profile)
        reference = _limit_flow(cfg, ex.limit, ex.limit_state())
    if name == "mosco-check":
        return Sweep(name, ex)
    return Sweep(name, ex, lambda lev: lev.recovery, reference)


# -- one sweep point


@dataclass
class PointResult:
    param: float
    row: dict | None
    traj: Trajectory | None
    seconds: float
    error: str | None = None


def _diagnostics(lev, lim, opts) -> tuple:
    row, cert = mosco_row(lev, lim, opts)
    return {c: getattr(row, c) for c in REPORT_COLUMNS[4:12]}, cert


def run_point(sweep: Sweep, cfg: ExperimentConfig, param: float, lim, reference) -> PointResult:
    start = time.perf_counter()
    opts = _opts(cfg)
    row = {"experiment": cfg.experiment, "param": float(param)}
    try:
        lev = sweep.example.level(param)
        if sweep.bench:
            w = sweep.initial(lev)
            got, cert = prox(lev.energy, w, lim.lam, opts)
            tight = ProxOptions(tol=max(cfg.tol * 1e-3, 1e-15), max_iter=max(cfg.max_iter, 10**6))
            ref, _ = prox(lev.energy, w, lim.lam, tight)
            W = lev.energy.space.weights
            row["sup_state_error"] = weighted_norm(W, got.values - ref.values)
            row["sup_norm_error"] = abs(weighted_norm(W, got.values) - weighted_norm(W, ref.values))
            row.update({c: NAN for c in REPORT_COLUMNS[4:12]})
            row["prox_iterations"] = cert.iterations
            traj = Trajectory(lev.energy.space, np.array([0.0, lim.lam]), np.stack([w, got.values]),
                              cert.iterations)
        elif sweep.initial is None:
            diag, cert = _diagnostics(lev, lim, opts)
            row["sup_state_error"] = row["sup_norm_error"] = NAN
            row.update(diag)
            row["prox_iterations"] = cert.iterations
            jw = prox(lev.energy, lev.recovery, lim.lam, opts)[0].values
            traj = Trajectory(lev.energy.space, np.array([0.0, lim.lam]), np.stack([lev.recovery, jw]),
                              cert.iterations)
        else:
            run = FlowRunSpec(lev.energy, sweep.initial(lev), cfg.T, cfg.N, opts, cfg.lam_init or None)
            try:
                traj = minimizing_movements(run)
            except FlowFailure as exc:
                return PointResult(param, None, exc.partial, time.perf_counter() - start, str(exc))
            state_err, norm_err = flow_distance(lev.connector, traj, reference, T=cfg.T)
            diag, _ = _diagnostics(lev, lim, opts)
            row["sup_state_error"] = state_err
            row["sup_norm_error"] = norm_err
            row.update(diag)
            row["prox_iterations"] = traj.prox_iterations
    except ProxFailure as exc:
        return PointResult(param, None, None, time.perf_counter() - start, str(exc))
    return PointResult(param, row, traj, time.perf_counter() - start)


# -- output


def format_row(row: dict) -> list:
    out = []
    for c in REPORT_COLUMNS:
        v = row[c]
        if c == "experiment":
            out.append(v)
        elif c == "prox_iterations":
            out.append(str(int(v)))
        else:
            out.append(repr(float(v)))
    return out


def report_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in rows:
        w.writerow(format_row(row))
    return buf.getvalue()


def parse_report(text: str) -> list:
    """Rows of a ``report.csv`` as dicts with floats (ints for ``prox_iterations``)."""
    rows = []
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise ValueError("unexpected report columns")
    for rec in reader:
        row = {}
        for c, v in zip(header, rec):
            row[c] = v if c == "experiment" else int(v) if c == "prox_iterations" else float(v)
        rows.append(row)
    return rows


def param_tag(param: float) -> str:
    return f"{param:.6g}"


def monotonicity(rows, zero_tol: float = 1e-14) -> dict:
    """Per tracked column: strictly decreasing along the sweep, or identically zero."""
    flags = {}
    for c in TRACKED:
        vals = np.array([r[c] for r in rows], dtype=float)
        if vals.size == 0 or np.any(np.isnan(vals)):
            flags[c] = None
        elif np.all(np.abs(vals) <= zero_tol):
            flags[c] = True
        else:
            flags[c] = bool(np.all(np.diff(vals) < 0))
    return flags


def build_id() -> str:
    return (f"mosco_flow {__version__} backend={_kernels.BACKEND} numpy={np.__version__} "
            f"scipy={scipy.__version__} python={platform.python_version()}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def thread_count() -> int:
    raw = os.environ.get("MOSCO_FLOW_THREADS", "")
    try:
        n = int(raw) if raw else 0
    except ValueError:
        n = 0
    return max(1, n) if n else (os.cpu_count() or 1)


@dataclass
class RunOutcome:
    rows: list
    files: dict = field(default_factory=dict)  # name -> sha256
    failures: list = field(default_factory=list)  # (param, message)
    flags: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(cfg: ExperimentConfig, log=None) -> RunOutcome:
    """Run the sweep described by ``cfg`` and write every artifact to ``cfg.output_dir``.

    Raises ``OSError`` when the output directory is unusable.  Solver
    failures do not raise: they are listed in ``RunOutcome.failures`` after
    the partial outputs are written.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(13, "output directory is not writable", str(out))
    log = log or (lambda msg: None)

    sweep = build_sweep(cfg)
    opts = _opts(cfg)
    failures = []
    results = []
    try:
        lim = limit_data(sweep.example, cfg.diagnostic_lambda, opts)
        reference = sweep.reference() if sweep.reference and not sweep.bench else None
    except (ProxFailure, FlowFailure) as exc:
        failures.append(("limit", str(exc)))
    else:
        workers = min(thread_count(), len(cfg.sweep))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_point, sweep, cfg, p, lim, reference) for p in cfg.sweep]
            for fut in futures:  # config order, regardless of completion order
                res = fut.result()
                log(f"{cfg.experiment} param={param_tag(res.param)} "
                    + ("ok" if res.error is None else f"FAILED: {res.error}")
                    + f" ({res.seconds:.2f}s)")
                results.append(res)
                if res.error is not None:
                    failures.append((res.param, res.error))

    rows = [r.row for r in results if r.row is not None]
    files = {}
    report = out / "report.csv"
    report.write_text(report_text(rows))
    files[report.name] = _sha256(report)
    for res in results:
        if res.traj is None:
            continue
        path = out / f"traj_{param_tag(res.param)}.dat"
        with open(path, "w") as fh:
            dump_trajectory(res.traj, fh)
        files[path.name] = _sha256(path)
    timing = out / "timing.csv"
    with open(timing, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("param", "wall_seconds"))
        for res in results:
            w.writerow((repr(float(res.param)), f"{res.seconds:.6f}"))
    files[timing.name] = _sha256(timing)

    flags = monotonicity(rows) if len(rows) == len(cfg.sweep) else {}
    manifest = {
        "config": cfg.echo(),
        "build": build_id(),
        "seed": cfg.seed,
        "status": "ok" if not failures else "solver-failure",
        "failures": [[p if isinstance(p, str) else float(p), m] for p, m in failures],
        "columns": list(REPORT_COLUMNS),
        "monotone_decreasing": flags,
        "files": files,
    }
    (out / "manifest").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunOutcome(rows, files, failures, flags)
