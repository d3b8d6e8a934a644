"""Connecting operators between state spaces and Mosco-type diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import Callable, NamedTuple

import numpy as np
from scipy import sparse

from .energies import (BoundaryLayer1D, EnergySpec, GraphPDirichlet, Interval1D, DynamicBC1D,
                       ThinSlab2D, Weighted1DLimit, dynamic_bc_space, interval_space)
from .prox import ProxOptions, prox
from .simplex import TorusGrid, locate_many, p1_mass_matrix
from .space import ContractViolation, StateVector, WeightedSpace, weighted_norm


class LinearConnector:
    """Linear map ``source -> target`` together with its adjoint.

    ``forward`` and ``adjoint`` act on raw value arrays; the adjoint is taken
    with respect to the two weighted inner products.
    """

    def __init__(self, source: WeightedSpace, target: WeightedSpace,
                 forward: Callable, adjoint: Callable, label: str = "connector"):
        self.source, self.target = source, target
        self._forward, self._adjoint = forward, adjoint
        self.label = label

    def apply_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.source.dim,):
            raise ContractViolation(f"{self.label}: expected {self.source.dim} source values")
        return np.asarray(self._forward(x), dtype=float)

    def adjoint_values(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.target.dim,):
            raise ContractViolation(f"{self.label}: expected {self.target.dim} target values")
        return np.asarray(self._adjoint(y), dtype=float)

    def apply(self, u: StateVector) -> StateVector:
        if not self.source.compatible(u.space):
            raise ContractViolation(f"{self.label} maps from {self.source.label!r}, got {u.space.label!r}")
        return StateVector(self.apply_values(u.values), self.target)

    def adjoint_apply(self, v: StateVector) -> StateVector:
        if not self.target.compatible(v.space):
            raise ContractViolation(f"{self.label} adjoint maps from {self.target.label!r}")
        return StateVector(self.adjoint_values(v.values), self.source)

    def __repr__(self):
        return f"LinearConnector({self.label!r}: {self.source.label!r} -> {self.target.label!r})"


def matrix_connector(source, target, S, label="matrix") -> LinearConnector:
    """Connector given by a (sparse or dense) matrix in raw coordinates."""
    S = sparse.csr_matrix(S)
    St = S.T.tocsr()
    ws, wt = source.weights, target.weights
    return LinearConnector(source, target, lambda x: S @ x, lambda y: (St @ (wt * y)) / ws, label)


def identity_connector(space: WeightedSpace) -> LinearConnector:
    return LinearConnector(space, space, lambda x: x.copy(), lambda y: y.copy(), "identity")


def zero_connector(source: WeightedSpace, target: WeightedSpace) -> LinearConnector:
    return LinearConnector(source, target, lambda x: np.zeros(target.dim),
                           lambda y: np.zeros(source.dim), "zero")


# -- concrete connectors


def fine_space(n: int, R: int) -> WeightedSpace:
    """Lumped ``L^2(T^n)`` sampled on the uniform ``R^n`` lattice."""
    return WeightedSpace(np.full(R**n, float(R) ** -n), f"fine(n={n},R={R})")


def graph_p1_connector(grid: TorusGrid, R: int) -> LinearConnector:
    """Evaluate the P1 interpolant of node values on the ``R^n`` lattice."""
    if R % grid.m:
        raise ContractViolation(f"resolution {R} is not a multiple of m={grid.m}")
    pts = TorusGrid(grid.n, R).node_positions()
    verts, lam, _, _ = locate_many(grid, pts)
    P = pts.shape[0]
    S = sparse.csr_matrix((lam.ravel(), (np.repeat(np.arange(P), grid.n + 1), verts.ravel())),
                          shape=(P, grid.num_nodes))
    S.sum_duplicates()
    con = matrix_connector(grid.space(), fine_space(grid.n, R), S, f"graph-p1(m={grid.m},R={R})")
    con.matrix = S
    con.grid = grid
    return con


def exact_l2_norm_sq(grid: TorusGrid, values) -> float:
    """``int |L w|^2`` for the P1 interpolant, by exact simplex quadrature."""
    w = np.asarray(values, dtype=float)
    return float(w @ (p1_mass_matrix(grid) @ w))


def vertical_average_connector(thin: ThinSlab2D) -> LinearConnector:
    """Column means of the thin-slab field, into the weighted 1D limit space."""
    Mx, My = thin.Mx, thin.My
    target = thin.limit_energy().space
    return LinearConnector(
        thin.space, target,
        lambda x: x.reshape(Mx, My).mean(axis=1),
        lambda y: np.repeat(y, My),
        f"vertical-average(Mx={Mx},My={My})",
    )


def boundary_layer_connector(layer: BoundaryLayer1D) -> LinearConnector:
    """``w -> (w, mean of w over the left collar, mean over the right collar)``."""
    M = layer.M
    left = layer.layer_averaging_weights("left")
    right = layer.layer_averaging_weights("right")
    target = dynamic_bc_space(M, 1.0)
    lumped = interval_space(M).weights
    b = layer.space.weights

    def forward(x):
        return np.concatenate([x, [left @ x, right @ x]])

    def adjoint(y):
        u, vm, vp = y[: M + 1], y[M + 1], y[M + 2]
        return (lumped * u + vm * left + vp * right) / b

    return LinearConnector(layer.space, target, forward, adjoint, f"layer-average(M={M},k={layer.k})")


def tau_projection_connector(M: int, tau: float, mode: str = "to_neumann") -> LinearConnector:
    """``(u, v) -> u`` from the bulk/boundary space into ``L^2(0, 1)``."""
    if mode not in ("to_neumann", "to_dirichlet"):
        raise ContractViolation(f"unknown mode {mode!r}")
    source = dynamic_bc_space(M, tau)
    target = interval_space(M)
    return LinearConnector(source, target, lambda x: x[: M + 1].copy(),
                           lambda y: np.concatenate([y, [0.0, 0.0]]),
                           f"tau-projection({mode},tau={tau!r})")


# -- diagnostics


class NormEstimate(NamedTuple):
    value: float
    residual: float
    iterations: int

    def __float__(self):
        return self.value


def operator_norm_estimate(con: LinearConnector, iters: int = 100, tol: float = 1e-13) -> NormEstimate:
    """Power iteration on ``L* L``; the returned value never decreases with ``iters``."""
    if iters < 1:
        raise ContractViolation("iters must be >= 1")
    ws = con.source.weights
    x = 1.0 + 0.5 * np.cos(np.arange(con.source.dim) * 2.399963) + 0.1 * np.sin(np.arange(con.source.dim) * 0.5)
    x /= weighted_norm(ws, x)
    best, resid = 0.0, math.inf
    for k in range(1, iters + 1):
        y = con.adjoint_values(con.apply_values(x))
        rq = float(np.sum(ws * x * y))
        ny = weighted_norm(ws, y)
        if ny == 0.0:
            return NormEstimate(0.0, 0.0, k)
        resid = weighted_norm(ws, y - rq * x)
        best = max(best, math.sqrt(max(rq, 0.0)))
        x = y / ny
        if resid <= tol * max(rq, 1e-300):
            break
    return NormEstimate(best, resid, k)


def lstar_defect(con: LinearConnector, w) -> float:
    """``||L* L w - w||`` in the source norm."""
    x = w.values if isinstance(w, StateVector) else np.asarray(w, dtype=float)
    return weighted_norm(con.source.weights, con.adjoint_values(con.apply_values(x)) - x)


def layer_trace_defect(layer: BoundaryLayer1D, values) -> tuple:
    """Both sides of ``|m w - w(boundary)|^p <= eps^(p-1) int_collar |w'|^p``, per end.

    Returns ``((lhs_left, rhs_left), (lhs_right, rhs_right))``.
    """
    w = np.asarray(values, dtype=float)
    h, k, p = 1.0 / layer.M, layer.k, layer.p
    slopes = np.abs(np.diff(w)) / h
    out = []
    for side, ends in (("left", (0, slice(0, k))), ("right", (-1, slice(layer.M - k, layer.M)))):
        mean = layer.layer_averaging_weights(side) @ w
        lhs = abs(mean - w[ends[0]]) ** p
        rhs = layer.eps ** (p - 1) * float(np.sum(h * slopes[ends[1]] ** p))
        out.append((lhs, rhs))
    return tuple(out)


def thin_energy_ratio(thin: ThinSlab2D, samples: int = 50, seed: int = 0) -> float:
    """Largest observed ``E_0(L w) / E_eps(w)`` over random smooth-plus-noise states."""
    con = vertical_average_connector(thin)
    limit = thin.limit_energy()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        w = rng.normal(size=thin.space.dim)
        e = thin.value(w)
        if e > 0:
            worst = max(worst, limit.value(con.apply_values(w)) / e)
    return worst


# -- recovery sequences and the example registry


def mollify_periodic(f: Callable, delta: float, x, nodes: int = 48) -> np.ndarray:
    """``(rho_delta * f)(x)`` on the 1-periodic line with the standard bump, by Gauss-Legendre."""
    s, wq = np.polynomial.legendre.leggauss(nodes)
    bump = np.exp(-1.0 / (1.0 - s * s))
    bump /= np.sum(wq * bump)
    x = np.asarray(x, dtype=float)
    vals = np.array([f(np.mod(x - delta * si, 1.0)) for si in s])
    return np.tensordot(wq * bump, vals, axes=1)


@dataclass(frozen=True)
class Level:
    """One sweep point: the energy, connector and recovery state at that parameter."""

    param: float
    energy: EnergySpec
    connector: LinearConnector
    recovery: np.ndarray


class MoscoExample:
    """Sweep description: limit data plus a constructor for each level."""

    name: str
    params: tuple
    lam: float

    def level(self, param) -> Level:  # pragma: no cover - abstract
        raise NotImplementedError

    def limit_state(self) -> np.ndarray:
        raise NotImplementedError

    def limit_energy_value(self, x) -> float:
        raise NotImplementedError

    def limit_resolvent(self, lam, opts) -> np.ndarray:
        raise NotImplementedError


class GraphExample(MoscoExample):
    """Torus graphs ``eps = 1/m`` to the continuum, p = 2, data ``cos(2 pi x)``."""

    def __init__(self, ms=(8, 16, 32), R=None, delta_power=0.5, lam=0.1, n=1):
        if n != 1:
            raise ContractViolation("the graph recovery example is one-dimensional")
        self.name = "graph"
        self.ms = tuple(sorted(ms))
        self.params = tuple(sorted((1.0 / m for m in ms), reverse=True))
        self.R = R or 4 * max(ms)
        self.delta_power = delta_power
        self.lam = lam
        self.target = fine_space(1, self.R)
        self.x = np.arange(self.R) / self.R

    @staticmethod
    def profile(x):
        return np.cos(2 * np.pi * x)

    def level(self, eps) -> Level:
        m = int(round(1 / eps))
        grid = TorusGrid(1, m)
        con = graph_p1_connector(grid, self.R)
        delta = eps**self.delta_power
        nodes = grid.node_positions()[:, 0]
        rec = mollify_periodic(self.profile, delta, nodes)
        return Level(eps, GraphPDirichlet(grid, 2.0), con, rec)

    def limit_state(self):
        return self.profile(self.x)

    def limit_energy_value(self, x=None):
        # (1/2) int |d/dx A cos(2 pi x)|^2 = pi^2 A^2 with A read off by projection
        return math.pi**2 if x is None else math.pi**2 * self._amplitude(x) ** 2

    def _amplitude(self, x):
        return 2.0 * float(np.mean(np.asarray(x) * self.profile(self.x)))

    def limit_resolvent(self, lam, opts=None):
        return self.limit_state() / (1.0 + 4 * math.pi**2 * lam)

    def limit_resolvent_energy(self, lam):
        return math.pi**2 / (1.0 + 4 * math.pi**2 * lam) ** 2


class ThinExample(MoscoExample):
    """Thin slabs of thickness ``eps`` with constant vertical extension as recovery."""

    def __init__(self, eps_list=(0.5, 0.25, 0.125), Mx=32, My=8, p=2.0, lam=0.05,
                 g_minus=None, g_plus=None, profile=None):
        self.name = "thin"
        self.profile = profile or (lambda x: np.cos(np.pi * x))
        self.params = tuple(sorted(eps_list, reverse=True))
        self.Mx, self.My, self.p, self.lam = Mx, My, p, lam
        self.g_minus = g_minus or (lambda x: 0.2 * np.sin(2 * np.pi * x))
        self.g_plus = g_plus or (lambda x: 1.0 + 0.3 * np.cos(2 * np.pi * x))
        probe = ThinSlab2D(Mx, My, 1.0, p, self.g_minus, self.g_plus)
        self.limit = probe.limit_energy()
        self.xc = (np.arange(Mx) + 0.5) / Mx

    def level(self, eps) -> Level:
        thin = ThinSlab2D(self.Mx, self.My, eps, self.p, self.g_minus, self.g_plus)
        return Level(eps, thin, vertical_average_connector(thin), thin.extend(self.limit_state()))

    def limit_state(self):
        return self.profile(self.xc)

    def limit_energy_value(self, x):
        return self.limit.value(x)

    def limit_resolvent(self, lam, opts):
        return prox(self.limit, self.limit_state(), lam, opts)[0].values


class LayerExample(MoscoExample):
    """Boundary-layer weights ``1 + 1/eps`` on a collar, limit with dynamic boundary terms."""

    def __init__(self, eps_list=(1 / 8, 1 / 16, 1 / 32), M=256, p=2.0, lam=0.05, profile=None):
        self.name = "boundary-layer"
        self.profile = profile or (lambda x: np.cos(np.pi * x))
        self.params = tuple(sorted(eps_list, reverse=True))
        self.M, self.p, self.lam = M, p, lam
        self.limit = DynamicBC1D(M, p, 1.0)
        self.x = np.arange(M + 1) / M

    def bulk(self):
        return self.profile(self.x)

    def level(self, eps) -> Level:
        layer = BoundaryLayer1D.from_width(self.M, eps, self.p)
        return Level(eps, layer, boundary_layer_connector(layer), self.bulk())

    def limit_state(self):
        return self.limit.pack(self.bulk()).values

    def limit_energy_value(self, x):
        return self.limit.value(x)

    def limit_resolvent(self, lam, opts):
        return prox(self.limit, self.limit_state(), lam, opts)[0].values


class TauExample(MoscoExample):
    """Dynamic boundary conditions with ``tau -> 0`` (Neumann) or ``tau -> inf`` (Dirichlet)."""

    def __init__(self, mode="to_neumann", taus=None, M=64, p=2.0, lam=0.05, profile=None):
        if mode not in ("to_neumann", "to_dirichlet"):
            raise ContractViolation(f"unknown mode {mode!r}")
        self.name = f"tau-{mode}"
        self.mode = mode
        self.params = tuple(taus or ((1.0, 0.1, 0.01) if mode == "to_neumann" else (1.0, 10.0, 100.0)))
        self.M, self.p, self.lam = M, p, lam
        bc = "neumann" if mode == "to_neumann" else "dirichlet"
        self.limit = Interval1D(M, p, bc)
        self.x = np.arange(M + 1) / M
        # the default lies in the Dirichlet domain, so it serves both limits
        self.profile = profile or (lambda x: np.sin(np.pi * x))

    def limit_state(self):
        return self.profile(self.x)

    def level(self, tau) -> Level:
        energy = DynamicBC1D(self.M, self.p, tau)
        u = self.limit_state()
        trace = (u[0], u[-1]) if self.mode == "to_neumann" else (0.0, 0.0)
        rec = energy.pack(u, trace).values
        return Level(tau, energy, tau_projection_connector(self.M, tau, self.mode), rec)

    def limit_energy_value(self, x):
        return self.limit.value(x)

    def limit_resolvent(self, lam, opts):
        return prox(self.limit, self.limit_state(), lam, opts)[0].values


def recovery_sequence(example: MoscoExample, param) -> StateVector:
    """Recovery state of ``example`` at ``param`` (an ``eps`` or a ``tau``)."""
    lev = example.level(param)
    return StateVector(lev.recovery, lev.energy.space)


@dataclass(frozen=True)
class MoscoRow:
    param: float
    op_norm: float
    h1_margin: float
    rec_state_error: float
    rec_norm_error: float
    rec_energy_error: float
    res_state_error: float
    res_norm_error: float
    res_energy_error: float
    lstar_defect: float


@dataclass(frozen=True)
class MoscoReport:
    example: str
    rows: tuple

    COLUMNS = tuple(f.name for f in fields(MoscoRow))

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def decreasing(self, name, zero_tol: float = 1e-14) -> bool:
        """Strictly decreasing along the sweep, or identically zero."""
        c = self.column(name)
        if np.all(np.abs(c) <= zero_tol):
            return True
        return bool(np.all(np.diff(c) < 0))

    def write_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("example",) + self.COLUMNS)
        for r in self.rows:
            writer.writerow((self.example,) + tuple(repr(float(getattr(r, c))) for c in self.COLUMNS))


def _norm(space: WeightedSpace, x) -> float:
    return weighted_norm(space.weights, x)


@dataclass(frozen=True)
class LimitData:
    """Limit-level quantities shared by every row of a sweep."""

    state: np.ndarray
    energy: float
    resolvent: np.ndarray
    resolvent_energy: float
    lam: float


def limit_data(example: MoscoExample, lam: float | None = None,
               opts: ProxOptions = ProxOptions()) -> LimitData:
    lam = example.lam if lam is None else lam
    w0 = example.limit_state()
    j0 = example.limit_resolvent(lam, opts)
    if isinstance(example, GraphExample):
        ej0 = example.limit_resolvent_energy(lam)
    else:
        ej0 = example.limit_energy_value(j0)
    return LimitData(w0, example.limit_energy_value(w0), j0, ej0, lam)


def mosco_row(lev: Level, limit: LimitData, opts: ProxOptions = ProxOptions(),
              norm_iters: int = 200) -> tuple:
    """Diagnostics at one sweep level; returns ``(row, prox certificate)``."""
    con, E = lev.connector, lev.energy
    tgt, src = con.target, con.source
    w, w0, j0 = lev.recovery, limit.state, limit.resolvent
    nrm = operator_norm_estimate(con, norm_iters).value
    jw, cert = prox(E, w, limit.lam, opts)
    jv = jw.values
    row = MoscoRow(
        param=float(lev.param),
        op_norm=nrm,
        h1_margin=nrm - 1.0,
        rec_state_error=_norm(tgt, con.apply_values(w) - w0),
        rec_norm_error=abs(_norm(src, w) - _norm(tgt, w0)),
        rec_energy_error=abs(E.value(w) - limit.energy),
        res_state_error=_norm(tgt, con.apply_values(jv) - j0),
        res_norm_error=abs(_norm(src, jv) - _norm(tgt, j0)),
        res_energy_error=abs(E.value(jv) - limit.resolvent_energy),
        lstar_defect=lstar_defect(con, w),
    )
    return row, cert


def resolvent_convergence_check(example: MoscoExample, lam: float | None = None,
                                opts: ProxOptions = ProxOptions(), norm_iters: int = 200) -> MoscoReport:
    """One row per sweep level: (H1) norm, (H4) errors, resolvent errors, ``L*L`` defect.

    Rows follow the sweep order, which runs towards the limit (decreasing
    ``eps``, or ``tau`` moving towards 0 or infinity).
    """
    lim = limit_data(example, lam, opts)
    rows = tuple(mosco_row(example.level(param), lim, opts, norm_iters)[0] for param in example.params)
    return MoscoReport(example.name, rows)
