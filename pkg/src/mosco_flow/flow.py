"""Minimizing movements and trajectory comparison.

``u_k = J_{T/N}(u_{k-1})`` from ``u_0``, interpolated affinely in time.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .energies import EnergySpec
from .prox import ProxFailure, ProxOptions, prox
from .space import ContractViolation, StateVector, WeightedSpace


class FlowFailure(RuntimeError):
    """A prox step failed; ``partial`` holds the states computed so far."""

    def __init__(self, message, partial: "Trajectory", cause: ProxFailure):
        super().__init__(message)
        self.partial = partial
        self.cause = cause


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-affine path ``t -> u(t)`` through ``states`` at ``times``."""

    space: WeightedSpace
    times: np.ndarray
    states: np.ndarray  # (len(times), dim)
    prox_iterations: int = 0  # solver iterations spent producing the path

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        s = np.array(self.states, dtype=float)
        if t.ndim != 1 or t.size < 1 or s.shape != (t.size, self.space.dim):
            raise ContractViolation("times/states shape mismatch")
        if np.any(np.diff(t) <= 0):
            raise ContractViolation("times must be strictly increasing")
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def N(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def state(self, k: int) -> StateVector:
        return StateVector(self.states[k], self.space)

    def at(self, t: float) -> np.ndarray:
        """Affine interpolation between the neighbouring nodes."""
        times = self.times
        if t <= times[0]:
            return self.states[0].copy()
        if t >= times[-1]:
            return self.states[-1].copy()
        k = int(np.searchsorted(times, t, side="right")) - 1
        theta = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - theta) * self.states[k] + theta * self.states[k + 1]

    def sample(self, ts) -> np.ndarray:
        return np.stack([self.at(float(t)) for t in ts])


@dataclass(frozen=True, eq=False)
class FlowRunSpec:
    energy: EnergySpec
    u0: StateVector
    T: float
    N: int
    opts: ProxOptions = field(default_factory=ProxOptions)
    lam_init: float | None = None

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ContractViolation("T must be positive")
        if self.N < 1:
            raise ContractViolation("N must be >= 1")
        u0 = self.u0
        if not isinstance(u0, StateVector):
            u0 = StateVector(u0, self.energy.space)
            object.__setattr__(self, "u0", u0)
        if not self.energy.space.compatible(u0.space):
            raise ContractViolation("initial state does not live in the energy's space")

    @property
    def step(self) -> float:
        return self.T / self.N

    def with_steps(self, N: int) -> "FlowRunSpec":
        return FlowRunSpec(self.energy, self.u0, self.T, N, self.opts, self.lam_init)


def initial_state(run: FlowRunSpec) -> StateVector:
    """``u0``, or ``J_lam(u0)`` when an initial regularisation is configured."""
    if run.lam_init:
        v, _ = prox(run.energy, run.u0, run.lam_init, run.opts)
        return v
    return run.u0


def _iterate(energy, u, lam, steps, opts):
    """Apply ``J_lam`` ``steps`` times; returns ``(states, iterations, failure or None)``."""
    states = [u.values]
    dual = None
    its = 0
    for _ in range(steps):
        try:
            u, cert = prox(energy, u, lam, opts, initial=u.values, dual_initial=dual)
        except ProxFailure as exc:
            return states, its + exc.iterations, exc
        dual = cert.dual
        its += cert.iterations
        states.append(u.values)
    return states, its, None


def minimizing_movements(run: FlowRunSpec) -> Trajectory:
    """``N`` warm-started resolvent steps of size ``T / N``."""
    u = initial_state(run)
    states, its, err = _iterate(run.energy, u, run.step, run.N, run.opts)
    times = np.arange(len(states)) * run.step
    times[-1] = run.T if err is None else times[-1]
    traj = Trajectory(run.energy.space, times, np.array(states), its)
    if err is not None:
        raise FlowFailure(f"step {len(states)} of {run.N} failed: {err}", traj, err)
    return traj


def implicit_euler_chain(run: FlowRunSpec, t: float) -> StateVector:
    """``(J_{t/N})^N u0``, the fixed-``N`` approximation of ``S(t) u0``."""
    if not 0 <= t <= run.T:
        raise ContractViolation("t must lie in [0, T]")
    u = initial_state(run)
    if t == 0:
        return u
    states, _, err = _iterate(run.energy, u, t / run.N, run.N, run.opts)
    if err is not None:
        raise err
    return StateVector(states[-1], run.energy.space)


def energy_profile(energy: EnergySpec, traj: Trajectory) -> np.ndarray:
    return np.array([energy.value(traj.states[k]) for k in range(traj.N + 1)])


# -- comparisons


def _breakpoints(*objs, extra: int = 0, T: float | None = None) -> np.ndarray:
    pts = [o.times for o in objs if isinstance(o, Trajectory)]
    if T is None:
        T = max(o.T for o in objs if isinstance(o, Trajectory))
    if extra:
        pts.append(np.linspace(0.0, T, extra + 1))
    return np.unique(np.concatenate(pts))


@dataclass(frozen=True)
class NSVReport:
    N: int
    N_ref: int
    sup_error_sq: float
    bound: float
    budget: float

    @property
    def holds(self) -> bool:
        return self.sup_error_sq <= self.bound + self.budget


def nsv_bound_check(run: FlowRunSpec, reference: Trajectory, traj: Trajectory | None = None) -> NSVReport:
    """Check ``max_t ||u(t) - u^N(t)||^2 <= E(u0) / N`` against a refined reference.

    The reference's own error is budgeted as ``2 E(u0) / N_ref`` plus a
    rounding floor ``(64 eps_mach ||u0||)^2``.  Both paths
    are piecewise affine, so the maximum over the union of breakpoints is the
    exact supremum.
    """
    if traj is None:
        traj = minimizing_movements(run)
    e0 = run.energy.value(initial_state(run))
    ts = _breakpoints(traj, reference)
    W = run.energy.space.weights
    diff = traj.sample(ts) - reference.sample(ts)
    sup_sq = float(np.max(np.sum(W * diff * diff, axis=1)))
    u0 = run.u0.values
    floor = (64 * np.finfo(float).eps) ** 2 * float(np.sum(W * u0 * u0))
    return NSVReport(run.N, reference.N, sup_sq, e0 / run.N, 2.0 * e0 / reference.N + floor)


def flow_distance(connector, traj_eps: Trajectory, traj_0, samples: int | None = None,
                  T: float | None = None):
    """Sup over time of ``||L u_eps(t) - u_0(t)||`` and of the norm mismatch.

    Parameters
    ----------
    connector : LinearConnector
        Maps ``traj_eps.space`` into the limit space.
    traj_eps : Trajectory
    traj_0 : Trajectory or callable
        Limit path; a callable ``t -> values`` in the target space is allowed.
    samples : int, optional
        Uniform sample count; defaults to ``4 * max(N)``.

    Returns
    -------
    (sup_state_error, sup_norm_error)
    """
    if not connector.source.compatible(traj_eps.space):
        raise ContractViolation("connector source does not match the trajectory space")
    if isinstance(traj_0, Trajectory):
        if not connector.target.compatible(traj_0.space):
            raise ContractViolation("connector target does not match the limit trajectory space")
        ref = traj_0.at
        n_max = max(traj_eps.N, traj_0.N)
    else:
        ref = traj_0
        n_max = traj_eps.N
    T = traj_eps.T if T is None else T
    ts = _breakpoints(traj_eps, traj_0, extra=samples or 4 * n_max, T=T)
    ts = ts[ts <= T + 1e-15]
    Ws, Wt = traj_eps.space.weights, connector.target.weights
    state_err = norm_err = 0.0
    for t in ts:
        ue = traj_eps.at(float(t))
        u0 = np.asarray(ref(float(t)), dtype=float)
        d = connector.apply_values(ue) - u0
        state_err = max(state_err, math.sqrt(float(np.sum(Wt * d * d))))
        ne = math.sqrt(float(np.sum(Ws * ue * ue)))
        n0 = math.sqrt(float(np.sum(Wt * u0 * u0)))
        norm_err = max(norm_err, abs(ne - n0))
    return state_err, norm_err


def crandall_liggett_check(run: FlowRunSpec, reference: Callable) -> tuple:
    """p = 2 only: ``||S(T) u0 - (J_{T/N})^N u0|| <= 2 T N^{-1/2} ||A u0||``.

    Returns ``(observed, bound)``.
    """
    if run.energy.p != 2:
        raise ContractViolation("the minimal-section estimate is implemented for p = 2 only")
    u0 = initial_state(run)
    approx = implicit_euler_chain(run, run.T).values
    W = run.energy.space.weights
    d = approx - np.asarray(reference(run.T), dtype=float)
    g = run.energy.gradient(u0).values
    observed = math.sqrt(float(np.sum(W * d * d)))
    bound = 2 * run.T / math.sqrt(run.N) * math.sqrt(float(np.sum(W * g * g)))
    return observed, bound


# -- text serialisation


def dump_trajectory(traj: Trajectory, fh) -> None:
    """Columnar text: comment header, then ``k t_k values...`` per row (repr floats)."""
    fh.write(f"# label={traj.space.label}\n")
    fh.write(f"# N={traj.N} T={traj.T!r}\n")
    fh.write("# weights " + " ".join(repr(float(w)) for w in traj.space.weights) + "\n")
    fh.write("# blocks " + " ".join(str(b) for b in traj.space.blocks) + "\n")
    for k in range(traj.N + 1):
        vals = " ".join(repr(float(x)) for x in traj.states[k])
        fh.write(f"{k} {float(traj.times[k])!r} {vals}\n")


def dumps_trajectory(traj: Trajectory) -> str:
    buf = io.StringIO()
    dump_trajectory(traj, buf)
    return buf.getvalue()


def loads_trajectory(text: str) -> Trajectory:
    label = None
    weights = blocks = None
    times, rows = [], []
    for line in text.splitlines():
        if line.startswith("# label="):
            label = line[len("# label="):]
        elif line.startswith("# weights "):
            weights = [float(x) for x in line.split()[2:]]
        elif line.startswith("# blocks "):
            blocks = tuple(int(x) for x in line.split()[2:])
        elif line.startswith("#") or not line.strip():
            continue
        else:
            parts = line.split()
            times.append(float(parts[1]))
            rows.append([float(x) for x in parts[2:]])
    if label is None or weights is None:
        raise ValueError("trajectory header incomplete")
    space = WeightedSpace(weights, label, blocks or ())
    return Trajectory(space, np.array(times), np.array(rows))
