"""Resolvents ``J_lam(w) = argmin_v lam E(v) + 1/2 ||w - v||^2``.

Each solve returns a certificate:

* p > 1: weighted norm of ``lam grad E(v) + v - w`` (projected onto the
  constraint subspace for constrained energies);
* p = 1: duality gap of the box-constrained edge dual, always paired with a
  dual vector ``z`` with ``|z_e| <= 1``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from . import _kernels
from .energies import NEWTON_DELTA, EdgePowerEnergy, EnergySpec, IsotropicGradientEnergy
from .space import ContractViolation, StateVector, weighted_norm

METHODS = ("auto", "linear", "newton", "dual_projected_gradient")


@dataclass(frozen=True)
class ProxOptions:
    tol: float = 1e-10
    max_iter: int = 100_000
    method: str = "auto"

    def __post_init__(self):
        if not self.tol > 0:
            raise ContractViolation("tol must be positive")
        if self.max_iter < 1:
            raise ContractViolation("max_iter must be >= 1")
        if self.method not in METHODS:
            raise ContractViolation(f"unknown prox method {self.method!r}")


@dataclass(frozen=True)
class ProxCertificate:
    residual: float
    iterations: int
    method_used: str
    dual: np.ndarray | None = field(default=None, repr=False)
    polished: bool = False


class ProxFailure(RuntimeError):
    """Solver stopped before reaching the tolerance; carries the best iterate."""

    def __init__(self, message, best: StateVector, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.best = best
        self.residual = residual
        self.iterations = iterations


def _coerce_state(spec: EnergySpec, w) -> StateVector:
    if isinstance(w, StateVector):
        if not spec.space.compatible(w.space):
            raise ContractViolation(f"{spec.label} lives on {spec.space.label!r}, got {w.space.label!r}")
        return w
    return StateVector(w, spec.space)


def _select_method(spec: EnergySpec, method: str) -> str:
    if method != "auto":
        if method == "dual_projected_gradient" and (spec.p != 1 or not isinstance(spec, EdgePowerEnergy)):
            raise ContractViolation("the dual solver needs an edge energy with p = 1")
        if method == "linear" and spec.p != 2:
            raise ContractViolation("the linear solver needs p = 2")
        if spec.p == 1 and method != "dual_projected_gradient":
            raise ContractViolation("p = 1 energies need the dual solver")
        return method
    if spec.p == 1:
        return "dual_projected_gradient"
    return "linear" if spec.p == 2 else "newton"


def prox(spec: EnergySpec, w, lam: float, opts: ProxOptions = ProxOptions(), *,
         initial=None, dual_initial=None):
    """Resolvent of ``spec`` at ``w`` with step ``lam``.

    Parameters
    ----------
    spec : EnergySpec
    w : StateVector or array_like
    lam : float
        Step size, strictly positive.
    opts : ProxOptions
    initial : array_like, optional
        Warm start for the primal iterate (p > 1).
    dual_initial : array_like, optional
        Warm start for the edge dual (p = 1).

    Returns
    -------
    (StateVector, ProxCertificate)
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise ContractViolation(f"step lambda={lam} must be positive")
    w = _coerce_state(spec, w)
    method = _select_method(spec, opts.method)
    if isinstance(spec, EdgePowerEnergy) and spec.num_edges == 0:
        return w, ProxCertificate(0.0, 0, method)
    if method == "dual_projected_gradient":
        return _prox_tv(spec, w, lam, opts, dual_initial)
    return _prox_smooth(spec, w, lam, opts, method, initial)


# --------------------------------------------------------------------------
# p > 1


class _Reduced:
    """Problem restricted to the feasible subspace ``v = P y``."""

    def __init__(self, spec: EnergySpec, w: np.ndarray):
        self.spec = spec
        W = spec.space.weights
        P = spec.reduction
        self.P = P
        if P is None:
            self.weights = W
            self.target = w
        else:
            self.weights = np.asarray(P.T @ W)  # P has one nonzero per row
            self.target = np.asarray(P.T @ (W * w)) / self.weights

    def lift(self, y):
        return y if self.P is None else np.asarray(self.P @ y)

    def restrict_init(self, v):
        if self.P is None:
            return np.array(v, dtype=float)
        return np.asarray(self.P.T @ (self.spec.space.weights * v)) / self.weights

    def grad(self, y):
        g = self.spec.euclid_gradient(self.lift(y))
        return g if self.P is None else np.asarray(self.P.T @ g)

    def hessian(self, y, reg):
        H = self.spec.hessian(self.lift(y), reg)
        return H if self.P is None else (self.P.T @ H @ self.P).tocsr()

    def value(self, y):
        return self.spec.raw_value(self.lift(y))

    def residual(self, y, lam):
        r = lam * self.grad(y) + self.weights * (y - self.target)
        return math.sqrt(float(np.sum(r * r / self.weights)))


def _linear_operator(red: _Reduced, lam: float):
    spec = red.spec
    if isinstance(spec, EdgePowerEnergy) and red.P is None:
        head, tail, c = spec.head, spec.tail, spec.coeff
        W = red.weights
        return lambda y: W * y + lam * _kernels.edge_laplacian_apply(y, head, tail, c)
    A = red.hessian(np.zeros(red.weights.size), 0.0)
    W = red.weights
    return lambda y: W * y + lam * (A @ y)


def _diag_hessian(red: _Reduced) -> np.ndarray:
    return red.hessian(np.zeros(red.weights.size), 0.0).diagonal()


def _pcg(apply, rhs, x0, precond, weights, tol, max_iter):
    """Jacobi-preconditioned conjugate gradients; stops on ``||r||_{W^-1} <= tol``."""
    x = x0.copy()
    r = rhs - apply(x)
    z = r / precond
    d = z.copy()
    rz = float(np.dot(r, z))
    it = 0
    res = math.sqrt(float(np.sum(r * r / weights)))
    while res > tol and it < max_iter:
        Ad = apply(d)
        alpha = rz / float(np.dot(d, Ad))
        x += alpha * d
        r -= alpha * Ad
        it += 1
        if it % 50 == 0:
            r = rhs - apply(x)  # limit drift of the recursive residual
        z = r / precond
        rz_new = float(np.dot(r, z))
        d = z + (rz_new / rz) * d
        rz = rz_new
        res = math.sqrt(float(np.sum(r * r / weights)))
    return x, res, it


def _prox_smooth(spec, w, lam, opts, method, initial):
    red = _Reduced(spec, w.values)
    y0 = red.restrict_init(w.values if initial is None else np.asarray(initial, dtype=float))
    if method == "linear":
        apply = _linear_operator(red, lam)
        precond = red.weights + lam * _diag_hessian(red)
        y, _, it = _pcg(apply, red.weights * red.target, y0, precond, red.weights,
                        opts.tol, opts.max_iter)
        res = red.residual(y, lam)
        if res > opts.tol:
            # one refinement pass against the exact residual
            y, _, it2 = _pcg(apply, red.weights * red.target, y, precond, red.weights,
                             opts.tol / 4, opts.max_iter)
            it += it2
            res = red.residual(y, lam)
    else:
        y, res, it = _newton_scaled(red, lam, y0, opts)
    v = StateVector(red.lift(y), spec.space)
    if not res <= opts.tol:
        raise ProxFailure(f"{method} solve of {spec.label} did not converge", v, res, it)
    return v, ProxCertificate(res, it, method)


def _newton_scaled(red: _Reduced, lam, y0, opts):
    """Newton on the recentred problem brought to unit scale.

    Edge energies are p-homogeneous, so with ``y = c + s z`` the objective is
    ``s^2 [lam s^(p-2) E(z) + |z - (t - c) / s|^2 / 2]``, where the shift ``c``
    is used only when constants are free directions.  Residuals scale by
    ``s``.  At unit scale the kink of ``|d|^(p-1)`` stays resolvable when the
    data is nearly flat, as it is just before extinction.  The returned
    residual is that of ``c + s z`` in exact arithmetic.
    """
    t, W = red.target, red.weights
    free = red.spec.translation_invariant and (
        red.P is None or np.allclose(red.P @ np.ones(red.P.shape[1]), 1.0))
    shift = float(np.sum(W * t) / np.sum(W)) if free else 0.0
    scale = float(np.max(np.abs(t - shift)))
    if scale == 0.0:
        return np.full_like(t, shift), 0.0, 0
    unit = copy.copy(red)
    unit.target = (t - shift) / scale
    p = red.spec.p
    solver = _dual_newton if (1 < p < 2 and isinstance(red.spec, EdgePowerEnergy)) else _newton
    z, res, it = solver(unit, lam * scale ** (p - 2), (y0 - shift) / scale,
                        replace(opts, tol=opts.tol / scale))
    return shift + scale * z, scale * res, it


def _newton(red: _Reduced, lam, y, opts):
    W, t = red.weights, red.target

    def objective(yy):
        diff = yy - t
        return lam * red.value(yy) + 0.5 * float(np.sum(W * diff * diff))

    def gradient(yy):
        return lam * red.grad(yy) + W * (yy - t)

    def resnorm(g):
        return math.sqrt(float(np.sum(g * g / W)))

    reg = NEWTON_DELTA if red.spec.p < 2 else 0.0
    f, g = objective(y), gradient(y)
    res = resnorm(g)
    it = 0
    while res > opts.tol and it < opts.max_iter:
        H = (lam * red.hessian(y, reg) + sparse.diags(W)).tocsc()
        step = -spla.spsolve(H, g)
        slope = float(np.dot(g, step))
        alpha = 1.0
        while True:
            y_new = y + alpha * step
            f_new = objective(y_new)
            g_new = gradient(y_new)
            res_new = resnorm(g_new)
            # Armijo, or plain residual decrease once values stop resolving
            if f_new <= f + 1e-4 * alpha * slope or res_new < 0.5 * res:
                break
            alpha *= 0.5
            if alpha < 1e-12:
                return y, res, it
        y, f, g, res = y_new, f_new, g_new, res_new
        it += 1
    return y, res, it


def _dual_newton(red: _Reduced, lam, y, opts):
    """Newton on the edge-flux dual, for edge energies with ``1 < p < 2``.

    With ``q = |d|^(p-2) d`` the primal is ``v = t - lam W^-1 K^T (c q)`` and
    ``q`` minimises ``lam/2 |W^-1/2 K^T c q|^2 - (c q).K t + sum c |q|^r / r``
    with ``r = p / (p - 1) > 2``, whose Hessian stays bounded where the primal
    one blows up (flat edges).  Stops on the primal residual.
    """
    spec = red.spec
    K = spec.K if red.P is None else (spec.K @ red.P).tocsr()
    c, W, t = spec.coeff, red.weights, red.target
    p = spec.p
    r = p / (p - 1)
    CK = sparse.diags(c) @ K
    A = (CK @ sparse.diags(1.0 / W) @ CK.T).tocsc()
    b = CK @ t

    def primal(q):
        return t - lam * (K.T @ (c * q)) / W

    def objective(q):
        return 0.5 * lam * float(q @ (A @ q)) - float(b @ q) + float(np.sum(c * np.abs(q) ** r)) / r

    def gradient(q):
        return lam * (A @ q) - b + c * np.abs(q) ** (r - 1) * np.sign(q)

    def residual(q):
        v = primal(q)
        return red.residual(v, lam), v

    d = K @ y
    q = np.abs(d) ** (p - 1) * np.sign(d)
    res, v = residual(q)
    f, g = objective(q), gradient(q)
    reg = 1e-14 * (1.0 + float(A.diagonal().max()) * lam)
    it = 0
    while res > opts.tol and it < opts.max_iter:
        H = (lam * A + sparse.diags(c * (r - 1) * np.abs(q) ** (r - 2) + reg)).tocsc()
        step = -spla.spsolve(H, g)
        slope = float(g @ step)
        if -slope <= 1e-15 * (1.0 + abs(f)):
            break  # dual converged to rounding; the primal polish below finishes
        alpha = 1.0
        while True:
            q_new = q + alpha * step
            f_new = objective(q_new)
            if f_new <= f + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-12:
                break
        if alpha < 1e-12:
            break
        q, f, g = q_new, f_new, gradient(q_new)
        res, v = residual(q)
        it += 1
    if res > opts.tol:
        # polish with primal Newton from the dual estimate
        v2, res2, it2 = _newton(red, lam, v, replace(opts, max_iter=max(1, opts.max_iter - it)))
        if res2 < res:
            v, res = v2, res2
        it += it2
    return v, res, it


# --------------------------------------------------------------------------
# p = 1


def dual_lipschitz(spec: EdgePowerEnergy, iters: int = 200) -> float:
    """``mu ~ ||C K W^{-1/2}||^2`` by power iteration, inflated 5 % and capped by Gershgorin."""
    cached = getattr(spec, "_dual_mu", None)
    if cached is not None:
        return cached
    W = spec.space.weights
    B = (sparse.diags(W**-0.5) @ spec.K.T @ sparse.diags(spec.coeff**2) @ spec.K
         @ sparse.diags(W**-0.5)).tocsr()
    gersh = float(np.max(np.asarray(abs(B).sum(axis=1)).ravel()))
    x = np.cos(np.arange(W.size) * 1.234567) + 0.5
    est = 0.0
    for _ in range(iters):
        y = B @ x
        nrm = float(np.linalg.norm(y))
        if nrm == 0.0:
            break
        est = float(np.dot(x, y) / np.dot(x, x))
        x = y / nrm
    mu = min(1.05 * est, gersh) if est > 0 else gersh
    spec._dual_mu = mu
    return mu


def _tv_parts(spec: EdgePowerEnergy, w, lam, z):
    """Primal point ``v(z)``, its edge differences and the duality gap."""
    W = spec.space.weights
    v = w - lam * (spec.K.T @ (spec.coeff * z)) / W
    d = spec.K @ v
    gap = lam * float(np.sum(spec.coeff * (np.abs(d) - z * d)))
    return v, d, gap


def tv_primal_dual_gap(spec: EdgePowerEnergy, w, lam, v, z) -> float:
    """``P(v) - D(z)`` for an arbitrary primal/dual pair."""
    W = spec.space.weights
    primal = lam * float(np.sum(spec.coeff * np.abs(spec.K @ v))) + 0.5 * float(np.sum(W * (v - w) ** 2))
    q = spec.K.T @ (spec.coeff * z)
    dual = lam * float(np.dot(spec.coeff * z, spec.K @ w)) - 0.5 * lam * lam * float(np.sum(q * q / W))
    return primal - dual


def _polish(spec: EdgePowerEnergy, w, lam, d_approx, z_approx, eta):
    """Exact solve on a guessed support: edges with ``|d| <= eta`` are flat.

    Plateau values follow in closed form.  The flat-edge dual is the
    approximate one plus the least-norm correction restoring stationarity, so
    any circulation picked up by the iteration is kept.

    Returns ``(v, z)`` or ``None`` when the guess fails the KKT check.
    """
    W = spec.space.weights
    dim = W.size
    ground = dim
    head = spec.head
    tail = np.where(spec.tail >= 0, spec.tail, ground)
    flat = np.abs(d_approx) <= eta
    sign = np.sign(d_approx)
    sat = ~flat
    # contribution of saturated edges
    flux_sat = np.where(sat, spec.coeff * sign, 0.0)
    a = w - lam * (spec.K.T @ flux_sat) / W
    # merge nodes joined by flat edges; the ground node pins one-sided terms to 0
    fh, ft = head[flat], tail[flat]
    adj = sparse.coo_matrix((np.ones(fh.size), (fh, ft)), shape=(dim + 1, dim + 1))
    ncomp, comp = csgraph.connected_components(adj, directed=False)
    mass = np.bincount(comp[:dim], weights=W, minlength=ncomp)
    moment = np.bincount(comp[:dim], weights=W * a, minlength=ncomp)
    level = np.divide(moment, mass, out=np.zeros(ncomp), where=mass > 0)
    level[comp[ground]] = 0.0
    v = level[comp[:dim]]
    # flux on flat edges must satisfy K_F^T y = W (a - v) / lam
    r = np.append(W * (a - v) / lam, 0.0)
    r[ground] = -np.sum(r[:dim][comp[:dim] == comp[ground]])
    z = sign.copy()
    if fh.size:
        Kf = sparse.csr_matrix(
            (np.concatenate([np.ones(fh.size), -np.ones(fh.size)]),
             (np.concatenate([np.arange(fh.size)] * 2), np.concatenate([fh, ft]))),
            shape=(fh.size, dim + 1),
        )
        # one pinned node per component (the ground node for its own component)
        _, rep = np.unique(comp, return_index=True)
        rep[comp[ground]] = ground
        pin = np.zeros(dim + 1)
        pin[rep] = 1.0
        L = (Kf.T @ Kf + sparse.diags(pin)).tocsc()
        y0 = spec.coeff[flat] * z_approx[flat]
        pot = spla.spsolve(L, r - Kf.T @ y0)
        zf = (y0 + Kf @ pot) / spec.coeff[flat]
        if np.max(np.abs(zf), initial=0.0) > 1.0 + 1e-9:
            return None
        z[flat] = np.clip(zf, -1.0, 1.0)
    d = spec.K @ v
    scale = 1.0 + float(np.max(np.abs(v), initial=0.0))
    if np.any(sign[sat] * d[sat] < -1e-12 * scale):
        return None
    if np.any(np.abs(d[flat]) > 1e-12 * scale):
        return None
    return v, z


def _try_polish(spec, w, lam, d, z, tol):
    # flatness thresholds relative to the differences of the input
    scale = float(np.max(np.abs(spec.K @ w), initial=0.0)) + float(np.max(np.abs(d), initial=0.0))
    floor = 1e-14 * (1.0 + float(np.max(np.abs(w), initial=0.0)))
    for rel in (1e-12, 1e-10, 1e-8, 1e-6, 1e-4):
        out = _polish(spec, w, lam, d, z, rel * scale + floor)
        if out is not None:
            pv, pz = out
            pgap = abs(tv_primal_dual_gap(spec, w, lam, pv, pz))
            if pgap <= tol:
                return pv, pz, pgap
    return None


def _prox_tv(spec: EdgePowerEnergy, w, lam, opts, dual_initial):
    W = spec.space.weights
    winv = 1.0 / W
    wv = np.ascontiguousarray(w.values, dtype=float)
    mu = dual_lipschitz(spec)
    z = (np.zeros(spec.num_edges) if dual_initial is None
         else np.clip(np.array(dual_initial, dtype=float), -1.0, 1.0))
    z = np.ascontiguousarray(z)
    _, d, gap = _tv_parts(spec, wv, lam, z)
    total = 0
    target = max(opts.tol, gap * 1e-3)
    # after reaching tol, a few tighter stages give the support guess another chance
    extra_budget = None
    while True:
        budget = opts.max_iter - total
        if extra_budget is not None:
            budget = min(budget, extra_budget)
        if gap > target and budget > 0:
            it, gap = _kernels.tv_dual_fista(wv, winv, spec.head, spec.tail, spec.coeff,
                                             lam, lam * lam * mu, z, budget, 20, target)
            total += it
            if extra_budget is not None:
                extra_budget -= it
        v, d, gap = _tv_parts(spec, wv, lam, z)
        out = _try_polish(spec, wv, lam, d, z, opts.tol)
        if out is not None:
            pv, pz, pgap = out
            return (StateVector(pv, spec.space),
                    ProxCertificate(pgap, total, "dual_projected_gradient", pz, True))
        if gap <= opts.tol:
            if extra_budget is None:
                extra_budget = 2000
            if extra_budget <= 0 or target <= opts.tol * 1e-6:
                return (StateVector(v, spec.space),
                        ProxCertificate(gap, total, "dual_projected_gradient", z.copy(), False))
        elif total >= opts.max_iter:
            raise ProxFailure(f"dual solve of {spec.label} did not converge",
                              StateVector(v, spec.space), gap, total)
        target = target * 1e-3 if gap <= opts.tol else max(opts.tol, target * 1e-3)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NonexpansiveReport:
    input_distance: float
    output_distance: float
    holds: bool

    @property
    def slack(self) -> float:
        return self.input_distance - self.output_distance


def prox_nonexpansive_check(spec, w1, w2, lam, opts: ProxOptions = ProxOptions()):
    """Compare ``||J w1 - J w2||`` with ``||w1 - w2||`` (factor ``1 + 10 tol`` allowed)."""
    w1, w2 = _coerce_state(spec, w1), _coerce_state(spec, w2)
    v1, _ = prox(spec, w1, lam, opts)
    v2, _ = prox(spec, w2, lam, opts)
    W = spec.space.weights
    din = weighted_norm(W, w1.values - w2.values)
    dout = weighted_norm(W, v1.values - v2.values)
    return NonexpansiveReport(din, dout, dout <= din * (1 + 10 * opts.tol))


def optimality_residual(spec: EnergySpec, w, v, lam) -> float:
    """``||lam grad E(v) + v - w||`` in the space norm (tangent part for constrained energies)."""
    w = _coerce_state(spec, w)
    v = _coerce_state(spec, v)
    g = spec.gradient(v).values
    diff = spec.project(v.values - w.values)
    return weighted_norm(spec.space.weights, lam * g + diff)


def minimal_section_norm(spec: EnergySpec, v) -> float:
    """Norm of the least-norm subgradient for smooth (p > 1) energies.

    For p > 1 the subdifferential is the single gradient, so this is its
    weighted norm.  Offered as a diagnostic only.
    """
    v = _coerce_state(spec, v)
    g = spec.gradient(v)
    return weighted_norm(spec.space.weights, g.values)
