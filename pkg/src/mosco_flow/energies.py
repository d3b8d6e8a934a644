"""Convex energies on weighted spaces.

Two algebraic families cover every model in the package:

* :class:`EdgePowerEnergy`, ``E(x) = (1/p) sum_e c_e |(K x)_e|^p`` where each
  row of ``K`` is a difference ``x[head] - x[tail]`` or a single entry;
* :class:`IsotropicGradientEnergy`, ``E(x) = (1/p) sum_e c_e (a_e^2 + b_e^2)^(p/2)``
  with ``a = Gx x`` and ``b = Gz x`` (two-dimensional gradients).

Affine domain constraints (tied or pinned coordinates) are described by a
sparse matrix ``P`` whose range is the feasible subspace.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .simplex import TorusGrid, all_simplex_vertices, simplex_volume
from .space import ContractViolation, StateVector, WeightedSpace, direct_sum

#: regularisation used inside Newton solves for 1 < p < 2
NEWTON_DELTA = 1e-9


class UnsupportedOperation(NotImplementedError):
    """The requested operation does not exist for this energy (e.g. p = 1 gradients)."""


class EnergyValue(NamedTuple):
    """Extended real value; ``value`` is ``None`` exactly when ``infinite`` is set."""

    value: float | None
    infinite: bool = False

    @property
    def finite(self) -> bool:
        return not self.infinite


class EnergySpec:
    """Base class. Subclasses provide ``_value``, ``_euclid_gradient``, ``_hessian``."""

    space: WeightedSpace
    p: float
    label: str = "energy"
    translation_invariant: bool = False
    reduction = None  # sparse (dim, dim_reduced) or None

    def _check_p(self):
        if not (math.isfinite(self.p) and self.p >= 1):
            raise ContractViolation(f"exponent p={self.p} must be >= 1")

    def _coerce(self, u) -> np.ndarray:
        if isinstance(u, StateVector):
            if not self.space.compatible(u.space):
                raise ContractViolation(
                    f"{self.label} lives on {self.space.label!r}, got {u.space.label!r}"
                )
            return u.values
        x = np.asarray(u, dtype=float)
        if x.shape != (self.space.dim,):
            raise ContractViolation(f"{self.label} expects {self.space.dim} values, got {x.shape}")
        return x

    def feasible(self, x) -> bool:
        if self.reduction is None:
            return True
        x = np.asarray(x, dtype=float)
        y = self.restrict(x)
        scale = 1.0 + float(np.max(np.abs(x), initial=0.0))
        return bool(np.max(np.abs(self.reduction @ y - x), initial=0.0) <= 1e-12 * scale)

    def restrict(self, x) -> np.ndarray:
        """Weighted least-squares coordinates ``y`` with ``P y`` closest to ``x``."""
        P = self.reduction
        W = sparse.diags(self.space.weights)
        return spla.spsolve((P.T @ W @ P).tocsc(), P.T @ (self.space.weights * x))

    def project(self, x) -> np.ndarray:
        """W-orthogonal projection onto the constraint subspace (identity if none)."""
        x = np.asarray(x, dtype=float)
        if self.reduction is None:
            return x.copy()
        return np.asarray(self.reduction @ np.atleast_1d(self.restrict(x)))

    def eval(self, u) -> EnergyValue:
        x = self._coerce(u)
        if not self.feasible(x):
            return EnergyValue(None, True)
        return EnergyValue(self._value(x), False)

    def value(self, u) -> float:
        """Finite value or ``ContractViolation`` when outside the domain."""
        ev = self.eval(u)
        if ev.infinite:
            raise ContractViolation(f"state outside the domain of {self.label}")
        return ev.value

    def gradient(self, u) -> StateVector:
        """Riesz representative of ``DE(u)`` in the weighted inner product.

        For constrained energies the gradient is projected onto the feasible
        subspace, so the directional-derivative identity holds for tangent
        directions.
        """
        if self.p == 1:
            raise UnsupportedOperation("p = 1 energies are not differentiable; use prox certificates")
        x = self._coerce(u)
        if not self.feasible(x):
            raise ContractViolation("gradient requested outside the energy domain")
        g = self._euclid_gradient(x)
        if self.reduction is None:
            return StateVector(g / self.space.weights, self.space)
        P = self.reduction
        W = sparse.diags(self.space.weights)
        y = spla.spsolve((P.T @ W @ P).tocsc(), P.T @ g)
        return StateVector(np.asarray(P @ np.atleast_1d(y)), self.space)

    def hessian(self, x, reg: float = 0.0):
        """Euclidean Hessian (sparse) at ``x``; ``reg`` smooths ``|t|^p`` for p < 2."""
        return self._hessian(np.asarray(x, dtype=float), reg)

    def euclid_gradient(self, x) -> np.ndarray:
        return self._euclid_gradient(np.asarray(x, dtype=float))

    def raw_value(self, x) -> float:
        """Value ignoring domain constraints."""
        return self._value(np.asarray(x, dtype=float))


def incidence_matrix(head, tail, dim: int):
    """Sparse ``K`` with ``(K x)_e = x[head_e] - x[tail_e]`` (``tail_e < 0`` drops the term)."""
    head = np.asarray(head, dtype=np.int64)
    tail = np.asarray(tail, dtype=np.int64)
    E = head.size
    has_tail = tail >= 0
    rows = np.concatenate([np.arange(E), np.arange(E)[has_tail]])
    cols = np.concatenate([head, tail[has_tail]])
    data = np.concatenate([np.ones(E), -np.ones(int(has_tail.sum()))])
    return sparse.csr_matrix((data, (rows, cols)), shape=(E, dim))


class EdgePowerEnergy(EnergySpec):
    """``(1/p) sum_e c_e |x[head_e] - x[tail_e]|^p``.

    Parameters
    ----------
    space : WeightedSpace
    p : float
        Exponent, ``p >= 1``.
    head, tail : array_like of int
        Edge endpoints; ``tail = -1`` marks a one-sided term ``|x[head]|^p``.
    coeff : array_like
        Positive per-edge coefficients (all scaling lives here).
    """

    def __init__(self, space, p, head, tail, coeff, *, label="edge-energy",
                 translation_invariant=None, reduction=None):
        self.space = space
        self.p = float(p)
        self._check_p()
        self.head = np.ascontiguousarray(head, dtype=np.int64)
        self.tail = np.ascontiguousarray(tail, dtype=np.int64)
        self.coeff = np.ascontiguousarray(coeff, dtype=float)
        if not (self.head.shape == self.tail.shape == self.coeff.shape):
            raise ContractViolation("head, tail and coeff must have equal length")
        if np.any(self.coeff <= 0) or not np.all(np.isfinite(self.coeff)):
            raise ContractViolation("edge coefficients must be finite and positive")
        self.K = incidence_matrix(self.head, self.tail, space.dim)
        self.label = label
        if translation_invariant is None:
            translation_invariant = bool(np.all(self.tail >= 0))
        self.translation_invariant = translation_invariant
        self.reduction = reduction

    @property
    def num_edges(self) -> int:
        return self.head.size

    def differences(self, x) -> np.ndarray:
        return self.K @ x

    def _value(self, x):
        d = np.abs(self.K @ x)
        if self.p == 1:
            return float(np.sum(self.coeff * d))
        if self.p == 2:
            return float(0.5 * np.sum(self.coeff * d * d))
        return float(np.sum(self.coeff * d**self.p) / self.p)

    def _euclid_gradient(self, x):
        d = self.K @ x
        flux = self.coeff * np.sign(d) * np.abs(d) ** (self.p - 1)
        return self.K.T @ flux

    def _hessian(self, x, reg):
        d = self.K @ x
        if self.p == 2:
            curv = self.coeff
        else:
            curv = self.coeff * (self.p - 1) * (d * d + reg * reg) ** ((self.p - 2) / 2)
        return (self.K.T @ sparse.diags(curv) @ self.K).tocsr()

    def laplacian(self):
        """``K^T C K``, the Euclidean Hessian of the p = 2 energy."""
        return (self.K.T @ sparse.diags(self.coeff) @ self.K).tocsr()


class IsotropicGradientEnergy(EnergySpec):
    """``(1/p) sum_e c_e (a_e^2 + b_e^2)^(p/2)`` with ``a = Gx x``, ``b = Gz x``."""

    def __init__(self, space, p, Gx, Gz, coeff, *, label="gradient-energy",
                 translation_invariant=True):
        self.space = space
        self.p = float(p)
        self._check_p()
        self.Gx = sparse.csr_matrix(Gx)
        self.Gz = sparse.csr_matrix(Gz)
        self.coeff = np.asarray(coeff, dtype=float)
        self.label = label
        self.translation_invariant = translation_invariant

    def _value(self, x):
        a, b = self.Gx @ x, self.Gz @ x
        s2 = a * a + b * b
        if self.p == 2:
            return float(0.5 * np.sum(self.coeff * s2))
        return float(np.sum(self.coeff * s2 ** (self.p / 2)) / self.p)

    def _euclid_gradient(self, x):
        a, b = self.Gx @ x, self.Gz @ x
        s2 = a * a + b * b
        with np.errstate(divide="ignore"):
            scale = np.where(s2 > 0, s2 ** ((self.p - 2) / 2), 0.0)
        f = self.coeff * scale
        return self.Gx.T @ (f * a) + self.Gz.T @ (f * b)

    def _hessian(self, x, reg):
        a, b = self.Gx @ x, self.Gz @ x
        s2 = a * a + b * b + reg * reg
        if self.p == 2:
            dxx = dzz = self.coeff
            dxz = np.zeros_like(a)
        else:
            base = self.coeff * s2 ** ((self.p - 2) / 2)
            with np.errstate(divide="ignore", invalid="ignore"):
                extra = np.where(s2 > 0, (self.p - 2) * base / s2, 0.0)
            dxx = base + extra * a * a
            dzz = base + extra * b * b
            dxz = extra * a * b
        Gx, Gz = self.Gx, self.Gz
        H = (Gx.T @ sparse.diags(dxx) @ Gx + Gz.T @ sparse.diags(dzz) @ Gz
             + Gx.T @ sparse.diags(dxz) @ Gz + Gz.T @ sparse.diags(dxz) @ Gx)
        return H.tocsr()


# --------------------------------------------------------------------------
# concrete models


class ZeroEnergy(EdgePowerEnergy):
    """``E = 0``; its resolvent is the identity."""

    def __init__(self, space: WeightedSpace):
        empty = np.zeros(0, dtype=np.int64)
        super().__init__(space, 2.0, empty, empty, np.zeros(0), label="zero",
                         translation_invariant=True)


class QuadraticShrink(EdgePowerEnergy):
    """``E(v) = 1/2 ||v||^2`` in the space norm; ``J_lam(w) = w / (1 + lam)``."""

    def __init__(self, space: WeightedSpace):
        idx = np.arange(space.dim)
        super().__init__(space, 2.0, idx, -np.ones(space.dim, dtype=np.int64),
                         space.weights, label="quadratic-shrink", translation_invariant=False)


class GraphPDirichlet(EdgePowerEnergy):
    """``(1/p) sum_{edges} eps^n (|v(z) - v(z')| / eps)^p`` on the torus graph."""

    def __init__(self, grid: TorusGrid, p: float):
        self.grid = grid
        eps, n = grid.eps, grid.n
        e = grid.edges
        coeff = np.full(e.shape[0], eps**n / eps**p)
        super().__init__(grid.space(), p, e[:, 0], e[:, 1], coeff,
                         label=f"graph-p{p:g}-{grid.label}", translation_invariant=True)


def _simplex_edge_table(grid: TorusGrid):
    """Consecutive vertex pairs of every simplex: ``(m^n n!, n)`` heads and tails."""
    verts = all_simplex_vertices(grid)
    return verts[:, 1:], verts[:, :-1]


def eval_orthotropic_on_p1(grid: TorusGrid, p: float, values) -> float:
    """Orthotropic energy ``(1/p) int sum_k |d_k w|^p`` of the P1 interpolant.

    Each simplex carries a constant gradient whose component along the axis
    crossed between vertices ``k-1`` and ``k`` is the vertex difference over
    ``eps``; the integral is that constant times the simplex volume.
    """
    w = np.asarray(values, dtype=float)
    if w.shape != (grid.num_nodes,):
        raise ContractViolation("one value per grid node expected")
    hi, lo = _simplex_edge_table(grid)
    slopes = np.abs(w[hi] - w[lo]) / grid.eps
    vol = simplex_volume(grid)
    per_simplex = np.sum(slopes**p, axis=1) / p
    return float(vol * np.sum(per_simplex))


class OrthotropicP1(EdgePowerEnergy):
    """Continuum orthotropic p-Dirichlet energy restricted to P1 functions on the Kuhn mesh."""

    def __init__(self, grid: TorusGrid, p: float):
        self.grid = grid
        hi, lo = _simplex_edge_table(grid)
        coeff = np.full(hi.size, simplex_volume(grid) / grid.eps**p)
        super().__init__(grid.space(), p, hi.ravel(), lo.ravel(), coeff,
                         label=f"orthotropic-p{p:g}-{grid.label}", translation_invariant=True)

    def _value(self, x):
        return eval_orthotropic_on_p1(self.grid, self.p, x)


# -- one-dimensional models on [0, 1] with M cells, nodes x_i = i h


def lumped_interval_weights(M: int) -> np.ndarray:
    if M < 2:
        raise ContractViolation("need at least two cells")
    h = 1.0 / M
    w = np.full(M + 1, h)
    w[0] = w[-1] = h / 2
    return w


def interval_space(M: int) -> WeightedSpace:
    """Lumped ``L^2(0,1)`` on ``M + 1`` nodes."""
    return WeightedSpace(lumped_interval_weights(M), f"L2(0,1;M={M})")


def _chain(M: int, p: float):
    h = 1.0 / M
    head = np.arange(1, M + 1)
    tail = np.arange(0, M)
    return head, tail, np.full(M, h / h**p)


class Interval1D(EdgePowerEnergy):
    """``(1/p) int_0^1 |u'|^p`` with Neumann or homogeneous Dirichlet conditions.

    For ``p > 1`` the Dirichlet variant pins both end values to zero.  For
    ``p = 1`` it is the relaxed functional ``|Du|(0,1) + |u(0)| + |u(1)|``.
    """

    def __init__(self, M: int, p: float, bc: str = "neumann"):
        if bc not in ("neumann", "dirichlet"):
            raise ContractViolation(f"unknown boundary condition {bc!r}")
        self.M, self.bc = M, bc
        head, tail, coeff = _chain(M, p)
        reduction = None
        if bc == "dirichlet":
            if p == 1:
                head = np.concatenate([head, [0, M]])
                tail = np.concatenate([tail, [-1, -1]])
                coeff = np.concatenate([coeff, [1.0, 1.0]])
            else:
                inner = np.arange(1, M)
                reduction = sparse.csr_matrix(
                    (np.ones(M - 1), (inner, np.arange(M - 1))), shape=(M + 1, M - 1)
                )
        super().__init__(interval_space(M), p, head, tail, coeff,
                         label=f"interval-{bc}-p{p:g}-M{M}",
                         translation_invariant=(bc == "neumann"), reduction=reduction)


def layer_overlap(M: int, k: int) -> np.ndarray:
    """Length of each node's dual cell lying in ``[0, kh) U (1 - kh, 1]``."""
    h = 1.0 / M
    x = np.arange(M + 1) * h
    lo = np.clip(x - h / 2, 0.0, 1.0)
    hi = np.clip(x + h / 2, 0.0, 1.0)
    eps = k * h
    left = np.clip(np.minimum(hi, eps) - lo, 0.0, None)
    right = np.clip(hi - np.maximum(lo, 1.0 - eps), 0.0, None)
    return left + right


class BoundaryLayer1D(EdgePowerEnergy):
    """Neumann ``(1/p) int |u'|^p`` on ``L^2`` weighted by ``1 + 1/eps`` in an ``eps``-collar.

    The layer width is ``eps = k / M`` (``k`` grid steps).
    """

    def __init__(self, M: int, k: int, p: float):
        if not (1 <= k and 2 * k <= M):
            raise ContractViolation(f"layer of {k} cells does not fit {M} cells")
        self.M, self.k = M, k
        self.eps = k / M
        weights = lumped_interval_weights(M) + layer_overlap(M, k) / self.eps
        space = WeightedSpace(weights, f"layer(M={M},k={k})")
        head, tail, coeff = _chain(M, p)
        super().__init__(space, p, head, tail, coeff, label=f"layer-p{p:g}-M{M}-k{k}",
                         translation_invariant=True)

    @classmethod
    def from_width(cls, M: int, eps: float, p: float):
        k = eps * M
        if abs(k - round(k)) > 1e-9:
            raise ContractViolation(f"layer width {eps} is not a multiple of 1/{M}")
        return cls(M, int(round(k)), p)

    def layer_averaging_weights(self, side: str) -> np.ndarray:
        """Trapezoid weights of the mean over the left or right collar (sum to 1)."""
        h = 1.0 / self.M
        w = np.zeros(self.M + 1)
        w[: self.k + 1] = h
        w[0] = w[self.k] = h / 2
        w /= self.eps
        return w if side == "left" else w[::-1].copy()


def dynamic_bc_space(M: int, tau: float) -> WeightedSpace:
    """``L^2(0,1) + tau * counting measure on {0, 1}``; coordinates ``(u_0..u_M, v_-, v_+)``."""
    if not (tau > 0 and math.isfinite(tau)):
        raise ContractViolation("tau must be positive and finite")
    bulk = interval_space(M)
    bdry = WeightedSpace([tau, tau], f"boundary(tau={tau!r})")
    return direct_sum(bulk, bdry, label=f"dynbc(M={M},tau={tau!r})")


class DynamicBC1D(EdgePowerEnergy):
    """Energy of the bulk/boundary pair ``(u, v)``.

    ``p > 1``: ``(1/p) int |u'|^p`` with the trace constraint ``u(0) = v_-``,
    ``u(1) = v_+``.  ``p = 1``: ``|Du| + |u(0) - v_-| + |u(1) - v_+|``.
    """

    def __init__(self, M: int, p: float, tau: float):
        self.M, self.tau = M, float(tau)
        space = dynamic_bc_space(M, tau)
        head, tail, coeff = _chain(M, p)
        reduction = None
        if p == 1:
            head = np.concatenate([head, [0, M]])
            tail = np.concatenate([tail, [M + 1, M + 2]])
            coeff = np.concatenate([coeff, [1.0, 1.0]])
        else:
            rows = np.concatenate([np.arange(M + 1), [M + 1, M + 2]])
            cols = np.concatenate([np.arange(M + 1), [0, M]])
            reduction = sparse.csr_matrix((np.ones(M + 3), (rows, cols)), shape=(M + 3, M + 1))
        super().__init__(space, p, head, tail, coeff, label=f"dynbc-p{p:g}-M{M}-tau{tau:g}",
                         translation_invariant=True, reduction=reduction)

    def pack(self, u, v=None) -> StateVector:
        """State from bulk values; ``v`` defaults to the trace ``(u(0), u(1))``."""
        u = np.asarray(u, dtype=float)
        v = (u[0], u[-1]) if v is None else v
        return StateVector(np.concatenate([u, np.asarray(v, dtype=float)]), self.space)


# -- thin domain


def _derivative(f: Callable, x, step: float = 1e-6):
    return (f(x + step) - f(x - step)) / (2 * step)


def _cell_centers(M: int) -> np.ndarray:
    return (np.arange(M) + 0.5) / M


class Weighted1DLimit(EdgePowerEnergy):
    """``(1/p) int_0^1 g |v'|^p`` on cell centres with weights ``g(x_i) h``."""

    def __init__(self, Mx: int, g: Callable, p: float):
        self.Mx = Mx
        self.g = g
        h = 1.0 / Mx
        x = _cell_centers(Mx)
        gw = np.asarray(g(x), dtype=float)
        if np.any(gw <= 0):
            raise ContractViolation("thickness profile must be positive")
        space = WeightedSpace(gw * h, f"thin-limit(Mx={Mx})")
        faces = np.arange(1, Mx) * h
        coeff = h * np.asarray(g(faces), dtype=float) / h**p
        super().__init__(space, p, np.arange(1, Mx), np.arange(0, Mx - 1), coeff,
                         label=f"thin-limit-p{p:g}-Mx{Mx}", translation_invariant=True)


class ThinSlab2D(IsotropicGradientEnergy):
    """``(1/(eps p)) int_{Omega_eps} |grad u|^p`` pulled back to ``(0,1) x (0,1)``.

    The thin domain is ``{(x, y): eps g_-(x) < y < eps g_+(x)}``; the map
    ``y = eps (z g(x) + g_-(x))`` with ``g = g_+ - g_-`` turns it into the unit
    square.  Unknowns sit at the ``Mx * My`` cell centres (index ``i * My + j``);
    the energy is P1 on the Kuhn triangles of the centre lattice, with
    half-width strips near the sides where the field is extended constantly.
    """

    def __init__(self, Mx: int, My: int, eps: float, p: float,
                 g_minus: Callable, g_plus: Callable):
        if p <= 1:
            raise ContractViolation("the thin-slab energy is implemented for p > 1 only")
        if Mx < 2 or My < 2 or not eps > 0:
            raise ContractViolation("need Mx, My >= 2 and eps > 0")
        self.Mx, self.My, self.eps = Mx, My, float(eps)
        self.g_minus, self.g_plus = g_minus, g_plus
        hx, hz = 1.0 / Mx, 1.0 / My
        self.hx, self.hz = hx, hz

        def g(x):
            return np.asarray(g_plus(x), dtype=float) - np.asarray(g_minus(x), dtype=float)

        self.g = g
        xc = _cell_centers(Mx)
        if np.any(g(xc) <= 0):
            raise ContractViolation("need g_- < g_+")
        weights = np.repeat(g(xc) * hx * hz, My)
        space = WeightedSpace(weights, f"thin(Mx={Mx},My={My},eps={eps!r})")

        idx = np.arange(Mx * My).reshape(Mx, My)
        rows_x, rows_z, coeff = [], [], []
        entries_x, entries_z = [], []  # (row, col, val)
        row = 0

        def add(ax, az, x, z, area):
            # ax / az: list of (node, value) for the reference gradient
            nonlocal row
            gx = float(g(np.array([x]))[0])
            dg = float(_derivative(g, x))
            dgm = float(_derivative(g_minus, x))
            shear = (z * dg + dgm) / gx
            # physical gradient: a = U_x - shear U_z, b = U_z / (eps g)
            for node, val in ax:
                entries_x.append((row, node, val))
            for node, val in az:
                entries_x.append((row, node, -shear * val))
                entries_z.append((row, node, val / (self.eps * gx)))
            coeff.append(area * gx)
            row += 1

        half = hx * hz / 2
        for i in range(Mx - 1):
            xm = (i + 1) * hx
            for j in range(My - 1):
                zm = (j + 1) * hz
                a, b = idx[i, j], idx[i + 1, j]
                c, d = idx[i + 1, j + 1], idx[i, j + 1]
                # lower triangle (i,j),(i+1,j),(i+1,j+1)
                add([(b, 1 / hx), (a, -1 / hx)], [(c, 1 / hz), (b, -1 / hz)], xm, zm, half)
                # upper triangle (i,j),(i,j+1),(i+1,j+1)
                add([(c, 1 / hx), (d, -1 / hx)], [(d, 1 / hz), (a, -1 / hz)], xm, zm, half)
            # bottom and top strips: vertical derivative vanishes
            add([(idx[i + 1, 0], 1 / hx), (idx[i, 0], -1 / hx)], [], xm, hz / 4, half)
            add([(idx[i + 1, My - 1], 1 / hx), (idx[i, My - 1], -1 / hx)], [], xm, 1 - hz / 4, half)
        for j in range(My - 1):
            zm = (j + 1) * hz
            for col, xm in ((0, hx / 4), (Mx - 1, 1 - hx / 4)):
                add([], [(idx[col, j + 1], 1 / hz), (idx[col, j], -1 / hz)], xm, zm, half)

        def assemble(entries):
            r, cidx, v = zip(*entries)
            return sparse.csr_matrix((v, (r, cidx)), shape=(row, Mx * My))

        super().__init__(space, p, assemble(entries_x), assemble(entries_z), np.array(coeff),
                         label=f"thin-p{p:g}-Mx{Mx}-My{My}-eps{eps:g}")

    def limit_energy(self) -> Weighted1DLimit:
        return Weighted1DLimit(self.Mx, self.g, self.p)

    def extend(self, profile) -> np.ndarray:
        """Constant vertical extension of a column profile."""
        return np.repeat(np.asarray(profile, dtype=float), self.My)
