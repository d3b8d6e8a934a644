"""Kuhn (Freudenthal) triangulation of the discrete torus ``(Z/m)^n``.

The unit cube is split into the ``n!`` simplices
``{0 <= x[perm[0]] <= x[perm[1]] <= ... <= x[perm[n-1]] <= 1}``; translating
each by every grid node (scaled by ``eps = 1/m``) triangulates the torus.
Walking from the lowest vertex to the highest, a simplex steps along
``perm[n-1]`` first and along ``perm[0]`` last.

Nodes are indexed lexicographically (coordinate 0 most significant).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .space import ContractViolation, WeightedSpace

MAX_DIM = 4


@dataclass(frozen=True)
class TorusGrid:
    """Periodic lattice with ``m`` nodes per axis in ``n`` dimensions."""

    n: int
    m: int

    def __post_init__(self):
        if not 1 <= self.n <= MAX_DIM:
            raise ContractViolation(f"dimension n={self.n} outside 1..{MAX_DIM}")
        # at m = 2 the two neighbours along an axis coincide and E_eps degenerates
        if self.m < 3:
            raise ContractViolation(f"m={self.m} < 3 is not supported")

    @property
    def eps(self) -> float:
        return 1.0 / self.m

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.n

    @property
    def num_nodes(self) -> int:
        return self.m**self.n

    @property
    def num_edges(self) -> int:
        return self.n * self.m**self.n

    @property
    def num_simplices(self) -> int:
        return self.m**self.n * math.factorial(self.n)

    @property
    def label(self) -> str:
        return f"torus(n={self.n},m={self.m})"

    def space(self) -> WeightedSpace:
        """Node functions with the graph inner product ``sum eps^n v1 v2``."""
        return WeightedSpace(np.full(self.num_nodes, self.eps**self.n), self.label)

    def coords(self, index) -> np.ndarray:
        """Integer lattice coordinates of node ``index`` (array or scalar)."""
        return np.stack(np.unravel_index(np.asarray(index), self.shape), axis=-1)

    def index(self, coords) -> np.ndarray:
        c = np.mod(np.asarray(coords, dtype=np.int64), self.m)
        return np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.shape)

    def node_positions(self) -> np.ndarray:
        """Positions in ``[0, 1)^n`` of all nodes, shape ``(m^n, n)``."""
        return self.coords(np.arange(self.num_nodes)) * self.eps

    @cached_property
    def edges(self) -> np.ndarray:
        """``(n m^n, 2)`` array of nearest-neighbour pairs ``(z, z + e_d)``.

        Ordered node-major, then by axis ``d``.
        """
        z = np.arange(self.num_nodes)
        c = self.coords(z)
        out = np.empty((self.num_nodes, self.n, 2), dtype=np.int64)
        for d in range(self.n):
            shifted = c.copy()
            shifted[:, d] += 1
            out[:, d, 0] = z
            out[:, d, 1] = self.index(shifted)
        return out.reshape(-1, 2)

    @cached_property
    def edge_lookup(self) -> dict:
        return {frozenset(map(int, e)): k for k, e in enumerate(self.edges)}

    @cached_property
    def permutations(self) -> tuple:
        return tuple(itertools.permutations(range(self.n)))


@dataclass(frozen=True)
class SimplexRef:
    """The simplex ``base + eps * Sigma_perm`` of ``grid``."""

    grid: TorusGrid
    base: int
    perm: tuple

    def __post_init__(self):
        if sorted(self.perm) != list(range(self.grid.n)):
            raise ContractViolation(f"{self.perm} is not a permutation of 0..{self.grid.n - 1}")
        if not 0 <= self.base < self.grid.num_nodes:
            raise ContractViolation(f"base node {self.base} out of range")

    @property
    def volume(self) -> float:
        return simplex_volume(self.grid)


@dataclass(frozen=True)
class BarycentricCoords:
    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        if np.any(lam < -1e-12) or np.any(lam > 1 + 1e-12) or abs(lam.sum() - 1.0) > 1e-12:
            raise ContractViolation(f"not barycentric coordinates: {lam}")
        object.__setattr__(self, "lambdas", lam)


def simplex_volume(grid: TorusGrid) -> float:
    """Euclidean volume ``eps^n / n!`` of every simplex of the grid."""
    return grid.eps**grid.n / math.factorial(grid.n)


def step_offsets(n: int, perm) -> np.ndarray:
    """Lattice offsets ``alpha_0 .. alpha_n`` of the simplex ``Sigma_perm``."""
    alpha = np.zeros((n + 1, n), dtype=np.int64)
    for k, axis in enumerate(reversed(perm), start=1):
        alpha[k] = alpha[k - 1]
        alpha[k, axis] = 1
    return alpha


def simplex_vertices(ref: SimplexRef) -> np.ndarray:
    """Node indices of the ``n + 1`` vertices, ordered low to high."""
    g = ref.grid
    return g.index(g.coords(ref.base) + step_offsets(g.n, ref.perm))


def simplex_vertex_positions(ref: SimplexRef) -> np.ndarray:
    """Unwrapped vertex positions (may reach coordinate 1.0), shape ``(n+1, n)``."""
    g = ref.grid
    return (g.coords(ref.base) + step_offsets(g.n, ref.perm)) * g.eps


def enumerate_simplices(grid: TorusGrid) -> list:
    """All ``m^n n!`` simplices, base-major then permutation order."""
    return [
        SimplexRef(grid, z, perm)
        for z in range(grid.num_nodes)
        for perm in grid.permutations
    ]


def all_simplex_vertices(grid: TorusGrid) -> np.ndarray:
    """Vertex table of every simplex, shape ``(m^n n!, n + 1)``.

    Row order matches :func:`enumerate_simplices`.
    """
    base = grid.coords(np.arange(grid.num_nodes))
    offsets = np.stack([step_offsets(grid.n, p) for p in grid.permutations])
    lattice = base[:, None, None, :] + offsets[None, :, :, :]
    return grid.index(lattice).reshape(grid.num_simplices, grid.n + 1)


def locate_many(grid: TorusGrid, x) -> tuple:
    """Vectorised point location.

    Returns
    -------
    verts : ndarray of int, shape (P, n + 1)
        Node indices of the containing simplex, low to high.
    lambdas : ndarray, shape (P, n + 1)
        Barycentric coordinates matching ``verts``.
    bases, perms : ndarray
        Base node per point and the permutation as an ``(P, n)`` array.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != grid.n:
        raise ContractViolation(f"points must have {grid.n} coordinates")
    if not np.all(np.isfinite(x)):
        raise ContractViolation("points must be finite")
    y = np.mod(x, 1.0) * grid.m
    cell = np.floor(y)
    frac = y - cell
    # y can round up to exactly m
    cell = np.mod(cell.astype(np.int64), grid.m)
    # descending fractional parts give the stepping order; stable => ties by axis
    order = np.argsort(-frac, axis=1, kind="stable")
    sorted_frac = np.take_along_axis(frac, order, axis=1)
    P, n = x.shape
    lam = np.empty((P, n + 1))
    lam[:, 0] = 1.0 - sorted_frac[:, 0]
    lam[:, 1:n] = sorted_frac[:, :-1] - sorted_frac[:, 1:]
    lam[:, n] = sorted_frac[:, -1]
    steps = np.zeros((P, n + 1, n), dtype=np.int64)
    rows = np.arange(P)
    for k in range(1, n + 1):
        steps[:, k] = steps[:, k - 1]
        steps[rows, k, order[:, k - 1]] = 1
    verts = grid.index(cell[:, None, :] + steps)
    bases = grid.index(cell)
    perms = order[:, ::-1]
    return verts, lam, bases, perms


def locate(grid: TorusGrid, x) -> tuple:
    """Simplex containing ``x`` and the barycentric coordinates of ``x`` in it."""
    verts, lam, bases, perms = locate_many(grid, np.asarray(x, dtype=float).reshape(1, -1))
    ref = SimplexRef(grid, int(bases[0]), tuple(int(a) for a in perms[0]))
    return ref, BarycentricCoords(lam[0])


def interpolate(grid: TorusGrid, values, x) -> np.ndarray:
    """Evaluate the piecewise-affine interpolant of node ``values`` at points ``x``."""
    verts, lam, _, _ = locate_many(grid, x)
    return np.sum(lam * np.asarray(values, dtype=float)[verts], axis=1)


def incident_simplex_count_node(grid: TorusGrid, z: int) -> int:
    """Number of simplices having node ``z`` as a vertex, by enumeration."""
    verts = all_simplex_vertices(grid)
    return int(np.count_nonzero(np.any(verts == z, axis=1)))


def incident_simplex_count_edge(grid: TorusGrid, edge) -> int:
    """Number of simplices containing both ends of ``edge``, by enumeration."""
    a, b = (int(v) for v in edge)
    if frozenset((a, b)) not in grid.edge_lookup:
        raise ContractViolation(f"{edge} is not an edge of {grid.label}")
    verts = all_simplex_vertices(grid)
    return int(np.count_nonzero(np.any(verts == a, axis=1) & np.any(verts == b, axis=1)))


def incidence_counts(grid: TorusGrid) -> tuple:
    """Brute-force incidence over every simplex and every vertex pair.

    Returns per-node and per-edge counts (edge order of ``grid.edges``).
    A vertex pair is counted for an edge only if it is a lattice edge.
    """
    verts = all_simplex_vertices(grid)
    node_counts = np.bincount(verts.ravel(), minlength=grid.num_nodes)
    edge_counts = np.zeros(grid.num_edges, dtype=np.int64)
    lookup = grid.edge_lookup
    for row in verts.tolist():
        for a, b in itertools.combinations(row, 2):
            k = lookup.get(frozenset((a, b)))
            if k is not None:
                edge_counts[k] += 1
    return node_counts, edge_counts


def cube_vertex_incidence(n: int) -> dict:
    """``#{perm : y in Sigma_perm}`` for each vertex ``y`` of the unit cube."""
    out = {}
    perms = list(itertools.permutations(range(n)))
    for y in itertools.product((0, 1), repeat=n):
        out[y] = sum(
            any(tuple(row) == y for row in step_offsets(n, p)) for p in perms
        )
    return out


def node_incidence_from_cube(n: int) -> int:
    """Sum over cube vertices grouped by weight ``k``: ``sum C(n,k) (n-k)! k!``."""
    return sum(math.comb(n, k) * math.factorial(n - k) * math.factorial(k) for k in range(n + 1))


def edge_incidence_from_cube(n: int) -> int:
    """Sum over vertical cube edges: ``sum C(n-1,k) (n-k-1)! k!``."""
    return sum(
        math.comb(n - 1, k) * math.factorial(n - k - 1) * math.factorial(k) for k in range(n)
    )


def quad_lambda(ref: SimplexRef, j: int) -> float:
    """Exact ``int_simplex lambda_j dx = vol / (n + 1)``."""
    n = ref.grid.n
    if not 0 <= j <= n:
        raise ContractViolation(f"vertex index {j} outside 0..{n}")
    return ref.volume / (n + 1)


def quad_lambda_pair(ref: SimplexRef, i: int, j: int) -> float:
    """Exact P1 mass entry ``int lambda_i lambda_j = vol (1 + [i==j]) / ((n+1)(n+2))``."""
    n = ref.grid.n
    if not (0 <= i <= n and 0 <= j <= n):
        raise ContractViolation("vertex index out of range")
    return ref.volume * (1 + (i == j)) / ((n + 1) * (n + 2))


def p1_mass_matrix(grid: TorusGrid):
    """Exact consistent mass matrix of the P1 space (scipy CSR)."""
    from scipy import sparse

    n = grid.n
    verts = all_simplex_vertices(grid)
    ref = SimplexRef(grid, 0, tuple(range(n)))
    local = np.array(
        [[quad_lambda_pair(ref, i, j) for j in range(n + 1)] for i in range(n + 1)]
    )
    rows = np.repeat(verts, n + 1, axis=1).ravel()
    cols = np.tile(verts, (1, n + 1)).ravel()
    data = np.tile(local.ravel(), verts.shape[0])
    N = grid.num_nodes
    return sparse.coo_matrix((data, (rows, cols)), shape=(N, N)).tocsr()
