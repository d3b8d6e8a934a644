"""Finite-dimensional weighted Hilbert spaces.

Every state space in the package is ``R^dim`` with a diagonal (lumped)
inner product ``(u, v) = sum_i w_i u_i v_i``.  Exact mass-matrix norms are
provided separately by :mod:`mosco_flow.connect` where they are needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ContractViolation(ValueError):
    """Raised when an operation is called outside its precondition."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class WeightedSpace:
    """``R^dim`` with positive diagonal weights.

    Parameters
    ----------
    weights : array_like
        Quadrature/mass weight of every coordinate, all strictly positive.
    label : str
        Identifier; two states may be combined only when labels agree.
    blocks : tuple of int, optional
        Sizes of the direct-sum blocks (defaults to a single block).
    """

    weights: np.ndarray
    label: str
    blocks: tuple = field(default=())

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or w.size < 1:
            raise ContractViolation("a space needs dim >= 1 weights")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ContractViolation(f"weights of {self.label!r} must be finite and > 0")
        object.__setattr__(self, "weights", w)
        blocks = tuple(int(b) for b in self.blocks) or (w.size,)
        if sum(blocks) != w.size:
            raise ContractViolation("block sizes do not add up to dim")
        object.__setattr__(self, "blocks", blocks)

    @property
    def dim(self) -> int:
        return self.weights.size

    def vector(self, values) -> "StateVector":
        return StateVector(values, self)

    def zeros(self) -> "StateVector":
        return StateVector(np.zeros(self.dim), self)

    def ones(self) -> "StateVector":
        return StateVector(np.ones(self.dim), self)

    def compatible(self, other: "WeightedSpace") -> bool:
        return self is other or (
            self.label == other.label
            and self.dim == other.dim
            and np.array_equal(self.weights, other.weights)
        )

    def mean(self, values) -> float:
        """Weighted mean ``sum w_i u_i / sum w_i``."""
        v = np.asarray(values, dtype=float)
        return float(np.sum(self.weights * v) / np.sum(self.weights))

    def __repr__(self):
        return f"WeightedSpace(label={self.label!r}, dim={self.dim})"


@dataclass(frozen=True, eq=False)
class StateVector:
    """A point of a :class:`WeightedSpace`; values are read-only."""

    values: np.ndarray
    space: WeightedSpace

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.space.dim,):
            raise ContractViolation(
                f"state of length {v.size} does not fit space {self.space.label!r} "
                f"of dim {self.space.dim}"
            )
        if not np.all(np.isfinite(v)):
            raise ContractViolation("state entries must be finite")
        object.__setattr__(self, "values", v)

    def _check(self, other: "StateVector"):
        if not self.space.compatible(other.space):
            raise ContractViolation(
                f"space mismatch: {self.space.label!r} vs {other.space.label!r}"
            )

    def __add__(self, other):
        self._check(other)
        return StateVector(self.values + other.values, self.space)

    def __sub__(self, other):
        self._check(other)
        return StateVector(self.values - other.values, self.space)

    def __mul__(self, s):
        return StateVector(float(s) * self.values, self.space)

    __rmul__ = __mul__

    def __neg__(self):
        return StateVector(-self.values, self.space)

    def __len__(self):
        return self.space.dim

    def __repr__(self):
        return f"StateVector(space={self.space.label!r}, dim={self.space.dim})"


def weighted_inner(weights, u, v) -> float:
    """Raw-array inner product with pairwise summation."""
    return float(np.sum(np.asarray(weights) * np.asarray(u) * np.asarray(v)))


def weighted_norm(weights, u) -> float:
    u = np.asarray(u)
    return float(np.sqrt(np.sum(np.asarray(weights) * u * u)))


def inner(u: StateVector, v: StateVector) -> float:
    """``sum_i w_i u_i v_i``; both states must live in the same space."""
    u._check(v)
    return weighted_inner(u.space.weights, u.values, v.values)


def norm(u: StateVector) -> float:
    return weighted_norm(u.space.weights, u.values)


def direct_sum(a: WeightedSpace, b: WeightedSpace, label: str | None = None) -> WeightedSpace:
    """Orthogonal direct sum; the inner product is the sum of block products."""
    return WeightedSpace(
        np.concatenate([a.weights, b.weights]),
        label or f"{a.label}+{b.label}",
        blocks=a.blocks + b.blocks,
    )


def split(u: StateVector) -> list:
    """Block components of a state living in a direct sum."""
    edges = np.cumsum((0,) + u.space.blocks)
    return [u.values[i:j] for i, j in zip(edges[:-1], edges[1:])]
