"""Discrete measures, ground costs and couplings.

Points are plain 1-d float arrays. Measures and couplings are immutable: the
arrays they hold are flagged read-only on construction.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-9


class CostKind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    SQUARED_EUCLIDEAN = "sqeuclidean"
    L1 = "l1"


def as_point(x) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"point must be a non-empty 1-d sequence, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    return p


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def ground_cost(x, y, kind: CostKind | str = CostKind.EUCLIDEAN) -> float:
    """Cost of moving unit mass from ``x`` to ``y``."""
    x, y = as_point(x), as_point(y)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    diff = x - y
    kind = CostKind(kind)
    if kind is CostKind.EUCLIDEAN:
        return float(np.sqrt(diff @ diff))
    if kind is CostKind.SQUARED_EUCLIDEAN:
        return float(diff @ diff)
    return float(np.abs(diff).sum())


def pairwise_cost(xs: np.ndarray, ys: np.ndarray, kind: CostKind | str) -> np.ndarray:
    """Vectorised ``ground_cost`` over all rows of ``xs`` against all rows of ``ys``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if xs.shape[1] != ys.shape[1]:
        raise ValueError(f"dimension mismatch: {xs.shape[1]} vs {ys.shape[1]}")
    diff = xs[:, None, :] - ys[None, :, :]
    kind = CostKind(kind)
    if kind is CostKind.L1:
        return np.abs(diff).sum(axis=-1)
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if kind is CostKind.SQUARED_EUCLIDEAN:
        return sq
    return np.sqrt(sq)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted atoms ``sum_i w_i delta_{x_i}``; weights are normalised on construction."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.ndim != 2 or atoms.shape[0] == 0 or atoms.shape[1] == 0:
            raise ValueError("a measure needs at least one atom of dimension >= 1")
        if atoms.shape[0] != weights.shape[0]:
            raise ValueError(f"{atoms.shape[0]} atoms but {weights.shape[0]} weights")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise ValueError("atoms and weights must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        total = weights.sum()
        if total <= 0:
            raise ValueError("weights must have positive total mass")
        weights = weights / total
        if abs(weights.sum() - 1.0) > 1e-6:
            raise ValueError("weights could not be normalised")
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @classmethod
    def dirac(cls, point) -> DiscreteMeasure:
        return cls(as_point(point)[None, :], [1.0])

    @classmethod
    def uniform(cls, atoms) -> DiscreteMeasure:
        atoms = np.asarray(atoms, dtype=float)
        n = atoms.shape[0]
        return cls(atoms, np.full(n, 1.0 / n))

    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log(w)).sum())

    def sample(self, rng: np.random.Generator, size: int | None = None):
        idx = rng.choice(self.size, size=size, p=self.weights)
        return self.atoms[idx]

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, record: dict) -> DiscreteMeasure:
        try:
            return cls(record["atoms"], record["weights"])
        except KeyError as exc:
            raise ValueError(f"measure record missing field {exc.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> DiscreteMeasure:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint mass matrix between two discrete supports."""

    mass: np.ndarray

    def __post_init__(self):
        mass = np.atleast_2d(np.asarray(self.mass, dtype=float))
        if mass.ndim != 2:
            raise ValueError("coupling mass must be a matrix")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise ValueError("coupling mass must be finite and nonnegative")
        if abs(mass.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"coupling total mass {mass.sum()!r} is not 1")
        object.__setattr__(self, "mass", _frozen(mass))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mass.shape


def validate_cost_matrix(C) -> np.ndarray:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.ndim != 2:
        raise ValueError("cost matrix must be 2-d")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ValueError("cost entries must be finite and nonnegative")
    return C


def build_cost_matrix(
    mu: DiscreteMeasure, nu: DiscreteMeasure, kind: CostKind | str = CostKind.EUCLIDEAN
) -> np.ndarray:
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    return pairwise_cost(mu.atoms, nu.atoms, kind)


def marginal_residuals(mass: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Max absolute row-sum and column-sum deviations."""
    return (
        float(np.max(np.abs(mass.sum(axis=1) - a))),
        float(np.max(np.abs(mass.sum(axis=0) - b))),
    )


def check_marginals(kappa: Coupling, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float) -> bool:
    if kappa.shape != (mu.size, nu.size):
        raise ValueError(f"coupling shape {kappa.shape} does not match ({mu.size}, {nu.size})")
    row, col = marginal_residuals(kappa.mass, mu.weights, nu.weights)
    return max(row, col) <= tol


def empirical_measure(points: Iterable[Sequence[float]]) -> DiscreteMeasure:
    """Relative frequencies of exactly-equal points, atoms in first-seen order."""
    pts = [as_point(p) for p in points]
    if not pts:
        raise ValueError("empirical measure of an empty sample")
    if len({p.shape for p in pts}) != 1:
        raise ValueError("points of differing dimension")
    counts: dict[tuple, int] = {}
    for p in pts:
        key = tuple(p.tolist())
        counts[key] = counts.get(key, 0) + 1
    atoms = np.array(list(counts.keys()), dtype=float)
    weights = np.array(list(counts.values()), dtype=float)
    return DiscreteMeasure(atoms, weights)
