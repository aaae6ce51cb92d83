"""Regular sparse-grid interpolation with the modified hierarchical basis.

Grid points live on dyadic coordinates of the unit cube; a point is the pair
(level vector l, index vector i) with odd indices and sum(l) <= w + N - 1 for
refinement level w. The 1-d basis is piecewise linear: constant at level 1,
linearly extrapolating towards the boundary for the first/last index of each
level, the standard hat elsewhere. This reproduces constants exactly and
needs no boundary points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import OutOfBox, ParseError

SCHEMA_VERSION = 1
_BOX_EPS = 1e-12


@dataclass(frozen=True)
class GridPoint:
    level: tuple[int, ...]
    index: tuple[int, ...]

    @property
    def coordinates(self) -> tuple[float, ...]:
        return tuple(i * 2.0**-l for l, i in zip(self.level, self.index))


def _level_vectors(n: int, w: int):
    """All level vectors l >= 1 with sum(l) <= w + n - 1, lexicographic."""
    budget = w + n - 1

    def rec(prefix, remaining_dims, remaining_budget):
        if remaining_dims == 0:
            yield prefix
            return
        for l in range(1, remaining_budget - (remaining_dims - 1) + 1):
            yield from rec(prefix + (l,), remaining_dims - 1, remaining_budget - l)

    yield from sorted(rec((), n, budget))


def count_points(n: int, w: int) -> int:
    """Number of sparse-grid points for dimension n and level w."""
    if n < 1 or w < 1:
        raise ValueError("dimension and level must be >= 1")
    return sum(2 ** (sum(l) - n) for l in _level_vectors(n, w))


def enumerate_points(n: int, w: int) -> list[GridPoint]:
    """Deterministic (lexicographic by level then index) point enumeration."""
    if n < 1 or w < 1:
        raise ValueError("dimension and level must be >= 1")
    points = []
    for lvl in _level_vectors(n, w):
        index_ranges = [range(1, 2**l, 2) for l in lvl]
        for idx in product(*index_ranges):
            points.append(GridPoint(level=lvl, index=idx))
    return points


def basis_1d(level: int, index: int, x) -> np.ndarray:
    """Modified piecewise-linear hierarchical basis value(s) at x in [0, 1]."""
    if level < 1 or index < 1 or index > 2**level - 1 or index % 2 == 0:
        raise ValueError(f"invalid basis ({level}, {index})")
    x = np.asarray(x, dtype=np.float64)
    scale = 2.0**level
    if level == 1:
        return np.ones_like(x)
    if index == 1:
        return np.maximum(0.0, 2.0 - scale * x)
    if index == 2**level - 1:
        return np.maximum(0.0, scale * x - (index - 1))
    return np.maximum(0.0, 1.0 - np.abs(scale * x - index))


def _basis_product(levels: np.ndarray, indices: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Values of all points' tensor basis at unit-cube point x, vectorized.

    levels/indices: (P, N) integer arrays, x: (N,) -> (P,) values.
    """
    scale = np.exp2(levels)
    t = scale * x[None, :]
    vals = np.maximum(0.0, 1.0 - np.abs(t - indices))
    left = np.maximum(0.0, 2.0 - t)
    right = np.maximum(0.0, t - (indices - 1))
    vals = np.where(indices == 1, left, vals)
    vals = np.where(indices == scale - 1, right, vals)
    vals = np.where(levels == 1, 1.0, vals)
    return vals.prod(axis=1)


def hierarchize(points: list[GridPoint], values: np.ndarray) -> np.ndarray:
    """Hierarchical surpluses: value minus the coarser interpolant at the node.

    Processes nodes level-sum by level-sum; bases of equal level sum vanish at
    each other's nodes, so the sweep is well defined.
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) != len(points):
        raise ValueError("one value per point required")
    levels = np.array([p.level for p in points])
    indices = np.array([p.index for p in points])
    coords = indices * np.exp2(-levels)
    level_sums = levels.sum(axis=1)
    surpluses = np.zeros(len(points))
    for s in np.unique(level_sums):
        mask = level_sums == s
        coarser = level_sums < s
        for i in np.nonzero(mask)[0]:
            interp = 0.0
            if coarser.any():
                interp = surpluses[coarser] @ _basis_product(
                    levels[coarser], indices[coarser], coords[i]
                )
            surpluses[i] = values[i] - interp
    return surpluses


@dataclass(frozen=True)
class SparseGridSurrogate:
    """Interpolants of the objective and constraint over the box Gamma.

    `surpluses` maps a target name ("objective", "constraint") to one
    hierarchical coefficient per grid point; both targets share the grid.
    """

    n: int
    w: int
    box: np.ndarray  # (N, 2) parameter ranges
    points: tuple[GridPoint, ...]
    surpluses: dict[str, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "box", np.asarray(self.box, dtype=np.float64))
        if self.box.shape != (self.n, 2):
            raise ValueError("box must have shape (N, 2)")
        if np.any(self.box[:, 0] >= self.box[:, 1]):
            raise ValueError("box must have min < max per dimension")
        levels = np.array([p.level for p in self.points])
        indices = np.array([p.index for p in self.points])
        object.__setattr__(self, "_levels", levels)
        object.__setattr__(self, "_indices", indices)

    @classmethod
    def build(cls, n: int, w: int, box, values: dict[str, np.ndarray]) -> "SparseGridSurrogate":
        """Hierarchize one value array per target on the level-w grid."""
        points = enumerate_points(n, w)
        surpluses = {name: hierarchize(points, vals) for name, vals in values.items()}
        return cls(n=n, w=w, box=box, points=tuple(points), surpluses=surpluses)

    def to_unit(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        widths = self.box[:, 1] - self.box[:, 0]
        if np.any(p < self.box[:, 0] - _BOX_EPS * widths) or np.any(
            p > self.box[:, 1] + _BOX_EPS * widths
        ):
            raise OutOfBox(f"point {p} outside the constraint box")
        return np.clip((p - self.box[:, 0]) / widths, 0.0, 1.0)

    def grid_points(self) -> np.ndarray:
        """Grid node coordinates mapped into the box, shape (P, N)."""
        unit = self._indices * np.exp2(-self._levels)
        return self.box[:, 0] + unit * (self.box[:, 1] - self.box[:, 0])

    def evaluate(self, p, which: str) -> float:
        """Interpolant value at p in Gamma for the given target."""
        x = self.to_unit(p)
        basis = _basis_product(self._levels, self._indices, x)
        return float(self.surpluses[which] @ basis)

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "w": self.w,
            "box": self.box.tolist(),
            "points": [{"level": list(p.level), "index": list(p.index)} for p in self.points],
            "surpluses": {k: v.tolist() for k, v in self.surpluses.items()},
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SparseGridSurrogate":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid surrogate document: {exc}") from exc
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ParseError("unsupported surrogate schema version")
        points = tuple(
            GridPoint(level=tuple(p["level"]), index=tuple(p["index"])) for p in doc["points"]
        )
        surpluses = {k: np.asarray(v, dtype=np.float64) for k, v in doc["surpluses"].items()}
        return cls(n=doc["n"], w=doc["w"], box=np.asarray(doc["box"]), points=points,
                   surpluses=surpluses)
