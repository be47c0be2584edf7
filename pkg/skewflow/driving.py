"""
Kronecker base flow on the p-torus and its grid discretization.

Torus angles use unit period: every coordinate lives in [0, 1). The metric
is the max over coordinates of the wrap-around distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import TYPE_CHECKING

import numpy as np
import structlog

from skewflow.error_handler import ConfigurationError


if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from numpy.typing import ArrayLike, NDArray


logger = structlog.get_logger(__name__)


def wrap(coords: ArrayLike) -> NDArray[np.float64]:
    """Reduce mod 1 into [0, 1); ``np.mod`` may round tiny negatives up to 1.0."""
    out = np.mod(np.asarray(coords, dtype=np.float64), 1.0)
    return np.where(out >= 1.0, 0.0, out)


@dataclass(frozen=True)
class DrivingPoint:
    """A point on the p-torus."""

    coords: tuple[float, ...]

    def __post_init__(self) -> None:
        reduced = tuple(float(c) for c in wrap(self.coords))
        object.__setattr__(self, "coords", reduced)

    @classmethod
    def origin(cls, p: int) -> DrivingPoint:
        return cls((0.0,) * p)

    @property
    def p(self) -> int:
        return len(self.coords)

    def as_array(self) -> NDArray[np.float64]:
        return np.asarray(self.coords, dtype=np.float64)


@dataclass(frozen=True)
class DrivingFlowSpec:
    """Frequency vector of the Kronecker flow ω·t = ω + γ t (mod 1)."""

    frequencies: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.frequencies) < 1:
            raise ConfigurationError("driving flow needs at least one frequency")
        for g in self.frequencies:
            if not math.isfinite(g) or g == 0.0:
                raise ConfigurationError(
                    f"frequencies must be finite and nonzero, got {self.frequencies}"
                )
        object.__setattr__(self, "frequencies", tuple(float(g) for g in self.frequencies))

    @property
    def p(self) -> int:
        return len(self.frequencies)

    @property
    def period_flag(self) -> bool:
        return self.p == 1

    def as_array(self) -> NDArray[np.float64]:
        return np.asarray(self.frequencies, dtype=np.float64)


@dataclass(frozen=True)
class DrivingGrid:
    """Uniform grid of half-open cells on the torus."""

    cells_per_dim: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(int(n) < 1 for n in self.cells_per_dim):
            raise ConfigurationError(f"cells_per_dim must be positive, got {self.cells_per_dim}")
        object.__setattr__(self, "cells_per_dim", tuple(int(n) for n in self.cells_per_dim))

    @property
    def p(self) -> int:
        return len(self.cells_per_dim)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_dim))

    @property
    def sides(self) -> tuple[float, ...]:
        return tuple(1.0 / n for n in self.cells_per_dim)

    @property
    def diameter(self) -> float:
        """Max-metric diameter of a cell (a full circle has diameter 1/2)."""
        return max(min(side, 0.5) for side in self.sides)

    def flat_index(self, cell: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(cell), self.cells_per_dim))

    def multi_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.unravel_index(flat, self.cells_per_dim))

    def cells(self) -> Iterator[tuple[int, ...]]:
        """All cells in lexicographic order (matches flat index order)."""
        return product(*(range(n) for n in self.cells_per_dim))

    def center(self, cell: Sequence[int]) -> DrivingPoint:
        return DrivingPoint(tuple((k + 0.5) / n for k, n in zip(cell, self.cells_per_dim, strict=True)))

    def centers_array(self) -> NDArray[np.float64]:
        """Cell centers as an (n_cells, p) array in flat index order."""
        axes = [(np.arange(n) + 0.5) / n for n in self.cells_per_dim]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def flat_cells_of(self, coords: ArrayLike) -> NDArray[np.int64]:
        """Vectorized ``cell_of`` returning flat indices for an (n, p) array."""
        arr = wrap(np.atleast_2d(coords))
        dims = np.asarray(self.cells_per_dim)
        idx = np.minimum(np.floor(arr * dims).astype(np.int64), dims - 1)
        return np.ravel_multi_index(tuple(idx.T), self.cells_per_dim).astype(np.int64)


# =============================================================================
# OPERATIONS
# =============================================================================

def advance_array(coords: ArrayLike, t: ArrayLike, spec: DrivingFlowSpec) -> NDArray[np.float64]:
    """Vectorized base flow; ``coords`` is (..., p), ``t`` broadcasts against (...)."""
    t_arr = np.asarray(t, dtype=np.float64)
    return wrap(np.asarray(coords, dtype=np.float64) + spec.as_array() * t_arr[..., None])


def advance(omega: DrivingPoint, t: float, spec: DrivingFlowSpec) -> DrivingPoint:
    """ω·t = (ω_k + γ_k t) mod 1."""
    return DrivingPoint(tuple(advance_array(omega.as_array(), t, spec)))


def cell_of(omega: DrivingPoint, grid: DrivingGrid) -> tuple[int, ...]:
    """Unique cell k with ω_j in [k_j/N_j, (k_j+1)/N_j)."""
    return tuple(
        min(int(math.floor(c * n)), n - 1)
        for c, n in zip(omega.coords, grid.cells_per_dim, strict=True)
    )


def torus_distance(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64] | float:
    """Max over coordinates of min(|a-b|, 1-|a-b|); broadcasts over leading axes."""
    diff = np.abs(wrap(a) - wrap(b))
    dist = np.max(np.minimum(diff, 1.0 - diff), axis=-1)
    if np.ndim(dist) == 0:
        return float(dist)
    return dist


def orbit_coverage(spec: DrivingFlowSpec, grid: DrivingGrid, step: float, n_steps: int) -> float:
    """
    Fraction of grid cells visited by advance(0, j*step), j = 0..n_steps-1.
    """
    if n_steps < 1:
        raise ConfigurationError("n_steps must be >= 1")
    if spec.p != grid.p:
        raise ConfigurationError(f"driving dimension {spec.p} != grid dimension {grid.p}")
    visited = np.zeros(grid.n_cells, dtype=bool)
    origin = np.zeros(spec.p)
    chunk = 100_000
    for start in range(0, n_steps, chunk):
        j = np.arange(start, min(start + chunk, n_steps), dtype=np.float64)
        visited[grid.flat_cells_of(advance_array(origin, j * step, spec))] = True
    fraction = float(visited.sum()) / grid.n_cells
    logger.debug("orbit_coverage", n_steps=n_steps, step=step, fraction=fraction)
    return fraction


def rationally_independent(
    frequencies: Sequence[float], max_denominator: int = 10**6, tol: float = 1e-12
) -> bool:
    """
    Numerical proxy for rational independence of γ.

    Every ratio γ_j/γ_i is approximated by continued-fraction convergents
    with denominators up to ``max_denominator``; a ratio matched to ``tol``
    counts as rational. Pairwise ratios only, so this misses relations
    among three or more frequencies.
    """
    if len(frequencies) == 1:
        return True
    for i in range(len(frequencies)):
        for j in range(i + 1, len(frequencies)):
            ratio = frequencies[j] / frequencies[i]
            approx = Fraction(ratio).limit_denominator(max_denominator)
            if abs(ratio - float(approx)) <= tol * max(1.0, abs(ratio)):
                return False
    return True


__all__ = [
    "DrivingFlowSpec",
    "DrivingGrid",
    "DrivingPoint",
    "advance",
    "advance_array",
    "cell_of",
    "orbit_coverage",
    "rationally_independent",
    "torus_distance",
    "wrap",
]
