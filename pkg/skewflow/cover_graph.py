"""
Cell x box discretization of Ω × Q and the controlled (ε,T)-chain graph.

A node is a (driving cell, state box) pair with id ``cell * n_boxes + box``.
Each node's test point (cell center, box center) is integrated under every
sampled control up to the sampled jump times; an edge goes to every box
whose ε-neighborhood contains the endpoint, over the cell reached by the
exactly advanced cell center. Strongly connected components of this graph
approximate chain control sets.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import TYPE_CHECKING, Any

import numpy as np
import structlog
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from skewflow.cocycle import integrate
from skewflow.driving import advance_array, cell_of
from skewflow.error_handler import (
    ConfigurationError,
    EmptyFiberError,
    EmptyGraphError,
    UnknownNodeError,
)


if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    from skewflow.cocycle import IntegratorConfig, SystemDef
    from skewflow.driving import DrivingFlowSpec, DrivingGrid, DrivingPoint
    from skewflow.signals import ControlSignal


logger = structlog.get_logger(__name__)

GRAPH_MAGIC = b"CHGR"
GRAPH_VERSION = 1
DEFAULT_JUMP_FACTORS = (1.0, 1.5, 2.0)
RECONSTRUCTION_FACTORS = (1.0, 1.25, 1.5, 1.75, 2.0)

_EDGE_RECORD = np.dtype([("source", "<u8"), ("target", "<u8"), ("control", "<u2"), ("time", "u1")])


# =============================================================================
# BOX COVER
# =============================================================================

@dataclass(frozen=True)
class BoxCover:
    """
    Uniform partition of Q into half-open boxes; the last box in each
    dimension is closed so the boxes cover Q exactly.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    per_dim: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.lower) == len(self.upper) == len(self.per_dim)) or not self.per_dim:
            raise ConfigurationError("box cover needs one interval and one count per dimension")
        for lo, hi in zip(self.lower, self.upper, strict=True):
            if not lo < hi:
                raise ConfigurationError(f"degenerate interval [{lo}, {hi}]")
        if any(int(n) < 1 for n in self.per_dim):
            raise ConfigurationError(f"subdivision counts must be >= 1, got {self.per_dim}")
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "per_dim", tuple(int(n) for n in self.per_dim))

    @property
    def d(self) -> int:
        return len(self.per_dim)

    @property
    def n_boxes(self) -> int:
        return int(np.prod(self.per_dim))

    @cached_property
    def widths(self) -> NDArray[np.float64]:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.per_dim)

    @property
    def delta_box(self) -> float:
        """Max-norm diameter of a box."""
        return float(np.max(self.widths))

    def flat_index(self, multi: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.per_dim))

    def multi_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.unravel_index(flat, self.per_dim))

    def box_bounds(self, flat: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        lo = np.asarray(self.lower) + np.asarray(self.multi_index(flat)) * self.widths
        return lo, lo + self.widths

    def centers_array(self) -> NDArray[np.float64]:
        """Box centers as an (n_boxes, d) array in flat index order."""
        axes = [lo + (np.arange(n) + 0.5) * w for lo, n, w in zip(self.lower, self.per_dim, self.widths, strict=True)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def corners_array(self) -> NDArray[np.float64]:
        """Box corners as an (n_boxes, 2^d, d) array."""
        centers = self.centers_array()
        signs = np.asarray(list(product((-0.5, 0.5), repeat=self.d)))
        return centers[:, None, :] + signs[None, :, :] * self.widths

    def box_indices(self, xs: ArrayLike) -> NDArray[np.int64]:
        """Flat box index per row of ``xs``; -1 for points outside Q or NaN."""
        arr = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        inside = np.all((arr >= lo) & (arr <= hi), axis=1)
        safe = np.where(np.isfinite(arr), arr, lo)
        idx = np.clip(np.floor((safe - lo) / self.widths).astype(np.int64), 0, np.asarray(self.per_dim) - 1)
        flat = np.ravel_multi_index(tuple(idx.T), self.per_dim).astype(np.int64)
        return np.where(inside, flat, -1)

    def box_index(self, x: ArrayLike) -> int | None:
        flat = int(self.box_indices(np.asarray(x, dtype=np.float64).reshape(1, self.d))[0])
        return None if flat < 0 else flat

    def boxes_near(self, ys: ArrayLike, eps: float) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
        """
        All (row, box) pairs with max-norm distance from ``ys[row]`` to the
        box strictly below ``eps``. Rows that are not finite match nothing.
        """
        arr = np.atleast_2d(np.asarray(ys, dtype=np.float64))
        finite = np.all(np.isfinite(arr), axis=1)
        rows = np.flatnonzero(finite)
        arr = arr[rows]
        lo, counts = np.asarray(self.lower), np.asarray(self.per_dim)
        rel_lo = (arr - lo - eps) / self.widths
        rel_hi = (arr - lo + eps) / self.widths
        j_min = np.maximum(np.floor(rel_lo).astype(np.int64), 0)
        j_max = np.minimum(np.ceil(rel_hi).astype(np.int64) - 1, counts - 1)
        span = int(np.ceil(2.0 * eps / float(np.min(self.widths)))) + 2
        out_rows: list[NDArray[np.int64]] = []
        out_boxes: list[NDArray[np.int64]] = []
        for offset in product(range(span), repeat=self.d):
            j = j_min + np.asarray(offset)
            ok = np.all(j <= j_max, axis=1)
            if not ok.any():
                continue
            out_rows.append(rows[ok])
            out_boxes.append(np.ravel_multi_index(tuple(j[ok].T), self.per_dim).astype(np.int64))
        if not out_rows:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(out_rows), np.concatenate(out_boxes)


def build_cover(domain: Sequence[Sequence[float]], per_dim: int | Sequence[int]) -> BoxCover:
    """Partition the box ``domain`` into ``per_dim`` boxes per dimension."""
    counts = (per_dim,) * len(domain) if isinstance(per_dim, int) else tuple(per_dim)
    return BoxCover(
        tuple(float(lo) for lo, _ in domain),
        tuple(float(hi) for _, hi in domain),
        counts,
    )


# =============================================================================
# CHAIN GRAPH
# =============================================================================

@dataclass(eq=False)
class ChainGraph:
    """
    Directed graph over (cell, box) nodes. Edge arrays are sorted by
    (source, target, control id, time id) and free of duplicates.
    """

    cover: BoxCover
    grid: DrivingGrid
    driving: DrivingFlowSpec
    eps: float
    T: float
    jump_times: tuple[float, ...]
    controls: tuple[ControlSignal, ...]
    source: NDArray[np.int64]
    target: NDArray[np.int64]
    control_id: NDArray[np.int64]
    time_id: NDArray[np.int64]
    exact: bool = False
    build_seconds: float = field(default=0.0, compare=False)

    @property
    def n_boxes(self) -> int:
        return self.cover.n_boxes

    @property
    def n_nodes(self) -> int:
        return self.grid.n_cells * self.cover.n_boxes

    @property
    def n_edges(self) -> int:
        return int(self.source.size)

    @cached_property
    def adjacency(self) -> csr_matrix:
        """Boolean CSR adjacency with one entry per (source, target) pair."""
        n = self.n_nodes
        keys = np.unique(self.source * n + self.target)
        data = np.ones(keys.size, dtype=bool)
        return csr_matrix((data, (keys // n, keys % n)), shape=(n, n))

    @cached_property
    def reverse_adjacency(self) -> csr_matrix:
        return self.adjacency.T.tocsr()

    def check_node(self, node: int) -> int:
        node = int(node)
        if not 0 <= node < self.n_nodes:
            raise UnknownNodeError(f"node {node} is not in a graph of {self.n_nodes} nodes")
        return node

    def node_id(self, cell: int, box: int) -> int:
        return int(cell) * self.n_boxes + int(box)

    def split(self, node: int) -> tuple[int, int]:
        return divmod(int(node), self.n_boxes)

    def node_states(self, nodes: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Cell centers and box centers of ``nodes`` as (n, p) and (n, d) arrays."""
        arr = np.asarray(nodes, dtype=np.int64).reshape(-1)
        cells, boxes = np.divmod(arr, self.n_boxes)
        return self.grid.centers_array()[cells], self.cover.centers_array()[boxes]

    def nodes_of(self, omegas: ArrayLike, xs: ArrayLike) -> NDArray[np.int64]:
        """Quantize (ω, x) rows to node ids; -1 where x is outside Q."""
        boxes = self.cover.box_indices(xs)
        cells = self.grid.flat_cells_of(omegas)
        return np.where(boxes >= 0, cells * self.n_boxes + boxes, -1)

    def node_of(self, omega: DrivingPoint, x: ArrayLike) -> int:
        box = self.cover.box_index(x)
        if box is None:
            raise UnknownNodeError(f"state {np.asarray(x).tolist()} lies outside the covered domain")
        return self.node_id(self.grid.flat_index(cell_of(omega, self.grid)), box)

    def successors(self, node: int) -> NDArray[np.int64]:
        node = self.check_node(node)
        adj = self.adjacency
        return adj.indices[adj.indptr[node] : adj.indptr[node + 1]].astype(np.int64)

    def has_self_loop(self, node: int) -> bool:
        return bool(np.isin(node, self.successors(node)))

    def edge_labels(self, source: int, target: int) -> list[tuple[int, int]]:
        """(control id, time id) labels of all edges source -> target."""
        lo = np.searchsorted(self.source, source, side="left")
        hi = np.searchsorted(self.source, source, side="right")
        hits = np.flatnonzero(self.target[lo:hi] == target) + lo
        return [(int(self.control_id[k]), int(self.time_id[k])) for k in hits]

    def summary(self) -> dict[str, Any]:
        return {
            "nodes": self.n_nodes,
            "edges": self.n_edges,
            "cells": self.grid.n_cells,
            "cells_per_dim": list(self.grid.cells_per_dim),
            "boxes": self.n_boxes,
            "boxes_per_dim": list(self.cover.per_dim),
            "delta_box": self.cover.delta_box,
            "cell_diameter": self.grid.diameter,
            "eps": self.eps,
            "T": self.T,
            "jump_times": list(self.jump_times),
            "controls": len(self.controls),
            "exact": self.exact,
        }


def _edges_for_control(
    sys: SystemDef,
    cfg: IntegratorConfig,
    cover: BoxCover,
    u: ControlSignal,
    control_id: int,
    jump_times: tuple[float, ...],
    start_omegas: NDArray[np.float64],
    start_x: NDArray[np.float64],
    start_nodes: NDArray[np.int64],
    cell_targets: list[NDArray[np.int64]],
    eps: float,
    exact: bool,
) -> tuple[NDArray[np.int64], ...]:
    result = integrate(sys, cfg, max(jump_times), start_omegas, start_x, u, record_times=jump_times)
    nb = cover.n_boxes
    src_cells = start_nodes // nb
    parts: list[tuple[NDArray[np.int64], ...]] = []
    for time_id, tj in enumerate(jump_times):
        y = result.records[tj]
        valid = np.flatnonzero(np.all(np.isfinite(y), axis=1) & ~result.left_records[tj])
        if exact:
            boxes = cover.box_indices(y[valid])
            keep = boxes >= 0
            rows, boxes = valid[keep], boxes[keep]
        else:
            local, boxes = cover.boxes_near(y[valid], eps)
            rows = valid[local]
        targets = cell_targets[time_id][src_cells[rows]] * nb + boxes
        parts.append((
            start_nodes[rows],
            targets,
            np.full(rows.size, control_id, dtype=np.int64),
            np.full(rows.size, time_id, dtype=np.int64),
        ))
    return tuple(np.concatenate(col) for col in zip(*parts, strict=True))


def build_chain_graph(
    sys: SystemDef,
    cover: BoxCover,
    grid: DrivingGrid,
    T: float,
    controls: Sequence[ControlSignal],
    eps: float,
    cfg: IntegratorConfig,
    jump_factors: Sequence[float] = DEFAULT_JUMP_FACTORS,
    sample_corners: bool = False,
    threads: int = 1,
    exact: bool = False,
) -> ChainGraph:
    """
    Build the discretized controlled (ε,T)-chain relation.

    Args:
        jump_factors: jump times are ``factor * T``; factors lie in [1, 2].
        sample_corners: integrate box corners as well as box centers.
        threads: worker threads, one task per control; never changes output.
        exact: quantize endpoints to their containing box instead of
            inflating them by ε (the no-jump relation).

    Raises:
        ConfigurationError: parameter precondition violated.
        EmptyGraphError: every trajectory escaped or left Q.
    """
    if not T > 0.0:
        raise ConfigurationError(f"T must be positive, got {T}")
    if not controls:
        raise ConfigurationError("at least one control is required")
    if grid.p != sys.p or cover.d != sys.d:
        raise ConfigurationError(
            f"grid/cover dimensions ({grid.p}, {cover.d}) do not match the system ({sys.p}, {sys.d})"
        )
    if any(not 1.0 <= f <= 2.0 for f in jump_factors) or not jump_factors:
        raise ConfigurationError(f"jump-time factors must lie in [1, 2], got {list(jump_factors)}")
    if not exact:
        if eps < cover.delta_box * (1.0 - 1e-12):
            raise ConfigurationError(f"eps={eps:g} is below the box diameter {cover.delta_box:g}")
        if not sys.is_autonomous and eps < grid.diameter * (1.0 - 1e-12):
            raise ConfigurationError(f"eps={eps:g} is below the driving cell diameter {grid.diameter:g}")
    if len(controls) > np.iinfo(np.uint16).max:
        raise ConfigurationError("too many controls for 16-bit control ids")

    started = time.perf_counter()
    jump_times = tuple(sorted({float(f * T) for f in jump_factors}))
    nb = cover.n_boxes
    cell_centers = grid.centers_array()
    box_points = cover.corners_array() if sample_corners else cover.centers_array()[:, None, :]
    per_box = box_points.shape[1]

    start_nodes = np.arange(grid.n_cells * nb, dtype=np.int64).repeat(per_box)
    start_omegas = np.repeat(cell_centers, nb * per_box, axis=0)
    start_x = np.tile(box_points.reshape(nb * per_box, cover.d), (grid.n_cells, 1))
    cell_targets = [grid.flat_cells_of(advance_array(cell_centers, tj, sys.driving)) for tj in jump_times]

    def task(cid: int) -> tuple[NDArray[np.int64], ...]:
        return _edges_for_control(
            sys, cfg, cover, controls[cid], cid, jump_times,
            start_omegas, start_x, start_nodes, cell_targets, eps, exact,
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        blocks = list(pool.map(task, range(len(controls))))

    src, dst, cid, tid = (np.concatenate(col) for col in zip(*blocks, strict=True))
    order = np.lexsort((tid, cid, dst, src))
    src, dst, cid, tid = src[order], dst[order], cid[order], tid[order]
    if src.size:
        rows = np.stack([src, dst, cid, tid], axis=1)
        fresh = np.ones(src.size, dtype=bool)
        fresh[1:] = np.any(rows[1:] != rows[:-1], axis=1)
        src, dst, cid, tid = src[fresh], dst[fresh], cid[fresh], tid[fresh]

    elapsed = time.perf_counter() - started
    graph = ChainGraph(
        cover, grid, sys.driving, float(eps), float(T), jump_times, tuple(controls),
        src, dst, cid, tid, exact, elapsed,
    )
    if graph.n_edges == 0:
        logger.error("chain_graph_empty", nodes=graph.n_nodes, controls=len(controls))
        raise EmptyGraphError(
            "every trajectory escaped or left the inflated domain; the chain graph has no edges",
            details=graph.summary(),
        )
    logger.info("chain_graph_built", nodes=graph.n_nodes, edges=graph.n_edges,
                exact=exact, elapsed=round(elapsed, 3))
    return graph


def exact_transition_graph(
    sys: SystemDef,
    cover: BoxCover,
    grid: DrivingGrid,
    T: float,
    controls: Sequence[ControlSignal],
    cfg: IntegratorConfig,
    jump_factors: Sequence[float] = (1.0,),
    threads: int = 1,
) -> ChainGraph:
    """No-jump relation: each endpoint goes to the one box containing it."""
    return build_chain_graph(
        sys, cover, grid, T, controls, cover.delta_box, cfg,
        jump_factors=jump_factors, threads=threads, exact=True,
    )


# =============================================================================
# COMPONENTS AND REACHABILITY
# =============================================================================

def component_labels(adjacency: csr_matrix) -> NDArray[np.int32]:
    """Strong component label of every node."""
    _, labels = connected_components(adjacency, directed=True, connection="strong")
    return labels


def scc_of_adjacency(adjacency: csr_matrix) -> list[NDArray[np.int64]]:
    """Strong components as sorted node arrays, ordered by smallest node."""
    n = adjacency.shape[0]
    if n == 0:
        return []
    labels = component_labels(adjacency)
    order = np.argsort(labels, kind="stable").astype(np.int64)
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    groups = np.split(order, bounds)
    groups.sort(key=lambda g: int(g[0]))
    return groups


def scc(graph: ChainGraph) -> list[frozenset[int]]:
    """Partition of all nodes into strongly connected components."""
    return [frozenset(int(v) for v in g) for g in scc_of_adjacency(graph.adjacency)]


def reachable_mask(adjacency: csr_matrix, seeds: ArrayLike) -> NDArray[np.bool_]:
    """Nodes reachable from ``seeds`` in zero or more steps."""
    visited = np.zeros(adjacency.shape[0], dtype=bool)
    frontier = np.unique(np.asarray(seeds, dtype=np.int64))
    visited[frontier] = True
    while frontier.size:
        step = np.unique(adjacency[frontier].indices)
        frontier = step[~visited[step]]
        visited[frontier] = True
    return visited


@dataclass(eq=False)
class ChainSetApprox:
    """A set of nodes of ``graph``; grouping by cell gives fiber sections."""

    nodes: NDArray[np.int64]
    graph: ChainGraph = field(repr=False, compare=False)
    details: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        self.nodes = np.unique(np.asarray(self.nodes, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.nodes.size)

    def __contains__(self, node: object) -> bool:
        return isinstance(node, (int, np.integer)) and int(node) in self.node_set

    @cached_property
    def node_set(self) -> frozenset[int]:
        return frozenset(int(v) for v in self.nodes)

    def fiber_sections(self) -> dict[int, NDArray[np.int64]]:
        """Boxes of the set over each driving cell."""
        cells, boxes = np.divmod(self.nodes, self.graph.n_boxes)
        return {int(c): boxes[cells == c] for c in np.unique(cells)}

    def fiber_interval(self, cell: int | None = None, axis: int = 0) -> tuple[float, float]:
        """Hull of the set's boxes along ``axis``, over one cell or all cells."""
        cells, boxes = np.divmod(self.nodes, self.graph.n_boxes)
        if cell is not None:
            boxes = boxes[cells == cell]
        if boxes.size == 0:
            raise EmptyFiberError(f"no boxes over cell {cell}")
        cover = self.graph.cover
        idx = np.unravel_index(boxes, cover.per_dim)[axis]
        lo = cover.lower[axis] + idx.min() * cover.widths[axis]
        hi = cover.lower[axis] + (idx.max() + 1) * cover.widths[axis]
        return float(lo), float(hi)

    def has_internal_edges(self) -> bool:
        """Every node has an in-edge and an out-edge inside the set."""
        sub = self.graph.adjacency[self.nodes][:, self.nodes]
        return bool(np.all(sub.getnnz(axis=1) > 0) and np.all(sub.getnnz(axis=0) > 0))

    def inflated(self, boxes: int = 1) -> frozenset[int]:
        return inflate_nodes(self.nodes, self.graph.cover, boxes)


def chain_control_sets(graph: ChainGraph) -> list[ChainSetApprox]:
    """SCCs that carry at least one edge; ordered by smallest node."""
    loops = graph.adjacency.diagonal()
    sets = [
        ChainSetApprox(g, graph)
        for g in scc_of_adjacency(graph.adjacency)
        if g.size > 1 or loops[g[0]]
    ]
    logger.info("chain_control_sets", count=len(sets), sizes=[len(s) for s in sets])
    return sets


def chain_reachable(graph: ChainGraph, start: int) -> frozenset[int]:
    """
    Targets of chains from ``start``: nodes reachable in one or more steps.
    ``start`` itself belongs only if it lies on a cycle.
    """
    succ = graph.successors(start)
    if succ.size == 0:
        return frozenset()
    return frozenset(int(v) for v in np.flatnonzero(reachable_mask(graph.adjacency, succ)))


def chain_reachable_from_point(graph: ChainGraph, omega: DrivingPoint, x: ArrayLike) -> frozenset[int]:
    return chain_reachable(graph, graph.node_of(omega, x))


def inflate_nodes(nodes: Iterable[int] | NDArray[np.int64], cover: BoxCover, boxes: int = 1) -> frozenset[int]:
    """Add every box within ``boxes`` grid steps (per dimension) over the same cell."""
    arr = np.unique(np.fromiter((int(v) for v in nodes), dtype=np.int64))
    if arr.size == 0:
        return frozenset()
    nb = cover.n_boxes
    cells, flat = np.divmod(arr, nb)
    multi = np.stack(np.unravel_index(flat, cover.per_dim), axis=1)
    limit = np.asarray(cover.per_dim)
    out = []
    for offset in product(range(-boxes, boxes + 1), repeat=cover.d):
        j = multi + np.asarray(offset)
        ok = np.all((j >= 0) & (j < limit), axis=1)
        out.append(cells[ok] * nb + np.ravel_multi_index(tuple(j[ok].T), cover.per_dim))
    return frozenset(int(v) for v in np.unique(np.concatenate(out)))


def coarsen_nodes(nodes: Iterable[int] | NDArray[np.int64], fine: ChainGraph, coarse: ChainGraph) -> frozenset[int]:
    """Map nodes of ``fine`` to the ``coarse`` nodes containing their centers."""
    arr = np.fromiter((int(v) for v in nodes), dtype=np.int64)
    if arr.size == 0:
        return frozenset()
    omegas, xs = fine.node_states(arr)
    mapped = coarse.nodes_of(omegas, xs)
    return frozenset(int(v) for v in mapped[mapped >= 0])


# =============================================================================
# SINGLE-FIBER RECONSTRUCTION
# =============================================================================

def _cells_near(grid: DrivingGrid, omega: DrivingPoint, eps: float) -> NDArray[np.int64]:
    """Cells whose closure meets the ε-ball around ω (the cell of ω included)."""
    diff = np.abs(grid.centers_array() - omega.as_array())
    dist = np.minimum(diff, 1.0 - diff)
    reach = eps + 0.5 * np.asarray(grid.sides)
    return np.flatnonzero(np.all(dist < reach, axis=1)).astype(np.int64)


def _largest_component(labels: NDArray[np.int32], candidates: NDArray[np.int64], live: Sequence[int]) -> int:
    """Label holding the most candidates; ties go to the component with the smallest node."""
    counts = {label: int(np.count_nonzero(labels[candidates] == label)) for label in live}
    first = {label: int(np.flatnonzero(labels == label)[0]) for label in live}
    return min(live, key=lambda label: (-counts[label], first[label]))


def single_fiber_reconstruct(
    sys: SystemDef,
    cover: BoxCover,
    grid: DrivingGrid,
    omega0: DrivingPoint,
    T: float,
    eps: float,
    controls: Sequence[ControlSignal],
    cfg: IntegratorConfig,
    threads: int = 1,
    sample_factors: Sequence[float] = RECONSTRUCTION_FACTORS,
) -> ChainSetApprox:
    """
    Recover a chain control set from the chain-controllable part of the
    fiber over ω₀.

    An auxiliary graph with jump times in [3T, 6T] defines a return
    relation on the boxes over cell(ω₀): b -> b' when a chain from
    (cell(ω₀), b) ends at box b' over a cell near ω₀. Boxes in nontrivial
    components of that relation form F. Trajectories of the edges on paths
    from F back to F are sampled at times in [T, 2T] and quantized with the
    ε-tolerance. Only sampled nodes in one auxiliary component are kept,
    the one holding the most samples, so the result is chain controllable
    in that graph. ``details["alternatives"]`` counts the other components
    reached from the fiber.

    Raises:
        EmptyFiberError: no chain-controllable boxes over ω₀.
    """
    aux = build_chain_graph(sys, cover, grid, 3.0 * T, controls, eps, cfg, threads=threads)
    nb = cover.n_boxes
    adj = aux.adjacency
    c0 = grid.flat_index(cell_of(omega0, grid))
    near = _cells_near(grid, omega0, eps)
    in_return = np.zeros(aux.n_nodes, dtype=bool)
    in_return[(near[:, None] * nb + np.arange(nb)).ravel()] = True

    relation = np.zeros((nb, nb), dtype=bool)
    for b in range(nb):
        succ = aux.successors(c0 * nb + b)
        if succ.size == 0:
            continue
        hit = np.flatnonzero(reachable_mask(adj, succ) & in_return)
        relation[b, np.unique(hit % nb)] = True
    rel = csr_matrix(relation)
    fiber = np.concatenate(
        [g for g in scc_of_adjacency(rel) if g.size > 1 or relation[g[0], g[0]]]
        or [np.empty(0, dtype=np.int64)]
    )
    if fiber.size == 0:
        logger.error("single_fiber_empty", omega0=list(omega0.coords), eps=eps, T=T)
        raise EmptyFiberError(
            "no chain-controllable fiber set found",
            details={"omega0": list(omega0.coords), "eps": eps, "T": T},
        )
    fiber_mask = np.zeros(nb, dtype=bool)
    fiber_mask[fiber] = True

    starts = c0 * nb + fiber
    returns = np.flatnonzero(in_return & fiber_mask[np.arange(aux.n_nodes) % nb])
    on_path = reachable_mask(adj, starts) & reachable_mask(aux.reverse_adjacency, returns)
    edge_mask = on_path[aux.source] & on_path[aux.target]

    factors = tuple(float(f * T) for f in sample_factors)
    collected = [starts]
    for cid in np.unique(aux.control_id[edge_mask]):
        nodes = np.unique(aux.source[edge_mask & (aux.control_id == cid)])
        omegas, xs = aux.node_states(nodes)
        result = integrate(sys, cfg, max(factors), omegas, xs, controls[int(cid)], record_times=factors)
        for tau in factors:
            y = result.records[tau]
            rows, boxes = cover.boxes_near(y, eps)
            cells = grid.flat_cells_of(advance_array(omegas[rows], tau, sys.driving))
            collected.append(cells * nb + boxes)
    candidates = np.unique(np.concatenate(collected))

    labels = component_labels(adj)
    loops = adj.diagonal()
    sizes = np.bincount(labels)
    live = sorted({int(labels[s]) for s in starts if sizes[labels[s]] > 1 or loops[s]})
    if not live:
        logger.error("single_fiber_no_cycle", omega0=list(omega0.coords), fiber_boxes=int(fiber.size))
        raise EmptyFiberError(
            "no chain-controllable fiber set found",
            details={"omega0": list(omega0.coords), "eps": eps, "T": T},
        )
    chosen = _largest_component(labels, candidates, live)
    nodes = candidates[labels[candidates] == chosen]
    fiber = fiber[labels[c0 * nb + fiber] == chosen]
    dropped = int(candidates.size - nodes.size)
    if dropped:
        logger.warning("single_fiber_dropped_nodes", dropped=dropped, kept=int(nodes.size))
    if len(live) > 1:
        logger.warning("single_fiber_several_components", found=len(live), kept_label=chosen)
    logger.info("single_fiber_reconstructed", fiber_boxes=int(fiber.size), nodes=int(nodes.size))
    return ChainSetApprox(
        nodes, aux,
        details={
            "fiber_boxes": [int(b) for b in fiber],
            "dropped": dropped,
            "components": 1,
            "alternatives": len(live) - 1,
        },
    )


# =============================================================================
# EXPORT
# =============================================================================

def write_graph_binary(path: Path, graph: ChainGraph) -> Path:
    """Edge list: header ``CHGR``, u32 version, u64 nodes, u64 edges, then records."""
    records = np.empty(graph.n_edges, dtype=_EDGE_RECORD)
    records["source"] = graph.source
    records["target"] = graph.target
    records["control"] = graph.control_id
    records["time"] = graph.time_id
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(struct.pack("<4sIQQ", GRAPH_MAGIC, GRAPH_VERSION, graph.n_nodes, graph.n_edges))
        fh.write(records.tobytes())
    return path


def read_graph_binary(path: Path) -> tuple[int, NDArray[Any]]:
    """Node count and edge records of a file written by ``write_graph_binary``."""
    raw = path.read_bytes()
    header = struct.calcsize("<4sIQQ")
    magic, version, n_nodes, n_edges = struct.unpack("<4sIQQ", raw[:header])
    if magic != GRAPH_MAGIC or version != GRAPH_VERSION:
        raise ConfigurationError(f"{path} is not a version {GRAPH_VERSION} chain graph file")
    records = np.frombuffer(raw, dtype=_EDGE_RECORD, count=n_edges, offset=header)
    return int(n_nodes), records


def write_graph_summary(path: Path, graph: ChainGraph, **extra: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({**graph.summary(), **extra}, indent=2, sort_keys=True) + "\n")
    return path


def write_chain_sets_csv(path: Path, sets: Sequence[ChainSetApprox], cover: BoxCover, grid: DrivingGrid) -> Path:
    """Rows ``set_id, cell_0.., box, lo_1, hi_1, ..`` sorted by set then node."""
    header = ["set_id"] + [f"cell_{k}" for k in range(grid.p)] + ["box"]
    for k in range(cover.d):
        header += [f"lo_{k + 1}", f"hi_{k + 1}"]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for set_id, chain_set in enumerate(sets):
            for node in chain_set.nodes:
                cell, box = divmod(int(node), cover.n_boxes)
                lo, hi = cover.box_bounds(box)
                bounds = [repr(float(v)) for pair in zip(lo, hi, strict=True) for v in pair]
                writer.writerow([set_id, *grid.multi_index(cell), box, *bounds])
    return path


__all__ = [
    "BoxCover",
    "ChainGraph",
    "ChainSetApprox",
    "build_chain_graph",
    "build_cover",
    "chain_control_sets",
    "chain_reachable",
    "chain_reachable_from_point",
    "coarsen_nodes",
    "component_labels",
    "exact_transition_graph",
    "inflate_nodes",
    "read_graph_binary",
    "reachable_mask",
    "scc",
    "scc_of_adjacency",
    "single_fiber_reconstruct",
    "write_chain_sets_csv",
    "write_graph_binary",
    "write_graph_summary",
]
