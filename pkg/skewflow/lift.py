"""
Lifts of chain control sets to 𝒰 × Ω × M.

A lifted sample is a triple (u, ω, x) whose trajectory is certified to stay
in the 1-box inflation of a chain control set on a window [-W, W]. Its
control is the concatenation of edge controls along a random walk through
the set; the trajectory is integrated forward from an anchor at the start
of the walk so that it never relies on unstable backward integration.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
import structlog
from scipy.sparse.csgraph import breadth_first_order

from skewflow.cocycle import integrate, solve_phi
from skewflow.driving import DrivingPoint, advance, advance_array, torus_distance
from skewflow.error_handler import (
    ConfigurationError,
    InternalInconsistencyError,
    NoCycleError,
    PropertyViolationError,
    UnknownNodeError,
)
from skewflow.signals import ControlSignal, concatenate, shift, weak_star_distance


if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

    from skewflow.cocycle import IntegratorConfig, SystemDef
    from skewflow.cover_graph import ChainGraph, ChainSetApprox
    from skewflow.signals import MetricBasis


logger = structlog.get_logger(__name__)


@dataclass(eq=False)
class LiftedSample:
    control: ControlSignal
    omega: DrivingPoint
    x: tuple[float, ...]
    window: float
    node: int
    anchor_time: float
    anchor_omega: DrivingPoint
    anchor_x: tuple[float, ...]
    trajectory_nodes: tuple[int, ...] = ()
    source: ChainSetApprox | None = field(default=None, repr=False)

    def states_at(self, times: Sequence[float], sys: SystemDef, cfg: IntegratorConfig) -> NDArray[np.float64]:
        """ψ-states at ``times`` (relative to the sample), integrated from the anchor."""
        rel = [float(t) - self.anchor_time for t in times]
        if min(rel) < 0.0:
            raise ConfigurationError("requested time precedes the sample's anchor")
        horizon = max(max(rel), 1e-12)
        anchored = shift(self.control, self.anchor_time)
        result = integrate(sys, cfg, horizon, self.anchor_omega.as_array(), np.asarray(self.anchor_x),
                           anchored, record_times=tuple(sorted(set(rel))))
        return np.stack([result.records[r][0] for r in rel])

    def flowed(self, t: float, sys: SystemDef, cfg: IntegratorConfig) -> LiftedSample:
        """Φ_t applied to the sample: (θ_t u, ω·t, φ(t, ω, x, u)), same anchor."""
        state = self.states_at([t], sys, cfg)[0]
        return LiftedSample(
            shift(self.control, t),
            advance(self.omega, t, sys.driving),
            tuple(float(v) for v in state),
            self.window,
            self.node,
            self.anchor_time - t,
            self.anchor_omega,
            self.anchor_x,
            (),
            self.source,
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "control": self.control.to_json(),
            "omega": list(self.omega.coords),
            "x": list(self.x),
            "window": self.window,
            "node": self.node,
            "anchor_time": self.anchor_time,
            "anchor_omega": list(self.anchor_omega.coords),
            "anchor_x": list(self.anchor_x),
        }


# =============================================================================
# LIFTING
# =============================================================================

def _walk(
    graph: ChainGraph,
    member: NDArray[np.bool_],
    start: int,
    length: float,
    rng: np.random.Generator,
    backward: bool,
) -> list[tuple[int, int, int, float]]:
    """Random walk inside the set covering at least ``length`` time: (src, dst, control, tau)."""
    adj = graph.reverse_adjacency if backward else graph.adjacency
    steps: list[tuple[int, int, int, float]] = []
    node, total = start, 0.0
    while total < length:
        nbrs = adj.indices[adj.indptr[node] : adj.indptr[node + 1]]
        nbrs = nbrs[member[nbrs]]
        if nbrs.size == 0:
            raise NoCycleError(f"no cycle through node {start} inside the set")
        nxt = int(rng.choice(nbrs))
        src, dst = (nxt, node) if backward else (node, nxt)
        labels = graph.edge_labels(src, dst)
        control_id, time_id = labels[int(rng.integers(len(labels)))]
        tau = graph.jump_times[time_id]
        steps.append((src, dst, control_id, tau))
        total += tau
        node = nxt
    return steps


def _lift_one(
    E: ChainSetApprox,
    graph: ChainGraph,
    sys: SystemDef,
    cfg: IntegratorConfig,
    window: float,
    start: int,
    seed: int,
    inflated: NDArray[np.bool_],
    member: NDArray[np.bool_],
    time_steps: int,
) -> LiftedSample | None:
    rng = np.random.default_rng(seed)
    back = _walk(graph, member, start, window, rng, backward=True)[::-1]
    fwd = _walk(graph, member, start, window, rng, backward=False)
    edges = back + fwd
    anchor_time = -sum(tau for *_, tau in back)

    control = shift(graph.controls[edges[0][2]], -anchor_time)
    t = anchor_time
    for _, _, cid, tau in edges:
        if t != anchor_time:
            control = concatenate(control, graph.controls[cid], t)
        t += tau

    anchor_omegas, anchor_xs = graph.node_states([edges[0][0]])
    anchor_omega = DrivingPoint(tuple(anchor_omegas[0]))
    anchor_x = tuple(float(v) for v in anchor_xs[0])
    grid_times = np.linspace(-window, window, time_steps)
    rel = tuple(float(s - anchor_time) for s in grid_times)
    rel_zero = float(-anchor_time)
    records = tuple(sorted({*rel, rel_zero}))
    result = integrate(sys, cfg, max(records), anchor_omega.as_array(), np.asarray(anchor_x),
                       shift(control, anchor_time), record_times=records)
    if result.escaped[0]:
        return None
    states = np.stack([result.records[r][0] for r in rel])
    omegas = advance_array(anchor_omega.as_array(), np.asarray(rel), sys.driving)
    nodes = graph.nodes_of(omegas, states)
    if np.any(nodes < 0) or not np.all(inflated[np.maximum(nodes, 0)]):
        return None

    x0 = result.records[rel_zero][0]
    omega0 = advance(anchor_omega, rel_zero, sys.driving)
    return LiftedSample(
        control, omega0, tuple(float(v) for v in x0), window,
        graph.node_of(omega0, x0), anchor_time, anchor_omega, anchor_x,
        tuple(int(n) for n in nodes), E,
    )


def lift_samples(
    E: ChainSetApprox,
    graph: ChainGraph,
    sys: SystemDef,
    cfg: IntegratorConfig,
    window: float,
    count: int,
    rng: np.random.Generator | None = None,
    node: int | None = None,
    slack: int = 1,
    time_steps: int | None = None,
    max_rounds: int = 5,
    threads: int = 1,
) -> list[LiftedSample]:
    """
    Certified lifts of ``E``: walks through E's edges backward and forward
    for at least ``window`` time each, concatenates the edge controls and
    keeps the samples whose trajectory stays in E's ``slack``-box inflation
    on [-W, W].

    Raises:
        UnknownNodeError: ``node`` is not in E.
        NoCycleError: E has no internal cycle through a start node.
    """
    if len(E) == 0:
        raise ConfigurationError("cannot lift an empty set")
    if node is not None and int(node) not in E:
        raise UnknownNodeError(f"node {node} is outside the chain set")
    if not E.has_internal_edges():
        raise NoCycleError("the set has nodes without internal in- or out-edges")
    generator = rng if rng is not None else np.random.default_rng(0)
    steps = time_steps if time_steps is not None else int(np.ceil(8.0 * window / graph.T)) + 1
    member = np.zeros(graph.n_nodes, dtype=bool)
    member[E.nodes] = True
    inflated = np.zeros(graph.n_nodes, dtype=bool)
    inflated[list(E.inflated(slack))] = True

    samples: list[LiftedSample] = []
    attempts = 0
    for _ in range(max_rounds):
        need = count - len(samples)
        if need <= 0:
            break
        starts = [int(node)] * need if node is not None else [int(v) for v in generator.choice(E.nodes, size=need)]
        seeds = [int(s) for s in generator.integers(0, 2**32 - 1, size=need)]
        attempts += need

        def task(pair: tuple[int, int]) -> LiftedSample | None:
            return _lift_one(E, graph, sys, cfg, window, pair[0], pair[1], inflated, member, steps)

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            samples += [s for s in pool.map(task, zip(starts, seeds, strict=True)) if s is not None]
    if len(samples) < count:
        logger.warning("lift_underfilled", requested=count, certified=len(samples), attempts=attempts)
    logger.info("lift_samples", certified=len(samples), attempts=attempts, window=window)
    return samples[:count]


# =============================================================================
# Φ-CHAINS
# =============================================================================

@dataclass(frozen=True)
class PhiChainLink:
    source_control: ControlSignal
    source_omega: DrivingPoint
    source_x: tuple[float, ...]
    target_control: ControlSignal
    target_omega: DrivingPoint
    target_x: tuple[float, ...]
    jump_time: float
    control_distance: float
    driving_distance: float
    state_distance: float
    combined: float

    def to_json(self) -> dict[str, Any]:
        return {
            "source": {"omega": list(self.source_omega.coords), "x": list(self.source_x)},
            "target": {"omega": list(self.target_omega.coords), "x": list(self.target_x)},
            "jump_time": self.jump_time,
            "control_distance": self.control_distance,
            "driving_distance": self.driving_distance,
            "state_distance": self.state_distance,
            "combined": self.combined,
        }


@dataclass
class PhiChain:
    links: list[PhiChainLink]
    eps: float
    basis: dict[str, Any]
    success: bool = True

    @property
    def max_distance(self) -> float:
        return max((link.combined for link in self.links), default=0.0)

    @property
    def max_control_distance(self) -> float:
        return max((link.control_distance for link in self.links), default=0.0)

    def to_json(self) -> dict[str, Any]:
        return {
            "eps": self.eps,
            "success": self.success,
            "max_distance": self.max_distance,
            "basis": self.basis,
            "links": [link.to_json() for link in self.links],
        }


def _graph_path(graph: ChainGraph, source: int, target: int) -> list[int]:
    if source == target:
        return [source]
    _, pred = breadth_first_order(graph.adjacency, source, directed=True, return_predecessors=True)
    if pred[target] < 0:
        raise InternalInconsistencyError(
            f"no graph path from node {source} to node {target} although both lie in one chain set"
        )
    path = [target]
    while path[-1] != source:
        path.append(int(pred[path[-1]]))
    return path[::-1]


def phi_chain_between(
    s1: LiftedSample,
    s2: LiftedSample,
    eps: float,
    T: float,
    graph: ChainGraph,
    basis: MetricBasis,
    sys: SystemDef,
    cfg: IntegratorConfig,
) -> PhiChain:
    """
    (ε,T)-chain for Φ from s1 to s2.

    All triples share one concatenated control U: s1's control first, then
    the edge controls along a graph path, then s2's control. The chain
    follows s1 for T and then L = max(S, T) (S the basis window), jumps to
    the node centers of the path and finally into s2's own trajectory at
    time -L, which it follows to s2. Control jumps vanish on the basis
    window by construction; the link distance is the max of the control,
    state and (non-autonomous systems only) driving distances.

    Raises:
        InternalInconsistencyError: no graph path between the samples' nodes.
    """
    info = basis.describe()
    if s1 is s2:
        return PhiChain([], eps, info)
    lead = max(basis.window, T)
    t_a = T + lead

    # state of s1 after the lead-in selects the first graph node
    x_lead = s1.states_at([T, t_a], sys, cfg)
    omega_a = advance(s1.omega, t_a, sys.driving)
    first = graph.node_of(omega_a, x_lead[1])
    omega_tail = advance(s2.omega, -lead, sys.driving)
    x_tail = s2.states_at([-lead], sys, cfg)[0]
    last = graph.node_of(omega_tail, x_tail)
    path = _graph_path(graph, first, last)

    hops = []
    for src, dst in zip(path, path[1:], strict=False):
        control_id, time_id = graph.edge_labels(src, dst)[0]
        hops.append((graph.controls[control_id], graph.jump_times[time_id]))

    U = s1.control
    t = t_a
    for c, tau in hops:
        U = concatenate(U, c, t)
        t += tau
    t_jump = t
    U = concatenate(U, shift(s2.control, -lead), t_jump)

    # triples: (absolute time, ω, x)
    triples: list[tuple[float, DrivingPoint, NDArray[np.float64]]] = [
        (0.0, s1.omega, np.asarray(s1.x)),
        (T, advance(s1.omega, T, sys.driving), x_lead[0]),
    ]
    centers_w, centers_x = graph.node_states(path[:-1])
    t = t_a
    for k in range(len(path) - 1):
        triples.append((t, DrivingPoint(tuple(centers_w[k])), centers_x[k]))
        t += hops[k][1]
    triples.append((t_jump, omega_tail, x_tail))
    triples.append((t_jump + lead, s2.omega, np.asarray(s2.x)))

    links = []
    for idx, ((ta, wa, xa), (tb, wb, xb)) in enumerate(zip(triples, triples[1:], strict=False)):
        u_src = s1.control if idx == 0 else shift(U, ta)
        u_dst = s2.control if idx == len(triples) - 2 else shift(U, tb)
        tau = tb - ta
        image = solve_phi(tau, wa, xa, u_src, sys, cfg)
        d_u = weak_star_distance(shift(u_src, tau), u_dst, basis)
        d_w = 0.0 if sys.is_autonomous else float(torus_distance(advance(wa, tau, sys.driving).as_array(), wb.as_array()))
        d_x = float(np.max(np.abs(image - xb)))
        links.append(PhiChainLink(
            u_src, wa, tuple(float(v) for v in xa), u_dst, wb, tuple(float(v) for v in xb),
            tau, d_u, d_w, d_x, max(d_u, d_w, d_x),
        ))
    chain = PhiChain(links, eps, info, success=all(link.combined < eps for link in links))
    if not chain.success:
        logger.warning("phi_chain_failed", eps=eps, max_distance=chain.max_distance,
                       max_control_distance=chain.max_control_distance, basis=info)
    else:
        logger.debug("phi_chain", links=len(links), max_distance=chain.max_distance)
    return chain


def project_chain_set(
    samples: Sequence[LiftedSample],
    E: ChainSetApprox | None = None,
    slack: int = 1,
) -> frozenset[int]:
    """
    Nodes visited by the samples and their certified trajectories.

    Raises:
        PropertyViolationError: a node falls outside the 1-box inflation of
            the originating set.
    """
    if not samples:
        raise ConfigurationError("projection needs at least one sample")
    nodes = set()
    for sample in samples:
        nodes.add(int(sample.node))
        nodes.update(int(n) for n in sample.trajectory_nodes)
    projection = frozenset(nodes)
    origin = E if E is not None else samples[0].source
    if origin is not None:
        outside = projection - origin.inflated(slack)
        if outside:
            raise PropertyViolationError(
                f"{len(outside)} projected nodes lie outside the {slack}-box inflation of the chain set",
                details={"outside": sorted(outside)[:20]},
            )
    return projection


def samples_to_json(samples: Sequence[LiftedSample]) -> list[dict[str, Any]]:
    return [s.to_json() for s in samples]


def flow_invariance_holds(
    sample: LiftedSample,
    shifts: Sequence[float],
    sys: SystemDef,
    cfg: IntegratorConfig,
    graph: ChainGraph,
    slack: int = 1,
    time_steps: int = 41,
) -> bool:
    """Φ_t(sample) stays in the inflated set on the shrunken window [-W+|t|, W-|t|]."""
    if sample.source is None:
        raise ConfigurationError("sample has no originating set")
    inflated = sample.source.inflated(slack)
    for t in shifts:
        moved = sample.flowed(t, sys, cfg)
        reach = sample.window - abs(t)
        times = np.linspace(-reach, reach, time_steps)
        states = moved.states_at(times, sys, cfg)
        omegas = advance_array(moved.omega.as_array(), times, sys.driving)
        nodes = graph.nodes_of(omegas, states)
        if np.any(nodes < 0) or not all(int(n) in inflated for n in nodes):
            return False
    return True


__all__ = [
    "LiftedSample",
    "PhiChain",
    "PhiChainLink",
    "flow_invariance_holds",
    "lift_samples",
    "phi_chain_between",
    "project_chain_set",
    "samples_to_json",
]
