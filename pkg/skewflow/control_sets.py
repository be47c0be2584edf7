"""
Exact (no-jump) controllability.

Time-T reachable and controllable sets, the attracting τ-equilibrium
computed by pullback, the exact-controllability condition around it, the
control set grown from the graph of the equilibrium, the no-return check
and the three-phase mixing transfer for scalar systems.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import TYPE_CHECKING, Any, Literal

import numpy as np
import structlog
from scipy.optimize import brentq

from skewflow.cocycle import integrate, solve_phi
from skewflow.cover_graph import (
    ChainSetApprox,
    exact_transition_graph,
    inflate_nodes,
    reachable_mask,
    scc_of_adjacency,
)
from skewflow.driving import DrivingPoint, advance, advance_array, torus_distance
from skewflow.error_handler import (
    BlowUpError,
    BracketError,
    CoastingError,
    ConfigurationError,
    NonConvergenceError,
    NumericalError,
    PropertyViolationError,
    UnsupportedError,
)
from skewflow.signals import ControlSignal, control_grid, random_control, shift


if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    from skewflow.cocycle import IntegratorConfig, SystemDef
    from skewflow.cover_graph import BoxCover, ChainGraph
    from skewflow.driving import DrivingGrid


logger = structlog.get_logger(__name__)

ReachMode = Literal["exact-scalar", "sampled"]

RESIDUAL_TIMES = (-2.0, -1.0, 1.0, 2.0)
DEFAULT_S_MAX = 1.0e4
MARGIN_TOL = 1e-9
# smallest relative tolerance scipy.optimize.brentq accepts
BRENTQ_RTOL = 4.0 * float(np.finfo(np.float64).eps)


def _zero_control(sys: SystemDef) -> ControlSignal:
    return ControlSignal.constant((0.0,) * sys.m)


def _corner_controls(sys: SystemDef) -> list[ControlSignal]:
    rng_ = sys.control_range
    corners = {tuple(c) for c in product(*zip(rng_.lower, rng_.upper, strict=True))}
    return [ControlSignal.constant(c) for c in sorted(corners)]


# =============================================================================
# REACHABLE / CONTROLLABLE SETS
# =============================================================================

@dataclass(eq=False)
class ReachInterval:
    """
    R_T(ω, x) or C_T(ω, x). Scalar mode fills ``lo``/``hi`` (possibly
    infinite on a side where backward trajectories escape); sampled mode
    fills ``points`` and sets ``lo``/``hi`` to their componentwise hull.
    """

    omega: DrivingPoint
    x: tuple[float, ...]
    T: float
    lo: NDArray[np.float64]
    hi: NDArray[np.float64]
    backward: bool = False
    mode: str = "exact-scalar"
    points: NDArray[np.float64] | None = None
    witnesses: list[tuple[ControlSignal, NDArray[np.float64]]] = field(default_factory=list, repr=False)

    @property
    def unbounded_lo(self) -> bool:
        return bool(np.any(np.isneginf(self.lo)))

    @property
    def unbounded_hi(self) -> bool:
        return bool(np.any(np.isposinf(self.hi)))

    def contains(self, y: ArrayLike, tol: float = 0.0) -> bool:
        arr = np.asarray(y, dtype=np.float64)
        return bool(np.all(arr >= self.lo - tol) and np.all(arr <= self.hi + tol))

    def margin(self, center: ArrayLike) -> float:
        """Largest r with the max-norm ball B_r(center) inside [lo, hi]; negative outside."""
        c = np.asarray(center, dtype=np.float64)
        return float(np.min(np.minimum(c - self.lo, self.hi - c)))

    def to_json(self) -> dict[str, Any]:
        def enc(v: NDArray[np.float64]) -> list[float | str]:
            return [float(a) if np.isfinite(a) else ("inf" if a > 0 else "-inf") for a in v]

        return {
            "omega": list(self.omega.coords),
            "x": list(self.x),
            "T": self.T,
            "lo": enc(self.lo),
            "hi": enc(self.hi),
            "backward": self.backward,
            "mode": self.mode,
        }


def aligned_control(u: ControlSignal, T: float) -> ControlSignal:
    """Control v with φ(T, ω·(-T), φ(-T, ω, x, u), v) = x, i.e. v = θ_{-T} u."""
    return shift(u, -T)


def _endpoints(
    sys: SystemDef,
    cfg: IntegratorConfig,
    t: float,
    omega: DrivingPoint,
    x: NDArray[np.float64],
    controls: Sequence[ControlSignal],
    strict: bool,
) -> list[NDArray[np.float64]]:
    out = []
    for u in controls:
        result = integrate(sys, cfg, t, omega.as_array(), x, u)
        if not result.escaped[0]:
            out.append(result.x[0])
            continue
        if strict or t > 0.0:
            raise BlowUpError(float(result.escape_time[0]), cfg.bound_for(sys))
        assert result.escape_state is not None
        state = result.escape_state[0]
        # escaped backward: that side of C_T is unbounded
        out.append(np.where(np.isfinite(state), np.sign(state) * np.inf, np.nan))
        logger.debug("backward_escape", t=t, escape_time=float(result.escape_time[0]))
    return out


def _reach_interval(
    omega: DrivingPoint,
    x: ArrayLike,
    T: float,
    sys: SystemDef,
    controls: Sequence[ControlSignal] | None,
    cfg: IntegratorConfig,
    mode: ReachMode,
    backward: bool,
    rng: np.random.Generator | None,
    refinements: int,
    strict: bool,
) -> ReachInterval:
    if not T > 0.0:
        raise ConfigurationError(f"T must be positive, got {T}")
    x0 = np.asarray(x, dtype=np.float64).reshape(sys.d)
    t = -T if backward else T
    if mode == "exact-scalar":
        if sys.d != 1:
            raise UnsupportedError("exact-scalar reach sets need a scalar state")
        used = _corner_controls(sys)
    elif mode == "sampled":
        used = list(controls) if controls else [ControlSignal.constant(c) for c in control_grid(sys.control_range, 3)]
        generator = rng if rng is not None else np.random.default_rng(0)
        span = (min(0.0, t), max(0.0, t))
        used += [random_control(sys.control_range, generator, span=span) for _ in range(refinements)]
    else:
        raise ConfigurationError(f"unknown reach mode '{mode}'")
    ends = _endpoints(sys, cfg, t, omega, x0, used, strict)
    cloud = np.stack(ends)
    if np.any(np.isnan(cloud)):
        # escape direction unknown: unbounded on both sides
        lo = np.full(sys.d, -np.inf)
        hi = np.full(sys.d, np.inf)
    else:
        lo, hi = cloud.min(axis=0), cloud.max(axis=0)
    return ReachInterval(
        omega, tuple(float(v) for v in x0), T, lo, hi, backward, mode,
        cloud if mode == "sampled" else None,
        [(aligned_control(u, T) if backward else u, e) for u, e in zip(used, ends, strict=True)],
    )


def reach_set(
    omega: DrivingPoint,
    x: ArrayLike,
    T: float,
    sys: SystemDef,
    controls: Sequence[ControlSignal] | None,
    cfg: IntegratorConfig,
    mode: ReachMode = "exact-scalar",
    rng: np.random.Generator | None = None,
    refinements: int = 8,
) -> ReachInterval:
    """
    R_T(ω, x). Scalar mode integrates the constant controls at the corners
    of U; the comparison principle makes their endpoints the interval
    bounds. Sampled mode adds ``refinements`` random piecewise-constant
    controls to ``controls``.

    Raises:
        BlowUpError: a trajectory escaped before T.
    """
    return _reach_interval(omega, x, T, sys, controls, cfg, mode, False, rng, refinements, True)


def control_set_to(
    omega: DrivingPoint,
    x: ArrayLike,
    T: float,
    sys: SystemDef,
    controls: Sequence[ControlSignal] | None,
    cfg: IntegratorConfig,
    mode: ReachMode = "exact-scalar",
    rng: np.random.Generator | None = None,
    refinements: int = 8,
    strict: bool = False,
) -> ReachInterval:
    """
    C_T(ω, x) by backward integration. A backward escape makes that side of
    the interval infinite unless ``strict`` is set.

    Witness controls are stored aligned for the forward check
    ``φ(T, ω·(-T), y, v) = x``.
    """
    return _reach_interval(omega, x, T, sys, controls, cfg, mode, True, rng, refinements, strict)


# =============================================================================
# PULLBACK EQUILIBRIUM
# =============================================================================

def _pullback_batch(
    omegas: NDArray[np.float64],
    sys: SystemDef,
    cfg: IntegratorConfig,
    horizon: float,
    x0: NDArray[np.float64],
    threads: int = 1,
) -> NDArray[np.float64]:
    """φ(H, ω·(-H), x0, 0) for every row of ``omegas``."""
    starts = advance_array(omegas, -horizon, sys.driving)
    zero = _zero_control(sys)
    chunks = np.array_split(np.arange(starts.shape[0]), max(1, min(threads, starts.shape[0])))

    def task(idx: NDArray[np.int64]) -> NDArray[np.float64]:
        result = integrate(sys, cfg, horizon, starts[idx], np.tile(x0, (idx.size, 1)), zero)
        if result.escaped.any():
            raise NonConvergenceError(
                f"pullback trajectories escaped at horizon {horizon:g}",
                details={"escaped": int(result.escaped.sum())},
            )
        return result.x

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(task, chunks))
    return np.concatenate(parts, axis=0)


def pullback_value(
    omega: DrivingPoint | ArrayLike,
    sys: SystemDef,
    cfg: IntegratorConfig,
    horizon: float,
    x0: ArrayLike,
) -> NDArray[np.float64]:
    """Pullback approximant α(ω) ≈ φ(H, ω·(-H), x0, 0) at any driving point(s)."""
    coords = omega.as_array() if isinstance(omega, DrivingPoint) else np.asarray(omega, dtype=np.float64)
    batch = np.atleast_2d(coords)
    values = _pullback_batch(batch, sys, cfg, horizon, np.asarray(x0, dtype=np.float64).reshape(sys.d))
    return values[0] if coords.ndim == 1 else values


def check_dissipative(sys: SystemDef, samples_per_dim: int = 8) -> None:
    """
    The uncontrolled field points into Q on every face of ∂Q, sampled over
    the torus and the face.

    Raises:
        ConfigurationError: some sampled boundary point has an outward drift.
    """
    torus_axes = [np.linspace(0.0, 1.0, samples_per_dim, endpoint=False)] * sys.p
    zero = np.zeros(sys.m)
    for k in range(sys.d):
        face_axes = [
            np.linspace(lo, hi, samples_per_dim) if j != k else np.asarray([0.0])
            for j, (lo, hi) in enumerate(sys.domain)
        ]
        for side, sign in ((sys.domain[k][0], 1.0), (sys.domain[k][1], -1.0)):
            face_axes[k] = np.asarray([side])
            points = np.asarray(list(product(*torus_axes, *face_axes)))
            w, x = points[:, : sys.p], points[:, sys.p :]
            with np.errstate(all="ignore"):
                drift = sys.rhs(w, x, zero)[:, k] * sign
            if not np.all(drift > 0.0):
                raise ConfigurationError(
                    f"uncontrolled system is not dissipative on Q: outward drift on face x{k + 1}={side:g}",
                    details={"min_inward_drift": float(np.nanmin(drift))},
                )


@dataclass(eq=False)
class EquilibriumTable:
    """α sampled at the cell centers of ``grid`` (flat index order)."""

    grid: DrivingGrid
    centers: NDArray[np.float64]
    alpha: NDArray[np.float64]
    residual: NDArray[np.float64]
    horizon: float
    x0: NDArray[np.float64]
    sys: SystemDef = field(repr=False)
    cfg: IntegratorConfig = field(repr=False)
    change: float = 0.0

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual))

    def alpha_at(self, omegas: ArrayLike) -> NDArray[np.float64]:
        """α off the grid, at the converged horizon."""
        return pullback_value(np.asarray(omegas, dtype=np.float64), self.sys, self.cfg, self.horizon, self.x0)

    def neighbour_jump(self) -> float:
        """Largest |α(c) - α(c')| over grid-adjacent cells (wrapping)."""
        shape = (*self.grid.cells_per_dim, self.alpha.shape[1])
        values = self.alpha.reshape(shape)
        jump = 0.0
        for axis in range(self.grid.p):
            diff = np.abs(values - np.roll(values, 1, axis=axis))
            jump = max(jump, float(np.max(diff)))
        return jump


def pullback_equilibrium(
    grid: DrivingGrid,
    sys: SystemDef,
    cfg: IntegratorConfig,
    horizon: float,
    x0: ArrayLike,
    tol: float = 1e-5,
    residual_tol: float = 1e-4,
    horizon_max: float | None = None,
    threads: int = 1,
) -> EquilibriumTable:
    """
    Attracting τ-equilibrium by pullback: α(ω̂) = φ(H, ω̂·(-H), x0, 0).

    H doubles until consecutive tables differ by less than ``tol`` and the
    invariance residual over t ∈ {±1, ±2} is below ``residual_tol``.

    Raises:
        ConfigurationError: H <= 0 or Q is not dissipative.
        NonConvergenceError: no convergence up to ``horizon_max``.
    """
    if not horizon > 0.0:
        raise ConfigurationError(f"pullback horizon must be positive, got {horizon}")
    if grid.p != sys.p:
        raise ConfigurationError(f"grid dimension {grid.p} != driving dimension {sys.p}")
    check_dissipative(sys)
    seed = np.asarray(x0, dtype=np.float64).reshape(sys.d)
    h_max = horizon_max if horizon_max is not None else 64.0 * horizon
    centers = grid.centers_array()
    started = time.perf_counter()

    current = horizon
    alpha = _pullback_batch(centers, sys, cfg, current, seed, threads)
    change = residual_max = float("inf")
    while True:
        doubled = 2.0 * current
        refined = _pullback_batch(centers, sys, cfg, doubled, seed, threads)
        change = float(np.max(np.abs(refined - alpha)))
        current, alpha = doubled, refined
        if change < tol:
            residual = _invariance_residual(centers, alpha, sys, cfg, current, seed, threads)
            residual_max = float(np.max(residual))
            if residual_max < residual_tol:
                break
        logger.debug("pullback_iteration", horizon=current, change=change, residual=residual_max)
        if 2.0 * current > h_max:
            logger.error("pullback_not_converged", horizon=current, change=change, residual=residual_max)
            raise NonConvergenceError(
                f"pullback did not converge up to H={h_max:g}",
                details={"change": change, "residual": residual_max, "horizon": current},
            )

    logger.info("pullback_converged", horizon=current, change=change, residual=residual_max,
                cells=grid.n_cells, elapsed=round(time.perf_counter() - started, 3))
    return EquilibriumTable(grid, centers, alpha, residual, current, seed, sys, cfg, change)


def _invariance_residual(
    centers: NDArray[np.float64],
    alpha: NDArray[np.float64],
    sys: SystemDef,
    cfg: IntegratorConfig,
    horizon: float,
    seed: NDArray[np.float64],
    threads: int,
) -> NDArray[np.float64]:
    zero = _zero_control(sys)
    residual = np.zeros(centers.shape[0])
    for t in RESIDUAL_TIMES:
        moved = integrate(sys, cfg, t, centers, alpha, zero).x
        target = _pullback_batch(advance_array(centers, t, sys.driving), sys, cfg, horizon, seed, threads)
        with np.errstate(invalid="ignore"):
            gap = np.max(np.abs(moved - target), axis=1)
        residual = np.maximum(residual, np.where(np.isfinite(gap), gap, np.inf))
    return residual


def write_equilibrium_csv(path: Path, table: EquilibriumTable) -> Path:
    """Rows ``cell_0.., w1.., alpha[_k].., residual``."""
    p, d = table.grid.p, table.alpha.shape[1]
    alpha_cols = ["alpha"] if d == 1 else [f"alpha_{k + 1}" for k in range(d)]
    header = [f"cell_{k}" for k in range(p)] + [f"w{k + 1}" for k in range(p)] + alpha_cols + ["residual"]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for flat, (w, a, r) in enumerate(zip(table.centers, table.alpha, table.residual, strict=True)):
            writer.writerow([*table.grid.multi_index(flat), *map(repr, map(float, w)),
                             *map(repr, map(float, a)), repr(float(r))])
    return path


# =============================================================================
# EXACT-CONTROLLABILITY CONDITION
# =============================================================================

@dataclass(eq=False)
class ExactConditionReport:
    eps: float
    T: float
    forward_margin: NDArray[np.float64]
    backward_margin: NDArray[np.float64]
    passed: NDArray[np.bool_]
    eps_prime: float

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))

    def to_json(self) -> dict[str, Any]:
        return {
            "eps": self.eps,
            "T": self.T,
            "eps_prime": self.eps_prime,
            "all_passed": self.all_passed,
            "failed_cells": [int(c) for c in np.flatnonzero(~self.passed)],
            "min_forward_margin": float(np.min(self.forward_margin)),
            "min_backward_margin": float(np.min(self.backward_margin)),
        }


def _interval_margins(
    sys: SystemDef,
    cfg: IntegratorConfig,
    t: float,
    centers: NDArray[np.float64],
    alpha: NDArray[np.float64],
    targets: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Per cell: distance from ``targets`` to the ends of the corner-control interval at time t."""
    ends = []
    for u in _corner_controls(sys):
        result = integrate(sys, cfg, t, centers, alpha, u)
        if t > 0.0 and result.escaped.any():
            raise BlowUpError(float(np.nanmin(result.escape_time)), cfg.bound_for(sys))
        x = result.x[:, 0].copy()
        if result.escaped.any():
            assert result.escape_state is not None
            x[result.escaped] = np.sign(result.escape_state[result.escaped, 0]) * np.inf
        ends.append(x)
    stacked = np.stack(ends)
    lo, hi = np.min(stacked, axis=0), np.max(stacked, axis=0)
    y = targets[:, 0]
    return np.minimum(y - lo, hi - y)


def check_exact_condition(
    table: EquilibriumTable,
    eps: float,
    T: float,
    sys: SystemDef,
    cfg: IntegratorConfig,
) -> ExactConditionReport:
    """
    Test B_ε(α(ω̂·T)) ⊂ R_T(ω̂, α(ω̂)) and B_ε(α(ω̂·(-T))) ⊂ C_T(ω̂, α(ω̂))
    on every cell; ``eps_prime`` is the largest ε' <= ε passing everywhere
    (0 when none does).
    """
    if sys.d != 1:
        raise UnsupportedError("the exact-controllability condition is checked for scalar systems only")
    if not T > 0.0 or not eps > 0.0:
        raise ConfigurationError("eps and T must be positive")
    centers = table.centers
    fwd_targets = table.alpha_at(advance_array(centers, T, sys.driving))
    bwd_targets = table.alpha_at(advance_array(centers, -T, sys.driving))
    forward = _interval_margins(sys, cfg, T, centers, table.alpha, fwd_targets)
    backward = _interval_margins(sys, cfg, -T, centers, table.alpha, bwd_targets)
    margin = np.minimum(forward, backward)
    passed = margin >= eps
    worst = float(np.min(margin))
    eps_prime = min(eps, worst) if worst > MARGIN_TOL else 0.0
    report = ExactConditionReport(eps, T, forward, backward, passed, eps_prime)
    log = logger.info if report.all_passed else logger.warning
    log("exact_condition", eps=eps, T=T, eps_prime=eps_prime, failed=int(np.sum(~passed)))
    return report


# =============================================================================
# CONTROL SET AROUND THE EQUILIBRIUM
# =============================================================================

@dataclass(eq=False)
class ControlSetApprox(ChainSetApprox):
    """
    Mutual exact-reachability core around graph(α). ``margins`` holds, per
    cell, the number of boxes of the set below and above α along x1.
    """

    seeds: NDArray[np.int64] = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    margins: NDArray[np.int64] = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    seed_coverage: float = 1.0

    @property
    def interior(self) -> bool:
        """α lies at least one box inside every fiber."""
        return bool(self.margins.size) and bool(np.all(self.margins >= 1))

    @property
    def lower_dimensional(self) -> bool:
        return np.array_equal(self.nodes, np.unique(self.seeds))


def control_set_around(
    table: EquilibriumTable,
    sys: SystemDef,
    controls: Sequence[ControlSignal],
    T: float,
    cfg: IntegratorConfig,
    cover: BoxCover,
    grid: DrivingGrid,
    threads: int = 1,
    graph: ChainGraph | None = None,
) -> ControlSetApprox:
    """
    Grow D from the boxes containing graph(α) in the exact transition graph:
    nodes forward reachable from a seed and backward reachable to it. When
    the seeds fall into several strong components the one holding the most
    seeds is returned and the coverage is logged.

    Raises:
        NumericalError: α leaves Q on some cell.
    """
    exact = graph if graph is not None else exact_transition_graph(sys, cover, grid, T, controls, cfg, threads=threads)
    seeds = exact.nodes_of(table.centers, table.alpha)
    if np.any(seeds < 0):
        raise NumericalError(
            "graph of the equilibrium leaves Q",
            details={"cells": [int(c) for c in np.flatnonzero(seeds < 0)]},
        )
    seeds = np.unique(seeds)
    components = scc_of_adjacency(exact.adjacency)
    labels = np.empty(exact.n_nodes, dtype=np.int64)
    for label, members in enumerate(components):
        labels[members] = label
    counts = np.bincount(labels[seeds], minlength=len(components))
    best = int(np.argmax(counts))
    core = components[best]
    core_mask = np.zeros(exact.n_nodes, dtype=bool)
    core_mask[core] = True
    coverage = float(counts[best]) / seeds.size
    if coverage < 1.0:
        logger.warning("control_set_partial_seeds", coverage=coverage, components=int(np.count_nonzero(counts)))

    nb = cover.n_boxes
    seed_rows = exact.nodes_of(table.centers, table.alpha)
    margins = np.zeros((grid.n_cells, 2), dtype=np.int64)
    cells, boxes = np.divmod(core, nb)
    axis_idx = np.unravel_index(boxes, cover.per_dim)[0]
    for cell in range(grid.n_cells):
        alpha_box = int(np.unravel_index(seed_rows[cell] % nb, cover.per_dim)[0])
        fiber = axis_idx[cells == cell]
        if fiber.size == 0 or not core_mask[seed_rows[cell]]:
            margins[cell] = (-1, -1)
            continue
        margins[cell] = (alpha_box - int(fiber.min()), int(fiber.max()) - alpha_box)

    result = ControlSetApprox(core, exact, {"seed_component": best}, seeds=seeds,
                              margins=margins, seed_coverage=coverage)
    if result.lower_dimensional:
        logger.warning("control_set_lower_dimensional", nodes=len(result))
    logger.info("control_set_around", nodes=len(result), interior=result.interior, coverage=coverage)
    return result


def exact_closure_holds(D: ControlSetApprox) -> bool:
    """Every member reaches every other member inside the exact graph."""
    adj = D.graph.adjacency
    members = D.nodes
    for node in members:
        if not np.all(reachable_mask(adj, D.graph.successors(int(node)))[members]):
            return False
    return True


# =============================================================================
# NO-RETURN
# =============================================================================

@dataclass
class NoReturnReport:
    checked: int = 0
    skipped: int = 0
    violations: list[dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_no_return(
    D: ChainSetApprox,
    samples: int,
    sys: SystemDef,
    cfg: IntegratorConfig,
    rng: np.random.Generator | None = None,
    horizon: float | None = None,
    time_steps: int = 21,
    slack: int = 1,
    n_controls: int = 10,
) -> NoReturnReport:
    """
    Sample (ω, x, u, t0) with the start in D. Samples whose endpoint at t0
    leaves D are skipped; the rest must stay in the ``slack``-box inflation
    of D at every grid time in [0, t0].
    """
    if len(D) == 0:
        raise ConfigurationError("no-return check needs a nonempty set")
    generator = rng if rng is not None else np.random.default_rng(0)
    graph = D.graph
    t_end = horizon if horizon is not None else 2.0 * graph.T
    times = tuple(float(t) for t in np.linspace(0.0, t_end, time_steps))
    inflated = np.zeros(graph.n_nodes, dtype=bool)
    inflated[list(inflate_nodes(D.nodes, graph.cover, slack))] = True
    member = np.zeros(graph.n_nodes, dtype=bool)
    member[D.nodes] = True
    report = NoReturnReport()

    per_control = np.array_split(np.arange(samples), n_controls)
    for group in per_control:
        if group.size == 0:
            continue
        u = random_control(sys.control_range, generator, span=(0.0, t_end))
        nodes = generator.choice(D.nodes, size=group.size)
        omegas, xs = graph.node_states(nodes)
        omegas = omegas + generator.uniform(-0.5, 0.5, size=omegas.shape) * np.asarray(graph.grid.sides)
        xs = xs + generator.uniform(-0.5, 0.5, size=xs.shape) * graph.cover.widths
        stop = generator.integers(1, time_steps, size=group.size)
        result = integrate(sys, cfg, t_end, omegas, xs, u, record_times=times)
        quantized = np.stack([
            graph.nodes_of(advance_array(omegas, t, sys.driving), result.records[t]) for t in times
        ], axis=1)
        for row in range(group.size):
            path = quantized[row, : stop[row] + 1]
            if path[0] < 0 or not member[path[0]] or path[-1] < 0 or not member[path[-1]]:
                report.skipped += 1
                continue
            report.checked += 1
            bad = np.flatnonzero((path < 0) | ~inflated[np.maximum(path, 0)])
            if bad.size:
                report.violations.append({
                    "omega": omegas[row].tolist(),
                    "x": xs[row].tolist(),
                    "t0": times[stop[row]],
                    "first_exit": times[int(bad[0])],
                })
    log = logger.info if report.ok else logger.warning
    log("no_return", checked=report.checked, skipped=report.skipped, violations=len(report.violations))
    return report


# =============================================================================
# MIXING
# =============================================================================

@dataclass(eq=False)
class MixingTransfer:
    control: ControlSignal
    total_time: float
    coast_time: float
    phases: list[dict[str, Any]]
    hit_error: float
    driving_error: float

    def to_json(self) -> dict[str, Any]:
        return {
            "phases": self.phases,
            "total_time": self.total_time,
            "coast_time": self.coast_time,
            "hit_error": self.hit_error,
            "driving_error": self.driving_error,
            "control": self.control.to_json(),
        }


def _steer(
    sys: SystemDef,
    cfg: IntegratorConfig,
    T: float,
    omega: DrivingPoint,
    y: float,
    target: float,
    xtol: float,
) -> tuple[float, float]:
    """Constant control c with φ(T, ω, y, c) = target, and the achieved endpoint."""
    lo, hi = sys.control_range.lower[0], sys.control_range.upper[0]

    def endpoint(c: float) -> float:
        result = integrate(sys, cfg, T, omega.as_array(), np.asarray([y]), ControlSignal.constant((c,)))
        if result.escaped[0]:
            return float("inf") if c > 0 else float("-inf")
        return float(result.x[0, 0])

    f_lo, f_hi = endpoint(lo) - target, endpoint(hi) - target
    if abs(f_lo) < xtol:
        return lo, f_lo + target
    if abs(f_hi) < xtol:
        return hi, f_hi + target
    if lo == hi or f_lo * f_hi > 0.0:
        raise BracketError(
            f"target {target:.6g} is not between the extremal endpoints"
            f" [{f_lo + target:.6g}, {f_hi + target:.6g}]",
            details={"target": target, "lo": f_lo + target, "hi": f_hi + target},
        )
    c = float(brentq(lambda v: endpoint(v) - target, lo, hi, xtol=xtol, rtol=BRENTQ_RTOL, maxiter=200))
    return c, endpoint(c)


def find_coasting_time(
    omega_from: DrivingPoint,
    omega_to: DrivingPoint,
    sys: SystemDef,
    delta: float,
    s_max: float = DEFAULT_S_MAX,
    min_coast: float = 0.0,
    step: float | None = None,
    chunk: int = 1_000_000,
) -> float:
    """
    Smallest grid time S in [min_coast, s_max] with d(ω_from·S, ω_to) < δ.

    Raises:
        CoastingError: no such S; carries the best distance found.
    """
    ds = step if step is not None else 0.5 * delta / float(np.max(np.abs(sys.driving.as_array())))
    start = omega_from.as_array()
    goal = omega_to.as_array()
    best_d, best_s = float("inf"), min_coast
    n_total = int(np.floor((s_max - min_coast) / ds)) + 1
    for first in range(0, n_total, chunk):
        s = min_coast + ds * np.arange(first, min(first + chunk, n_total), dtype=np.float64)
        dist = torus_distance(advance_array(start, s, sys.driving), goal)
        hit = np.flatnonzero(dist < delta)
        if hit.size:
            return float(s[hit[0]])
        k = int(np.argmin(dist))
        if dist[k] < best_d:
            best_d, best_s = float(dist[k]), float(s[k])
    logger.error("coasting_failed", best_distance=best_d, best_time=best_s, s_max=s_max, delta=delta)
    raise CoastingError(
        f"no coasting time up to S_max={s_max:g} brings the driving within {delta:g}",
        best_distance=best_d,
        best_time=best_s,
    )


def mixing_transfer(
    omega1: DrivingPoint,
    y1: float,
    omega2: DrivingPoint,
    y2: float,
    eps0: float,
    table: EquilibriumTable,
    sys: SystemDef,
    cfg: IntegratorConfig,
    delta: float,
    T: float,
    s_max: float = DEFAULT_S_MAX,
    min_coast: float = 0.0,
    hit_tol: float = 1e-6,
) -> MixingTransfer:
    """
    Three-phase transfer y1 over ω1 to y2 over ω2 ≈ ω1·Tₙ.

    Steer to α(ω1·T) in time T, coast with u ≡ 0 for S so that ω1·(T+S) is
    δ-close to ω2·(-T), then steer onto y2 in time T. Tₙ = 2T + S.

    Raises:
        UnsupportedError: state or control is not scalar.
        ConfigurationError: an endpoint is farther than ε0 from α.
        BracketError: a steering target lies outside the reachable interval.
        CoastingError: no δ-approach up to ``s_max``.
        PropertyViolationError: the assembled control misses y2.
    """
    if sys.d != 1 or sys.m != 1:
        raise UnsupportedError("mixing transfer is implemented for scalar state and control only")
    if not T > 0.0:
        raise ConfigurationError(f"T must be positive, got {T}")
    a1 = float(table.alpha_at(omega1.as_array())[0])
    a2 = float(table.alpha_at(omega2.as_array())[0])
    if abs(y1 - a1) >= eps0 or abs(y2 - a2) >= eps0:
        raise ConfigurationError(
            f"endpoints must lie within eps0={eps0:g} of the equilibrium",
            details={"y1": y1, "alpha1": a1, "y2": y2, "alpha2": a2},
        )
    xtol = 1e-13

    # phase 1
    omega_t = advance(omega1, T, sys.driving)
    target1 = float(table.alpha_at(omega_t.as_array())[0])
    c1, reached1 = _steer(sys, cfg, T, omega1, y1, target1, xtol)

    # phase 2
    omega_goal = advance(omega2, -T, sys.driving)
    coast = find_coasting_time(omega_t, omega_goal, sys, delta, s_max, min_coast)
    reached2 = reached1
    if coast > 0.0:
        result = integrate(sys, cfg, coast, omega_t.as_array(), np.asarray([reached1]), _zero_control(sys))
        if result.escaped[0]:
            raise NumericalError("coasting trajectory escaped", details={"coast_time": coast})
        reached2 = float(result.x[0, 0])

    # phase 3
    omega_s = advance(omega1, T + coast, sys.driving)
    c3, reached3 = _steer(sys, cfg, T, omega_s, reached2, y2, xtol)

    total = 2.0 * T + coast
    if coast > 0.0:
        control = ControlSignal((0.0, T, T + coast), ((c1,), (0.0,), (c3,)), window=total)
    else:
        control = ControlSignal((0.0, T), ((c1,), (c3,)), window=total)
    if abs(reached3 - y2) >= hit_tol:
        logger.warning("mixing_phase_miss", phase_error=abs(reached3 - y2))
    hit_error = float(abs(solve_phi(total, omega1, [y1], control, sys, cfg)[0] - y2))
    driving_error = float(torus_distance(advance(omega1, total, sys.driving).as_array(), omega2.as_array()))
    phases = [
        {"name": "steer_to_equilibrium", "start": 0.0, "duration": T, "control": c1, "error": abs(reached1 - target1)},
        {"name": "coast", "start": T, "duration": coast, "control": 0.0},
        {"name": "steer_to_target", "start": T + coast, "duration": T, "control": c3},
    ]
    if hit_error >= hit_tol or driving_error >= delta + eps0:
        raise PropertyViolationError(
            "mixing transfer missed its target",
            details={"hit_error": hit_error, "driving_error": driving_error},
        )
    logger.info("mixing_transfer", total_time=total, coast_time=coast, hit_error=hit_error,
                driving_error=driving_error)
    return MixingTransfer(control, total, coast, phases, hit_error, driving_error)


def write_mixing_json(path: Path, transfer: MixingTransfer) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(transfer.to_json(), indent=2) + "\n")
    return path


@dataclass
class TubeReport:
    passed: bool
    max_distance: float
    window: float
    escaped: bool = False


def alpha_tube_window(
    table: EquilibriumTable,
    omega: DrivingPoint,
    x: ArrayLike,
    u: ControlSignal,
    eps0: float,
    window: float,
    sys: SystemDef,
    cfg: IntegratorConfig,
    samples: int = 41,
) -> TubeReport:
    """
    Finite-window certificate for the mixing set: d(φ(t, ω, x, u), α(ω·t)) < ε0
    for t on an even grid of [-W, W].
    """
    x0 = np.asarray(x, dtype=np.float64).reshape(sys.d)
    worst = 0.0
    for sign in (1.0, -1.0):
        times = tuple(float(t) for t in sign * np.linspace(0.0, window, samples // 2 + 1))
        result = integrate(sys, cfg, sign * window, omega.as_array(), x0, u, record_times=times)
        if result.escaped[0]:
            return TubeReport(False, float("inf"), window, escaped=True)
        states = np.stack([result.records[t][0] for t in times])
        alpha = table.alpha_at(advance_array(omega.as_array(), np.asarray(times), sys.driving))
        worst = max(worst, float(np.max(np.abs(states - alpha))))
    return TubeReport(worst < eps0, worst, window)


__all__ = [
    "ControlSetApprox",
    "EquilibriumTable",
    "ExactConditionReport",
    "MixingTransfer",
    "NoReturnReport",
    "ReachInterval",
    "TubeReport",
    "aligned_control",
    "alpha_tube_window",
    "check_dissipative",
    "check_exact_condition",
    "control_set_around",
    "control_set_to",
    "exact_closure_holds",
    "find_coasting_time",
    "mixing_transfer",
    "pullback_equilibrium",
    "pullback_value",
    "reach_set",
    "verify_no_return",
    "write_equilibrium_csv",
    "write_mixing_json",
]
