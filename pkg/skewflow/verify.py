"""
Property Suites
===============

Self-checks run by ``skewflow verify``. Each suite returns a
:class:`SuiteResult`; sample counts come from the scenario's
``analysis.verify`` block.
"""

from __future__ import annotations

import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
import structlog
from numpy.typing import NDArray
from scipy.sparse import csr_matrix

from skewflow.cocycle import IntegratorConfig, SystemDef, integrate, solve_phi
from skewflow.control_sets import (
    check_exact_condition,
    mixing_transfer,
    reach_set,
    verify_no_return,
)
from skewflow.cover_graph import (
    build_chain_graph,
    build_cover,
    chain_control_sets,
    coarsen_nodes,
    component_labels,
    inflate_nodes,
    scc_of_adjacency,
    single_fiber_reconstruct,
)
from skewflow.driving import DrivingFlowSpec, DrivingPoint, advance_array
from skewflow.error_handler import NumericalError, PropertyViolationError, SkewflowError
from skewflow.lift import lift_samples, phi_chain_between, project_chain_set
from skewflow.signals import (
    ControlRange,
    ControlSignal,
    MetricBasis,
    TestFunction,
    random_control,
    shift,
    weak_star_distance,
)

if TYPE_CHECKING:
    from skewflow.base_analysis import BaseAnalysis


logger = structlog.get_logger(__name__)

COCYCLE_TOL = 1e-6
METRIC_TOL = 1e-12
ORDER_STEPS = (1e-2, 5e-3, 2.5e-3)
ORDER_RATIO = (12.0, 20.0)
HIT_TOL = 1e-6


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict[str, Any] = field(default_factory=dict)
    elapsed: float = 0.0

    def to_json(self) -> dict[str, Any]:
        return {"status": "passed" if self.passed else "failed", "details": self.details}


# =============================================================================
# STANDALONE SUITES
# =============================================================================

def cocycle_suite(
    sys: SystemDef,
    cfg: IntegratorConfig,
    samples: int,
    rng: np.random.Generator,
    group: int = 50,
    span: float = 2.0,
) -> SuiteResult:
    """
    φ(t+s, ω, x, u) = φ(s, ω·t, φ(t, ω, x, u), θ_t u) for random t, s in
    [-span, span]. Samples sharing (t, s, u) are integrated as one batch;
    rows that escape in any leg are skipped.
    """
    worst, checked, skipped = 0.0, 0, 0
    lo, hi = sys.domain_lower, sys.domain_upper
    for start in range(0, samples, group):
        n = min(group, samples - start)
        t, s = (float(v) for v in rng.uniform(-span, span, size=2))
        u = random_control(sys.control_range, rng, span=(-2.0 * span, 2.0 * span))
        omegas = rng.uniform(0.0, 1.0, size=(n, sys.p))
        xs = rng.uniform(lo, hi, size=(n, sys.d))
        lhs = integrate(sys, cfg, t + s, omegas, xs, u)
        mid = integrate(sys, cfg, t, omegas, xs, u)
        rhs = integrate(sys, cfg, s, advance_array(omegas, t, sys.driving), mid.x, shift(u, t))
        ok = ~(lhs.escaped | mid.escaped | rhs.escaped)
        skipped += int(n - ok.sum())
        checked += int(ok.sum())
        if ok.any():
            worst = max(worst, float(np.max(np.abs(lhs.x[ok] - rhs.x[ok]))))
    return SuiteResult("cocycle", checked > 0 and worst < COCYCLE_TOL,
                       {"checked": checked, "skipped": skipped, "max_residual": worst, "tol": COCYCLE_TOL})


def order_system() -> SystemDef:
    """x' = -x^3 with a trivial control, Q = [-2, 2]."""
    return SystemDef.from_strings(
        1, DrivingFlowSpec((1.0,)), ControlRange((0.0,), (0.0,)), [["-x1^3"], ["0"]], [(-2.0, 2.0)], "order-check"
    )


def integrator_order_suite() -> SuiteResult:
    """RK4 error at t = 1.5 from x0 = 1 against (x0^-2 + 2t)^(-1/2) = 0.5."""
    sys = order_system()
    u = ControlSignal.constant((0.0,))
    exact = (1.0 + 2.0 * 1.5) ** -0.5
    errors = [
        abs(float(solve_phi(1.5, DrivingPoint((0.0,)), [1.0], u, sys, IntegratorConfig(h=h))[0]) - exact)
        for h in ORDER_STEPS
    ]
    ratios = [a / b if b > 0.0 else float("inf") for a, b in zip(errors, errors[1:], strict=False)]
    passed = all(ORDER_RATIO[0] <= r <= ORDER_RATIO[1] for r in ratios)
    return SuiteResult("integrator_order", passed, {"steps": list(ORDER_STEPS), "errors": errors, "ratios": ratios})


def transitive_closure_classes(adjacency: NDArray[np.bool_]) -> set[frozenset[int]]:
    """Mutual-reachability classes by Warshall closure."""
    n = adjacency.shape[0]
    reach = adjacency | np.eye(n, dtype=bool)
    for k in range(n):
        reach |= reach[:, k : k + 1] & reach[k : k + 1, :]
    mutual = reach & reach.T
    return {frozenset(int(v) for v in np.flatnonzero(row)) for row in mutual}


def scc_oracle_suite(graphs: int, rng: np.random.Generator, max_nodes: int = 200) -> SuiteResult:
    mismatches = []
    for index in range(graphs):
        n = int(rng.integers(1, max_nodes + 1))
        density = float(rng.uniform(0.5, 3.0)) / n
        dense = rng.random((n, n)) < density
        found = {frozenset(int(v) for v in comp) for comp in scc_of_adjacency(csr_matrix(dense))}
        if found != transitive_closure_classes(dense):
            mismatches.append(index)
    return SuiteResult("scc_oracle", not mismatches, {"graphs": graphs, "mismatches": mismatches})


def single_basis_example() -> float:
    """u = 1, v = 0 on the window S = 1, the single test function 1_[0, 1) with weight 1/2: 0.25."""
    basis = MetricBasis((TestFunction(0, 0.0, 1.0),), window=1.0, m=1)
    u = ControlSignal.constant((1.0,))
    v = ControlSignal.constant((0.0,))
    return weak_star_distance(u, v, basis)


def metric_suite(control_range: ControlRange, triples: int, rng: np.random.Generator) -> SuiteResult:
    basis = MetricBasis.dyadic(control_range.m, 1.0)
    worst_identity = worst_symmetry = worst_triangle = 0.0
    for _ in range(triples):
        u, v, w = (random_control(control_range, rng) for _ in range(3))
        duv, dvu = weak_star_distance(u, v, basis), weak_star_distance(v, u, basis)
        worst_identity = max(worst_identity, weak_star_distance(u, u, basis))
        worst_symmetry = max(worst_symmetry, abs(duv - dvu))
        worst_triangle = max(
            worst_triangle, weak_star_distance(u, w, basis) - duv - weak_star_distance(v, w, basis)
        )
    example = single_basis_example()
    passed = (
        worst_identity <= METRIC_TOL
        and worst_symmetry <= METRIC_TOL
        and worst_triangle <= METRIC_TOL
        and example == 0.25
    )
    return SuiteResult("metric", passed, {
        "triples": triples,
        "identity": worst_identity,
        "symmetry": worst_symmetry,
        "triangle_excess": worst_triangle,
        "single_basis_example": example,
    })


def reach_comparison_suite(
    sys: SystemDef,
    cfg: IntegratorConfig,
    T: float,
    controls: int,
    rng: np.random.Generator,
    points: int = 5,
    tol: float = 1e-6,
) -> SuiteResult:
    """Sampled reach intervals lie inside the corner-control interval (scalar only)."""
    if sys.d != 1:
        return SuiteResult("reach_comparison", True, {"skipped": "scalar systems only"})
    violations = []
    for _ in range(points):
        omega = DrivingPoint(tuple(float(v) for v in rng.uniform(0.0, 1.0, size=sys.p)))
        x = rng.uniform(sys.domain_lower, sys.domain_upper)
        exact = reach_set(omega, x, T, sys, None, cfg)
        sampled = reach_set(omega, x, T, sys, None, cfg, mode="sampled", rng=rng, refinements=controls)
        if sampled.lo[0] < exact.lo[0] - tol or sampled.hi[0] > exact.hi[0] + tol:
            violations.append({"omega": list(omega.coords), "x": x.tolist(),
                               "exact": [float(exact.lo[0]), float(exact.hi[0])],
                               "sampled": [float(sampled.lo[0]), float(sampled.hi[0])]})
    return SuiteResult("reach_comparison", not violations, {"points": points, "violations": violations})


# =============================================================================
# SCENARIO SUITES
# =============================================================================

def _edge_pairs(graph: Any) -> set[tuple[int, int]]:
    return set(zip(graph.source.tolist(), graph.target.tolist(), strict=True))


def eps_monotonicity_suite(ctx: BaseAnalysis) -> SuiteResult:
    """Edges and chain sets at ε are contained in those at 2ε."""
    small = ctx.chain_graph()
    large = ctx.chain_graph(eps=2.0 * ctx.eps)
    missing = len(_edge_pairs(small) - _edge_pairs(large))
    large_union = set().union(*(s.node_set for s in chain_control_sets(large)))
    outside = sum(len(s.node_set - large_union) for s in ctx.chain_sets())
    return SuiteResult("eps_monotonicity", missing == 0 and outside == 0, {
        "eps": ctx.eps, "edges_small": small.n_edges, "edges_large": large.n_edges,
        "missing_edges": missing, "nodes_outside": outside,
    })


def refinement_suite(ctx: BaseAnalysis) -> SuiteResult:
    """Chain sets on the doubled box cover map into the 1-box inflation of the coarse sets."""
    coarse = ctx.chain_graph()
    fine_cover = build_cover(ctx.config.system.domain, [2 * n for n in ctx.cover.per_dim])
    fine = build_chain_graph(
        ctx.system, fine_cover, ctx.grid, ctx.config.chain.T, ctx.controls, ctx.eps, ctx.graph_cfg,
        jump_factors=ctx.config.chain.jump_factors, threads=ctx.threads,
    )
    coarse_union = set().union(*(s.node_set for s in ctx.chain_sets()))
    allowed = inflate_nodes(coarse_union, ctx.cover, 1)
    fine_sets = chain_control_sets(fine)
    mapped = set().union(*(coarsen_nodes(s.nodes, fine, coarse) for s in fine_sets)) if fine_sets else set()
    outside = sorted(mapped - allowed)
    return SuiteResult("refinement", not outside, {
        "coarse_sets": len(ctx.chain_sets()), "fine_sets": len(fine_sets), "nodes_outside": len(outside),
    })


def baseline_suite(ctx: BaseAnalysis) -> SuiteResult:
    """
    One chain control set whose fiber interval, and that of the control set
    around α, match ``expected_interval`` within 2 δ_box; α strictly inside.
    """
    expected = ctx.config.analysis.verify.expected_interval
    if expected is None:
        return SuiteResult("baseline", True, {"skipped": "no expected interval configured"})
    tol = 2.0 * ctx.cover.delta_box
    sets = ctx.chain_sets()
    details: dict[str, Any] = {"expected": list(expected), "tol": tol, "chain_sets": len(sets)}
    passed = len(sets) == 1
    if sets:
        lo, hi = sets[0].fiber_interval()
        details["chain_interval"] = [lo, hi]
        passed &= abs(lo - expected[0]) <= tol and abs(hi - expected[1]) <= tol
    D = ctx.control_set()
    d_lo, d_hi = D.fiber_interval()
    details.update(control_interval=[d_lo, d_hi], interior=D.interior)
    passed &= abs(d_lo - expected[0]) <= tol and abs(d_hi - expected[1]) <= tol and D.interior
    return SuiteResult("baseline", bool(passed), details)


def single_fiber_suite(ctx: BaseAnalysis) -> SuiteResult:
    """Fiber reconstruction is one auxiliary SCC inside the ε-inflation of one direct chain set."""
    block = ctx.config.analysis.single_fiber
    omega0 = ctx.config.omega_or_origin(block.omega0)
    result = single_fiber_reconstruct(
        ctx.system, ctx.cover, ctx.grid, omega0, ctx.config.chain.T, ctx.eps, ctx.controls, ctx.graph_cfg,
        threads=ctx.threads,
    )
    boxes = int(np.ceil(ctx.eps / float(np.min(ctx.cover.widths))))
    outside = min(
        (len(result.node_set - inflate_nodes(s.node_set, ctx.cover, boxes)) for s in ctx.chain_sets()),
        default=len(result),
    )
    labels = component_labels(result.graph.adjacency)
    found = len(np.unique(labels[result.nodes]))
    loops = result.graph.adjacency.diagonal()
    sizes = np.bincount(labels)
    trivial = sum(1 for n in result.nodes if sizes[labels[int(n)]] == 1 and not loops[int(n)])
    return SuiteResult("single_fiber", outside == 0 and found == 1 and trivial == 0, {
        "omega0": list(omega0.coords), "nodes": len(result), "inflation_boxes": boxes,
        "nodes_outside": outside, "components": found, "trivial_nodes": trivial,
    })


def equilibrium_suite(ctx: BaseAnalysis) -> SuiteResult:
    block = ctx.config.analysis.equilibrium
    table = ctx.equilibrium_table()
    details: dict[str, Any] = {
        "horizon": table.horizon, "change": table.change, "max_residual": table.max_residual,
    }
    passed = table.max_residual < block.residual_tol and table.change < block.tol
    if ctx.system.d == 1:
        report = check_exact_condition(table, block.exact_eps, block.exact_T, ctx.system, ctx.cfg)
        details["exact_condition"] = report.to_json()
        passed &= report.eps_prime > 0.0
    return SuiteResult("equilibrium", bool(passed), details)


def no_return_suite(ctx: BaseAnalysis) -> SuiteResult:
    D = ctx.control_set()
    report = verify_no_return(D, ctx.config.analysis.equilibrium.no_return_samples, ctx.system, ctx.cfg,
                              rng=ctx.rng)
    return SuiteResult("no_return", report.ok, {
        "checked": report.checked, "skipped": report.skipped, "violations": report.violations[:10],
    })


def lift_suite(ctx: BaseAnalysis) -> SuiteResult:
    """Lifted samples, Φ-chains between random pairs and the projection round trip."""
    block = ctx.config.analysis.lift
    sets = ctx.chain_sets()
    if not sets:
        return SuiteResult("lift", False, {"error": "no chain control set to lift"})
    E = max(sets, key=len)
    graph = ctx.chain_graph()
    window = block.window if block.window is not None else 10.0 * ctx.config.chain.T
    samples = lift_samples(E, graph, ctx.system, ctx.cfg, window, block.count, rng=ctx.rng, threads=ctx.threads)
    eps = block.eps_boxes * ctx.cover.delta_box
    basis = ctx.config.build_basis()
    failures = 0
    worst = 0.0
    for _ in range(block.pairs):
        i, j = (int(v) for v in ctx.rng.integers(0, len(samples), size=2))
        chain = phi_chain_between(samples[i], samples[j], eps, ctx.config.chain.T, graph, basis, ctx.system, ctx.cfg)
        failures += not chain.success
        worst = max(worst, chain.max_distance)
    try:
        projection = project_chain_set(samples, E)
        projected_ok = True
    except PropertyViolationError:
        projection, projected_ok = frozenset(), False
    return SuiteResult("lift", len(samples) == block.count and failures == 0 and projected_ok, {
        "samples": len(samples), "window": window, "pairs": block.pairs, "chain_failures": failures,
        "max_link_distance": worst, "eps": eps, "projected_nodes": len(projection),
    })


def mixing_suite(ctx: BaseAnalysis) -> SuiteResult:
    block = ctx.config.analysis.mixing
    table = ctx.equilibrium_table()
    errors: list[float] = []
    failures: list[str] = []
    for _ in range(block.pairs):
        w1, w2 = (DrivingPoint(tuple(float(v) for v in ctx.rng.uniform(0.0, 1.0, size=ctx.system.p)))
                  for _ in range(2))
        a1, a2 = (float(table.alpha_at(w.as_array())[0]) for w in (w1, w2))
        y1 = a1 + float(ctx.rng.uniform(-0.5, 0.5)) * block.eps0
        y2 = a2 + float(ctx.rng.uniform(-0.5, 0.5)) * block.eps0
        try:
            transfer = mixing_transfer(w1, y1, w2, y2, block.eps0, table, ctx.system, ctx.cfg, block.delta,
                                       block.T, s_max=block.s_max, min_coast=block.min_coast)
        except (NumericalError, PropertyViolationError) as exc:
            failures.append(exc.message)
            continue
        errors.append(transfer.hit_error)
    passed = not failures and all(e < HIT_TOL for e in errors)
    return SuiteResult("mixing", passed, {
        "pairs": block.pairs, "max_hit_error": max(errors, default=0.0), "failures": failures,
    })


# =============================================================================
# RUNNER
# =============================================================================

def _suites(ctx: BaseAnalysis) -> dict[str, Callable[[], SuiteResult]]:
    vb = ctx.config.analysis.verify
    return {
        "cocycle": lambda: cocycle_suite(ctx.system, ctx.cfg, vb.cocycle_samples, ctx.rng),
        "integrator_order": integrator_order_suite,
        "scc_oracle": lambda: scc_oracle_suite(vb.scc_graphs, ctx.rng),
        "metric": lambda: metric_suite(ctx.system.control_range, vb.metric_triples, ctx.rng),
        "reach_comparison": lambda: reach_comparison_suite(
            ctx.system, ctx.cfg, ctx.config.chain.T, vb.reach_controls, ctx.rng),
        "eps_monotonicity": lambda: eps_monotonicity_suite(ctx),
        "refinement": lambda: refinement_suite(ctx),
        "baseline": lambda: baseline_suite(ctx),
        "single_fiber": lambda: single_fiber_suite(ctx),
        "equilibrium": lambda: equilibrium_suite(ctx),
        "no_return": lambda: no_return_suite(ctx),
        "lift": lambda: lift_suite(ctx),
        "mixing": lambda: mixing_suite(ctx),
    }


def run_suites(ctx: BaseAnalysis, names: list[str]) -> list[SuiteResult]:
    """
    Run the named suites in order. A suite that raises a numerical or
    configuration error is recorded as failed with the diagnostic.
    """
    table = _suites(ctx)
    results = []
    for name in names:
        start = time.perf_counter()
        with ctx.phase(f"suite_{name}"):
            try:
                result = table[name]()
            except SkewflowError as exc:
                result = SuiteResult(name, False, {"error": exc.message, "exit_code": exc.exit_code})
        result.elapsed = time.perf_counter() - start
        log = logger.info if result.passed else logger.warning
        log("suite_finished", suite=name, passed=result.passed, elapsed=round(result.elapsed, 3))
        results.append(result)
    return results


__all__ = [
    "SuiteResult",
    "cocycle_suite",
    "integrator_order_suite",
    "metric_suite",
    "run_suites",
    "scc_oracle_suite",
    "single_basis_example",
    "transitive_closure_classes",
]
