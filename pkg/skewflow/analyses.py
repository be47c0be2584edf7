"""
Analyses Module
===============

One :class:`BaseAnalysis` subclass per CLI subcommand. Each writes the
export formats of its module plus the run manifest.
"""

from __future__ import annotations

import json
from typing import Any

import numpy as np
import structlog

from skewflow.base_analysis import BaseAnalysis
from skewflow.cocycle import sample_trajectory, write_trajectory_csv
from skewflow.control_sets import (
    check_exact_condition,
    mixing_transfer,
    reach_set,
    write_equilibrium_csv,
    write_mixing_json,
)
from skewflow.cover_graph import (
    ChainSetApprox,
    single_fiber_reconstruct,
    write_chain_sets_csv,
    write_graph_binary,
    write_graph_summary,
)
from skewflow.driving import DrivingPoint
from skewflow.error_handler import EmptyGraphError, PropertyViolationError
from skewflow.lift import lift_samples, phi_chain_between, project_chain_set, samples_to_json
from skewflow.plot_data import emit_plot_data
from skewflow.signals import ControlSignal
from skewflow.verify import run_suites


logger = structlog.get_logger(__name__)


def _write_json(path: Any, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _set_summary(sets: list[ChainSetApprox]) -> list[dict[str, Any]]:
    return [{"nodes": len(s), "interval": list(s.fiber_interval())} for s in sets]


class SimulateAnalysis(BaseAnalysis):
    command = "simulate"

    def execute(self) -> dict[str, Any]:
        block = self.config.analysis.simulate
        omega = self.config.omega_or_origin(block.omega)
        x = block.x if block.x is not None else 0.5 * (self.system.domain_lower + self.system.domain_upper)
        u = ControlSignal.from_json(block.control) if block.control else ControlSignal.constant((0.0,) * self.system.m)
        with self.phase("integrate"):
            times, omegas, states = sample_trajectory(block.T, omega, x, u, self.system, self.cfg, block.samples)
        write_trajectory_csv(self.artifact("trajectory.csv"), times, omegas, states, u)
        return {"final_state": states[-1].tolist(), "samples": block.samples}


class ChainSetsAnalysis(BaseAnalysis):
    command = "chain-sets"

    def export_sets(self, name: str, sets: list[ChainSetApprox]) -> None:
        if self.wants("csv"):
            write_chain_sets_csv(self.artifact(f"{name}.csv"), sets, self.cover, self.grid)
        if self.wants("plot"):
            for path in emit_plot_data("chain-sets", sets, self.output_dir, name):
                self.artifact(path.name)

    def execute(self) -> dict[str, Any]:
        graph = self.chain_graph()
        sets = self.chain_sets()
        if self.wants("binary"):
            write_graph_binary(self.artifact("graph.bin"), graph)
        if self.wants("json"):
            write_graph_summary(self.artifact("graph.json"), graph, chain_sets=len(sets))
        self.export_sets("chain_sets", sets)
        return {"graph": graph.summary(), "chain_sets": _set_summary(sets)}


class SingleFiberAnalysis(ChainSetsAnalysis):
    command = "single-fiber"

    def execute(self) -> dict[str, Any]:
        omega0 = self.config.omega_or_origin(self.config.analysis.single_fiber.omega0)
        with self.phase("single_fiber"):
            result = single_fiber_reconstruct(
                self.system, self.cover, self.grid, omega0, self.config.chain.T, self.eps, self.controls,
                self.graph_cfg, threads=self.threads,
            )
        self.export_sets("single_fiber", [result])
        return {"omega0": list(omega0.coords), **_set_summary([result])[0], **result.details}


class EquilibriumAnalysis(BaseAnalysis):
    command = "equilibrium"

    def execute(self) -> dict[str, Any]:
        table = self.equilibrium_table()
        if self.wants("csv"):
            write_equilibrium_csv(self.artifact("equilibrium.csv"), table)
        if self.wants("plot"):
            for path in emit_plot_data("equilibrium", table, self.output_dir):
                self.artifact(path.name)
        results: dict[str, Any] = {
            "horizon": table.horizon, "change": table.change, "max_residual": table.max_residual,
            "neighbour_jump": table.neighbour_jump(),
        }
        if self.system.d == 1:
            block = self.config.analysis.equilibrium
            with self.phase("exact_condition"):
                report = check_exact_condition(table, block.exact_eps, block.exact_T, self.system, self.cfg)
            results["exact_condition"] = report.to_json()
            if self.wants("json"):
                _write_json(self.artifact("exact_condition.json"), report.to_json())
        return results


class ControlSetsAnalysis(ChainSetsAnalysis):
    command = "control-sets"

    REACH_FAN_FACTORS = (0.25, 0.5, 1.0, 2.0)

    def execute(self) -> dict[str, Any]:
        D = self.control_set()
        self.export_sets("control_sets", [D])
        summary = {
            **_set_summary([D])[0],
            "interior": D.interior,
            "lower_dimensional": D.lower_dimensional,
            "seed_coverage": D.seed_coverage,
            "margins": D.margins.tolist(),
        }
        if D.lower_dimensional:
            logger.warning("control_set_lower_dimensional", nodes=len(D))
        if self.wants("json"):
            _write_json(self.artifact("control_sets.json"), summary)
        if self.system.d == 1 and self.wants("plot"):
            omega = DrivingPoint.origin(self.system.p)
            x = self.equilibrium_table().alpha_at(omega.as_array())
            with self.phase("reach_fan"):
                fan = [reach_set(omega, x, f * self.config.chain.T, self.system, None, self.cfg)
                       for f in self.REACH_FAN_FACTORS]
            for path in emit_plot_data("reach-fan", fan, self.output_dir):
                self.artifact(path.name)
        return summary


class LiftVerifyAnalysis(BaseAnalysis):
    command = "lift-verify"

    def execute(self) -> dict[str, Any]:
        block = self.config.analysis.lift
        sets = self.chain_sets()
        if not sets:
            raise EmptyGraphError("no chain control set to lift")
        E = max(sets, key=len)
        graph = self.chain_graph()
        window = block.window if block.window is not None else 10.0 * self.config.chain.T
        with self.phase("lift"):
            samples = lift_samples(E, graph, self.system, self.cfg, window, block.count, rng=self.rng,
                                   threads=self.threads)
        eps = block.eps_boxes * self.cover.delta_box
        basis = self.config.build_basis()
        chains = []
        with self.phase("phi_chains"):
            for _ in range(block.pairs):
                i, j = (int(v) for v in self.rng.integers(0, len(samples), size=2))
                chains.append(phi_chain_between(samples[i], samples[j], eps, self.config.chain.T, graph, basis,
                                                self.system, self.cfg))
        if self.wants("json"):
            _write_json(self.artifact("lifted_samples.json"), samples_to_json(samples))
            _write_json(self.artifact("phi_chains.json"), [c.to_json() for c in chains])
        projection = project_chain_set(samples, E)
        failed = sum(not c.success for c in chains)
        if failed:
            raise PropertyViolationError(
                f"{failed} of {len(chains)} Φ-chains exceed ε={eps:g}",
                details={"max_distance": max(c.max_distance for c in chains)},
            )
        return {"samples": len(samples), "window": window, "chains": len(chains), "eps": eps,
                "projected_nodes": len(projection), "set_nodes": len(E)}


class MixingAnalysis(BaseAnalysis):
    command = "mixing"

    def execute(self) -> dict[str, Any]:
        block = self.config.analysis.mixing
        table = self.equilibrium_table()
        transfers = []
        with self.phase("mixing"):
            for index in range(block.pairs):
                w1, w2 = (DrivingPoint(tuple(float(v) for v in self.rng.uniform(0.0, 1.0, size=self.system.p)))
                          for _ in range(2))
                y1, y2 = (float(table.alpha_at(w.as_array())[0]) + float(self.rng.uniform(-0.5, 0.5)) * block.eps0
                          for w in (w1, w2))
                transfer = mixing_transfer(w1, y1, w2, y2, block.eps0, table, self.system, self.cfg, block.delta,
                                           block.T, s_max=block.s_max, min_coast=block.min_coast)
                if self.wants("json"):
                    write_mixing_json(self.artifact(f"mixing_{index}.json"), transfer)
                transfers.append(transfer)
        return {
            "pairs": len(transfers),
            "max_hit_error": max(t.hit_error for t in transfers),
            "max_total_time": max(t.total_time for t in transfers),
        }


class VerifyAnalysis(BaseAnalysis):
    command = "verify"

    def execute(self) -> dict[str, Any]:
        results = run_suites(self, list(self.config.analysis.verify.suites))
        self.suites = {r.name: r.to_json() for r in results}
        failed = [r.name for r in results if not r.passed]
        if failed:
            raise PropertyViolationError(f"property suites failed: {', '.join(failed)}", details={"failed": failed})
        return {"suites": len(results), "passed": int(np.sum([r.passed for r in results]))}


ANALYSES: dict[str, type[BaseAnalysis]] = {
    cls.command: cls
    for cls in (
        SimulateAnalysis,
        ChainSetsAnalysis,
        SingleFiberAnalysis,
        ControlSetsAnalysis,
        EquilibriumAnalysis,
        LiftVerifyAnalysis,
        MixingAnalysis,
        VerifyAnalysis,
    )
}


__all__ = [
    "ANALYSES",
    "ChainSetsAnalysis",
    "ControlSetsAnalysis",
    "EquilibriumAnalysis",
    "LiftVerifyAnalysis",
    "MixingAnalysis",
    "SimulateAnalysis",
    "SingleFiberAnalysis",
    "VerifyAnalysis",
]
