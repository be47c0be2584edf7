"""
Base Analysis Module
====================

Common plumbing for every analysis run: resolved scenario, system, grids,
integrator settings, output directory, phase timings and the manifest.
"""

from __future__ import annotations

import time
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from skewflow.cocycle import IntegratorConfig, SystemDef
from skewflow.control_sets import ControlSetApprox, EquilibriumTable, control_set_around, pullback_equilibrium
from skewflow.cover_graph import BoxCover, ChainGraph, ChainSetApprox, build_chain_graph, chain_control_sets
from skewflow.driving import DrivingGrid
from skewflow.manifest import build_manifest, write_manifest
from skewflow.scenarios import ScenarioConfig
from skewflow.settings import SkewflowSettings, get_settings
from skewflow.signals import ControlSignal


logger = structlog.get_logger(__name__)


class BaseAnalysis:
    """
    Base class of the CLI analyses.

    Subclasses implement :meth:`execute`, which runs the analysis, writes
    artifacts through :meth:`artifact` and returns a JSON-able result
    summary. :meth:`run` wraps it with timing and the manifest.
    """

    command: str = "analysis"

    def __init__(
        self,
        config: ScenarioConfig,
        settings: SkewflowSettings | None = None,
        output_dir: Path | None = None,
        threads: int | None = None,
    ):
        self.config = config
        self.settings = settings or get_settings()
        self.threads = threads or self.settings.threads
        self.output_dir = self._resolve_output_dir(output_dir)

        self.system: SystemDef = config.build_system()
        self.grid: DrivingGrid = config.build_grid()
        self.cover: BoxCover = config.build_cover()
        self.cfg: IntegratorConfig = config.build_integrator()
        self.graph_cfg: IntegratorConfig = config.build_integrator(for_graph=True)
        self.controls: list[ControlSignal] = config.build_controls()
        self.eps = config.chain_eps(self.system, self.cover, self.grid)
        self.rng = np.random.default_rng(config.analysis.seed)

        self.timings: dict[str, float] = {}
        self.artifacts: list[str] = []
        self.suites: dict[str, dict[str, Any]] | None = None
        self._started = 0.0
        self._graphs: dict[tuple[float, tuple[int, ...]], ChainGraph] = {}
        self._chain_sets: list[ChainSetApprox] | None = None
        self._table: EquilibriumTable | None = None
        self._control_set: ControlSetApprox | None = None

    def _resolve_output_dir(self, override: Path | None) -> Path:
        if override is not None:
            return override
        if self.settings.output_dir is not None:
            return self.settings.output_dir / self.config.name / self.command
        if self.config.output.directory:
            return Path(self.config.output.directory) / self.command
        return Path("runs") / self.config.name / self.command

    def wants(self, fmt: str) -> bool:
        return fmt in self.config.output.formats

    # ---- context manager --------------------------------------------------

    def __enter__(self) -> BaseAnalysis:
        self._started = time.perf_counter()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info("analysis_started", command=self.command, scenario=self.config.name,
                    threads=self.threads, output=str(self.output_dir))
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        self.timings["total"] = time.perf_counter() - self._started
        if exc_type is None:
            logger.info("analysis_finished", command=self.command, elapsed=round(self.timings["total"], 3))
        else:
            logger.error("analysis_failed", command=self.command, error=str(exc_val))

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        logger.info("phase_started", phase=name)
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            logger.info("phase_finished", phase=name, elapsed=round(elapsed, 3))

    def artifact(self, name: str) -> Path:
        """Path for an output file, registered for the manifest."""
        path = self.output_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.artifacts:
            self.artifacts.append(name)
        return path

    # ---- shared stages (cached per run) -----------------------------------

    def chain_graph(self, eps: float | None = None, cover: BoxCover | None = None) -> ChainGraph:
        eps = self.eps if eps is None else eps
        cover = cover or self.cover
        key = (eps, cover.per_dim)
        if key not in self._graphs:
            with self.phase("chain_graph"):
                self._graphs[key] = build_chain_graph(
                    self.system, cover, self.grid, self.config.chain.T, self.controls, eps, self.graph_cfg,
                    jump_factors=self.config.chain.jump_factors,
                    sample_corners=self.config.discretization.sample_corners,
                    threads=self.threads,
                )
        return self._graphs[key]

    def chain_sets(self) -> list[ChainSetApprox]:
        if self._chain_sets is None:
            graph = self.chain_graph()
            with self.phase("scc"):
                self._chain_sets = chain_control_sets(graph)
        return self._chain_sets

    def equilibrium_table(self) -> EquilibriumTable:
        if self._table is None:
            block = self.config.analysis.equilibrium
            seed = block.seed if block.seed is not None else self.system.domain_upper
            with self.phase("equilibrium"):
                self._table = pullback_equilibrium(
                    self.grid, self.system, self.cfg, block.horizon, seed,
                    tol=block.tol, residual_tol=block.residual_tol, horizon_max=block.horizon_max,
                    threads=self.threads,
                )
        return self._table

    def control_set(self) -> ControlSetApprox:
        if self._control_set is None:
            table = self.equilibrium_table()
            with self.phase("control_set"):
                self._control_set = control_set_around(
                    table, self.system, self.controls, self.config.chain.T, self.graph_cfg,
                    self.cover, self.grid, threads=self.threads,
                )
        return self._control_set

    # ---- pipeline ---------------------------------------------------------

    def execute(self) -> dict[str, Any]:
        raise NotImplementedError

    def write_manifest(self, results: dict[str, Any] | None = None) -> Path:
        manifest = build_manifest(
            self.config.resolved(),
            self.config.config_hash(),
            self.command,
            self.timings,
            self.artifacts,
            self.suites,
            results,
        )
        return write_manifest(self.output_dir, manifest)

    def run(self) -> dict[str, Any]:
        """Execute inside the context and always write the manifest."""
        results: dict[str, Any] = {}
        with self:
            try:
                results = self.execute()
            finally:
                self.timings.setdefault("total", time.perf_counter() - self._started)
                self.write_manifest(results)
        return results


__all__ = ["BaseAnalysis"]
