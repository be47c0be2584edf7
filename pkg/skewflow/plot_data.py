"""
Plot Data Module
================

Gnuplot-ready whitespace-separated tables with a ``#`` header line:

* ``chain-sets``: one file per set, rows ``w1 x1 [x2 ..]`` (cell center
  angle, box center).
* ``equilibrium``: rows ``w1 alpha residual``.
* ``reach-fan``: rows ``T lo hi`` for reach intervals at growing horizons.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from numpy.typing import NDArray

from skewflow.control_sets import EquilibriumTable, ReachInterval
from skewflow.cover_graph import ChainSetApprox
from skewflow.error_handler import ConfigurationError


logger = structlog.get_logger(__name__)


def write_table(path: Path, header: Sequence[str], rows: NDArray[np.float64] | Sequence[Sequence[float]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in rows:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    return path


def _chain_sets(result: Sequence[ChainSetApprox], directory: Path, stem: str) -> list[Path]:
    if not result:
        return [write_table(directory / f"{stem}.dat", ["w1", "x1"], [])]
    paths = []
    for set_id, chain_set in enumerate(result):
        omegas, xs = chain_set.graph.node_states(chain_set.nodes)
        header = ["w1"] + [f"x{k + 1}" for k in range(xs.shape[1])]
        rows = np.unique(np.column_stack([omegas[:, 0], xs]), axis=0)
        paths.append(write_table(directory / f"{stem}_{set_id}.dat", header, rows))
    return paths


def _equilibrium(result: EquilibriumTable | None, directory: Path, stem: str) -> list[Path]:
    if result is None:
        return [write_table(directory / f"{stem}.dat", ["w1", "alpha", "residual"], [])]
    d = result.alpha.shape[1]
    header = ["w1"] + (["alpha"] if d == 1 else [f"alpha_{k + 1}" for k in range(d)]) + ["residual"]
    order = np.lexsort(result.centers.T[::-1])
    rows = np.column_stack([result.centers[order, 0], result.alpha[order], result.residual[order]])
    return [write_table(directory / f"{stem}.dat", header, rows)]


def _reach_fan(result: Sequence[ReachInterval], directory: Path, stem: str) -> list[Path]:
    rows = [(r.T, float(r.lo[0]), float(r.hi[0])) for r in sorted(result, key=lambda r: r.T)]
    return [write_table(directory / f"{stem}.dat", ["T", "lo", "hi"], rows)]


_EMITTERS: dict[str, Callable[[Any, Path, str], list[Path]]] = {
    "chain-sets": _chain_sets,
    "equilibrium": _equilibrium,
    "reach-fan": _reach_fan,
}


def emit_plot_data(kind: str, result: Any, directory: Path, stem: str | None = None) -> list[Path]:
    """
    Write the plot tables for one result set.

    Raises:
        ConfigurationError: unknown result kind.
    """
    emitter = _EMITTERS.get(kind)
    if emitter is None:
        raise ConfigurationError(f"unknown plot data kind '{kind}' (known: {', '.join(sorted(_EMITTERS))})")
    paths = emitter(result, directory, stem or kind.replace("-", "_"))
    logger.debug("plot_data_written", kind=kind, files=len(paths))
    return paths


__all__ = ["emit_plot_data", "write_table"]
