"""
Run Manifest Module
===================

Every run leaves a ``manifest.json`` next to its artifacts: the resolved
scenario (enough to re-run it), its hash, library versions, phase timings,
artifact paths and, for ``verify``, the status of each property suite.
"""

from __future__ import annotations

import json
import platform
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

import numpy as np
import scipy
import structlog


logger = structlog.get_logger(__name__)

MANIFEST_NAME = "manifest.json"


def package_version() -> str:
    try:
        return version("skewflow")
    except PackageNotFoundError:
        return "0.0.0+local"


def versions() -> dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "skewflow": package_version(),
    }


def build_manifest(
    resolved_config: dict[str, Any],
    config_hash: str,
    command: str,
    timings: dict[str, float],
    artifacts: list[str],
    suites: dict[str, dict[str, Any]] | None = None,
    results: dict[str, Any] | None = None,
) -> dict[str, Any]:
    manifest: dict[str, Any] = {
        "command": command,
        "config_hash": config_hash,
        "versions": versions(),
        "timings": {k: round(v, 6) for k, v in timings.items()},
        "resolved_config": resolved_config,
        "artifacts": sorted(artifacts),
    }
    if suites is not None:
        manifest["suites"] = suites
    if results:
        manifest["results"] = results
    return manifest


def write_manifest(directory: Path, manifest: dict[str, Any]) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("manifest_written", path=str(path), artifacts=len(manifest["artifacts"]))
    return path


def read_manifest(path: Path) -> dict[str, Any]:
    return json.loads(path.read_text(encoding="utf-8"))


def without_timings(manifest: dict[str, Any]) -> dict[str, Any]:
    """Manifest content that must be identical across reruns of one config."""
    return {k: v for k, v in manifest.items() if k not in ("timings", "versions")}


__all__ = ["MANIFEST_NAME", "build_manifest", "read_manifest", "versions", "without_timings", "write_manifest"]
