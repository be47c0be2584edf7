"""
Scenario Configuration Module
=============================

YAML scenario files validated by pydantic models. A scenario bundles the
system definition, the discretization, chain parameters, integrator
settings, the analyses to run and where results go.

Built-in scenarios live in ``config/scenarios/<name>.yml``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from skewflow.cocycle import IntegratorConfig, SystemDef
from skewflow.cover_graph import BoxCover, build_cover
from skewflow.driving import DrivingFlowSpec, DrivingGrid, DrivingPoint
from skewflow.error_handler import ConfigurationError
from skewflow.settings import get_settings
from skewflow.signals import ControlRange, ControlSignal, MetricBasis, sample_controls


HULL_TEMPLATE = "-x1^3 + ({c})*x1^2 + {epsilon!r}*(({b})*x1 + ({a}))"


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


# =============================================================================
# SYSTEM
# =============================================================================

class HullBlock(_Block):
    """Coefficients of x' = -x^3 + c x^2 + ε (b x + a) + u as torus expressions."""

    a: str = "cos(2*pi*w1)"
    b: str = "sin(2*pi*w2)"
    c: str = "cos(2*pi*w1) + cos(2*pi*w2)"
    epsilon: float = 0.05


class SystemBlock(_Block):
    name: str = "system"
    d: int = Field(default=1, ge=1, le=3)
    frequencies: list[float] = Field(min_length=1)
    control_lower: list[float] = Field(min_length=1)
    control_upper: list[float] = Field(min_length=1)
    domain: list[tuple[float, float]]
    fields: list[list[str]] | None = None
    hull: HullBlock | None = None

    @model_validator(mode="after")
    def _check_shape(self) -> SystemBlock:
        if (self.fields is None) == (self.hull is None):
            raise ValueError("set exactly one of 'fields' and 'hull'")
        if len(self.control_lower) != len(self.control_upper):
            raise ValueError("control_lower and control_upper need the same length")
        for lo, hi in zip(self.control_lower, self.control_upper, strict=True):
            if lo > hi:
                raise ValueError(f"control bound rho1={lo} exceeds rho2={hi}")
        if len(self.domain) != self.d:
            raise ValueError(f"domain needs {self.d} intervals")
        for lo, hi in self.domain:
            if not lo < hi:
                raise ValueError(f"degenerate domain interval [{lo}, {hi}]")
        if self.hull is not None and (self.d != 1 or len(self.control_lower) != 1):
            raise ValueError("the hull family is scalar: d = 1 and one control")
        return self

    @property
    def p(self) -> int:
        return len(self.frequencies)

    def field_texts(self) -> list[list[str]]:
        if self.hull is not None:
            h = self.hull
            return [[HULL_TEMPLATE.format(a=h.a, b=h.b, c=h.c, epsilon=h.epsilon)], ["1"]]
        assert self.fields is not None
        return self.fields

    def build(self) -> SystemDef:
        """Parse the expressions; parse errors propagate unchanged."""
        parameters: dict[str, Any] = {}
        if self.hull is not None:
            parameters = self.hull.model_dump()
        return SystemDef.from_strings(
            self.d,
            DrivingFlowSpec(tuple(self.frequencies)),
            ControlRange(tuple(self.control_lower), tuple(self.control_upper)),
            self.field_texts(),
            self.domain,
            self.name,
            parameters,
        )


# =============================================================================
# DISCRETIZATION / CHAIN / INTEGRATOR
# =============================================================================

class DiscretizationBlock(_Block):
    boxes_per_dim: list[int] = Field(min_length=1)
    driving_cells: list[int] = Field(min_length=1)
    control_levels: int = Field(default=5, ge=2)
    sample_corners: bool = False

    @field_validator("boxes_per_dim", "driving_cells")
    @classmethod
    def _positive(cls, value: list[int]) -> list[int]:
        if any(v < 1 for v in value):
            raise ValueError("subdivision counts must be >= 1")
        return value


class ChainBlock(_Block):
    T: float = Field(gt=0.0)
    eps: float | None = Field(default=None, gt=0.0)
    jump_factors: list[float] = Field(default_factory=lambda: [1.0, 1.5, 2.0], min_length=1)

    @field_validator("jump_factors")
    @classmethod
    def _in_range(cls, value: list[float]) -> list[float]:
        if any(not 1.0 <= f <= 2.0 for f in value):
            raise ValueError("jump-time factors must lie in [1, 2]")
        return value


class IntegratorBlock(_Block):
    h: float = Field(default=1e-3, gt=0.0)
    blowup_bound: float | None = Field(default=None, gt=0.0)
    graph_h: float | None = Field(default=None, gt=0.0)


# =============================================================================
# ANALYSES
# =============================================================================

class SimulateBlock(_Block):
    omega: list[float] | None = None
    x: list[float] | None = None
    T: float = 5.0
    control: dict[str, Any] | None = None
    samples: int = Field(default=101, ge=2)


class SingleFiberBlock(_Block):
    omega0: list[float] | None = None


class EquilibriumBlock(_Block):
    horizon: float = Field(default=8.0, gt=0.0)
    seed: list[float] | None = None
    tol: float = Field(default=1e-5, gt=0.0)
    residual_tol: float = Field(default=1e-4, gt=0.0)
    horizon_max: float | None = None
    exact_eps: float = Field(default=0.2, gt=0.0)
    exact_T: float = Field(default=2.0, gt=0.0)
    no_return_samples: int = Field(default=500, ge=0)


class LiftBlock(_Block):
    window: float | None = Field(default=None, gt=0.0)
    count: int = Field(default=50, ge=1)
    pairs: int = Field(default=20, ge=0)
    eps_boxes: float = Field(default=3.0, gt=0.0)
    basis_depth: int = Field(default=4, ge=0)
    basis_window: float = Field(default=1.0, gt=0.0)


class MixingBlock(_Block):
    pairs: int = Field(default=10, ge=1)
    eps0: float = Field(default=0.05, gt=0.0)
    delta: float = Field(default=1e-2, gt=0.0)
    T: float = Field(default=2.0, gt=0.0)
    s_max: float = Field(default=1.0e4, gt=0.0)
    min_coast: float = Field(default=0.0, ge=0.0)


VerifySuite = Literal[
    "cocycle", "integrator_order", "scc_oracle", "metric", "reach_comparison",
    "eps_monotonicity", "refinement", "baseline", "single_fiber", "equilibrium",
    "no_return", "lift", "mixing",
]


class VerifyBlock(_Block):
    suites: list[VerifySuite] = Field(
        default_factory=lambda: ["cocycle", "integrator_order", "scc_oracle", "metric", "eps_monotonicity"]
    )
    cocycle_samples: int = Field(default=1000, ge=1)
    scc_graphs: int = Field(default=50, ge=1)
    metric_triples: int = Field(default=500, ge=1)
    reach_controls: int = Field(default=500, ge=1)
    expected_interval: tuple[float, float] | None = None


class AnalysisBlock(_Block):
    seed: int = 0
    simulate: SimulateBlock = Field(default_factory=SimulateBlock)
    single_fiber: SingleFiberBlock = Field(default_factory=SingleFiberBlock)
    equilibrium: EquilibriumBlock = Field(default_factory=EquilibriumBlock)
    lift: LiftBlock = Field(default_factory=LiftBlock)
    mixing: MixingBlock = Field(default_factory=MixingBlock)
    verify: VerifyBlock = Field(default_factory=VerifyBlock)


class OutputBlock(_Block):
    directory: str | None = None
    formats: list[Literal["csv", "json", "binary", "plot"]] = Field(
        default_factory=lambda: ["csv", "json", "binary", "plot"]
    )


# =============================================================================
# SCENARIO
# =============================================================================

class ScenarioConfig(_Block):
    """A complete, validated scenario."""

    system: SystemBlock
    discretization: DiscretizationBlock
    chain: ChainBlock
    integrator: IntegratorBlock = Field(default_factory=IntegratorBlock)
    analysis: AnalysisBlock = Field(default_factory=AnalysisBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def _check_consistency(self) -> ScenarioConfig:
        if len(self.discretization.boxes_per_dim) != self.system.d:
            raise ValueError(f"boxes_per_dim needs {self.system.d} entries")
        if len(self.discretization.driving_cells) != self.system.p:
            raise ValueError(f"driving_cells needs {self.system.p} entries (one per frequency)")
        diameter = max(hi - lo for lo, hi in self.system.domain)
        bound = self.integrator.blowup_bound
        if bound is not None and bound <= diameter:
            raise ValueError(f"blow-up bound B={bound:g} must exceed diam(Q)={diameter:g}")
        return self

    @property
    def name(self) -> str:
        return self.system.name

    # ---- builders ---------------------------------------------------------

    def build_system(self) -> SystemDef:
        system = self.system.build()
        system.validate()
        return system

    def build_grid(self) -> DrivingGrid:
        return DrivingGrid(tuple(self.discretization.driving_cells))

    def build_cover(self) -> BoxCover:
        return build_cover(self.system.domain, self.discretization.boxes_per_dim)

    def build_integrator(self, for_graph: bool = False) -> IntegratorConfig:
        h = self.integrator.graph_h if for_graph and self.integrator.graph_h else self.integrator.h
        return IntegratorConfig(h=h, blowup_bound=self.integrator.blowup_bound)

    def build_controls(self) -> list[ControlSignal]:
        rng_ = ControlRange(tuple(self.system.control_lower), tuple(self.system.control_upper))
        return sample_controls(rng_, self.discretization.control_levels)

    def build_basis(self) -> MetricBasis:
        lift = self.analysis.lift
        return MetricBasis.dyadic(len(self.system.control_lower), lift.basis_window, lift.basis_depth)

    def chain_eps(self, system: SystemDef, cover: BoxCover, grid: DrivingGrid) -> float:
        """Configured ε, else the smallest value meeting the graph precondition."""
        if self.chain.eps is not None:
            return self.chain.eps
        return cover.delta_box if system.is_autonomous else max(cover.delta_box, grid.diameter)

    def omega_or_origin(self, coords: list[float] | None) -> DrivingPoint:
        return DrivingPoint(tuple(coords)) if coords is not None else DrivingPoint.origin(self.system.p)

    def resolved(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        canonical = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# =============================================================================
# LOADING
# =============================================================================

def list_scenarios(directory: Path | None = None) -> list[str]:
    root = directory or get_settings().scenario_dir
    return sorted(p.stem for p in root.glob("*.yml"))


def resolve_scenario_path(name_or_path: str | Path, directory: Path | None = None) -> Path:
    candidate = Path(name_or_path)
    if candidate.is_file():
        return candidate
    root = directory or get_settings().scenario_dir
    builtin = root / f"{name_or_path}.yml"
    if builtin.is_file():
        return builtin
    raise ConfigurationError(
        f"scenario '{name_or_path}' not found (built-in: {', '.join(list_scenarios(root)) or 'none'})"
    )


def parse_scenario(data: dict[str, Any]) -> ScenarioConfig:
    """
    Validate a scenario mapping.

    Raises:
        ConfigurationError: schema or invariant violation.
        ParseError: a vector field expression does not parse.
    """
    if "resolved_config" in data:
        data = data["resolved_config"]
    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigurationError(f"invalid scenario: {problems}") from None
    config.build_system()
    return config


def load_scenario(name_or_path: str | Path, directory: Path | None = None) -> ScenarioConfig:
    """Load a built-in scenario by name, a YAML file, or a run manifest (JSON)."""
    path = resolve_scenario_path(name_or_path, directory)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping at the top level")
    return parse_scenario(data)


def write_schema(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(ScenarioConfig.model_json_schema(), indent=2, sort_keys=True) + "\n")
    return path


__all__ = [
    "AnalysisBlock",
    "ChainBlock",
    "DiscretizationBlock",
    "HullBlock",
    "IntegratorBlock",
    "OutputBlock",
    "ScenarioConfig",
    "SystemBlock",
    "list_scenarios",
    "load_scenario",
    "parse_scenario",
    "resolve_scenario_path",
    "write_schema",
]
