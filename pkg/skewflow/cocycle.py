"""
Control-affine system x' = f0(ω·t, x) + Σ u_i(t) f_i(ω·t, x) and its
solution maps.

φ is computed by fixed-step RK4 whose steps never straddle a control
breakpoint, so every step sees a constant control. The driving component
is advanced exactly by ``driving.advance_array``; only the state carries
integration error. Negative times integrate with a negative step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import TYPE_CHECKING, Any

import numpy as np
import structlog

from skewflow.driving import DrivingFlowSpec, DrivingPoint, advance, advance_array
from skewflow.error_handler import BlowUpError, ConfigurationError
from skewflow.expr import Expr, compile_expr, free_variables, parse, to_text
from skewflow.signals import ControlRange, ControlSignal, shift


if TYPE_CHECKING:
    from collections.abc import Callable, Sequence
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray


logger = structlog.get_logger(__name__)

DOMAIN_INFLATION = 0.10


@dataclass(frozen=True)
class SystemDef:
    """
    Vector fields f_0..f_m (each d expressions) over torus angles w1..wp and
    state coordinates x1..xd, control range U and compact domain Q.
    """

    d: int
    driving: DrivingFlowSpec
    control_range: ControlRange
    fields: tuple[tuple[Expr, ...], ...]
    domain: tuple[tuple[float, float], ...]
    name: str = "system"
    parameters: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ConfigurationError("state dimension must be >= 1")
        if len(self.fields) != self.control_range.m + 1:
            raise ConfigurationError(
                f"expected {self.control_range.m + 1} vector fields (f0..f{self.control_range.m}),"
                f" got {len(self.fields)}"
            )
        if any(len(f) != self.d for f in self.fields):
            raise ConfigurationError(f"every vector field needs {self.d} components")
        if len(self.domain) != self.d:
            raise ConfigurationError(f"domain needs {self.d} intervals")
        for lo, hi in self.domain:
            if not lo < hi:
                raise ConfigurationError(f"degenerate domain interval [{lo}, {hi}]")
        allowed = set(self.variable_names)
        for component in self.fields:
            for e in component:
                extra = free_variables(e) - allowed
                if extra:
                    raise ConfigurationError(
                        f"expression {to_text(e)} uses {sorted(extra)};"
                        f" only {', '.join(self.variable_names)} are allowed"
                    )

    @classmethod
    def from_strings(
        cls,
        d: int,
        driving: DrivingFlowSpec,
        control_range: ControlRange,
        field_texts: Sequence[Sequence[str]],
        domain: Sequence[Sequence[float]],
        name: str = "system",
        parameters: dict[str, Any] | None = None,
    ) -> SystemDef:
        fields = tuple(tuple(parse(text) for text in component) for component in field_texts)
        return cls(
            d,
            driving,
            control_range,
            fields,
            tuple((float(lo), float(hi)) for lo, hi in domain),
            name,
            dict(parameters or {}),
        )

    @property
    def p(self) -> int:
        return self.driving.p

    @property
    def m(self) -> int:
        return self.control_range.m

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(f"w{k + 1}" for k in range(self.p)) + tuple(f"x{k + 1}" for k in range(self.d))

    @cached_property
    def is_autonomous(self) -> bool:
        """No torus angle enters any vector field."""
        used: set[str] = set()
        for component in self.fields:
            for e in component:
                used |= free_variables(e)
        return not any(name.startswith("w") for name in used)

    @cached_property
    def domain_lower(self) -> NDArray[np.float64]:
        return np.asarray([lo for lo, _ in self.domain])

    @cached_property
    def domain_upper(self) -> NDArray[np.float64]:
        return np.asarray([hi for _, hi in self.domain])

    @property
    def diameter(self) -> float:
        """Max-norm diameter of Q."""
        return float(np.max(self.domain_upper - self.domain_lower))

    def inflated_domain(self, fraction: float = DOMAIN_INFLATION) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        pad = fraction * (self.domain_upper - self.domain_lower)
        return self.domain_lower - pad, self.domain_upper + pad

    @cached_property
    def _compiled(self) -> tuple[tuple[Callable[[Any], Any], ...], ...]:
        return tuple(tuple(compile_expr(e) for e in component) for component in self.fields)

    def rhs(self, w: NDArray[np.float64], x: NDArray[np.float64], u: ArrayLike) -> NDArray[np.float64]:
        """
        Evaluate the right-hand side for a batch.

        Args:
            w: (n, p) torus points.
            x: (n, d) states.
            u: (m,) or (n, m) control values.
        """
        env: dict[str, Any] = {f"w{k + 1}": w[:, k] for k in range(self.p)}
        env.update({f"x{k + 1}": x[:, k] for k in range(self.d)})
        u_arr = np.asarray(u, dtype=np.float64)
        out = np.empty_like(x)
        compiled = self._compiled
        for k in range(self.d):
            value = compiled[0][k](env)
            for i in range(self.m):
                ui = u_arr[..., i]
                if np.ndim(ui) == 0 and ui == 0.0:
                    continue
                value = value + ui * compiled[i + 1][k](env)
            out[:, k] = value
        return out

    def validate(self, samples_per_dim: int = 5) -> None:
        """All fields finite on a sample grid of Ω × Q̃ (Q inflated by 10%)."""
        lo, hi = self.inflated_domain()
        state_axes = [np.linspace(a, b, samples_per_dim) for a, b in zip(lo, hi, strict=True)]
        torus_axes = [np.linspace(0.0, 1.0, samples_per_dim, endpoint=False)] * self.p
        points = np.asarray(list(product(*torus_axes, *state_axes)))
        w, x = points[:, : self.p], points[:, self.p :]
        with np.errstate(all="ignore"):
            for corner in product(*zip(self.control_range.lower, self.control_range.upper, strict=True)):
                values = self.rhs(w, x, np.asarray(corner))
                if not np.all(np.isfinite(values)):
                    raise ConfigurationError(
                        f"vector fields of '{self.name}' are not finite on the inflated domain"
                    )

    def describe(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "d": self.d,
            "frequencies": list(self.driving.frequencies),
            "control_lower": list(self.control_range.lower),
            "control_upper": list(self.control_range.upper),
            "fields": [[to_text(e) for e in component] for component in self.fields],
            "domain": [list(iv) for iv in self.domain],
            "parameters": self.parameters,
        }


@dataclass(frozen=True)
class ExtendedState:
    omega: DrivingPoint
    x: tuple[float, ...]

    def as_array(self) -> NDArray[np.float64]:
        return np.asarray(self.x, dtype=np.float64)


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings; ``blowup_bound`` defaults to 10 * diam(Q)."""

    h: float = 1e-3
    method: str = "rk4"
    blowup_bound: float | None = None

    def __post_init__(self) -> None:
        if not self.h > 0.0:
            raise ConfigurationError(f"step size must be positive, got {self.h}")
        if self.method != "rk4":
            raise ConfigurationError(f"unsupported integration method '{self.method}'")

    def bound_for(self, sys: SystemDef) -> float:
        bound = self.blowup_bound if self.blowup_bound is not None else 10.0 * sys.diameter
        if bound <= sys.diameter:
            raise ConfigurationError(
                f"blow-up bound {bound:g} must exceed the domain diameter {sys.diameter:g}"
            )
        return bound


@dataclass
class Integration:
    """Result of a batch integration."""

    t: float
    x: NDArray[np.float64]
    escaped: NDArray[np.bool_]
    escape_time: NDArray[np.float64]
    left_domain: NDArray[np.bool_]
    records: dict[float, NDArray[np.float64]]
    left_records: dict[float, NDArray[np.bool_]] = field(default_factory=dict)
    escape_state: NDArray[np.float64] | None = None

    @property
    def ok(self) -> NDArray[np.bool_]:
        return ~self.escaped


def _knots(t: float, u: ControlSignal, record_times: Sequence[float]) -> list[float]:
    inner = set(u.breakpoints_between(0.0, t))
    inner.update(r for r in record_times if min(0.0, t) < r < max(0.0, t))
    return [0.0, *sorted(inner, reverse=t < 0.0), t]


def integrate(
    sys: SystemDef,
    cfg: IntegratorConfig,
    t: float,
    omegas: ArrayLike,
    xs: ArrayLike,
    u: ControlSignal,
    record_times: Sequence[float] = (),
) -> Integration:
    """
    Integrate a batch of initial conditions under one control.

    Rows whose max-norm exceeds the blow-up bound are frozen at NaN and
    reported in ``escaped``/``escape_time``. ``left_domain`` flags rows
    that left Q inflated by 10% at some step.
    """
    if u.m != sys.m:
        raise ConfigurationError(f"control has {u.m} channels, system expects {sys.m}")
    w0 = np.atleast_2d(np.asarray(omegas, dtype=np.float64))
    x = np.array(np.atleast_2d(np.asarray(xs, dtype=np.float64)), copy=True)
    n = x.shape[0]
    if w0.shape[0] == 1 and n > 1:
        w0 = np.repeat(w0, n, axis=0)
    bound = cfg.bound_for(sys)
    q_lo, q_hi = sys.inflated_domain()

    escaped = np.zeros(n, dtype=bool)
    escape_time = np.full(n, np.nan)
    escape_state = np.full_like(x, np.nan)
    left_domain = np.zeros(n, dtype=bool)
    records: dict[float, NDArray[np.float64]] = {}
    left_records: dict[float, NDArray[np.bool_]] = {}
    if 0.0 in record_times:
        records[0.0] = x.copy()
        left_records[0.0] = left_domain.copy()

    def f(s: float, state: NDArray[np.float64], value: NDArray[np.float64]) -> NDArray[np.float64]:
        return sys.rhs(advance_array(w0, s, sys.driving), state, value)

    knots = _knots(t, u, record_times)
    with np.errstate(all="ignore"):
        for a, b in zip(knots, knots[1:], strict=False):
            length = b - a
            steps = max(1, math.ceil(abs(length) / cfg.h - 1e-9))
            step = length / steps
            value = np.asarray(u.value_at(a + 0.5 * length), dtype=np.float64)
            for k in range(steps):
                s = a + k * step
                k1 = f(s, x, value)
                k2 = f(s + 0.5 * step, x + 0.5 * step * k1, value)
                k3 = f(s + 0.5 * step, x + 0.5 * step * k2, value)
                k4 = f(s + step, x + step * k3, value)
                x = x + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                norm = np.max(np.abs(x), axis=1)
                fresh = ~escaped & ~(norm <= bound)
                if fresh.any():
                    escaped |= fresh
                    escape_time[fresh] = s + step
                    escape_state[fresh] = x[fresh]
                    x[fresh] = np.nan
                left_domain |= ~escaped & np.any((x < q_lo) | (x > q_hi), axis=1)
            if b in record_times:
                records[b] = x.copy()
                left_records[b] = left_domain.copy()
    if escaped.any():
        logger.debug("integration_escapes", escaped=int(escaped.sum()), batch=n, t=t)
    return Integration(t, x, escaped, escape_time, left_domain, records, left_records, escape_state)


# =============================================================================
# SOLUTION MAPS
# =============================================================================

def solve_phi(
    t: float,
    omega: DrivingPoint,
    x: ArrayLike,
    u: ControlSignal,
    sys: SystemDef,
    cfg: IntegratorConfig,
) -> NDArray[np.float64]:
    """
    φ(t, ω, x, u).

    Raises:
        BlowUpError: |x(s)| exceeded the blow-up bound between 0 and t.
    """
    x0 = np.asarray(x, dtype=np.float64).reshape(sys.d)
    if t == 0.0:
        return x0.copy()
    result = integrate(sys, cfg, t, omega.as_array(), x0, u)
    if result.escaped[0]:
        raise BlowUpError(float(result.escape_time[0]), cfg.bound_for(sys))
    return result.x[0]


def solve_psi(
    t: float,
    omega: DrivingPoint,
    x: ArrayLike,
    u: ControlSignal,
    sys: SystemDef,
    cfg: IntegratorConfig,
) -> ExtendedState:
    """ψ(t, ω, x, u) = (ω·t, φ(t, ω, x, u))."""
    state = solve_phi(t, omega, x, u, sys, cfg)
    return ExtendedState(advance(omega, t, sys.driving), tuple(float(v) for v in state))


def flow_step(
    t: float,
    u: ControlSignal,
    omega: DrivingPoint,
    x: ArrayLike,
    sys: SystemDef,
    cfg: IntegratorConfig,
) -> tuple[ControlSignal, ExtendedState]:
    """Φ(t, u, ω, x) = (θ_t u, ψ(t, ω, x, u))."""
    return shift(u, t), solve_psi(t, omega, x, u, sys, cfg)


def cocycle_residual(
    t: float,
    s: float,
    omega: DrivingPoint,
    x: ArrayLike,
    u: ControlSignal,
    sys: SystemDef,
    cfg: IntegratorConfig,
) -> float:
    """|φ(t+s, ω, x, u) - φ(s, ω·t, φ(t, ω, x, u), θ_t u)| in the max-norm."""
    lhs = solve_phi(t + s, omega, x, u, sys, cfg)
    mid = solve_phi(t, omega, x, u, sys, cfg)
    rhs = solve_phi(s, advance(omega, t, sys.driving), mid, shift(u, t), sys, cfg)
    return float(np.max(np.abs(lhs - rhs)))


# =============================================================================
# TRAJECTORY DUMPS
# =============================================================================

def sample_trajectory(
    t: float,
    omega: DrivingPoint,
    x: ArrayLike,
    u: ControlSignal,
    sys: SystemDef,
    cfg: IntegratorConfig,
    samples: int = 101,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """
    Times, torus points and states on an even grid of [0, t].

    Raises:
        BlowUpError: the trajectory escaped before t.
    """
    if t == 0.0 or samples < 2:
        raise ConfigurationError("trajectory needs t != 0 and at least two samples")
    times = np.linspace(0.0, t, samples)
    result = integrate(sys, cfg, t, omega.as_array(), np.asarray(x, dtype=np.float64), u,
                       record_times=[float(s) for s in times])
    if result.escaped[0]:
        raise BlowUpError(float(result.escape_time[0]), cfg.bound_for(sys))
    states = np.stack([result.records[float(s)][0] for s in times])
    omegas = advance_array(omega.as_array(), times, sys.driving)
    return times, omegas, states


def write_trajectory_csv(
    path: Path,
    times: NDArray[np.float64],
    omegas: NDArray[np.float64],
    states: NDArray[np.float64],
    u: ControlSignal,
) -> Path:
    """CSV with columns t, w1..wp, x1..xd, u1..um."""
    p, d = omegas.shape[1], states.shape[1]
    header = ["t"] + [f"w{k + 1}" for k in range(p)] + [f"x{k + 1}" for k in range(d)] + [
        f"u{k + 1}" for k in range(u.m)
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s, w, xv in zip(times, omegas, states, strict=True):
            writer.writerow([repr(float(s)), *map(repr, map(float, w)), *map(repr, map(float, xv)),
                             *map(repr, u.value_at(float(s)))])
    return path


__all__ = [
    "ExtendedState",
    "Integration",
    "IntegratorConfig",
    "SystemDef",
    "cocycle_residual",
    "flow_step",
    "integrate",
    "sample_trajectory",
    "solve_phi",
    "solve_psi",
    "write_trajectory_csv",
]
