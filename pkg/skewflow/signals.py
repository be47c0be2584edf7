"""
Admissible controls: piecewise-constant signals with values in a box U.

A signal with breakpoints t_0 < ... < t_K and values v_0..v_K takes v_j on
[t_j, t_{j+1}), v_K on [t_K, inf) and v_0 on (-inf, t_0). Signals are
closed under the shift θ_t u = u(t + .) and under concatenation. The
weak* metric is the truncated series over a finite L1 test family.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from itertools import product
from typing import TYPE_CHECKING, Any

import numpy as np

from skewflow.error_handler import ConfigurationError


if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray


@dataclass(frozen=True)
class ControlRange:
    """Compact box U = prod_k [rho1_k, rho2_k]."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ConfigurationError("control range needs matching, nonempty bounds")
        for lo, hi in zip(self.lower, self.upper, strict=True):
            if lo > hi:
                raise ConfigurationError(f"control bound {lo} > {hi}")

    @property
    def m(self) -> int:
        return len(self.lower)

    def contains(self, value: Sequence[float], tol: float = 0.0) -> bool:
        return all(
            lo - tol <= v <= hi + tol
            for v, lo, hi in zip(value, self.lower, self.upper, strict=True)
        )

    @property
    def is_singleton(self) -> bool:
        return self.lower == self.upper


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control with a representation window [-S, S]."""

    breakpoints: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]
    window: float = 1.0

    def __post_init__(self) -> None:
        if len(self.breakpoints) != len(self.values) or not self.values:
            raise ConfigurationError("signal needs one value per breakpoint")
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:], strict=False)):
            raise ConfigurationError("signal breakpoints must be strictly increasing")
        m = len(self.values[0])
        if any(len(v) != m for v in self.values):
            raise ConfigurationError("signal values must share one dimension")
        # merge pieces that do not change the value
        keep_b, keep_v = [self.breakpoints[0]], [tuple(map(float, self.values[0]))]
        for b, v in zip(self.breakpoints[1:], self.values[1:], strict=True):
            v = tuple(map(float, v))
            if v != keep_v[-1]:
                keep_b.append(b)
                keep_v.append(v)
        if len(keep_v) == 1:
            keep_b = [0.0]
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in keep_b))
        object.__setattr__(self, "values", tuple(keep_v))

    @classmethod
    def constant(cls, value: Sequence[float], window: float = 1.0) -> ControlSignal:
        return cls((0.0,), (tuple(float(v) for v in value),), window)

    @property
    def m(self) -> int:
        return len(self.values[0])

    @property
    def is_constant(self) -> bool:
        return len(self.values) == 1

    def value_at(self, t: float) -> tuple[float, ...]:
        idx = bisect.bisect_right(self.breakpoints, t) - 1
        return self.values[max(idx, 0)]

    def breakpoints_between(self, a: float, b: float) -> list[float]:
        """Breakpoints strictly inside (min(a,b), max(a,b))."""
        lo, hi = min(a, b), max(a, b)
        return [t for t in self.breakpoints if lo < t < hi]

    def integral(self, channel: int, a: float, b: float) -> float:
        """Exact integral of channel ``channel`` over [a, b], a <= b."""
        if b <= a:
            return 0.0
        edges = [a, *self.breakpoints_between(a, b), b]
        total = 0.0
        for lo, hi in zip(edges, edges[1:], strict=False):
            total += self.value_at(0.5 * (lo + hi))[channel] * (hi - lo)
        return total

    def within(self, control_range: ControlRange, tol: float = 0.0) -> bool:
        return all(control_range.contains(v, tol) for v in self.values)

    def to_json(self) -> dict[str, Any]:
        return {
            "breakpoints": list(self.breakpoints),
            "values": [list(v) for v in self.values],
            "window": self.window,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any] | str) -> ControlSignal:
        if isinstance(data, str):
            data = json.loads(data)
        return cls(
            tuple(data["breakpoints"]),
            tuple(tuple(v) for v in data["values"]),
            float(data.get("window", 1.0)),
        )


def shift(u: ControlSignal, t: float) -> ControlSignal:
    """θ_t u = u(t + .): breakpoints move left by t."""
    if t == 0.0 or u.is_constant:
        return u
    return ControlSignal(tuple(b - t for b in u.breakpoints), u.values, u.window)


def concatenate(u: ControlSignal, v: ControlSignal, switch: float) -> ControlSignal:
    """Equals u on (-inf, switch) and v(. - switch) on [switch, inf)."""
    if u.m != v.m:
        raise ConfigurationError(f"cannot concatenate signals of dimension {u.m} and {v.m}")
    breakpoints: list[float] = []
    values: list[tuple[float, ...]] = []
    for b, val in zip(u.breakpoints, u.values, strict=True):
        if b < switch:
            breakpoints.append(b)
            values.append(val)
    if not breakpoints:
        # u is constant at its leftmost value on (-inf, switch)
        breakpoints.append(switch - 1.0)
        values.append(u.values[0])
    breakpoints.append(switch)
    values.append(v.value_at(0.0))
    for b, val in zip(v.breakpoints, v.values, strict=True):
        if b > 0.0:
            breakpoints.append(b + switch)
            values.append(val)
    return ControlSignal(tuple(breakpoints), tuple(values), max(u.window, v.window))


# =============================================================================
# WEAK* METRIC
# =============================================================================

@dataclass(frozen=True)
class TestFunction:
    """Step function ``height * 1_[lo, hi)`` acting on one channel."""

    __test__ = False  # keep pytest from collecting this class

    channel: int
    lo: float
    hi: float
    height: float = 1.0

    @property
    def l1_norm(self) -> float:
        return abs(self.height) * (self.hi - self.lo)


@dataclass(frozen=True)
class MetricBasis:
    """Ordered test family y_1..y_N with weights 2^-i."""

    functions: tuple[TestFunction, ...]
    window: float = 1.0
    m: int = 1
    depth: int | None = field(default=None)

    @classmethod
    def dyadic(cls, m: int, window: float, depth: int = 4) -> MetricBasis:
        """
        Indicators of dyadic subintervals of [-S, S] down to ``depth``,
        ordered coarse to fine, then by position, then by channel:
        m * (2^(depth+1) - 1) functions.
        """
        functions = []
        for level in range(depth + 1):
            pieces = 2**level
            width = 2.0 * window / pieces
            for k, channel in product(range(pieces), range(m)):
                lo = -window + k * width
                functions.append(TestFunction(channel, lo, lo + width))
        return cls(tuple(functions), window, m, depth)

    @property
    def weights(self) -> NDArray[np.float64]:
        return 0.5 ** np.arange(1, len(self.functions) + 1)

    def describe(self) -> dict[str, Any]:
        return {"size": len(self.functions), "window": self.window, "m": self.m, "depth": self.depth}


def _difference_integral(u: ControlSignal, v: ControlSignal, y: TestFunction) -> float:
    return y.height * (u.integral(y.channel, y.lo, y.hi) - v.integral(y.channel, y.lo, y.hi))


def weak_star_distance(u: ControlSignal, v: ControlSignal, basis: MetricBasis) -> float:
    """
    d(u, v) = sum_i 2^-i |<u-v, y_i>| / (1 + |<u-v, y_i>|), integrals
    computed exactly on the piecewise-constant representations.
    """
    if u.m != v.m or u.m != basis.m:
        raise ConfigurationError(
            f"dimension mismatch: u has {u.m}, v has {v.m}, basis has {basis.m} channels"
        )
    total = 0.0
    for weight, y in zip(basis.weights, basis.functions, strict=True):
        a = abs(_difference_integral(u, v, y))
        total += float(weight) * a / (1.0 + a)
    return total


# =============================================================================
# SAMPLING
# =============================================================================

def control_grid(control_range: ControlRange, levels: int) -> list[tuple[float, ...]]:
    if levels < 2:
        raise ConfigurationError("levels must be >= 2")
    axes = [
        np.unique(np.linspace(lo, hi, levels))
        for lo, hi in zip(control_range.lower, control_range.upper, strict=True)
    ]
    return [tuple(float(c) for c in combo) for combo in product(*axes)]


def sample_controls(control_range: ControlRange, levels: int, window: float = 1.0) -> list[ControlSignal]:
    """Constant signals on the grid rho1 + j (rho2 - rho1)/(levels - 1), per channel."""
    return [ControlSignal.constant(value, window) for value in control_grid(control_range, levels)]


def random_control(
    control_range: ControlRange,
    rng: np.random.Generator,
    pieces: int = 4,
    span: tuple[float, float] = (-2.0, 2.0),
    window: float = 1.0,
) -> ControlSignal:
    """Piecewise-constant control with ``pieces`` random breakpoints in ``span``."""
    lo = np.asarray(control_range.lower)
    hi = np.asarray(control_range.upper)
    breakpoints = np.unique(rng.uniform(span[0], span[1], size=pieces))
    values = rng.uniform(lo, hi, size=(len(breakpoints), control_range.m))
    return ControlSignal(
        tuple(float(b) for b in breakpoints),
        tuple(tuple(float(x) for x in row) for row in values),
        window,
    )


__all__ = [
    "ControlRange",
    "ControlSignal",
    "MetricBasis",
    "TestFunction",
    "concatenate",
    "control_grid",
    "random_control",
    "sample_controls",
    "shift",
    "weak_star_distance",
]
