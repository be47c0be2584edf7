"""
Tests for piecewise-constant controls, shifts and the weak* metric.
"""

import numpy as np
import pytest

from skewflow.error_handler import ConfigurationError
from skewflow.signals import (
    ControlRange,
    ControlSignal,
    MetricBasis,
    TestFunction,
    concatenate,
    control_grid,
    random_control,
    sample_controls,
    shift,
    weak_star_distance,
)


@pytest.fixture
def step():
    """0 before t = 0, 1 after."""
    return ControlSignal((-5.0, 0.0), ((0.0,), (1.0,)))


@pytest.mark.unit
class TestControlSignal:

    def test_value_extends_left_of_first_breakpoint(self, step):
        assert step.value_at(-100.0) == (0.0,)
        assert step.value_at(0.0) == (1.0,)

    def test_equal_neighbours_merge(self):
        u = ControlSignal((0.0, 1.0, 2.0), ((0.5,), (0.5,), (0.2,)))
        assert u.breakpoints == (0.0, 2.0)

    def test_constant_signal_normalizes(self):
        u = ControlSignal((3.0, 4.0), ((0.1,), (0.1,)))
        assert u.is_constant
        assert u == ControlSignal.constant((0.1,))

    def test_rejects_unsorted_breakpoints(self):
        with pytest.raises(ConfigurationError):
            ControlSignal((1.0, 0.0), ((0.0,), (1.0,)))

    def test_exact_integral(self, step):
        assert step.integral(0, -1.0, 2.0) == 2.0
        assert step.integral(0, 2.0, -1.0) == 0.0

    def test_shift_moves_breakpoints_left(self, step):
        moved = shift(step, 2.0)
        assert moved.value_at(-2.5) == (0.0,)
        assert moved.value_at(-1.5) == (1.0,)

    def test_shift_group_law(self, step):
        assert shift(shift(step, 1.5), -0.5) == shift(step, 1.0)

    def test_concatenate(self, step):
        v = ControlSignal.constant((0.25,))
        joined = concatenate(step, v, 3.0)
        assert joined.value_at(1.0) == (1.0,)
        assert joined.value_at(3.0) == (0.25,)
        assert joined.value_at(50.0) == (0.25,)

    def test_within_range(self, step):
        assert step.within(ControlRange((0.0,), (1.0,)))
        assert not step.within(ControlRange((0.0,), (0.5,)))

    def test_json_codec(self, step):
        assert ControlSignal.from_json(step.to_json()) == step


@pytest.mark.unit
class TestControlRange:

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ConfigurationError):
            ControlRange((1.0,), (0.0,))

    def test_grid_levels(self):
        values = control_grid(ControlRange((-0.5,), (0.5,)), 5)
        assert values == [(-0.5,), (-0.25,), (0.0,), (0.25,), (0.5,)]

    def test_singleton_range_gives_one_control(self):
        assert len(sample_controls(ControlRange((0.0,), (0.0,)), 4)) == 1

    def test_two_channel_grid_is_product(self):
        assert len(control_grid(ControlRange((0.0, 0.0), (1.0, 1.0)), 3)) == 9

    def test_levels_below_two(self):
        with pytest.raises(ConfigurationError):
            control_grid(ControlRange((0.0,), (1.0,)), 1)

    def test_random_control_is_admissible(self, rng):
        range_ = ControlRange((-0.5, 0.0), (0.5, 2.0))
        for _ in range(20):
            assert random_control(range_, rng).within(range_)


@pytest.mark.unit
class TestWeakStarMetric:

    @pytest.fixture
    def basis(self):
        return MetricBasis.dyadic(1, 1.0)

    def test_single_basis_example(self):
        basis = MetricBasis((TestFunction(0, 0.0, 1.0),), window=1.0, m=1)
        one, zero = ControlSignal.constant((1.0,)), ControlSignal.constant((0.0,))
        assert weak_star_distance(one, zero, basis) == 0.25

    def test_step_agrees_with_constant_on_the_test_interval(self, step):
        basis = MetricBasis((TestFunction(0, -1.0, 1.0),), window=1.0, m=1)
        assert weak_star_distance(step, ControlSignal.constant((0.0,)), basis) == 0.25

    def test_dyadic_size(self, basis):
        assert len(basis.functions) == 2**5 - 1
        assert basis.describe()["size"] == 31

    def test_axioms_on_random_triples(self, basis, rng):
        range_ = ControlRange((-1.0,), (1.0,))
        for _ in range(50):
            u, v, w = (random_control(range_, rng) for _ in range(3))
            assert weak_star_distance(u, u, basis) == 0.0
            assert weak_star_distance(u, v, basis) == pytest.approx(weak_star_distance(v, u, basis), abs=1e-15)
            assert weak_star_distance(u, w, basis) <= (
                weak_star_distance(u, v, basis) + weak_star_distance(v, w, basis) + 1e-12
            )

    def test_bounded_by_total_weight(self, basis):
        d = weak_star_distance(ControlSignal.constant((1.0,)), ControlSignal.constant((-1.0,)), basis)
        assert 0.0 < d < float(np.sum(basis.weights))

    def test_differences_outside_window_are_invisible(self, basis):
        u = ControlSignal((-10.0, 5.0), ((0.0,), (1.0,)))
        assert weak_star_distance(u, ControlSignal.constant((0.0,)), basis) == 0.0

    def test_dimension_mismatch(self, basis):
        with pytest.raises(ConfigurationError):
            weak_star_distance(ControlSignal.constant((0.0, 0.0)), ControlSignal.constant((0.0, 0.0)), basis)
