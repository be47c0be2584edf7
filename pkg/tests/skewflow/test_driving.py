"""
Tests for the Kronecker driving flow and its cell grid.
"""

import math

import numpy as np
import pytest

from skewflow.driving import (
    DrivingFlowSpec,
    DrivingGrid,
    DrivingPoint,
    advance,
    advance_array,
    cell_of,
    orbit_coverage,
    rationally_independent,
    torus_distance,
)
from skewflow.error_handler import ConfigurationError


@pytest.mark.unit
class TestDrivingFlow:

    @pytest.fixture
    def spec(self):
        return DrivingFlowSpec((1.0, math.sqrt(2.0)))

    def test_points_are_reduced_mod_one(self):
        assert DrivingPoint((1.25, -0.25)).coords == (0.25, 0.75)

    def test_advance_group_law(self, spec):
        omega = DrivingPoint((0.1, 0.7))
        twice = advance(advance(omega, 0.8, spec), 1.7, spec)
        direct = advance(omega, 2.5, spec)
        assert torus_distance(twice.as_array(), direct.as_array()) < 1e-12

    def test_advance_backward_inverts_forward(self, spec):
        omega = DrivingPoint((0.3, 0.9))
        back = advance(advance(omega, 3.3, spec), -3.3, spec)
        assert torus_distance(back.as_array(), omega.as_array()) < 1e-12

    def test_advance_array_broadcasts_times(self, spec):
        out = advance_array(np.zeros(2), np.array([0.0, 0.5, 1.0]), spec)
        assert out.shape == (3, 2)
        np.testing.assert_allclose(out[1], [0.5, math.sqrt(2.0) / 2.0])

    @pytest.mark.parametrize("bad", [(0.0,), (float("inf"),), ()])
    def test_rejects_bad_frequencies(self, bad):
        with pytest.raises(ConfigurationError):
            DrivingFlowSpec(bad)

    def test_torus_distance_wraps(self):
        assert torus_distance([0.95, 0.5], [0.05, 0.5]) == pytest.approx(0.1)

    def test_rational_independence(self):
        assert rationally_independent([1.0, math.sqrt(2.0)])
        assert not rationally_independent([1.0, 1.5])
        assert rationally_independent([1.0])


@pytest.mark.unit
class TestDrivingGrid:

    @pytest.fixture
    def grid(self):
        return DrivingGrid((4, 8))

    def test_shape(self, grid):
        assert grid.p == 2
        assert grid.n_cells == 32
        assert grid.diameter == 0.25

    def test_single_cell_has_half_circle_diameter(self):
        assert DrivingGrid((1,)).diameter == 0.5

    def test_cell_of_half_open(self, grid):
        assert cell_of(DrivingPoint((0.25, 0.0)), grid) == (1, 0)
        assert cell_of(DrivingPoint((0.2499, 0.999)), grid) == (0, 7)

    def test_flat_index_round_trip(self, grid):
        for cell in grid.cells():
            assert grid.multi_index(grid.flat_index(cell)) == cell

    def test_centers_follow_flat_order(self, grid):
        centers = grid.centers_array()
        for flat, cell in enumerate(grid.cells()):
            np.testing.assert_allclose(centers[flat], grid.center(cell).as_array())

    def test_flat_cells_of_matches_cell_of(self, grid, rng):
        points = rng.uniform(0.0, 1.0, size=(50, 2))
        flat = grid.flat_cells_of(points)
        for row, idx in zip(points, flat, strict=True):
            assert grid.flat_index(cell_of(DrivingPoint(tuple(row)), grid)) == idx

    def test_orbit_coverage_of_irrational_flow(self):
        spec = DrivingFlowSpec((1.0, math.sqrt(2.0)))
        assert orbit_coverage(spec, DrivingGrid((8, 8)), 0.05, 20_000) == 1.0

    def test_rational_flow_misses_cells(self):
        spec = DrivingFlowSpec((1.0, 1.0))
        assert orbit_coverage(spec, DrivingGrid((8, 8)), 0.01, 20_000) < 0.5

    def test_coverage_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            orbit_coverage(DrivingFlowSpec((1.0,)), DrivingGrid((4, 4)), 0.1, 10)
