"""
Tests for reachable sets, the pullback equilibrium and exact control sets.
"""

import numpy as np
import pytest

from skewflow import control_sets
from skewflow.cocycle import SystemDef, integrate, solve_phi
from skewflow.control_sets import (
    alpha_tube_window,
    check_exact_condition,
    control_set_around,
    control_set_to,
    exact_closure_holds,
    find_coasting_time,
    mixing_transfer,
    pullback_equilibrium,
    pullback_value,
    reach_set,
    verify_no_return,
    write_equilibrium_csv,
)
from skewflow.cover_graph import build_cover
from skewflow.driving import DrivingFlowSpec, DrivingGrid, DrivingPoint, advance
from skewflow.error_handler import (
    BlowUpError,
    CoastingError,
    ConfigurationError,
    UnsupportedError,
)
from skewflow.signals import ControlRange, ControlSignal, sample_controls
from tests.conftest import linear_alpha


@pytest.fixture
def linear_table(linear_system, coarse_cfg):
    return pullback_equilibrium(DrivingGrid((8,)), linear_system, coarse_cfg, 2.0, [0.0])


@pytest.mark.unit
class TestReachSets:

    def test_cubic_forward_interval_is_symmetric(self, cubic_system, cfg):
        reach = reach_set(DrivingPoint((0.0,)), [0.0], 1.0, cubic_system, None, cfg)
        assert reach.lo[0] == pytest.approx(-reach.hi[0], abs=1e-12)
        assert 0.0 < reach.hi[0] < 0.5

    def test_sampled_points_stay_inside_corner_interval(self, linear_system, cfg, rng):
        omega = DrivingPoint((0.2,))
        exact = reach_set(omega, [0.1], 1.0, linear_system, None, cfg)
        sampled = reach_set(omega, [0.1], 1.0, linear_system, None, cfg, mode="sampled", rng=rng, refinements=6)
        assert sampled.points is not None
        assert sampled.lo[0] >= exact.lo[0] - 1e-9
        assert sampled.hi[0] <= exact.hi[0] + 1e-9

    def test_exact_mode_needs_scalar_state(self, planar_system, cfg):
        with pytest.raises(UnsupportedError):
            reach_set(DrivingPoint((0.0, 0.0)), [0.0, 0.0], 1.0, planar_system, None, cfg)

    def test_sampled_mode_handles_planar_system(self, planar_system, cfg, rng):
        reach = reach_set(DrivingPoint((0.0, 0.0)), [0.0, 0.0], 0.5, planar_system, None, cfg,
                          mode="sampled", rng=rng, refinements=3)
        assert reach.points.shape == (3 + 3, 2)

    def test_controllable_witnesses_hit_the_target(self, linear_system, cfg):
        omega = DrivingPoint((0.4,))
        cset = control_set_to(omega, [0.1], 1.0, linear_system, None, cfg)
        start = advance(omega, -1.0, linear_system.driving)
        for v, y in cset.witnesses:
            end = integrate(linear_system, cfg, 1.0, start.as_array(), y, v).x[0, 0]
            assert end == pytest.approx(0.1, abs=1e-8)

    def test_backward_escape_gives_unbounded_side(self, cubic_system, cfg):
        cset = control_set_to(DrivingPoint((0.0,)), [0.0], 3.0, cubic_system, None, cfg)
        assert cset.unbounded_lo
        assert cset.unbounded_hi
        assert cset.to_json()["lo"] == ["-inf"]

    def test_strict_backward_escape_raises(self, cubic_system, cfg):
        with pytest.raises(BlowUpError):
            control_set_to(DrivingPoint((0.0,)), [0.0], 3.0, cubic_system, None, cfg, strict=True)

    def test_non_positive_time(self, cubic_system, cfg):
        with pytest.raises(ConfigurationError):
            reach_set(DrivingPoint((0.0,)), [0.0], 0.0, cubic_system, None, cfg)


@pytest.mark.unit
class TestPullbackEquilibrium:

    def test_matches_periodic_solution(self, linear_table):
        for center, alpha in zip(linear_table.centers[:, 0], linear_table.alpha[:, 0], strict=True):
            assert alpha == pytest.approx(linear_alpha(float(center)), abs=1e-4)

    def test_residual_and_change_are_small(self, linear_table):
        assert linear_table.max_residual < 1e-4
        assert linear_table.change < 1e-5

    def test_off_grid_values(self, linear_table):
        value = linear_table.alpha_at([[0.33]])
        assert value[0, 0] == pytest.approx(linear_alpha(0.33), abs=1e-4)

    def test_pullback_value_at_arbitrary_points(self, linear_system, coarse_cfg):
        single = pullback_value(DrivingPoint((0.33,)), linear_system, coarse_cfg, 20.0, [0.0])
        assert single[0] == pytest.approx(linear_alpha(0.33), abs=1e-4)
        batch = pullback_value([[0.1], [0.6]], linear_system, coarse_cfg, 20.0, [0.0])
        assert batch.shape == (2, 1)
        assert batch[1, 0] == pytest.approx(linear_alpha(0.6), abs=1e-4)

    def test_rejects_non_dissipative_domain(self, coarse_cfg):
        unstable = SystemDef.from_strings(
            1, DrivingFlowSpec((1.0,)), ControlRange((0.0,), (0.0,)), [["x1"], ["1"]], [(-1.0, 1.0)]
        )
        with pytest.raises(ConfigurationError, match="dissipative"):
            pullback_equilibrium(DrivingGrid((2,)), unstable, coarse_cfg, 1.0, [0.0])

    def test_rejects_non_positive_horizon(self, linear_system, coarse_cfg):
        with pytest.raises(ConfigurationError):
            pullback_equilibrium(DrivingGrid((2,)), linear_system, coarse_cfg, 0.0, [0.0])

    def test_csv_columns(self, linear_table, tmp_path):
        path = write_equilibrium_csv(tmp_path / "eq.csv", linear_table)
        lines = path.read_text().splitlines()
        assert lines[0] == "cell_0,w1,alpha,residual"
        assert len(lines) == 9


@pytest.mark.unit
class TestExactCondition:

    def test_small_eps_passes_everywhere(self, linear_table, linear_system, coarse_cfg):
        report = check_exact_condition(linear_table, 0.01, 1.0, linear_system, coarse_cfg)
        assert report.all_passed
        assert report.eps_prime == 0.01

    def test_large_eps_is_reduced(self, linear_table, linear_system, coarse_cfg):
        report = check_exact_condition(linear_table, 0.5, 1.0, linear_system, coarse_cfg)
        assert not report.all_passed
        assert 0.1 < report.eps_prime < 0.5
        assert report.to_json()["failed_cells"]

    def test_scalar_only(self, planar_system, linear_table, coarse_cfg):
        with pytest.raises(UnsupportedError):
            check_exact_condition(linear_table, 0.01, 1.0, planar_system, coarse_cfg)


@pytest.mark.slow
class TestControlSetAround:

    @pytest.fixture
    def grid(self):
        return DrivingGrid((4,))

    @pytest.fixture
    def control_set(self, linear_system, coarse_cfg, grid):
        table = pullback_equilibrium(grid, linear_system, coarse_cfg, 2.0, [0.0])
        cover = build_cover([(-2.0, 2.0)], 64)
        controls = sample_controls(linear_system.control_range, 3)
        return control_set_around(table, linear_system, controls, 1.25, coarse_cfg, cover, grid)

    def test_equilibrium_is_interior(self, control_set):
        assert control_set.seed_coverage == 1.0
        assert control_set.interior
        assert not control_set.lower_dimensional

    def test_members_are_mutually_reachable(self, control_set):
        assert exact_closure_holds(control_set)

    def test_no_return(self, control_set, linear_system, coarse_cfg, rng):
        report = verify_no_return(control_set, 60, linear_system, coarse_cfg, rng)
        assert report.checked + report.skipped == 60
        assert report.ok


@pytest.mark.unit
class TestMixing:

    def test_coasting_time_is_first_grid_hit(self, linear_system):
        s = find_coasting_time(DrivingPoint((0.1,)), DrivingPoint((0.6,)), linear_system, 0.01)
        assert 0.485 < s < 0.5

    def test_coasting_budget_exhausted(self, linear_system):
        with pytest.raises(CoastingError) as info:
            find_coasting_time(DrivingPoint((0.1,)), DrivingPoint((0.6,)), linear_system, 0.01, s_max=0.2)
        assert info.value.best_distance == pytest.approx(0.3, abs=0.01)

    def test_transfer_hits_target(self, linear_table, linear_system, coarse_cfg):
        omega1, omega2 = DrivingPoint((0.1,)), DrivingPoint((0.7,))
        y1 = float(linear_table.alpha_at([[0.1]])[0, 0]) + 0.05
        y2 = float(linear_table.alpha_at([[0.7]])[0, 0]) - 0.05
        transfer = mixing_transfer(omega1, y1, omega2, y2, 0.1, linear_table, linear_system, coarse_cfg, 0.01, 1.0)
        assert transfer.hit_error < 1e-6
        assert transfer.driving_error < 0.01
        assert transfer.total_time == pytest.approx(2.0 + transfer.coast_time)
        assert [phase["name"] for phase in transfer.phases] == ["steer_to_equilibrium", "coast", "steer_to_target"]
        assert transfer.control.within(linear_system.control_range)
        reached = solve_phi(transfer.total_time, omega1, [y1], transfer.control, linear_system, coarse_cfg)
        assert abs(reached[0] - y2) < 1e-6
        assert transfer.hit_error == pytest.approx(abs(reached[0] - y2), abs=1e-12)

    def test_steering_passes_its_tolerances_to_the_root_finder(self, linear_system, coarse_cfg, mocker):
        root_finder = mocker.spy(control_sets, "brentq")
        omega = DrivingPoint((0.2,))
        target = solve_phi(1.0, omega, [0.0], ControlSignal.constant((0.1,)), linear_system, coarse_cfg)[0]
        c, reached = control_sets._steer(linear_system, coarse_cfg, 1.0, omega, 0.0, target, 1e-11)
        assert root_finder.call_count == 1
        assert root_finder.call_args.kwargs["xtol"] == 1e-11
        assert root_finder.call_args.kwargs["rtol"] >= 4 * np.finfo(float).eps
        assert c == pytest.approx(0.1, abs=1e-9)
        assert reached == pytest.approx(target, abs=1e-9)

    def test_endpoints_must_be_near_equilibrium(self, linear_table, linear_system, coarse_cfg):
        with pytest.raises(ConfigurationError):
            mixing_transfer(DrivingPoint((0.1,)), 1.0, DrivingPoint((0.7,)), 0.0, 0.1,
                            linear_table, linear_system, coarse_cfg, 0.01, 1.0)

    def test_scalar_only(self, linear_table, planar_system, coarse_cfg):
        with pytest.raises(UnsupportedError):
            mixing_transfer(DrivingPoint((0.1, 0.1)), 0.0, DrivingPoint((0.7, 0.7)), 0.0, 0.1,
                            linear_table, planar_system, coarse_cfg, 0.01, 1.0)

    def test_equilibrium_stays_in_tube(self, linear_table, linear_system, coarse_cfg):
        omega = DrivingPoint((0.25,))
        x = linear_table.alpha_at([[0.25]])[0]
        zero = ControlSignal.constant((0.0,))
        assert alpha_tube_window(linear_table, omega, x, zero, 1e-3, 2.0, linear_system, coarse_cfg).passed
        report = alpha_tube_window(linear_table, omega, x + 0.5, zero, 1e-3, 2.0, linear_system, coarse_cfg)
        assert not report.passed
        assert report.max_distance > 0.4
