"""
Tests for the system definition and the RK4 solution maps.
"""

import csv

import numpy as np
import pytest

from skewflow.cocycle import (
    IntegratorConfig,
    SystemDef,
    cocycle_residual,
    flow_step,
    integrate,
    sample_trajectory,
    solve_phi,
    solve_psi,
    write_trajectory_csv,
)
from skewflow.driving import DrivingFlowSpec, DrivingPoint
from skewflow.error_handler import BlowUpError, ConfigurationError, ParseError
from skewflow.signals import ControlRange, ControlSignal, random_control


ZERO = ControlSignal.constant((0.0,))


@pytest.mark.unit
class TestSystemDef:

    def test_dimensions(self, cubic_system):
        assert (cubic_system.d, cubic_system.p, cubic_system.m) == (1, 1, 1)
        assert cubic_system.variable_names == ("w1", "x1")
        assert cubic_system.diameter == 4.0

    def test_autonomous_detection(self, cubic_system, linear_system):
        assert cubic_system.is_autonomous
        assert not linear_system.is_autonomous

    def test_rejects_foreign_variables(self):
        with pytest.raises(ConfigurationError, match="x2"):
            SystemDef.from_strings(
                1, DrivingFlowSpec((1.0,)), ControlRange((0.0,), (1.0,)), [["x2"], ["1"]], [(-1.0, 1.0)]
            )

    def test_rejects_wrong_field_count(self):
        with pytest.raises(ConfigurationError):
            SystemDef.from_strings(1, DrivingFlowSpec((1.0,)), ControlRange((0.0,), (1.0,)), [["-x1"]], [(-1.0, 1.0)])

    def test_parse_errors_propagate(self):
        with pytest.raises(ParseError):
            SystemDef.from_strings(
                1, DrivingFlowSpec((1.0,)), ControlRange((0.0,), (1.0,)), [["x1 +* 2"], ["1"]], [(-1.0, 1.0)]
            )

    def test_rhs_is_affine_in_control(self, linear_system):
        w = np.array([[0.25]])
        x = np.array([[0.5]])
        base = linear_system.rhs(w, x, np.array([0.0]))
        pushed = linear_system.rhs(w, x, np.array([0.2]))
        np.testing.assert_allclose(pushed - base, [[0.2]])
        np.testing.assert_allclose(base, [[-0.5 + 0.5]])

    def test_blowup_bound_must_exceed_diameter(self, cubic_system):
        with pytest.raises(ConfigurationError):
            IntegratorConfig(blowup_bound=3.0).bound_for(cubic_system)
        assert IntegratorConfig().bound_for(cubic_system) == 40.0

    def test_step_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            IntegratorConfig(h=0.0)


@pytest.mark.unit
class TestSolutionMaps:

    def test_cubic_closed_form(self, cubic_system, cfg):
        x = solve_phi(1.5, DrivingPoint((0.0,)), [1.0], ZERO, cubic_system, cfg)
        assert x[0] == pytest.approx(0.5, abs=1e-10)

    def test_rk4_order(self, cubic_system):
        errors = [
            abs(solve_phi(1.5, DrivingPoint((0.0,)), [1.0], ZERO, cubic_system, IntegratorConfig(h=h))[0] - 0.5)
            for h in (1e-2, 5e-3, 2.5e-3)
        ]
        for coarse, fine in zip(errors, errors[1:], strict=False):
            assert 12.0 <= coarse / fine <= 20.0

    def test_zero_time_is_identity(self, linear_system, cfg):
        x = solve_phi(0.0, DrivingPoint((0.3,)), [0.7], ZERO, linear_system, cfg)
        assert x[0] == 0.7

    def test_backward_then_forward(self, linear_system, cfg):
        omega = DrivingPoint((0.3,))
        u = ControlSignal((-1.0, 0.5), ((0.1,), (-0.2,)))
        back = solve_psi(-1.3, omega, [0.4], u, linear_system, cfg)
        forward = solve_phi(1.3, back.omega, back.x, ControlSignal(tuple(b + 1.3 for b in u.breakpoints), u.values),
                            linear_system, cfg)
        assert forward[0] == pytest.approx(0.4, abs=1e-9)

    def test_backward_blowup(self, cubic_system, cfg):
        with pytest.raises(BlowUpError) as info:
            solve_phi(-1.0, DrivingPoint((0.0,)), [1.9], ZERO, cubic_system, cfg)
        assert -1.0 < info.value.escape_time < 0.0

    def test_cocycle_law(self, linear_system, cfg, rng):
        for _ in range(10):
            t, s = rng.uniform(-2.0, 2.0, size=2)
            u = random_control(linear_system.control_range, rng)
            omega = DrivingPoint((float(rng.uniform()),))
            x = [float(rng.uniform(-1.0, 1.0))]
            assert cocycle_residual(float(t), float(s), omega, x, u, linear_system, cfg) < 1e-6

    def test_flow_step_shifts_control(self, linear_system, cfg):
        u = ControlSignal((0.0, 1.0), ((0.1,), (-0.1,)))
        shifted, state = flow_step(0.5, u, DrivingPoint((0.0,)), [0.0], linear_system, cfg)
        assert shifted.value_at(0.6) == (-0.1,)
        assert state.omega.coords == (0.5,)

    def test_batch_rows_are_independent(self, linear_system, cfg):
        xs = np.array([[0.1], [0.5], [-0.3]])
        omegas = np.array([[0.0], [0.2], [0.9]])
        batch = integrate(linear_system, cfg, 1.0, omegas, xs, ZERO).x
        for row in range(3):
            single = solve_phi(1.0, DrivingPoint(tuple(omegas[row])), xs[row], ZERO, linear_system, cfg)
            np.testing.assert_allclose(batch[row], single, atol=1e-14)

    def test_escape_freezes_row(self, cubic_system, cfg):
        result = integrate(cubic_system, cfg, -1.0, [[0.0], [0.0]], [[1.9], [0.1]], ZERO)
        assert result.escaped.tolist() == [True, False]
        assert np.isnan(result.x[0, 0])
        assert np.isfinite(result.x[1, 0])
        assert abs(result.escape_state[0, 0]) > cfg.bound_for(cubic_system)

    def test_records_at_requested_times(self, linear_system, cfg):
        result = integrate(linear_system, cfg, 1.0, [[0.0]], [[0.2]], ZERO, record_times=(0.0, 0.25, 1.0))
        assert set(result.records) == {0.0, 0.25, 1.0}
        np.testing.assert_allclose(result.records[1.0], result.x)


@pytest.mark.unit
class TestTrajectoryDump:

    def test_csv_header_and_rows(self, linear_system, cfg, tmp_path):
        u = ControlSignal.constant((0.1,))
        times, omegas, states = sample_trajectory(1.0, DrivingPoint((0.0,)), [0.0], u, linear_system, cfg, 11)
        path = write_trajectory_csv(tmp_path / "traj.csv", times, omegas, states, u)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "w1", "x1", "u1"]
        assert len(rows) == 12
        assert float(rows[-1][1]) == pytest.approx(0.0, abs=1e-12)

    def test_needs_two_samples(self, linear_system, cfg):
        with pytest.raises(ConfigurationError):
            sample_trajectory(1.0, DrivingPoint((0.0,)), [0.0], ZERO, linear_system, cfg, 1)
