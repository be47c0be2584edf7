"""
Tests for the error handler, run manifests and plot tables.
"""

import numpy as np
import pytest

from skewflow.control_sets import ReachInterval
from skewflow.driving import DrivingPoint
from skewflow.error_handler import (
    BlowUpError,
    CoastingError,
    ConfigurationError,
    ErrorHandler,
    ParseError,
    PropertyViolationError,
    UnsupportedError,
    handle_error,
)
from skewflow.manifest import build_manifest, read_manifest, versions, without_timings, write_manifest
from skewflow.plot_data import emit_plot_data, write_table


@pytest.mark.unit
class TestErrorHandler:

    @pytest.mark.parametrize(
        ("exc", "code"),
        [
            (ConfigurationError("bad"), 2),
            (ParseError("unexpected token", 4), 2),
            (UnsupportedError("scalar only"), 2),
            (BlowUpError(0.5, 40.0), 3),
            (CoastingError("no approach", 0.2, 10.0), 3),
            (PropertyViolationError("suite failed"), 4),
            (RuntimeError("boom"), 3),
        ],
    )
    def test_exit_codes(self, exc, code):
        assert handle_error(exc) == code

    def test_diagnostic_names_the_error(self):
        assert ErrorHandler.diagnostic(ParseError("unexpected token", 4)) == "ParseError: unexpected token at byte 4"
        assert ErrorHandler.diagnostic(KeyError("k")) == "KeyError: 'k'"

    def test_details_are_kept(self):
        exc = BlowUpError(0.5, 40.0)
        assert exc.details == {"escape_time": 0.5, "bound": 40.0}


@pytest.mark.unit
class TestManifest:

    def test_round_trip(self, tmp_path):
        manifest = build_manifest({"chain": {"T": 1.0}}, "abc", "chain-sets", {"total": 1.23456789},
                                  ["b.csv", "a.csv"], results={"sets": 1})
        path = write_manifest(tmp_path, manifest)
        loaded = read_manifest(path)
        assert loaded["artifacts"] == ["a.csv", "b.csv"]
        assert loaded["timings"] == {"total": 1.234568}
        assert "suites" not in loaded

    def test_versions_are_recorded(self):
        assert {"python", "numpy", "scipy", "skewflow"} <= set(versions())

    def test_without_timings(self):
        manifest = build_manifest({}, "h", "verify", {"total": 2.0}, [], suites={})
        assert set(without_timings(manifest)) == {"command", "config_hash", "resolved_config", "artifacts", "suites"}


@pytest.mark.unit
class TestPlotData:

    def test_table_format(self, tmp_path):
        path = write_table(tmp_path / "t.dat", ["a", "b"], np.array([[0.5, 1.0]]))
        assert path.read_text() == "# a b\n0.5 1.0\n"

    def test_empty_chain_sets_give_header_only(self, tmp_path):
        (path,) = emit_plot_data("chain-sets", [], tmp_path)
        assert path.name == "chain_sets.dat"
        assert path.read_text() == "# w1 x1\n"

    def test_reach_fan_is_sorted_by_horizon(self, tmp_path):
        fan = [
            ReachInterval(DrivingPoint((0.0,)), (0.0,), T, np.array([-T]), np.array([T]))
            for T in (2.0, 0.5)
        ]
        (path,) = emit_plot_data("reach-fan", fan, tmp_path, "fan")
        assert path.read_text().splitlines() == ["# T lo hi", "0.5 -0.5 0.5", "2.0 -2.0 2.0"]

    def test_missing_equilibrium(self, tmp_path):
        (path,) = emit_plot_data("equilibrium", None, tmp_path)
        assert path.read_text() == "# w1 alpha residual\n"

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ConfigurationError, match="unknown plot data kind"):
            emit_plot_data("histogram", [], tmp_path)
