"""
Tests for the property suites and the verify runner.
"""

import numpy as np
import pytest

from skewflow.analyses import VerifyAnalysis
from skewflow.error_handler import PropertyViolationError
from skewflow.manifest import MANIFEST_NAME, read_manifest
from skewflow.scenarios import parse_scenario
from skewflow.verify import (
    SuiteResult,
    cocycle_suite,
    integrator_order_suite,
    metric_suite,
    reach_comparison_suite,
    scc_oracle_suite,
    single_basis_example,
)


@pytest.mark.unit
class TestStandaloneSuites:

    def test_cocycle_on_linear_system(self, linear_system, coarse_cfg, rng):
        result = cocycle_suite(linear_system, coarse_cfg, 60, rng, group=20)
        assert result.passed
        assert result.details["checked"] == 60
        assert result.details["max_residual"] < 1e-6

    def test_cocycle_skips_escaping_rows(self, cubic_system, cfg, rng):
        result = cocycle_suite(cubic_system, cfg, 100, rng, group=25)
        assert result.passed
        assert result.details["checked"] + result.details["skipped"] == 100

    def test_integrator_order(self):
        result = integrator_order_suite()
        assert result.passed
        assert all(12.0 <= r <= 20.0 for r in result.details["ratios"])

    def test_scc_oracle(self, rng):
        result = scc_oracle_suite(8, rng, max_nodes=80)
        assert result.passed
        assert result.details["mismatches"] == []

    def test_single_basis_example(self):
        assert single_basis_example() == 0.25

    def test_metric_axioms(self, linear_system, rng):
        result = metric_suite(linear_system.control_range, 30, rng)
        assert result.passed
        assert result.details["single_basis_example"] == 0.25

    def test_reach_comparison(self, linear_system, coarse_cfg, rng):
        assert reach_comparison_suite(linear_system, coarse_cfg, 1.0, 4, rng, points=3).passed

    def test_reach_comparison_skips_planar_systems(self, planar_system, coarse_cfg, rng):
        result = reach_comparison_suite(planar_system, coarse_cfg, 1.0, 4, rng)
        assert result.passed
        assert "skipped" in result.details

    def test_status_payload(self):
        assert SuiteResult("x", False, {"a": 1}).to_json() == {"status": "failed", "details": {"a": 1}}


@pytest.mark.integration
class TestVerifyRunner:

    def test_configured_suites_pass(self, scenario_dict, tmp_path):
        analysis = VerifyAnalysis(parse_scenario(scenario_dict), output_dir=tmp_path)
        results = analysis.run()
        assert results == {"suites": 3, "passed": 3}
        manifest = read_manifest(tmp_path / MANIFEST_NAME)
        assert {name: s["status"] for name, s in manifest["suites"].items()} == {
            "integrator_order": "passed", "scc_oracle": "passed", "metric": "passed",
        }
        assert "suite_metric" in manifest["timings"]

    def test_failed_suite_is_recorded(self, scenario_dict, tmp_path):
        scenario_dict["analysis"]["verify"]["suites"] = ["metric", "baseline"]
        scenario_dict["analysis"]["verify"]["expected_interval"] = [-0.1, 0.1]
        analysis = VerifyAnalysis(parse_scenario(scenario_dict), output_dir=tmp_path)
        with pytest.raises(PropertyViolationError, match="baseline"):
            analysis.run()
        manifest = read_manifest(tmp_path / MANIFEST_NAME)
        assert manifest["suites"]["metric"]["status"] == "passed"
        assert manifest["suites"]["baseline"]["status"] == "failed"
        assert manifest["command"] == "verify"

    def test_baseline_skipped_without_expectation(self, scenario_dict, tmp_path):
        scenario_dict["analysis"]["verify"]["suites"] = ["baseline"]
        analysis = VerifyAnalysis(parse_scenario(scenario_dict), output_dir=tmp_path)
        analysis.run()
        assert analysis.suites["baseline"]["details"]["skipped"]

    @pytest.mark.slow
    def test_graph_suites_on_cubic(self, scenario_dict, tmp_path):
        scenario_dict["analysis"]["verify"]["suites"] = ["eps_monotonicity", "refinement", "equilibrium", "lift"]
        analysis = VerifyAnalysis(parse_scenario(scenario_dict), output_dir=tmp_path)
        analysis.run()
        assert all(s["status"] == "passed" for s in analysis.suites.values())
        assert np.isclose(analysis.eps, 0.125)

    @pytest.mark.slow
    def test_single_fiber_suite_requires_one_component(self, scenario_dict, tmp_path):
        scenario_dict["analysis"]["verify"]["suites"] = ["single_fiber"]
        analysis = VerifyAnalysis(parse_scenario(scenario_dict), output_dir=tmp_path)
        analysis.run()
        details = analysis.suites["single_fiber"]["details"]
        assert analysis.suites["single_fiber"]["status"] == "passed"
        assert details["components"] == 1
        assert details["nodes_outside"] == 0
