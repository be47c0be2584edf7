"""
Tests for the skewflow command line interface.
"""

import json

import pytest
import yaml
from typer.testing import CliRunner

from skewflow import cli
from skewflow.cli import app
from skewflow.error_handler import ConfigurationError
from skewflow.manifest import MANIFEST_NAME


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def write_scenario(tmp_path):
    def _write(data, name="scenario.yml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data))
        return str(path)

    return _write


def invoke(runner, *args):
    return runner.invoke(app, ["--log-level", "WARNING", *args])


@pytest.mark.integration
class TestCommands:

    def test_simulate(self, runner, write_scenario, scenario_dict, tmp_path):
        out = tmp_path / "out"
        result = invoke(runner, "simulate", write_scenario(scenario_dict), "-o", str(out))
        assert result.exit_code == 0, result.output
        assert "simulate finished" in result.output
        assert (out / "trajectory.csv").is_file()
        assert (out / MANIFEST_NAME).is_file()

    def test_verify_passes(self, runner, write_scenario, scenario_dict, tmp_path):
        out = tmp_path / "verify"
        result = invoke(runner, "verify", write_scenario(scenario_dict), "--output-dir", str(out), "-j", "2")
        assert result.exit_code == 0, result.output
        suites = json.loads((out / MANIFEST_NAME).read_text())["suites"]
        assert all(s["status"] == "passed" for s in suites.values())

    def test_rerun_from_manifest(self, runner, write_scenario, scenario_dict, tmp_path):
        first = tmp_path / "first"
        assert invoke(runner, "simulate", write_scenario(scenario_dict), "-o", str(first)).exit_code == 0
        second = tmp_path / "second"
        result = invoke(runner, "simulate", str(first / MANIFEST_NAME), "-o", str(second))
        assert result.exit_code == 0, result.output
        hashes = {json.loads((d / MANIFEST_NAME).read_text())["config_hash"] for d in (first, second)}
        assert len(hashes) == 1

    def test_schema(self, runner, tmp_path):
        path = tmp_path / "schema.json"
        result = invoke(runner, "schema", "--path", str(path))
        assert result.exit_code == 0
        assert "properties" in json.loads(path.read_text())

    def test_scenarios_table(self, runner):
        result = invoke(runner, "scenarios")
        assert result.exit_code == 0
        assert "cubic-autonomous" in result.output


@pytest.mark.integration
class TestExitCodes:

    def test_parse_error_reports_offset(self, runner, write_scenario, scenario_dict):
        scenario_dict["system"]["fields"] = [["x1 +* 2"], ["1"]]
        result = invoke(runner, "simulate", write_scenario(scenario_dict))
        assert result.exit_code == 2
        assert "byte 4" in result.output

    def test_blowup_bound_below_diameter(self, runner, write_scenario, scenario_dict):
        scenario_dict["integrator"]["blowup_bound"] = 1.0
        result = invoke(runner, "chain-sets", write_scenario(scenario_dict))
        assert result.exit_code == 2
        assert "diam" in result.output

    def test_unknown_scenario(self, runner, mocker):
        handle = mocker.spy(cli.error_handler, "handle")
        result = invoke(runner, "simulate", "no-such-scenario")
        assert result.exit_code == 2
        assert "not found" in result.output
        handle.assert_called_once()
        assert isinstance(handle.call_args.args[0], ConfigurationError)

    def test_empty_graph_is_numerical(self, runner, write_scenario, scenario_dict, tmp_path):
        scenario_dict["system"].update(
            fields=[["x1^3 + 20"], ["1"]], domain=[[-1.0, 1.0]], control_lower=[0.0], control_upper=[0.0]
        )
        scenario_dict["discretization"]["boxes_per_dim"] = [8]
        result = invoke(runner, "chain-sets", write_scenario(scenario_dict), "-o", str(tmp_path / "empty"))
        assert result.exit_code == 3
        assert "EmptyGraphError" in result.output
        assert (tmp_path / "empty" / MANIFEST_NAME).is_file()

    def test_failed_suite_is_a_property_violation(self, runner, write_scenario, scenario_dict, tmp_path):
        scenario_dict["analysis"]["verify"].update(suites=["baseline"], expected_interval=[-0.1, 0.1])
        result = invoke(runner, "verify", write_scenario(scenario_dict), "-o", str(tmp_path / "v"))
        assert result.exit_code == 4
        assert "baseline" in result.output
