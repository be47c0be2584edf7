"""
Command Line Interface
======================

``skewflow <command> SCENARIO`` where SCENARIO is a built-in scenario
name, a YAML file or a run manifest. Exit codes: 0 success, 2 invalid
configuration, 3 numerical failure, 4 property violation.
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Optional

import structlog
import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from skewflow.analyses import ANALYSES
from skewflow.error_handler import EXIT_OK, error_handler
from skewflow.logging_config import configure_logging
from skewflow.scenarios import list_scenarios, load_scenario, resolve_scenario_path, write_schema
from skewflow.settings import PROJECT_ROOT, get_settings


logger = structlog.get_logger(__name__)

app = typer.Typer(
    name="skewflow",
    help="Chain control sets and control sets of quasi-periodically driven control systems.",
    no_args_is_help=True,
    add_completion=False,
)
stdout = Console()
stderr = Console(stderr=True)

ScenarioArg = Annotated[str, typer.Argument(help="Built-in scenario name, scenario YAML or run manifest.")]
ThreadsOpt = Annotated[Optional[int], typer.Option("--threads", "-j", min=1, help="Worker threads.")]
OutputOpt = Annotated[Optional[Path], typer.Option("--output-dir", "-o", help="Directory for artifacts.")]


@app.callback()
def main(
    log_level: Annotated[Optional[str], typer.Option("--log-level", help="DEBUG, INFO, WARNING, ERROR.")] = None,
    log_format: Annotated[Optional[str], typer.Option("--log-format", help="console or json.")] = None,
) -> None:
    settings = get_settings()
    configure_logging(log_level or settings.log_level, log_format or settings.log_format)


def _run(command: str, scenario: str, threads: int | None, output_dir: Path | None) -> None:
    try:
        config = load_scenario(scenario)
        analysis = ANALYSES[command](config, output_dir=output_dir, threads=threads)
        results = analysis.run()
    except Exception as exc:
        code = error_handler.handle(exc)
        stderr.print(f"[bold red]error[/]: {escape(error_handler.diagnostic(exc))}", highlight=False, soft_wrap=True)
        raise typer.Exit(code) from None
    stdout.print(f"[green]{command}[/] finished: {analysis.output_dir}", highlight=False, soft_wrap=True)
    logger.debug("results", command=command, **{k: v for k, v in results.items() if not isinstance(v, list)})
    raise typer.Exit(EXIT_OK)


@app.command()
def simulate(scenario: ScenarioArg, threads: ThreadsOpt = None, output_dir: OutputOpt = None) -> None:
    """Integrate one trajectory and dump it as CSV."""
    _run("simulate", scenario, threads, output_dir)


@app.command("chain-sets")
def chain_sets(scenario: ScenarioArg, threads: ThreadsOpt = None, output_dir: OutputOpt = None) -> None:
    """Build the chain graph and export its chain control sets."""
    _run("chain-sets", scenario, threads, output_dir)


@app.command("single-fiber")
def single_fiber(scenario: ScenarioArg, threads: ThreadsOpt = None, output_dir: OutputOpt = None) -> None:
    """Reconstruct a chain control set from one fiber."""
    _run("single-fiber", scenario, threads, output_dir)


@app.command("control-sets")
def control_sets(scenario: ScenarioArg, threads: ThreadsOpt = None, output_dir: OutputOpt = None) -> None:
    """Control set around the attracting equilibrium."""
    _run("control-sets", scenario, threads, output_dir)


@app.command()
def equilibrium(scenario: ScenarioArg, threads: ThreadsOpt = None, output_dir: OutputOpt = None) -> None:
    """Pullback equilibrium table and the exact-controllability check."""
    _run("equilibrium", scenario, threads, output_dir)


@app.command("lift-verify")
def lift_verify(scenario: ScenarioArg, threads: ThreadsOpt = None, output_dir: OutputOpt = None) -> None:
    """Lift a chain control set to the control flow and check Φ-chains."""
    _run("lift-verify", scenario, threads, output_dir)


@app.command()
def mixing(scenario: ScenarioArg, threads: ThreadsOpt = None, output_dir: OutputOpt = None) -> None:
    """Three-phase mixing transfers between points near the equilibrium."""
    _run("mixing", scenario, threads, output_dir)


@app.command()
def verify(scenario: ScenarioArg, threads: ThreadsOpt = None, output_dir: OutputOpt = None) -> None:
    """Run the property suites configured for the scenario."""
    _run("verify", scenario, threads, output_dir)


@app.command()
def schema(
    path: Annotated[Path, typer.Option("--path", help="Where to write the schema.")] = (
        PROJECT_ROOT / "config" / "scenario.schema.json"
    ),
) -> None:
    """Write the scenario JSON schema."""
    stdout.print(f"schema written: {write_schema(path)}", highlight=False, soft_wrap=True)


@app.command()
def scenarios() -> None:
    """List the built-in scenarios."""
    table = Table(title="built-in scenarios")
    table.add_column("name", no_wrap=True)
    table.add_column("file", overflow="fold")
    for name in list_scenarios():
        table.add_row(name, str(resolve_scenario_path(name)))
    stdout.print(table)


if __name__ == "__main__":
    app()
