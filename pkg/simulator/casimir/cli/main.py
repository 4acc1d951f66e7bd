"""
Command-line entry point.

Every subcommand reads one experiment document, writes its CSV files and
run.json into the output directory, and prints a JSON summary on stdout.
Exit codes: 0 success, 2 configuration error, 3 numerical failure or a
sweep with failed points.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Callable, Optional

import click
import orjson
from pydantic import ValidationError

from casimir import __version__
from casimir.core.config import get_settings
from casimir.core.errors import ConfigurationError, SimulationError
from casimir.core.logging import configure_logging, get_logger, run_context
from casimir.schemas.experiment import ExperimentConfig, load_experiment_config
from casimir.services import experiments
from casimir.services.experiments import CommandOutcome, RunOptions
from casimir.services.run_store import RunWriter

logger = get_logger(__name__)

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

Runner = Callable[[ExperimentConfig, RunWriter, RunOptions], CommandOutcome]


def _fail(code: int, error_code: str, message: str) -> None:
    click.echo(f"{error_code}: {message}", err=True)
    sys.exit(code)


def _execute(
    command: str,
    config_path: Path,
    out: Optional[Path],
    threads: Optional[int],
    seed: int,
    tolerance: Optional[float],
    runner: Runner,
    overrides: Optional[dict[str, Any]] = None,
) -> None:
    try:
        settings = get_settings()
    except ValidationError as exc:
        _fail(EXIT_CONFIG, "invalid_settings", str(exc))
        return
    configure_logging(settings.log_level, settings.log_format)

    try:
        config = load_experiment_config(config_path, overrides)
    except (ConfigurationError, ValidationError) as exc:
        code = exc.error_code if isinstance(exc, ConfigurationError) else "invalid_configuration"
        _fail(EXIT_CONFIG, code, str(exc))
        return

    directory = out or config.output.directory or settings.output_dir / command
    writer = RunWriter(directory, command, config, digits=settings.csv_digits)
    options = RunOptions(
        threads=threads if threads is not None else settings.chain_threads,
        seed=seed,
        tolerance=tolerance,
    )
    with run_context(writer.run_id, command):
        logger.info("command.started", config=str(config_path), directory=str(directory))
        try:
            outcome = runner(config, writer, options)
        except SimulationError as exc:
            writer.warn(f"{exc.error_code}: {exc}")
            writer.finish("failed", summary={"error_code": exc.error_code, "details": exc.details})
            logger.error("command.failed", error_code=exc.error_code, error=str(exc))
            exit_code = EXIT_CONFIG if isinstance(exc, ConfigurationError) else EXIT_NUMERICAL
            _fail(exit_code, exc.error_code, str(exc))
            return

        record = writer.finish(outcome.status, outcome.summary)
        report = {
            "run_id": record.run_id,
            "command": command,
            "status": record.status,
            "directory": str(directory),
            "warnings": len(record.warnings),
            "summary": outcome.summary,
        }
        click.echo(orjson.dumps(report, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))
        logger.info("command.completed", status=record.status)
        if outcome.status == "partial":
            sys.exit(EXIT_NUMERICAL)


def common_options(func: Callable[..., Any]) -> Callable[..., Any]:
    decorators = [
        click.option(
            "--config",
            "config_path",
            required=True,
            type=click.Path(exists=True, dir_okay=False, path_type=Path),
            help="Experiment document (TOML)",
        ),
        click.option(
            "--out",
            type=click.Path(file_okay=False, path_type=Path),
            default=None,
            help="Output directory; defaults to CASIMIR_OUTPUT_DIR/<command>",
        ),
        click.option(
            "--threads",
            type=click.IntRange(min=1),
            default=None,
            help="Worker threads; falls back to CASIMIR_CHAIN_THREADS",
        ),
        click.option(
            "--seed",
            type=click.IntRange(min=0, max=2**64 - 1),
            default=0,
            show_default=True,
            help="Seed of the readout noise generator",
        ),
        click.option(
            "--tolerance",
            type=click.FloatRange(min=0.0, min_open=True),
            default=None,
            help="Override the integrator rtol (atol follows as rtol/100)",
        ),
    ]
    for decorator in reversed(decorators):
        func = decorator(func)
    return func


@click.group()
@click.version_option(__version__, prog_name="casimir")
def cli() -> None:
    """Dynamical Casimir effect in a trapped-ion chain versus a moving-mirror cavity."""


@cli.command("chain-info")
@common_options
def chain_info(
    config_path: Path,
    out: Optional[Path],
    threads: Optional[int],
    seed: int,
    tolerance: Optional[float],
) -> None:
    """Equilibrium positions, coupling scale and mode spectrum."""
    _execute("chain-info", config_path, out, threads, seed, tolerance, experiments.run_chain_info)


@cli.command("chi-profile")
@common_options
@click.option("--phase", type=float, default=None, help="Drive phase ω_D(t − t1) in radians")
@click.option("--time", "time_", type=float, default=None, help="Time in units of 1/√(k̄/m)")
def chi_profile(
    config_path: Path,
    out: Optional[Path],
    threads: Optional[int],
    seed: int,
    tolerance: Optional[float],
    phase: Optional[float],
    time_: Optional[float],
) -> None:
    """Radial χ_i of every ion at one instant."""
    if phase is not None and time_ is not None:
        raise click.UsageError("give --phase or --time, not both")

    def runner(config: ExperimentConfig, writer: RunWriter, options: RunOptions) -> CommandOutcome:
        return experiments.run_chi_profile(config, writer, options, phase=phase, time=time_)

    _execute("chi-profile", config_path, out, threads, seed, tolerance, runner)


@cli.command()
@common_options
def sweep(
    config_path: Path,
    out: Optional[Path],
    threads: Optional[int],
    seed: int,
    tolerance: Optional[float],
) -> None:
    """Mode occupations of both models over the drive frequency grid."""
    _execute("sweep", config_path, out, threads, seed, tolerance, experiments.run_sweep)


@cli.command()
@common_options
def timeseries(
    config_path: Path,
    out: Optional[Path],
    threads: Optional[int],
    seed: int,
    tolerance: Optional[float],
) -> None:
    """⟨n₁(t)⟩ for the sine drive, the mirror, the resonance law and the optimized drive."""
    _execute("timeseries", config_path, out, threads, seed, tolerance, experiments.run_timeseries)


@cli.command()
@common_options
def match(
    config_path: Path,
    out: Optional[Path],
    threads: Optional[int],
    seed: int,
    tolerance: Optional[float],
) -> None:
    """Cavity length and mirror excursion matched to the chain."""
    _execute("match", config_path, out, threads, seed, tolerance, experiments.run_match)


@cli.command()
@common_options
def heating(
    config_path: Path,
    out: Optional[Path],
    threads: Optional[int],
    seed: int,
    tolerance: Optional[float],
) -> None:
    """Electric-field-noise heating of the lowest mode."""
    _execute("heating", config_path, out, threads, seed, tolerance, experiments.run_heating)


@cli.command("readout-sim")
@common_options
@click.option(
    "--mode",
    type=click.IntRange(min=1),
    default=None,
    help="1-based mode; overrides [readout].mode",
)
@click.option(
    "--distribution",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Measured n,p CSV to read out instead of the simulated chain",
)
def readout_sim(
    config_path: Path,
    out: Optional[Path],
    threads: Optional[int],
    seed: int,
    tolerance: Optional[float],
    mode: Optional[int],
    distribution: Optional[Path],
) -> None:
    """Sideband readout of one mode's phonon distribution, simulated or measured."""
    section: dict[str, Any] = {}
    if mode is not None:
        section["mode"] = mode
    if distribution is not None:
        section.update(state="measured", distribution_csv=str(distribution.resolve()))
    overrides = {"readout": section} if section else None
    runner = experiments.run_readout
    _execute("readout-sim", config_path, out, threads, seed, tolerance, runner, overrides)


if __name__ == "__main__":
    cli()
