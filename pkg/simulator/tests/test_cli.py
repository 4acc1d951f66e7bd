"""
Command-line interface.

This module tests:
- Exit codes for success, configuration errors and numerical failures
- The JSON report on stdout and run.json in the output directory
- Option validation
- Sweep results independent of the worker count
"""

from __future__ import annotations

import math
from pathlib import Path

import orjson
import pytest
from click.testing import CliRunner

from casimir.cli.main import cli
from casimir.services.measurement import read_distribution
from casimir.services.run_store import read_manifest

SMALL_DOCUMENT = """
[trap]
n_ions = 4
height = "80 um"

[trap.species]
atomic_mass = "39.962590863 u"

[trap.chi_override]
chi_over_kbar = [6.0, 2.0, 2.0, 6.0]

[drive]
target_ions = [1]
alpha = 0.3
periods = 3
settle_time = 2.0

[moore]
modes = 4

[sweep]
start_over_omega1 = 1.5
stop_over_omega1 = 2.5
points = 3

[numerics]
rtol = 1e-9
atol = 1e-11
moore_nodes_per_length = 200
average_points = 1001
drive_table_points = 21

[output]
plots = false
"""

HEATING_NOISE = """
[noise]
spectral_density = "3.8e-13 V^2/m^2/Hz"
reference_frequency = "2pi*1.38 MHz"
mode_frequency = "2pi*0.241 MHz"
drive_duration_ms = 0.041
"""


@pytest.fixture(autouse=True)
def quiet_logs(monkeypatch):
    monkeypatch.setenv("CASIMIR_LOG_LEVEL", "ERROR")


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def write_document(tmp_path):
    def write(*parts: str) -> Path:
        path = tmp_path / "experiment.cfg"
        path.write_text("\n".join((SMALL_DOCUMENT, *parts)))
        return path

    return write


def invoke(runner: CliRunner, *args: str):
    return runner.invoke(cli, list(args), catch_exceptions=False)


@pytest.mark.integration
class TestExitCodes:
    """0 on success, 2 for bad configuration, 3 for numerical failure."""

    def test_heating_succeeds(self, runner, write_document, tmp_path):
        """Explicit mode frequency and duration give the reference budget."""
        config = write_document(HEATING_NOISE)
        out = tmp_path / "heating"
        result = invoke(runner, "heating", "--config", str(config), "--out", str(out))
        assert result.exit_code == 0

        report = orjson.loads(result.stdout)
        assert report["command"] == "heating"
        assert report["status"] == "completed"
        summary = report["summary"]
        assert summary["heating_rate_per_ms"] == pytest.approx(1.31, rel=0.02)
        assert summary["added_quanta"] == pytest.approx(0.054, rel=0.05)
        assert summary["laser_added_quanta"] == pytest.approx(0.1 * 0.041)

        record = read_manifest(out)
        assert record.run_id == report["run_id"]
        assert [entry.path for entry in record.files] == ["heating.csv"]

    def test_missing_section_is_configuration_error(self, runner, write_document, tmp_path):
        """The heating command without a [noise] section exits with 2."""
        config = write_document()
        result = invoke(runner, "heating", "--config", str(config), "--out", str(tmp_path / "h"))
        assert result.exit_code == 2
        assert "invalid_configuration" in result.stderr
        assert read_manifest(tmp_path / "h").status == "failed"

    def test_failure_event_names_the_run(self, runner, write_document, tmp_path):
        """The command.failed log event carries the run id and command of run.json."""
        out = tmp_path / "h"
        result = invoke(runner, "heating", "--config", str(write_document()), "--out", str(out))
        events = [orjson.loads(line) for line in result.stderr.splitlines() if line.startswith("{")]
        failed = [event for event in events if event.get("event") == "command.failed"]
        assert failed
        assert failed[0]["run_id"] == read_manifest(out).run_id
        assert failed[0]["command"] == "heating"
        assert failed[0]["level"] == "error"

    def test_invalid_document(self, runner, tmp_path):
        """A document that fails validation exits with 2 before any output is written."""
        config = tmp_path / "bad.cfg"
        config.write_text('[trap]\nn_ions = 0\nheight = "80 um"\n')
        out = tmp_path / "never"
        result = invoke(runner, "match", "--config", str(config), "--out", str(out))
        assert result.exit_code == 2
        assert not out.exists()

    def test_unstable_chain_is_numerical_failure(self, runner, write_document, tmp_path):
        """A χ profile without radial confinement exits with 3 and records the failure."""
        config = write_document().read_text()
        config = config.replace("[6.0, 2.0, 2.0, 6.0]", "[-1.0, -1.0, -1.0, -1.0]")
        path = tmp_path / "unstable.cfg"
        path.write_text(config)
        out = tmp_path / "info"
        result = invoke(runner, "chain-info", "--config", str(path), "--out", str(out))
        assert result.exit_code == 3
        assert "equilibrium_failed" in result.stderr
        record = read_manifest(out)
        assert record.status == "failed"
        assert record.summary["details"]["mode_index"] == 1


@pytest.mark.integration
class TestOptions:
    """Option parsing and conflicts."""

    def test_phase_and_time_conflict(self, runner, write_document, tmp_path):
        """chi-profile accepts --phase or --time, not both."""
        config = write_document()
        result = invoke(
            runner, "chi-profile", "--config", str(config), "--phase", "1.0", "--time", "3.0"
        )
        assert result.exit_code == 2
        assert "not both" in result.output

    def test_threads_must_be_positive(self, runner, write_document):
        """--threads 0 is rejected by click."""
        result = invoke(runner, "sweep", "--config", str(write_document()), "--threads", "0")
        assert result.exit_code == 2

    def test_missing_config_file(self, runner, tmp_path):
        """A nonexistent --config path is a usage error."""
        result = invoke(runner, "match", "--config", str(tmp_path / "absent.cfg"))
        assert result.exit_code == 2

    def test_chi_profile_at_phase(self, runner, write_document, tmp_path):
        """At phase π the target ion carries the full tweezer curvature."""
        config = write_document()
        out = tmp_path / "chi"
        result = invoke(
            runner, "chi-profile", "--config", str(config), "--out", str(out),
            "--phase", str(math.pi),
        )
        assert result.exit_code == 0
        summary = orjson.loads(result.stdout)["summary"]
        assert summary["stage"] == 2
        assert summary["max_chi_over_kbar"] == pytest.approx(6.3)
        assert (out / "chi.csv").exists()


@pytest.mark.integration
@pytest.mark.slow
class TestCommands:
    """End-to-end runs of the small four-ion document."""

    def test_match_report(self, runner, write_document, tmp_path):
        """match writes one row per quantity and reports the cavity geometry."""
        out = tmp_path / "match"
        result = invoke(runner, "match", "--config", str(write_document()), "--out", str(out))
        assert result.exit_code == 0
        summary = orjson.loads(result.stdout)["summary"]
        assert summary["delta_d"] > 0.0
        assert summary["omega1"] == pytest.approx(math.pi / summary["length_d"])
        lines = (out / "match.csv").read_bytes().split(b"\r\n")
        assert lines[0] == b"quantity,value"

    def test_sweep_independent_of_threads(self, runner, write_document, tmp_path):
        """One worker and two workers write byte-identical sweep.csv files."""
        config = str(write_document())
        serial, parallel = tmp_path / "serial", tmp_path / "parallel"
        first = invoke(runner, "sweep", "--config", config, "--out", str(serial))
        second = invoke(
            runner, "sweep", "--config", config, "--out", str(parallel), "--threads", "2"
        )
        assert first.exit_code == 0
        assert second.exit_code == 0
        assert (serial / "sweep.csv").read_bytes() == (parallel / "sweep.csv").read_bytes()
        assert orjson.loads(first.stdout)["summary"]["failed_points"] == 0


READOUT = """
[readout]
n_max = 4
rabi_frequency = "2pi*50 kHz"
samples = 200
noise_sigma = 0.0
state = "vacuum"
"""


@pytest.mark.integration
class TestMeasuredReadout:
    """readout-sim on a measured phonon distribution."""

    def test_distribution_replaces_the_chain(self, runner, write_document, tmp_path):
        """--distribution reads n,p rows as the truth and writes them back as truth.csv."""
        table = tmp_path / "measured.csv"
        table.write_text("n,p\n0,0.5\n1,0.3\n2,0.2\n")
        out = tmp_path / "readout"
        result = invoke(
            runner, "readout-sim", "--config", str(write_document(READOUT)),
            "--out", str(out), "--distribution", str(table),
        )
        assert result.exit_code == 0
        summary = orjson.loads(result.stdout)["summary"]
        assert summary["state"] == "measured"
        assert summary["mean_truth"] == pytest.approx(0.7)
        assert summary["tv_noiseless"] < 1e-3
        assert read_distribution(out / "truth.csv").probabilities == pytest.approx([0.5, 0.3, 0.2])

    def test_unreadable_distribution_is_configuration_error(
        self, runner, write_document, tmp_path
    ):
        """A table with a gap in n exits with 2."""
        table = tmp_path / "gappy.csv"
        table.write_text("n,p\n0,0.5\n2,0.5\n")
        result = invoke(
            runner, "readout-sim", "--config", str(write_document(READOUT)),
            "--out", str(tmp_path / "r"), "--distribution", str(table),
        )
        assert result.exit_code == 2
        assert "without gaps" in result.stderr
