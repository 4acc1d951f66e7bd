"""
Process settings and experiment documents.

This module tests:
- CASIMIR_* settings, their validation and caching
- Loading the shipped experiment documents
- Validation errors surfaced as ConfigurationError
- The paired electrode layout generator
"""

from __future__ import annotations

import math

import pytest
from pydantic import ValidationError

from casimir.core.config import Settings, clear_settings_cache, get_settings
from casimir.core.errors import ConfigurationError
from casimir.schemas.experiment import ExperimentConfig, TrapConfig, load_experiment_config

from .conftest import trap_document


@pytest.mark.unit
class TestSettings:
    """Environment-driven settings."""

    def test_defaults(self):
        """One worker, JSON logs at INFO and 15 CSV digits."""
        settings = get_settings()
        assert settings.chain_threads == 1
        assert settings.log_level == "INFO"
        assert settings.log_format == "json"
        assert settings.csv_digits == 15

    def test_environment_override(self, monkeypatch):
        """CASIMIR_CHAIN_THREADS sets the default worker count."""
        monkeypatch.setenv("CASIMIR_CHAIN_THREADS", "4")
        clear_settings_cache()
        assert get_settings().chain_threads == 4

    def test_cached_until_cleared(self, monkeypatch):
        """The environment is read once until the cache is cleared."""
        first = get_settings()
        monkeypatch.setenv("CASIMIR_CSV_DIGITS", "17")
        assert get_settings() is first
        clear_settings_cache()
        assert get_settings().csv_digits == 17

    def test_logging_values_normalized(self):
        """Level and format are case-insensitive."""
        settings = Settings(log_level="debug", log_format="CONSOLE")
        assert settings.log_level == "DEBUG"
        assert settings.log_format == "console"

    @pytest.mark.parametrize(
        "field,value",
        [("log_level", "chatty"), ("log_format", "xml"), ("chain_threads", 0), ("csv_digits", 5)],
    )
    def test_invalid_values(self, field, value):
        """Out-of-range settings fail validation."""
        with pytest.raises(ValidationError):
            Settings(**{field: value})


@pytest.mark.unit
class TestExperimentDocuments:
    """TOML documents with unit-carrying quantities."""

    def test_reference_document(self, twenty_ion_config_path):
        """The shipped reference document validates into SI values."""
        config = load_experiment_config(twenty_ion_config_path)
        assert config.trap.n_ions == 20
        assert config.trap.height == pytest.approx(80e-6)
        assert config.trap.axial.target_spacing is None
        assert config.trap.radial.target_omega1 is None
        assert config.trap.radial.trim_over_kbar is None
        assert len(config.trap.layout()) == 6
        assert config.noise is not None
        assert config.noise.reference_frequency == pytest.approx(2 * math.pi * 1.38e6)
        assert config.drive.target_ions == [5]

    def test_two_ion_document(self, two_ion_config_path):
        """The two-ion document uses a fixed axial frequency and no DC electrodes."""
        config = load_experiment_config(two_ion_config_path)
        assert config.trap.axial.include_dc is False
        assert config.trap.layout() == []
        assert config.trap.rf.frequency == pytest.approx(2 * math.pi * 5e6)

    def test_overrides_apply(self, two_ion_config_path):
        """Command-line overrides replace single keys of a section."""
        config = load_experiment_config(two_ion_config_path, {"readout": {"mode": 2}})
        assert config.readout.mode == 2
        assert config.readout.n_max == 6

    def test_unknown_key_rejected(self, tmp_path):
        """Unknown keys are configuration errors listing the validation problems."""
        path = tmp_path / "bad.cfg"
        path.write_text(
            '[trap]\nn_ions = 2\nheight = "80 um"\ncolour = "blue"\n'
            '[trap.species]\natomic_mass = "40 u"\n[trap.rf]\nkbar_ratio = 7.4\n'
        )
        with pytest.raises(ConfigurationError) as excinfo:
            load_experiment_config(path)
        assert excinfo.value.details["errors"]
        assert excinfo.value.error_code == "invalid_configuration"

    def test_invalid_toml(self, tmp_path):
        """A syntax error is reported as a configuration error."""
        path = tmp_path / "broken.cfg"
        path.write_text("[trap\nn_ions = 2\n")
        with pytest.raises(ConfigurationError, match="not valid TOML"):
            load_experiment_config(path)

    def test_missing_file(self, tmp_path):
        """An unreadable document names its path."""
        with pytest.raises(ConfigurationError) as excinfo:
            load_experiment_config(tmp_path / "absent.cfg")
        assert excinfo.value.details["path"].endswith("absent.cfg")

    def test_relative_chi_csv_resolves_next_to_document(self, tmp_path):
        """A relative χ profile path is taken relative to the document."""
        (tmp_path / "chi.csv").write_text("chi_over_kbar\n6\n2\n2\n6\n")
        path = tmp_path / "override.cfg"
        path.write_text(
            '[trap]\nn_ions = 4\nheight = "80 um"\n'
            '[trap.species]\natomic_mass = "39.962590863 u"\n'
            '[trap.chi_override]\ncsv = "chi.csv"\n'
            "[drive]\ntarget_ions = [1]\n"
        )
        config = load_experiment_config(path)
        assert config.trap.chi_override.csv == (tmp_path / "chi.csv").resolve()

    def test_drive_targets_within_chain(self):
        """Targets beyond the last ion are rejected."""
        with pytest.raises(ValidationError, match="exceed n_ions"):
            ExperimentConfig.model_validate(trap_document(drive={"target_ions": [7]}))

    @pytest.mark.parametrize(
        "section,values",
        [
            ("sweep", {"start_over_omega1": 3.0, "stop_over_omega1": 1.0}),
            ("sweep", {"points": 401}),
            ("drive", {"periods": 0}),
            ("numerics", {"average_points": 10}),
            ("moore", {"derive_from_matching": False}),
        ],
    )
    def test_section_constraints(self, section, values):
        """Each section enforces its own ranges."""
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate(trap_document(**{section: values}))


def paired_trap(**extra: object) -> dict[str, object]:
    return {
        "n_ions": 2,
        "height": "80 um",
        "species": {"atomic_mass": "39.962590863 u"},
        "rf": {"kbar_ratio": 7.4},
        **extra,
    }


@pytest.mark.unit
class TestPairedLayout:
    """Electrode pairs flanking the RF rails, tiling the chain axis."""

    def test_generated_pairs(self):
        """Odd entries sit on the +x row, even entries on the −x row of the same segment."""
        trap = TrapConfig.model_validate(
            paired_trap(
                voltages=["-1 V", "-1 V", "2 V", "2 V"],
                electrode_width="80 um",
                rail_gap="230 um",
            )
        )
        electrodes = trap.layout()
        assert [e.name for e in electrodes] == ["dc1", "dc2", "dc3", "dc4"]
        first, second, third, _ = electrodes
        assert (first.z_min, first.z_max) == pytest.approx((-80e-6, 0.0))
        assert (second.z_min, second.z_max) == pytest.approx((-80e-6, 0.0))
        assert third.z_min == pytest.approx(0.0)
        assert first.x_min == pytest.approx(115e-6)
        assert math.isinf(first.x_max) and first.x_max > 0
        assert second.x_max == pytest.approx(-115e-6)
        assert math.isinf(second.x_min) and second.x_min < 0
        assert third.voltage == pytest.approx(2.0)

    @pytest.mark.parametrize(
        "extra,message",
        [
            ({"voltages": ["1 V"], "electrode_width": "80 um", "rail_gap": "230 um"}, "even"),
            ({"voltages": ["1 V", "1 V"]}, "electrode_width"),
            (
                {"voltages": ["1 V", "1 V"], "electrode_width": "0 um", "rail_gap": "230 um"},
                "positive",
            ),
            (
                {
                    "voltages": ["1 V", "1 V"],
                    "electrode_width": "80 um",
                    "rail_gap": "230 um",
                    "electrodes": [{"voltage": "1 V", "z_min": "0 um", "z_max": "10 um"}],
                },
                "not both",
            ),
        ],
    )
    def test_layout_errors(self, extra, message):
        """Odd, underspecified, degenerate and doubly specified layouts are rejected."""
        with pytest.raises(ValidationError, match=message):
            TrapConfig.model_validate(paired_trap(**extra))

    def test_overlapping_electrodes(self):
        """Explicit electrodes may not overlap."""
        electrodes = [
            {"name": "a", "voltage": "1 V", "z_min": "0 um", "z_max": "50 um"},
            {"name": "b", "voltage": "1 V", "z_min": "40 um", "z_max": "90 um"},
        ]
        with pytest.raises(ValidationError, match="overlap"):
            TrapConfig.model_validate(paired_trap(electrodes=electrodes))

    def test_facing_electrodes_do_not_overlap(self):
        """Electrodes sharing a z range on opposite rows are accepted."""
        electrodes = [
            {"name": "a", "voltage": "1 V", "z_min": "0 um", "z_max": "50 um", "x_min": "20 um"},
            {"name": "b", "voltage": "1 V", "z_min": "0 um", "z_max": "50 um", "x_max": "-20 um"},
        ]
        trap = TrapConfig.model_validate(paired_trap(electrodes=electrodes))
        assert len(trap.layout()) == 2

    def test_rf_needs_exactly_one_form(self):
        """The pseudopotential is given by frequency or by ratio, not both."""
        with pytest.raises(ValidationError, match="exactly one"):
            TrapConfig.model_validate(
                paired_trap(rf={"kbar_ratio": 7.4, "frequency": "2pi*3 MHz"})
            )


@pytest.mark.unit
class TestReadoutSection:
    """Simulated, vacuum and measured readout truths."""

    def test_measured_needs_a_table(self):
        """state = measured without distribution_csv is rejected, and the reverse too."""
        readout = {"rabi_frequency": "2pi*50 kHz"}
        with pytest.raises(ValidationError, match="distribution_csv"):
            ExperimentConfig.model_validate(
                trap_document(readout={**readout, "state": "measured"})
            )
        with pytest.raises(ValidationError, match="distribution_csv"):
            ExperimentConfig.model_validate(
                trap_document(readout={**readout, "distribution_csv": "p.csv"})
            )

    def test_relative_table_resolves_next_to_document(self, tmp_path):
        """A relative distribution_csv is taken relative to the document."""
        path = tmp_path / "measured.cfg"
        path.write_text(
            '[trap]\nn_ions = 4\nheight = "80 um"\n'
            '[trap.species]\natomic_mass = "39.962590863 u"\n'
            "[trap.chi_override]\nchi_over_kbar = [6.0, 2.0, 2.0, 6.0]\n"
            "[drive]\ntarget_ions = [1]\n"
            '[readout]\nrabi_frequency = "2pi*50 kHz"\nstate = "measured"\n'
            'distribution_csv = "p.csv"\n'
        )
        config = load_experiment_config(path)
        assert config.readout.distribution_csv == (tmp_path / "p.csv").resolve()
