"""
Experiment documents.

A document is a TOML file with one table per section. Every physical
quantity carries its unit ("80 um", "-5.61 V", "2pi*1.38 MHz"); dimensionless
and simulation-unit values are bare numbers. Unknown keys are rejected.
"""

from __future__ import annotations

import math
import tomllib
from pathlib import Path
from typing import Any, List, Literal, Optional

from pydantic import Field, ValidationError, field_validator, model_validator

from casimir.core.errors import ConfigurationError
from casimir.core.units import ELECTRON_MASS
from casimir.schemas.common import (
    AngularFrequency,
    ConfigModel,
    Length,
    Mass,
    SpectralDensity,
    Voltage,
)


class SpeciesConfig(ConfigModel):
    name: str = "40Ca+"
    atomic_mass: Mass = Field(description="Neutral atomic mass; converted to kg")
    charge_number: int = Field(default=1, ge=1)

    @property
    def mass(self) -> float:
        """Ion mass in kg."""
        return self.atomic_mass - self.charge_number * ELECTRON_MASS


class ElectrodeConfig(ConfigModel):
    """Rectangular electrode in the trap surface; the chain runs along z."""

    name: str = ""
    voltage: Voltage
    z_min: Length
    z_max: Length
    x_min: Length = -math.inf
    x_max: Length = math.inf

    @model_validator(mode="after")
    def check_extent(self) -> ElectrodeConfig:
        if not math.isfinite(self.voltage):
            raise ValueError(f"electrode '{self.name}' has a non-finite voltage")
        if not (self.z_min < self.z_max and self.x_min < self.x_max):
            raise ValueError(f"electrode '{self.name}' has an empty extent")
        return self


class RfConfig(ConfigModel):
    """Pseudopotential curvature m·ω_RF², given directly or as a multiple of k̄/m."""

    frequency: Optional[AngularFrequency] = None
    kbar_ratio: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def exactly_one(self) -> RfConfig:
        if (self.frequency is None) == (self.kbar_ratio is None):
            raise ValueError("rf needs exactly one of 'frequency' or 'kbar_ratio'")
        return self


class AxialConfig(ConfigModel):
    """
    Axial confinement for the equilibrium solve.

    The DC electrodes confine along the chain when ``include_dc`` is set. An
    optional auxiliary harmonic term is either fixed by ``frequency`` or solved
    so the mean ion spacing equals ``target_spacing``.
    """

    include_dc: bool = True
    frequency: Optional[AngularFrequency] = None
    target_spacing: Optional[Length] = None

    @model_validator(mode="after")
    def at_most_one(self) -> AxialConfig:
        if self.frequency is not None and self.target_spacing is not None:
            raise ValueError("axial accepts 'frequency' or 'target_spacing', not both")
        return self


class RadialConfig(ConfigModel):
    """
    Optional uniform radial trim added to every χ_i, fixed or solved for a target ω₁.

    Off by default. Chain reports keep the untrimmed ω₁ next to the trimmed one.
    """

    trim_over_kbar: Optional[float] = None
    target_omega1: Optional[float] = Field(default=None, gt=0, description="ω₁ in units of √(k̄/m)")

    @model_validator(mode="after")
    def at_most_one(self) -> RadialConfig:
        if self.trim_over_kbar is not None and self.target_omega1 is not None:
            raise ValueError("radial accepts 'trim_over_kbar' or 'target_omega1', not both")
        return self


class ChiOverrideConfig(ConfigModel):
    """χ profile supplied as data, bypassing the electrostatics."""

    chi_over_kbar: Optional[List[float]] = None
    csv: Optional[Path] = None
    spacing: Length = 4.0e-6

    @model_validator(mode="after")
    def exactly_one(self) -> ChiOverrideConfig:
        if (self.chi_over_kbar is None) == (self.csv is None):
            raise ValueError("chi_override needs exactly one of 'chi_over_kbar' or 'csv'")
        return self


class TrapConfig(ConfigModel):
    n_ions: int = Field(ge=1)
    species: SpeciesConfig
    height: Length = Field(gt=0, description="Ion height h0 above the surface")
    electrodes: List[ElectrodeConfig] = Field(default_factory=list)
    # paired layout generator, see layout()
    voltages: Optional[List[Voltage]] = None
    electrode_width: Optional[Length] = None
    rail_gap: Optional[Length] = None
    rf: Optional[RfConfig] = None
    axial: AxialConfig = AxialConfig()
    radial: RadialConfig = RadialConfig()
    chi_override: Optional[ChiOverrideConfig] = None

    @model_validator(mode="after")
    def check_layout(self) -> TrapConfig:
        if self.voltages is not None:
            if self.electrodes:
                raise ValueError("give either 'electrodes' or 'voltages', not both")
            if self.electrode_width is None or self.rail_gap is None:
                raise ValueError("'voltages' needs 'electrode_width' and 'rail_gap'")
            if self.electrode_width <= 0 or self.rail_gap <= 0:
                raise ValueError("electrode_width and rail_gap must be positive")
            if not self.voltages or len(self.voltages) % 2:
                raise ValueError("'voltages' lists electrode pairs, so its length must be even")
        strips = sorted(self.layout(), key=lambda e: e.z_min)
        for a in strips:
            for b in strips:
                if a is b:
                    continue
                overlap_z = a.z_min < b.z_max and b.z_min < a.z_max
                overlap_x = a.x_min < b.x_max and b.x_min < a.x_max
                if overlap_z and overlap_x:
                    raise ValueError(f"electrodes '{a.name}' and '{b.name}' overlap")
        if self.chi_override is None and self.rf is None:
            raise ValueError("trap needs an 'rf' section unless chi_override is given")
        if self.chi_override is not None and self.chi_override.chi_over_kbar is not None:
            if len(self.chi_override.chi_over_kbar) != self.n_ions:
                raise ValueError("chi_override.chi_over_kbar must list one value per ion")
        return self

    def layout(self) -> list[ElectrodeConfig]:
        """
        DC electrodes as rectangles in the trap surface.

        Generated layouts put the electrodes in two rows flanking the RF rails,
        ``rail_gap`` apart across the chain and unbounded outwards. Voltages
        alternate between the +x and the −x row, so entries 2j+1 and 2j+2 form
        the j-th segment. Segments are ``electrode_width`` long along the chain
        and tile it without gaps, centred on z = 0.
        """
        if self.voltages is None:
            return list(self.electrodes)
        assert self.electrode_width is not None and self.rail_gap is not None
        segments = len(self.voltages) // 2
        edge = 0.5 * self.rail_gap
        out = []
        for k, voltage in enumerate(self.voltages):
            center = (k // 2 - 0.5 * (segments - 1)) * self.electrode_width
            x_min, x_max = (edge, math.inf) if k % 2 == 0 else (-math.inf, -edge)
            out.append(
                ElectrodeConfig(
                    name=f"dc{k + 1}",
                    voltage=voltage,
                    z_min=center - 0.5 * self.electrode_width,
                    z_max=center + 0.5 * self.electrode_width,
                    x_min=x_min,
                    x_max=x_max,
                )
            )
        return out


class DriveConfig(ConfigModel):
    """Tweezer schedule ω_O²(t) = α (k̄/m) sin²(ω_D (t − t1)/2) on the target ions."""

    target_ions: List[int] = Field(default_factory=lambda: [5], description="1-based ion numbers")
    alpha: float = Field(default=0.6, ge=0)
    periods: int = Field(default=20, ge=1)
    settle_time: float = Field(default=10.0, gt=0, description="t1 − t0 in units of 1/√(k̄/m)")
    frequency_over_omega1: Optional[float] = Field(
        default=None, gt=0, description="ω_D/ω₁; default is the parametric resonance 2⟨ω₁⟩_T"
    )

    @field_validator("target_ions")
    @classmethod
    def positive_ions(cls, value: list[int]) -> list[int]:
        if not value or any(i < 1 for i in value):
            raise ValueError("target_ions must be a non-empty list of 1-based ion numbers")
        return sorted(set(value))


class MooreConfig(ConfigModel):
    """Reference cavity; derived from matching unless all three lengths are given."""

    derive_from_matching: bool = True
    l0: float = 0.0
    r0: Optional[float] = None
    delta: Optional[float] = None
    modes: int = Field(default=30, ge=1)

    @model_validator(mode="after")
    def explicit_geometry(self) -> MooreConfig:
        if not self.derive_from_matching and (self.r0 is None or self.delta is None):
            raise ValueError("moore needs r0 and delta when derive_from_matching is false")
        return self


class SweepConfig(ConfigModel):
    start_over_omega1: float = Field(default=0.5, gt=0)
    stop_over_omega1: float = Field(default=4.5, gt=0)
    points: int = Field(default=161, ge=1, le=400)

    @model_validator(mode="after")
    def ordered(self) -> SweepConfig:
        if self.stop_over_omega1 < self.start_over_omega1:
            raise ValueError("sweep stop must not precede start")
        return self


class TimeseriesConfig(ConfigModel):
    samples_per_period: int = Field(default=8, ge=1)
    include_optimized: bool = True


class NumericsConfig(ConfigModel):
    rtol: float = Field(default=1e-10, gt=0)
    atol: float = Field(default=1e-12, gt=0)
    symplectic_tolerance: float = Field(default=1e-8, gt=0)
    fallback_to_symplectic: bool = True
    moore_nodes_per_length: int = Field(default=2000, ge=50)
    moore_in_mode_factor: int = Field(default=2, ge=1)
    completeness_threshold: float = Field(default=1e-3, gt=0)
    average_points: int = Field(default=2001, ge=1001)
    drive_table_points: int = Field(default=201, ge=3)


class NoiseConfig(ConfigModel):
    spectral_density: SpectralDensity = Field(ge=0)
    reference_frequency: AngularFrequency = Field(gt=0)
    scaling: Literal["inverse_frequency", "flat"] = "inverse_frequency"
    laser_heating_per_ms: float = Field(
        default=0.1, ge=0, description="Quanta per ms, a budget constant"
    )
    mode_frequency: Optional[AngularFrequency] = Field(
        default=None, description="Override for ω₁; defaults to the chain's lowest mode"
    )
    drive_duration_ms: Optional[float] = Field(default=None, gt=0)


class ReadoutConfig(ConfigModel):
    mode: int = Field(default=1, ge=1)
    n_max: int = Field(default=10, ge=1)
    truth_cutoff: int = Field(default=40, ge=2)
    rabi_frequency: AngularFrequency = Field(gt=0, description="Blue-sideband Ω₀,₁")
    samples: int = Field(default=400, ge=10)
    window_factor: float = Field(
        default=1.25, ge=1.0, description="Window over the required minimum"
    )
    noise_sigma: float = Field(default=0.01, ge=0)
    state: Literal["driven", "vacuum", "measured"] = "driven"
    distribution_csv: Optional[Path] = Field(
        default=None, description="Measured n,p table used as the truth when state is measured"
    )

    @model_validator(mode="after")
    def measured_needs_table(self) -> ReadoutConfig:
        if (self.state == "measured") != (self.distribution_csv is not None):
            raise ValueError("distribution_csv goes with state = 'measured' and only with it")
        return self


class OutputConfig(ConfigModel):
    directory: Optional[Path] = None
    plots: bool = True


class ExperimentConfig(ConfigModel):
    trap: TrapConfig
    drive: DriveConfig = DriveConfig()
    moore: MooreConfig = MooreConfig()
    sweep: SweepConfig = SweepConfig()
    timeseries: TimeseriesConfig = TimeseriesConfig()
    numerics: NumericsConfig = NumericsConfig()
    noise: Optional[NoiseConfig] = None
    readout: Optional[ReadoutConfig] = None
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def targets_exist(self) -> ExperimentConfig:
        missing = [i for i in self.drive.target_ions if i > self.trap.n_ions]
        if missing:
            raise ValueError(f"drive targets {missing} exceed n_ions={self.trap.n_ions}")
        return self


def load_experiment_config(
    path: Path | str, overrides: Optional[dict[str, Any]] = None
) -> ExperimentConfig:
    """Read and validate an experiment document; relative CSV paths resolve next to it."""
    path = Path(path)
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise ConfigurationError(
            f"cannot read config {path}: {exc}", details={"path": str(path)}
        ) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(
            f"config {path} is not valid TOML: {exc}", details={"path": str(path)}
        ) from exc

    chi = data.get("trap", {}).get("chi_override")
    if isinstance(chi, dict) and isinstance(chi.get("csv"), str):
        chi["csv"] = str((path.parent / chi["csv"]).resolve())
    readout = data.get("readout")
    if isinstance(readout, dict) and isinstance(readout.get("distribution_csv"), str):
        readout["distribution_csv"] = str((path.parent / readout["distribution_csv"]).resolve())
    for section, values in (overrides or {}).items():
        data.setdefault(section, {}).update(values)

    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(
            f"config {path} failed validation with {exc.error_count()} error(s): {exc}",
            details={"path": str(path), "errors": exc.errors(include_url=False)},
        ) from exc
