"""
Experiment orchestration behind the CLI commands.

Every command builds the chain model from the configuration, derives the
matched moving-mirror cavity and the default drive, runs its computation
and writes CSV results through a RunWriter. The functions return a summary
dictionary that the CLI prints and stores in the run manifest.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Literal, Optional

import numpy as np
from numpy.typing import NDArray

from casimir.core.errors import ConfigurationError, SimulationError
from casimir.core.logging import get_logger, map_in_context
from casimir.schemas.experiment import ExperimentConfig, NumericsConfig
from casimir.services import plot_scripts
from casimir.services.dynamics import (
    BogoliubovMap,
    StepControl,
    bogoliubov,
    normal_modes,
    occupation_timeseries,
    occupations,
    propagate,
)
from casimir.services.ion_chain import (
    CHI_PROFILE_COLUMNS,
    ChainModel,
    DriveSchedule,
    build_chain_model,
    chain_system,
    chi_profile_rows,
    radial_chis,
    staggered_stiffness,
)
from casimir.services.matching import (
    CavityMatch,
    chain_mean_frequencies,
    lowest_frequency,
    match_cavity,
    optimize_drive,
)
from casimir.services.measurement import (
    DISTRIBUTION_COLUMNS,
    NoiseModel,
    PhononDistribution,
    add_readout_noise,
    distribution_rows,
    heating_rate,
    invert_sideband,
    photon_statistics,
    read_distribution,
    sampling_times,
    sideband_signal,
    total_variation,
)
from casimir.services.moore import (
    MirrorTrajectory,
    build_moore_function,
    mean_frequency,
    moore_occupations,
    resonance_law,
)
from casimir.services.run_store import RunWriter

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]

REPORTED_MODES = 2
SHORT_TIME_PERIODS = 5
MAX_LOGGED_WARNINGS = 20


@dataclass(frozen=True, slots=True)
class RunOptions:
    threads: int = 1
    seed: int = 0
    tolerance: Optional[float] = None


@dataclass(slots=True)
class CommandOutcome:
    summary: dict[str, Any]
    status: Literal["completed", "partial"] = "completed"


@dataclass(frozen=True, slots=True)
class PreparedExperiment:
    """Chain model, matched cavity and the default drive of one configuration."""

    model: ChainModel
    omega1: float
    match: CavityMatch
    chain_mean_omega: FloatArray
    moore_mean_omega1: float
    drive: DriveSchedule
    trajectory: MirrorTrajectory

    @property
    def omega_d(self) -> float:
        return self.drive.omega_d

    def drive_at(self, config: ExperimentConfig, omega_d: float) -> DriveSchedule:
        return DriveSchedule.from_config(config.drive, omega_d)

    def trajectory_for(self, drive: DriveSchedule) -> MirrorTrajectory:
        try:
            return self.match.trajectory(drive.omega_d, drive.protocol)
        except ValueError as exc:
            raise SimulationError(
                f"no mirror trajectory at ω_D={drive.omega_d:.6g}: {exc}",
                error_code="invalid_trajectory",
                details={"omega_d": drive.omega_d},
            ) from exc


@dataclass(slots=True)
class SweepPoint:
    ratio: float
    ion: list[float]
    moore: list[float]
    warnings: list[str] = field(default_factory=list)
    error: Optional[str] = None


def step_control(numerics: NumericsConfig, tolerance: Optional[float] = None) -> StepControl:
    """Integrator settings; ``tolerance`` overrides rtol and sets atol = rtol·1e-2."""
    rtol = tolerance if tolerance is not None else numerics.rtol
    atol = tolerance * 1e-2 if tolerance is not None else numerics.atol
    return StepControl(
        rtol=rtol,
        atol=atol,
        fallback_to_symplectic=numerics.fallback_to_symplectic,
        symplectic_tolerance=numerics.symplectic_tolerance,
    )


def prepare(config: ExperimentConfig) -> PreparedExperiment:
    """
    Chain model, matched cavity and default drive.

    The default drive frequency is the parametric resonance 2⟨ω₁⟩_T of the
    matched cavity unless ``drive.frequency_over_omega1`` fixes it.
    """
    model = build_chain_model(config.trap)
    omega1 = lowest_frequency(staggered_stiffness(model.static_chi, model.couplings))
    resonant = DriveSchedule.from_config(config.drive, 2.0 * omega1)

    moore = config.moore
    if moore.derive_from_matching:
        match = match_cavity(model, resonant)
    else:
        assert moore.r0 is not None and moore.delta is not None
        try:
            match = CavityMatch.explicit(moore.l0, moore.r0, moore.delta)
        except ValueError as exc:
            raise ConfigurationError(f"moore section: {exc}") from exc

    points = config.numerics.average_points
    try:
        resonant_path = match.trajectory(2.0 * omega1, resonant.protocol)
        moore_mean = mean_frequency(resonant_path, points=points)
    except ValueError as exc:
        raise ConfigurationError(f"matched cavity is not a valid trajectory: {exc}") from exc
    chain_mean = chain_mean_frequencies(model, resonant, points=points)

    ratio = config.drive.frequency_over_omega1
    omega_d = ratio * omega1 if ratio is not None else 2.0 * moore_mean
    drive = DriveSchedule.from_config(config.drive, omega_d)
    prepared = PreparedExperiment(
        model=model,
        omega1=omega1,
        match=match,
        chain_mean_omega=chain_mean,
        moore_mean_omega1=moore_mean,
        drive=drive,
        trajectory=match.trajectory(omega_d, drive.protocol),
    )
    logger.info(
        "experiment.prepared",
        omega1=omega1,
        length=match.length,
        delta=match.delta,
        omega_d=omega_d,
    )
    return prepared


def chain_bogoliubov(
    model: ChainModel, drive: DriveSchedule, control: StepControl
) -> BogoliubovMap:
    """Bogoliubov map of the chain from t0 to the end of the drive."""
    system = chain_system(model, drive)
    protocol = drive.protocol
    propagator = propagate(system, protocol.t0, protocol.t2, control)
    basis_in = normal_modes(system.stiffness_at(protocol.t0))
    basis_out = normal_modes(system.stiffness_at(protocol.t2))
    return bogoliubov(propagator, basis_in, basis_out, tolerance=control.symplectic_tolerance)


def _leading(values: FloatArray, count: int = REPORTED_MODES) -> list[float]:
    out = [float(v) for v in values[:count]]
    return out + [math.nan] * (count - len(out))


def _moore_result(config: ExperimentConfig, trajectory: MirrorTrajectory, **kwargs: Any) -> Any:
    numerics = config.numerics
    return moore_occupations(
        trajectory,
        n_modes=config.moore.modes,
        resolution=numerics.moore_nodes_per_length,
        in_mode_factor=numerics.moore_in_mode_factor,
        completeness_threshold=numerics.completeness_threshold,
        **kwargs,
    )


def run_chain_info(
    config: ExperimentConfig, writer: RunWriter, options: RunOptions
) -> CommandOutcome:
    prepared = prepare(config)
    model = prepared.model
    positions_um = model.positions * 1e6
    gaps = np.append(np.diff(positions_um), math.nan)
    writer.write_csv(
        "chain.csv",
        ("ion_index", "position_um", "gap_to_next_um"),
        [(i + 1, positions_um[i], gaps[i]) for i in range(model.n_ions)],
    )
    spectrum = np.sqrt(np.linalg.eigvalsh(staggered_stiffness(model.static_chi, model.couplings)))
    to_mhz = model.units.frequency / (2.0 * math.pi) / 1e6
    writer.write_csv(
        "spectrum.csv",
        ("mode", "omega_over_sqrt_kbar_m", "frequency_mhz", "mean_omega_over_sqrt_kbar_m"),
        [
            (k + 1, spectrum[k], spectrum[k] * to_mhz, prepared.chain_mean_omega[k])
            for k in range(spectrum.size)
        ],
    )
    summary = {
        "n_ions": model.n_ions,
        "mean_spacing_um": model.mean_spacing * 1e6,
        "sqrt_kbar_over_m_mhz": to_mhz,
        "rf_frequency_mhz": model.rf_frequency / (2.0 * math.pi) / 1e6,
        "rf_over_kbar": model.rf_curvature / model.kbar,
        "trim_over_kbar": model.trim / model.kbar,
        "auxiliary_axial_curvature_n_per_m": model.auxiliary_curvature,
        "omega1_over_sqrt_kbar_m": prepared.omega1,
        "omega1_mhz": prepared.omega1 * to_mhz,
        "untrimmed_omega1_over_sqrt_kbar_m": model.lowest_frequency(trimmed=False),
    }
    return CommandOutcome(summary=summary)


def run_chi_profile(
    config: ExperimentConfig,
    writer: RunWriter,
    options: RunOptions,
    phase: Optional[float] = None,
    time: Optional[float] = None,
) -> CommandOutcome:
    """χ_i at ``time`` (1/√(k̄/m)) or at drive ``phase`` ω_D(t − t1); defaults to t0."""
    prepared = prepare(config)
    protocol = prepared.drive.protocol
    if time is not None:
        t = time
    elif phase is not None:
        t = protocol.t1 + phase / prepared.omega_d
    else:
        t = protocol.t0
    chi = radial_chis(prepared.model, prepared.drive, t)
    writer.write_csv("chi.csv", CHI_PROFILE_COLUMNS, chi_profile_rows(prepared.model, chi))
    if config.output.plots:
        plot_scripts.emit(writer, "chi")
    return CommandOutcome(
        summary={
            "t": t,
            "stage": protocol.stage(t),
            "min_chi_over_kbar": float(chi.min()),
            "max_chi_over_kbar": float(chi.max()),
        }
    )


def _sweep_point(
    config: ExperimentConfig, prepared: PreparedExperiment, ratio: float, control: StepControl
) -> SweepPoint:
    omega_d = ratio * prepared.omega1
    try:
        drive = prepared.drive_at(config, omega_d)
        ion = occupations(chain_bogoliubov(prepared.model, drive, control))
        result = _moore_result(config, prepared.trajectory_for(drive))
    except SimulationError as exc:
        logger.warning("sweep.point.failed", ratio=ratio, error_code=exc.error_code, error=str(exc))
        return SweepPoint(
            ratio=ratio,
            ion=[math.nan] * REPORTED_MODES,
            moore=[math.nan] * REPORTED_MODES,
            error=f"{exc.error_code}: {exc}",
        )
    logger.debug("sweep.point.completed", ratio=ratio, n1_ion=float(ion[0]))
    return SweepPoint(
        ratio=ratio,
        ion=_leading(ion),
        moore=_leading(result.occupations),
        warnings=[f"ω_D/ω₁={ratio:.6g}: {w}" for w in result.warnings],
    )


def run_sweep(
    config: ExperimentConfig, writer: RunWriter, options: RunOptions
) -> CommandOutcome:
    """⟨n₁⟩ and ⟨n₂⟩ of both models after the drive, over the ω_D grid."""
    prepared = prepare(config)
    control = step_control(config.numerics, options.tolerance)
    sweep = config.sweep
    grid = np.linspace(sweep.start_over_omega1, sweep.stop_over_omega1, sweep.points)

    def evaluate(ratio: float) -> SweepPoint:
        return _sweep_point(config, prepared, float(ratio), control)

    if options.threads > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as executor:
            points = map_in_context(executor, evaluate, grid.tolist())
    else:
        points = [evaluate(ratio) for ratio in grid]

    failed = [p for p in points if p.error is not None]
    for point in failed:
        writer.warn(f"sweep point ω_D/ω₁={point.ratio:.6g} failed: {point.error}")
    completeness = [w for p in points for w in p.warnings]
    for message in completeness[:MAX_LOGGED_WARNINGS]:
        writer.warn(message)
    if len(completeness) > MAX_LOGGED_WARNINGS:
        omitted = len(completeness) - MAX_LOGGED_WARNINGS
        writer.warn(f"{omitted} further completeness warnings omitted")

    writer.write_csv(
        "sweep.csv",
        ("omega_d_over_omega1", "n1_ion", "n2_ion", "n1_moore", "n2_moore"),
        [(p.ratio, *p.ion, *p.moore) for p in points],
    )
    if config.output.plots:
        plot_scripts.emit(writer, "sweep")

    n1_ion = np.array([p.ion[0] for p in points])
    n1_moore = np.array([p.moore[0] for p in points])
    summary: dict[str, Any] = {
        "points": len(points),
        "failed_points": len(failed),
        "resonance_over_omega1": 2.0 * prepared.moore_mean_omega1 / prepared.omega1,
    }
    if not np.all(np.isnan(n1_ion)):
        peak = int(np.nanargmax(n1_ion))
        summary.update(peak_over_omega1_ion=float(grid[peak]), peak_n1_ion=float(n1_ion[peak]))
    if not np.all(np.isnan(n1_moore)):
        peak = int(np.nanargmax(n1_moore))
        summary.update(
            peak_over_omega1_moore=float(grid[peak]), peak_n1_moore=float(n1_moore[peak])
        )
    return CommandOutcome(summary=summary, status="partial" if failed else "completed")


def timeseries_times(drive: DriveSchedule, periods: int, samples_per_period: int) -> FloatArray:
    """One period before t1 (not before t0), then ``samples_per_period`` per drive period."""
    protocol = drive.protocol
    step = drive.period / samples_per_period
    before = protocol.t1 - step * np.arange(samples_per_period, 0, -1)
    before = before[before >= protocol.t0]
    during = protocol.t1 + step * np.arange(periods * samples_per_period + 1)
    return np.concatenate([before, during])


def l2_distance(times: FloatArray, a: FloatArray, b: FloatArray) -> float:
    return float(math.sqrt(np.trapezoid((a - b) ** 2, times)))


def run_timeseries(
    config: ExperimentConfig, writer: RunWriter, options: RunOptions
) -> CommandOutcome:
    """⟨n₁(t)⟩ for the sine drive, the moving mirror, the resonance law and the optimized drive."""
    prepared = prepare(config)
    control = step_control(config.numerics, options.tolerance)
    drive = prepared.drive
    trajectory = prepared.trajectory
    protocol = drive.protocol
    times = timeseries_times(drive, config.drive.periods, config.timeseries.samples_per_period)

    system = chain_system(prepared.model, drive)
    ion_samples = occupation_timeseries(system, protocol, times, control=control)
    ion = np.array([s.occupations[0] for s in ion_samples])

    table = build_moore_function(trajectory, config.numerics.moore_nodes_per_length)
    moore = np.empty_like(times)
    worst_defect = 0.0
    for k, t in enumerate(times):
        result = _moore_result(config, trajectory, t_eval=float(t), moore_function=table)
        moore[k] = result.occupations[0]
        worst_defect = max(worst_defect, result.completeness_defect)
    if worst_defect > config.numerics.completeness_threshold:
        writer.warn(f"Moore completeness defect reached {worst_defect:.3e} over the time series")

    analytic = resonance_law(trajectory, times)

    optimized = np.full_like(times, math.nan)
    if config.timeseries.include_optimized and not drive.is_inert:
        points = config.numerics.drive_table_points
        tuned = optimize_drive(prepared.model, drive, trajectory, points)
        tuned_system = chain_system(prepared.model, tuned)
        samples = occupation_timeseries(tuned_system, protocol, times, control=control)
        optimized = np.array([s.occupations[0] for s in samples])

    elapsed = (times - protocol.t1) / drive.period
    writer.write_csv(
        "timeseries.csv",
        ("t", "drive_periods", "n1_ion", "n1_moore", "n1_analytic", "n1_optimized"),
        zip(times, elapsed, ion, moore, analytic, optimized),
    )
    if config.output.plots:
        plot_scripts.emit(writer, "timeseries")

    driven = times >= protocol.t1
    summary: dict[str, Any] = {
        "samples": int(times.size),
        "omega_d_over_omega1": prepared.omega_d / prepared.omega1,
        "final_n1_ion": float(ion[-1]),
        "final_n1_moore": float(moore[-1]),
        "l2_sine_to_moore": l2_distance(times[driven], ion[driven], moore[driven]),
    }
    if not np.all(np.isnan(optimized)):
        summary["l2_optimized_to_moore"] = l2_distance(
            times[driven], optimized[driven], moore[driven]
        )

    whole = np.isclose(elapsed, np.round(elapsed))
    whole &= (elapsed >= 1) & (elapsed <= SHORT_TIME_PERIODS)
    if np.any(whole) and np.all(moore[whole] > 0.0):
        curves = np.vstack([ion[whole], moore[whole], analytic[whole]])
        spread = (curves.max(axis=0) - curves.min(axis=0)) / curves.max(axis=0)
        summary["short_time_max_relative_spread"] = float(spread.max())
    return CommandOutcome(summary=summary)


def run_match(
    config: ExperimentConfig, writer: RunWriter, options: RunOptions
) -> CommandOutcome:
    prepared = prepare(config)
    match = prepared.match
    chain_mean = float(prepared.chain_mean_omega[0])
    values = {
        "length_d": match.length,
        "delta_d": match.delta,
        "omega1": prepared.omega1,
        "omega1_driven": match.omega_driven,
        "mean_omega1_chain": chain_mean,
        "mean_omega1_moore": prepared.moore_mean_omega1,
        "mean_over_omega1_chain": chain_mean / prepared.omega1,
        "mean_over_omega1_moore": prepared.moore_mean_omega1 / prepared.omega1,
        "omega_d": prepared.omega_d,
    }
    writer.write_csv("match.csv", ("quantity", "value"), list(values.items()))
    return CommandOutcome(summary=values)


def run_heating(
    config: ExperimentConfig, writer: RunWriter, options: RunOptions
) -> CommandOutcome:
    """Electric-field-noise heating of mode 1 next to the laser-scatter budget."""
    if config.noise is None:
        raise ConfigurationError("the heating command needs a [noise] section")
    noise_config = config.noise
    species = config.trap.species
    noise = NoiseModel(
        spectral_density=noise_config.spectral_density,
        reference_frequency=noise_config.reference_frequency,
        scaling=noise_config.scaling,
    )

    prepared: Optional[PreparedExperiment] = None
    if noise_config.mode_frequency is not None:
        omega = noise_config.mode_frequency
    else:
        prepared = prepare(config)
        omega = prepared.model.units.to_angular(prepared.omega1)

    if noise_config.drive_duration_ms is not None:
        duration_ms = noise_config.drive_duration_ms
    else:
        prepared = prepared or prepare(config)
        seconds = prepared.model.units.to_seconds(prepared.drive.protocol.drive_duration)
        duration_ms = seconds * 1e3

    rate_per_ms = heating_rate(noise, species.mass, species.charge_number, omega) * 1e-3
    values = {
        "mode_frequency_mhz": omega / (2.0 * math.pi) / 1e6,
        "heating_rate_per_ms": rate_per_ms,
        "drive_duration_ms": duration_ms,
        "added_quanta": rate_per_ms * duration_ms,
        "laser_heating_per_ms": noise_config.laser_heating_per_ms,
        "laser_added_quanta": noise_config.laser_heating_per_ms * duration_ms,
    }
    writer.write_csv("heating.csv", ("quantity", "value"), list(values.items()))
    return CommandOutcome(summary=values)


def run_readout(
    config: ExperimentConfig, writer: RunWriter, options: RunOptions
) -> CommandOutcome:
    """Sideband readout of one mode: truth, noiseless recovery and noisy recovery."""
    if config.readout is None:
        raise ConfigurationError("the readout-sim command needs a [readout] section")
    readout = config.readout

    if readout.state == "vacuum":
        truth = PhononDistribution.fock(0, readout.truth_cutoff)
    elif readout.state == "measured":
        assert readout.distribution_csv is not None
        truth = read_distribution(readout.distribution_csv)
        logger.info("readout.truth.loaded", path=str(readout.distribution_csv), n_max=truth.n_max)
    else:
        prepared = prepare(config)
        if readout.mode > prepared.model.n_ions:
            raise ConfigurationError(
                f"readout mode {readout.mode} exceeds the {prepared.model.n_ions} chain modes"
            )
        control = step_control(config.numerics, options.tolerance)
        mapping = chain_bogoliubov(prepared.model, prepared.drive, control)
        truth = photon_statistics(mapping, readout.mode, readout.truth_cutoff)

    times = sampling_times(
        readout.rabi_frequency, readout.n_max, readout.samples, readout.window_factor
    )
    signal = sideband_signal(truth, readout.rabi_frequency, times)
    recovered = invert_sideband(signal, readout.n_max)
    rng = np.random.default_rng(options.seed)
    noisy_signal = add_readout_noise(signal, readout.noise_sigma, rng)
    noisy = invert_sideband(noisy_signal, readout.n_max)

    writer.write_csv("truth.csv", DISTRIBUTION_COLUMNS, distribution_rows(truth))
    size = max(truth.n_max, readout.n_max)
    columns = (DISTRIBUTION_COLUMNS[0], "p_truth", "p_recovered", "p_recovered_noisy")
    writer.write_csv(
        "readout.csv",
        columns,
        zip(range(size + 1), truth.padded(size), recovered.padded(size), noisy.padded(size)),
    )
    writer.write_csv(
        "sideband.csv",
        ("t_us", "p_excited", "p_excited_noisy"),
        zip(times * 1e6, signal.excitation, noisy_signal.excitation),
    )
    summary = {
        "mode": readout.mode,
        "state": readout.state,
        "mean_truth": truth.mean,
        "mean_recovered": recovered.mean,
        "tv_noiseless": total_variation(truth, recovered),
        "tv_noisy_low_n": total_variation(truth, noisy, n_limit=5),
        "window_us": float(times[-1] * 1e6),
    }
    return CommandOutcome(summary=summary)
