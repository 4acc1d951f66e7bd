"""
Linear ion chain in a surface trap.

Axial equilibrium positions come from minimizing the DC, auxiliary harmonic
and Coulomb energies. The radial motion is then written in the staggered
frame, where the chain behaves like a field with on-site χ_i and couplings
(−1)^{i−j} k_ij. Everything returned to the dynamics layer is in simulation
units (m = 1, k̄ = 1).
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, optimize
from scipy.interpolate import PchipInterpolator

from casimir.core.errors import ConfigurationError, EquilibriumError, RootFindingError
from casimir.core.logging import get_logger
from casimir.core.units import ELEMENTARY_CHARGE, SimulationUnits, coulomb_strength
from casimir.schemas.experiment import DriveConfig, TrapConfig
from casimir.services.dynamics import QuadraticSystem, StageProtocol, normal_modes
from casimir.services.electrostatics import dc_potential

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]

EQUILIBRIUM_TOLERANCE = 1e-10
POLISH_STEPS = 25
MAX_BRACKET_EXPANSIONS = 60
FOLD_BISECTIONS = 80
# log spacing error used inside brentq where no equilibrium exists (reads as too loose)
_NO_EQUILIBRIUM = 10.0


@dataclass(frozen=True, slots=True)
class ChainEquilibrium:
    positions: FloatArray
    gradient_norm: float
    auxiliary_curvature: float = 0.0

    @property
    def n_ions(self) -> int:
        return int(self.positions.size)

    @property
    def mean_spacing(self) -> float:
        if self.n_ions < 2:
            raise ValueError("a single ion has no spacing")
        return float((self.positions[-1] - self.positions[0]) / (self.n_ions - 1))


@dataclass(frozen=True, slots=True)
class ChainModel:
    """Radial chain parameters; SI fields carry a ``_si`` suffix or a unit in the docstring."""

    mass: float
    charge_number: int
    positions: FloatArray
    couplings_si: FloatArray
    static_chi_si: FloatArray
    units: SimulationUnits
    rf_curvature: float
    """m·ω_RF² in N/m."""
    dc_curvature: FloatArray
    """Ze·∂²φ/∂x² at each ion in N/m."""
    trim: float
    """Uniform radial trim in N/m."""
    auxiliary_curvature: float = 0.0
    gradient_norm: float = 0.0

    @property
    def n_ions(self) -> int:
        return int(self.positions.size)

    @property
    def kbar(self) -> float:
        return self.units.kbar

    @property
    def couplings(self) -> FloatArray:
        return self.couplings_si / self.kbar

    @property
    def static_chi(self) -> FloatArray:
        return self.static_chi_si / self.kbar

    @property
    def untrimmed_chi(self) -> FloatArray:
        """Static χ_i without the radial trim, in units of k̄."""
        return (self.static_chi_si - self.trim) / self.kbar

    def lowest_frequency(self, trimmed: bool = True) -> float:
        """ω₁ of the static staggered chain in units of √(k̄/m), NaN when not confined."""
        chi = self.static_chi if trimmed else self.untrimmed_chi
        lowest = _lowest_eigenvalue(chi, self.couplings)
        return math.sqrt(lowest) if lowest > 0.0 else math.nan

    @property
    def rf_frequency(self) -> float:
        """ω_RF in rad/s."""
        return math.sqrt(self.rf_curvature / self.mass)

    @property
    def coulomb_compensation(self) -> FloatArray:
        """Σ_j (1 − (−1)^{i−j}) k_ij in units of k̄."""
        return np.sum((1.0 - _stagger_signs(self.n_ions)) * self.couplings, axis=1)

    @property
    def mean_spacing(self) -> float:
        n = self.n_ions
        return float((self.positions[-1] - self.positions[0]) / (n - 1)) if n > 1 else math.nan


@dataclass(frozen=True, slots=True)
class DriveSchedule:
    """
    Tweezer drive on the target ions in simulation units.

    The modulation s(t) = sin²(ω_D (t − t1)/2) is zero before t1 and frozen
    after t2. ω_O²(t) is α·s, or ``table(s)`` when a tabulated drive is set.
    """

    targets: tuple[int, ...]
    alpha: float
    omega_d: float
    protocol: StageProtocol
    table: Optional[PchipInterpolator] = None

    @classmethod
    def from_config(cls, config: DriveConfig, omega_d: float, t0: float = 0.0) -> DriveSchedule:
        if omega_d <= 0:
            raise ValueError("drive frequency must be positive")
        t1 = t0 + config.settle_time
        t2 = t1 + config.periods * 2.0 * math.pi / omega_d
        return cls(
            targets=tuple(i - 1 for i in config.target_ions),
            alpha=config.alpha,
            omega_d=omega_d,
            protocol=StageProtocol(t0=t0, t1=t1, t2=t2),
        )

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega_d

    @property
    def is_inert(self) -> bool:
        """True when the tweezer never changes χ."""
        return self.table is None and self.alpha == 0.0

    def with_table(self, table: PchipInterpolator) -> DriveSchedule:
        return dataclasses.replace(self, table=table)

    def modulation(self, t: float) -> float:
        if t <= self.protocol.t1:
            return 0.0
        elapsed = min(t, self.protocol.t2) - self.protocol.t1
        return math.sin(0.5 * self.omega_d * elapsed) ** 2

    def omega_o_squared(self, t: float) -> float:
        s = self.modulation(t)
        if self.table is not None:
            return float(self.table(s))
        return self.alpha * s


def _stagger_signs(n: int) -> FloatArray:
    index = np.arange(n)
    return np.where((index[:, None] - index[None, :]) % 2 == 0, 1.0, -1.0)


def couplings(positions: FloatArray, charge_number: int) -> FloatArray:
    """k_ij = Z²e²/(4πε₀|R_i − R_j|³) in N/m, zero on the diagonal."""
    r = np.asarray(positions, dtype=float)
    distance = np.abs(r[:, None] - r[None, :])
    out = np.zeros_like(distance)
    off = ~np.eye(r.size, dtype=bool)
    if np.any(distance[off] == 0.0):
        raise EquilibriumError("two ions share a position")
    out[off] = coulomb_strength(charge_number) / distance[off] ** 3
    return out


def staggered_stiffness(
    chi: FloatArray, coupling: FloatArray, nearest_neighbor_only: bool = False
) -> FloatArray:
    """K_ii = χ_i − Σ_{j≠i} (−1)^{i−j} k_ij and K_ij = (−1)^{i−j} k_ij."""
    chi = np.asarray(chi, dtype=float)
    k = np.asarray(coupling, dtype=float)
    n = chi.size
    if nearest_neighbor_only:
        band = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :]) == 1
        k = np.where(band, k, 0.0)
    signed = _stagger_signs(n) * k
    np.fill_diagonal(signed, 0.0)
    return np.diag(chi - signed.sum(axis=1)) + signed


def unstagger(matrix: FloatArray) -> FloatArray:
    """Similarity transform with diag((−1)^i) back to the physical displacement frame."""
    signs = np.where(np.arange(matrix.shape[0]) % 2 == 0, 1.0, -1.0)
    return signs[:, None] * matrix * signs[None, :]


def _coulomb_terms(u: FloatArray) -> tuple[float, FloatArray, FloatArray]:
    d = u[:, None] - u[None, :]
    off = ~np.eye(u.size, dtype=bool)
    inv = np.zeros_like(d)
    inv[off] = 1.0 / np.abs(d[off])
    energy = 0.5 * float(np.sum(inv))
    gradient = -np.sum(np.sign(d) * inv**2, axis=1)
    hessian = -2.0 * inv**3
    np.fill_diagonal(hessian, 2.0 * np.sum(inv**3, axis=1))
    return energy, gradient, hessian


# external(u) -> (energy per ion, gradient, hessian diagonal) in scaled units
ExternalPotential = Callable[[FloatArray], tuple[FloatArray, FloatArray, FloatArray]]


def _minimize_scaled(
    external: ExternalPotential, u0: FloatArray
) -> tuple[FloatArray, float, FloatArray]:
    def energy(u: FloatArray) -> float:
        return float(np.sum(external(u)[0])) + _coulomb_terms(u)[0]

    def gradient(u: FloatArray) -> FloatArray:
        return external(u)[1] + _coulomb_terms(u)[1]

    def hessian(u: FloatArray) -> FloatArray:
        return _coulomb_terms(u)[2] + np.diag(external(u)[2])

    result = optimize.minimize(
        energy,
        u0,
        jac=gradient,
        hess=hessian,
        method="trust-exact",
        options={"gtol": 1e-12, "maxiter": 2000},
    )
    u = np.asarray(result.x, dtype=float)
    for _ in range(POLISH_STEPS):
        g = gradient(u)
        if float(np.max(np.abs(g))) <= 1e-3 * EQUILIBRIUM_TOLERANCE:
            break
        try:
            step = linalg.solve(hessian(u), g, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            break
        u = u - step
    return u, float(np.max(np.abs(gradient(u)))), hessian(u)


def _solve_equilibrium(trap: TrapConfig, curvature: float, length: float) -> ChainEquilibrium:
    n = trap.n_ions
    charge = trap.species.charge_number * ELEMENTARY_CHARGE
    scale = coulomb_strength(trap.species.charge_number) / length
    electrodes = trap.layout() if trap.axial.include_dc else []

    def external(u: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        z = length * u
        value = 0.5 * curvature * z**2
        slope = curvature * z
        bend = np.full_like(z, curvature)
        if electrodes:
            dc = dc_potential(electrodes, 0.0, trap.height, z)
            value = value + charge * dc.value
            slope = slope + charge * dc.d_dz
            bend = bend + charge * dc.d2_dz2
        return value / scale, slope * length / scale, bend * length**2 / scale

    u0 = np.arange(n, dtype=float) - 0.5 * (n - 1)
    u, gradient_norm, hessian = _minimize_scaled(external, u0)
    positions = length * u
    details = {"last_iterate": positions.tolist(), "gradient_norm": gradient_norm}

    if not np.all(np.isfinite(u)) or gradient_norm > EQUILIBRIUM_TOLERANCE:
        raise EquilibriumError(
            f"equilibrium solve stopped with gradient norm {gradient_norm:.3e}", details=details
        )
    if np.any(np.diff(u) <= 0.0):
        raise EquilibriumError("ions changed order during the equilibrium solve", details=details)
    lowest = float(linalg.eigvalsh(hessian)[0])
    if lowest <= 0.0:
        raise EquilibriumError(
            "axial potential does not confine the chain",
            details={**details, "lowest_axial_eigenvalue": lowest},
        )
    return ChainEquilibrium(
        positions=positions, gradient_norm=gradient_norm, auxiliary_curvature=curvature
    )


def _unit_well_spacing(n: int) -> float:
    """Mean spacing of n ions in ½Σu² + Σ1/|u_i − u_j|."""
    def unit_well(u: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        return 0.5 * u**2, u, np.ones_like(u)

    u, _, _ = _minimize_scaled(unit_well, np.arange(n, dtype=float) - 0.5 * (n - 1))
    return float((u[-1] - u[0]) / (n - 1))


def _spacing_for(trap: TrapConfig, curvature: float, length: float) -> Optional[float]:
    try:
        return _solve_equilibrium(trap, curvature, length).mean_spacing
    except EquilibriumError:
        return None


def _loosest_curvature(
    trap: TrapConfig, holding: float, losing: float, length: float
) -> tuple[float, float]:
    """
    Weakest auxiliary curvature that still holds the chain, and its mean spacing.

    ``holding`` must give an equilibrium and ``losing`` must not. The spacing
    grows towards the fold, so its value there bounds what calibration can reach.
    """
    widest = _spacing_for(trap, holding, length)
    assert widest is not None
    for _ in range(FOLD_BISECTIONS):
        if abs(holding - losing) <= 1e-12 * max(abs(holding), abs(losing)):
            break
        middle = 0.5 * (holding + losing)
        spacing = _spacing_for(trap, middle, length)
        if spacing is None:
            losing = middle
        else:
            holding, widest = middle, spacing
    return holding, widest


def calibrate_axial_curvature(trap: TrapConfig, target_spacing: float) -> float:
    """
    Auxiliary harmonic curvature (N/m, possibly negative) giving the target mean spacing.

    With DC electrodes a negative curvature widens the chain only up to the
    fold where the equilibrium disappears. A target beyond it raises
    ConfigurationError carrying the largest reachable spacing.
    """
    if trap.n_ions < 2:
        raise ConfigurationError("a target spacing needs at least two ions")
    k_c = coulomb_strength(trap.species.charge_number)
    reference = k_c * (_unit_well_spacing(trap.n_ions) / target_spacing) ** 3

    def mismatch(curvature: float) -> Optional[float]:
        spacing = _spacing_for(trap, curvature, target_spacing)
        return None if spacing is None else math.log(spacing / target_spacing)

    def bracketed(curvature: float) -> float:
        value = mismatch(curvature)
        return _NO_EQUILIBRIUM if value is None else value

    f_ref = mismatch(reference)
    if f_ref == 0.0:
        return reference
    lo = hi = reference
    for k in range(MAX_BRACKET_EXPANSIONS):
        step = reference * 2.0**k
        if f_ref is None or f_ref > 0:
            lo, hi = hi, reference + step
            f_hi = mismatch(hi)
            if f_hi is not None and f_hi < 0:
                break
            continue
        candidate = reference - step
        f_lo = mismatch(candidate)
        if f_lo is None:
            fold, widest = _loosest_curvature(trap, lo, candidate, target_spacing)
            if widest < target_spacing:
                raise ConfigurationError(
                    f"target spacing {target_spacing:.4g} m is out of reach; the chain holds"
                    f" together only up to a mean spacing of {widest:.4g} m",
                    details={
                        "target_spacing": target_spacing,
                        "reachable_spacing": [0.0, widest],
                        "fold_curvature": fold,
                    },
                )
            hi, lo = lo, fold
            break
        hi, lo = lo, candidate
        if f_lo > 0:
            break
    else:
        raise RootFindingError(
            "no axial curvature brackets the target spacing",
            details={"target_spacing": target_spacing, "bracket": [lo, hi]},
        )

    curvature = float(
        optimize.brentq(bracketed, lo, hi, xtol=abs(reference) * 1e-13, rtol=1e-13)
    )
    residual = mismatch(curvature)
    if residual is None or abs(residual) > 1e-8:
        raise RootFindingError(
            "axial calibration did not settle on the target spacing",
            details={"target_spacing": target_spacing, "bracket": [lo, hi], "residual": residual},
        )
    logger.info("chain.axial.calibrated", curvature=curvature, target_spacing=target_spacing)
    return curvature


def equilibrium_positions(trap: TrapConfig) -> ChainEquilibrium:
    """
    Axial equilibrium of the chain along the trap axis.

    Raises EquilibriumError, carrying the last iterate, when the solve does not
    reach a gradient norm of 1e-10 or the axial Hessian is not positive definite.
    """
    k_c = coulomb_strength(trap.species.charge_number)
    mass = trap.species.mass
    axial = trap.axial
    if axial.target_spacing is not None:
        curvature = calibrate_axial_curvature(trap, axial.target_spacing)
        length = axial.target_spacing
    elif axial.frequency is not None:
        curvature = mass * axial.frequency**2
        length = (k_c / curvature) ** (1.0 / 3.0) if curvature > 0 else trap.height
    else:
        curvature = 0.0
        length = trap.height
    eq = _solve_equilibrium(trap, curvature, length)
    logger.debug("chain.equilibrium.solved", n_ions=eq.n_ions, gradient_norm=eq.gradient_norm)
    return eq


def _lowest_eigenvalue(chi: FloatArray, coupling: FloatArray) -> float:
    return float(linalg.eigvalsh(staggered_stiffness(chi, coupling))[0])


def build_chain_model(trap: TrapConfig) -> ChainModel:
    """Equilibrium, couplings and static χ profile for ``trap``."""
    mass = trap.species.mass
    z = trap.species.charge_number

    if trap.chi_override is not None:
        spacing = trap.chi_override.spacing
        positions = spacing * (np.arange(trap.n_ions) - 0.5 * (trap.n_ions - 1))
        units = SimulationUnits.from_spacing(mass, z, spacing)
        if trap.chi_override.csv is not None:
            chi_over_kbar = read_chi_profile(trap.chi_override.csv)
            if chi_over_kbar.size != trap.n_ions:
                raise ConfigurationError(
                    f"chi profile lists {chi_over_kbar.size} ions, trap has {trap.n_ions}",
                    details={"path": str(trap.chi_override.csv)},
                )
        else:
            chi_over_kbar = np.asarray(trap.chi_override.chi_over_kbar, dtype=float)
        model = ChainModel(
            mass=mass,
            charge_number=z,
            positions=positions,
            couplings_si=couplings(positions, z) if trap.n_ions > 1 else np.zeros((1, 1)),
            static_chi_si=chi_over_kbar * units.kbar,
            units=units,
            rf_curvature=0.0,
            dc_curvature=np.zeros(trap.n_ions),
            trim=0.0,
        )
        _check_linear_stability(model)
        return model

    assert trap.rf is not None
    eq = equilibrium_positions(trap)
    if eq.n_ions > 1:
        units = SimulationUnits.from_spacing(mass, z, eq.mean_spacing)
        k = couplings(eq.positions, z)
    else:
        units = SimulationUnits.from_spacing(mass, z, trap.height)
        k = np.zeros((1, 1))

    if trap.rf.frequency is not None:
        rf_curvature = mass * trap.rf.frequency**2
    else:
        assert trap.rf.kbar_ratio is not None
        rf_curvature = trap.rf.kbar_ratio * units.kbar

    electrodes = trap.layout()
    charge = z * ELEMENTARY_CHARGE
    if electrodes:
        dc_curvature = charge * dc_potential(electrodes, 0.0, trap.height, eq.positions).d2_dx2
    else:
        dc_curvature = np.zeros(eq.n_ions)
    compensation = np.sum((1.0 - _stagger_signs(eq.n_ions)) * k, axis=1)
    untrimmed = dc_curvature + rf_curvature - compensation

    if trap.radial.target_omega1 is not None:
        lowest = _lowest_eigenvalue(untrimmed / units.kbar, k / units.kbar)
        trim = (trap.radial.target_omega1**2 - lowest) * units.kbar
    else:
        trim = (trap.radial.trim_over_kbar or 0.0) * units.kbar

    model = ChainModel(
        mass=mass,
        charge_number=z,
        positions=eq.positions,
        couplings_si=k,
        static_chi_si=untrimmed + trim,
        units=units,
        rf_curvature=rf_curvature,
        dc_curvature=np.asarray(dc_curvature, dtype=float),
        trim=trim,
        auxiliary_curvature=eq.auxiliary_curvature,
        gradient_norm=eq.gradient_norm,
    )
    _check_linear_stability(model)
    logger.info(
        "chain.model.built",
        n_ions=model.n_ions,
        mean_spacing=model.mean_spacing,
        kbar=model.kbar,
        rf_over_kbar=rf_curvature / units.kbar,
        trim_over_kbar=trim / units.kbar,
        untrimmed_omega1=model.lowest_frequency(trimmed=False),
    )
    return model


def _check_linear_stability(model: ChainModel) -> None:
    eigenvalues = linalg.eigvalsh(staggered_stiffness(model.static_chi, model.couplings))
    unstable = np.flatnonzero(eigenvalues <= 0.0)
    if unstable.size:
        raise EquilibriumError(
            "radial confinement is too weak for a linear chain (zigzag instability)",
            details={
                "mode_index": int(unstable[0]) + 1,
                "eigenvalue": float(eigenvalues[unstable[0]]),
            },
        )


def radial_chis(model: ChainModel, drive: Optional[DriveSchedule], t: float) -> FloatArray:
    """χ_i(t) in units of k̄, the tweezer adding ω_O²(t) on the target ions."""
    chi = model.static_chi.copy()
    if drive is not None:
        chi[list(drive.targets)] += drive.omega_o_squared(t)
    return chi


def to_quadratic(
    chis: Callable[[float], FloatArray] | FloatArray,
    coupling: FloatArray,
    protocol: Optional[StageProtocol] = None,
    nearest_neighbor_only: bool = False,
) -> QuadraticSystem:
    """
    Staggered radial Hamiltonian as a QuadraticSystem with unit mass.

    Static stages are checked for stability; an unstable one raises
    UnstableConfigurationError naming the offending mode.
    """
    if not callable(chis):
        frozen = staggered_stiffness(chis, coupling, nearest_neighbor_only)
        normal_modes(frozen)
        return QuadraticSystem.static(frozen)

    profile = chis

    def stiffness(t: float) -> FloatArray:
        return staggered_stiffness(profile(t), coupling, nearest_neighbor_only)

    system = QuadraticSystem(
        n_modes=np.asarray(coupling).shape[0], mass=1.0, stiffness=stiffness, protocol=protocol
    )
    checks = [protocol.t0, protocol.t2] if protocol is not None else [0.0]
    for t in checks:
        normal_modes(system.stiffness_at(t))
    return system


def chain_system(
    model: ChainModel, drive: DriveSchedule, nearest_neighbor_only: bool = False
) -> QuadraticSystem:
    if drive.is_inert:
        return to_quadratic(
            model.static_chi, model.couplings, nearest_neighbor_only=nearest_neighbor_only
        )
    return to_quadratic(
        lambda t: radial_chis(model, drive, t),
        model.couplings,
        protocol=drive.protocol,
        nearest_neighbor_only=nearest_neighbor_only,
    )


def equidistant_couplings(n_ions: int) -> FloatArray:
    """k_ij/k̄ = 1/|i − j|³ for an evenly spaced chain."""
    index = np.arange(n_ions)
    distance = np.abs(index[:, None] - index[None, :]).astype(float)
    out = np.zeros_like(distance)
    off = distance > 0
    out[off] = 1.0 / distance[off] ** 3
    return out


def read_chi_profile(path: Path | str) -> FloatArray:
    """χ/k̄ per ion from a CSV with a ``chi_over_kbar`` column, in ion order."""
    path = Path(path)
    details = {"path": str(path)}
    try:
        with path.open(newline="") as handle:
            rows = list(csv.DictReader(handle))
    except OSError as exc:
        raise ConfigurationError(f"cannot read chi profile {path}: {exc}", details=details) from exc
    if not rows or "chi_over_kbar" not in rows[0]:
        message = f"chi profile {path} needs a 'chi_over_kbar' column"
        raise ConfigurationError(message, details=details)
    try:
        if "ion_index" in rows[0]:
            rows.sort(key=lambda row: int(row["ion_index"]))
        return np.array([float(row["chi_over_kbar"]) for row in rows])
    except ValueError as exc:
        message = f"chi profile {path} has a non-numeric entry"
        raise ConfigurationError(message, details=details) from exc


CHI_PROFILE_COLUMNS = (
    "ion_index",
    "position_um",
    "chi_over_kbar",
    "dc_over_kbar",
    "rf_over_kbar",
    "trim_over_kbar",
    "coulomb_over_kbar",
    "tweezer_over_kbar",
)


def chi_profile_rows(
    model: ChainModel, chi: Optional[FloatArray] = None
) -> list[Sequence[float]]:
    """Rows in CHI_PROFILE_COLUMNS order; without a χ override the last five sum to χ/k̄."""
    rows: list[Sequence[float]] = []
    compensation = model.coulomb_compensation
    chi = model.static_chi if chi is None else np.asarray(chi, dtype=float)
    tweezer = chi - model.static_chi
    for i in range(model.n_ions):
        rows.append(
            (
                i + 1,
                model.positions[i] * 1e6,
                chi[i],
                model.dc_curvature[i] / model.kbar,
                model.rf_curvature / model.kbar,
                model.trim / model.kbar,
                -compensation[i],
                tweezer[i],
            )
        )
    return rows
