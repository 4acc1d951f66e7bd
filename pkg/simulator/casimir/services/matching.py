"""
Matching the ion chain onto the moving-mirror cavity.

Both systems use the same units: frequencies in √(k̄/m) and lengths in
lattice spacings d, where d⁻² = k̄/m and c = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, optimize
from scipy.interpolate import PchipInterpolator

from casimir.core.errors import RootFindingError, UnstableConfigurationError
from casimir.core.logging import get_logger
from casimir.services.dynamics import StageProtocol
from casimir.services.ion_chain import ChainModel, DriveSchedule, staggered_stiffness
from casimir.services.moore import MirrorTrajectory

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]

ROOT_TOLERANCE = 1e-10
DEFAULT_TABLE_POINTS = 201
MAX_BRACKET_DOUBLINGS = 60


@dataclass(frozen=True, slots=True)
class CavityMatch:
    """Cavity length r0 − l0 and mirror excursion δ in units of d."""

    length: float
    delta: float
    omega_static: float
    omega_driven: float
    l0: float = 0.0

    def trajectory(self, omega_d: float, protocol: StageProtocol) -> MirrorTrajectory:
        return MirrorTrajectory(
            l0=self.l0,
            r0=self.l0 + self.length,
            delta=self.delta,
            omega_d=omega_d,
            protocol=protocol,
        )

    @classmethod
    def explicit(cls, l0: float, r0: float, delta: float) -> CavityMatch:
        length = r0 - l0
        if not 0.0 <= delta < length:
            raise ValueError(f"mirror excursion {delta} must lie in [0, {length})")
        return cls(
            length=length,
            delta=delta,
            omega_static=math.pi / length,
            omega_driven=math.pi / (length - delta),
            l0=l0,
        )


def lowest_frequency(stiffness: FloatArray) -> float:
    """Lowest normal-mode frequency of a unit-mass stiffness matrix."""
    lowest = float(linalg.eigvalsh(stiffness, subset_by_index=[0, 0])[0])
    if lowest <= 0.0:
        raise UnstableConfigurationError(
            f"unstable configuration: lowest eigenvalue {lowest:.6g}",
            details={"mode_index": 1, "eigenvalue": lowest},
        )
    return math.sqrt(lowest)


def _driven_chi(
    model: ChainModel, targets: tuple[int, ...], omega_o_squared: float
) -> FloatArray:
    chi = model.static_chi.copy()
    chi[list(targets)] += omega_o_squared
    return chi


def chain_frequency(model: ChainModel, drive: DriveSchedule, modulation: float) -> float:
    """ω₁ of the chain frozen at drive modulation s = sin²(phase/2)."""
    if drive.table is not None:
        depth = float(drive.table(modulation))
    else:
        depth = drive.alpha * modulation
    chi = _driven_chi(model, drive.targets, depth)
    return lowest_frequency(staggered_stiffness(chi, model.couplings))


def chain_spectrum(model: ChainModel) -> FloatArray:
    """All static radial frequencies in ascending order."""
    eigenvalues = linalg.eigvalsh(staggered_stiffness(model.static_chi, model.couplings))
    if eigenvalues[0] <= 0.0:
        raise UnstableConfigurationError(
            f"unstable static chain: eigenvalue {eigenvalues[0]:.6g}",
            details={"mode_index": 1, "eigenvalue": float(eigenvalues[0])},
        )
    return np.sqrt(eigenvalues)


def match_cavity(model: ChainModel, drive: DriveSchedule) -> CavityMatch:
    """
    Cavity whose lowest mode π/(r − l) follows the chain's ω₁ at phases 0 and π.

    At phase 0 the drive is off and r0 − l0 = π/ω₁(0); at phase π the mirror
    sits at l0 + δ, so δ = r0 − l0 − π/ω₁(π). Both conditions are solved in
    closed form.
    """
    omega_static = chain_frequency(model, drive, 0.0)
    omega_driven = chain_frequency(model, drive, 1.0)
    length = math.pi / omega_static
    delta = length - math.pi / omega_driven
    if delta < -ROOT_TOLERANCE * length:
        raise RootFindingError(
            "drive lowers the lowest chain frequency; no mirror excursion matches it",
            details={
                "bracket": [0.0, length],
                "omega_static": omega_static,
                "omega_driven": omega_driven,
            },
        )
    delta = max(delta, 0.0)
    logger.info("matching.cavity.solved", length=length, delta=delta, omega_static=omega_static)
    return CavityMatch(
        length=length, delta=delta, omega_static=omega_static, omega_driven=omega_driven
    )


def chain_mean_frequencies(
    model: ChainModel, drive: DriveSchedule, points: int = 1001
) -> FloatArray:
    """⟨ω_ℓ⟩_T for every mode: trapezoid average of the instantaneous frequencies over a period."""
    phase = np.linspace(0.0, 2.0 * math.pi, max(points, 1001))
    modulation = np.sin(0.5 * phase) ** 2
    if drive.table is not None:
        depth = np.asarray(drive.table(modulation), dtype=float)
    else:
        depth = drive.alpha * modulation
    base = staggered_stiffness(model.static_chi, model.couplings)
    stack = np.repeat(base[None, :, :], phase.size, axis=0)
    for target in drive.targets:
        stack[:, target, target] += depth
    eigenvalues = np.linalg.eigvalsh(stack)
    if np.any(eigenvalues[:, 0] <= 0.0):
        raise UnstableConfigurationError(
            "chain becomes unstable during the drive period",
            details={"mode_index": 1, "eigenvalue": float(eigenvalues[:, 0].min())},
        )
    return np.trapezoid(np.sqrt(eigenvalues), phase, axis=0) / (2.0 * math.pi)


def chain_mean_frequency(
    model: ChainModel, drive: DriveSchedule, index: int = 1, points: int = 1001
) -> float:
    return float(chain_mean_frequencies(model, drive, points)[index - 1])


def optimize_drive(
    model: ChainModel,
    drive: DriveSchedule,
    trajectory: MirrorTrajectory,
    points: int = DEFAULT_TABLE_POINTS,
) -> DriveSchedule:
    """
    Tabulated ω_O² so the chain's ω₁ tracks π/(r(t) − l(t)) at every drive phase.

    The schedule only depends on time through s = sin²(ω_D (t − t1)/2), so the
    root solve runs on a grid in s and the result is a monotone (PCHIP) table.
    """
    grid = np.linspace(0.0, 1.0, points)
    values = np.empty_like(grid)
    length = trajectory.length

    def frequency_at(depth: float) -> float:
        chi = _driven_chi(model, drive.targets, depth)
        return lowest_frequency(staggered_stiffness(chi, model.couplings))

    undriven = frequency_at(0.0)

    for k, s in enumerate(grid):
        target = math.pi / (length - trajectory.delta * s)
        time = drive.protocol.t1 + 2.0 * math.asin(math.sqrt(s)) / drive.omega_d

        def mismatch(depth: float, target: float = target) -> float:
            return frequency_at(depth) - target

        if target <= undriven * (1.0 + ROOT_TOLERANCE):
            if target < undriven * (1.0 - 1e-8):
                raise RootFindingError(
                    f"target frequency {target:.6g} lies below the undriven chain at t={time:.6g}",
                    details={"time": time, "modulation": float(s), "bracket": [0.0, 0.0]},
                )
            values[k] = 0.0
            continue

        upper = max(drive.alpha, 1.0)
        for _ in range(MAX_BRACKET_DOUBLINGS):
            if mismatch(upper) > 0.0:
                break
            upper *= 2.0
        else:
            raise RootFindingError(
                f"tweezer cannot raise ω₁ to {target:.6g} at t={time:.6g}",
                details={"time": time, "modulation": float(s), "bracket": [0.0, upper]},
            )
        values[k] = optimize.brentq(mismatch, 0.0, upper, xtol=ROOT_TOLERANCE, rtol=1e-14)

    logger.info(
        "matching.drive.optimized",
        points=points,
        peak_depth=float(values.max()),
        endpoint_depth=float(values[-1]),
    )
    return drive.with_table(PchipInterpolator(grid, values))
