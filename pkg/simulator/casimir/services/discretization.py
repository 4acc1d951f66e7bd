"""
Discretized field Hamiltonian H^d.

Cell-averaged field amplitudes on a 1D grid, nearest-neighbour gradient
couplings d⁻² per bond, and an on-site mass term c1_i(t) that models the
mirrors as regions where the field is blocked.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import integrate

from casimir.core.errors import QuadratureError
from casimir.core.logging import get_logger
from casimir.services.dynamics import QuadraticSystem, StageProtocol, normal_modes
from casimir.services.moore import MirrorTrajectory

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]

DEFAULT_WALL_CELLS = 8


class WallProfile(ABC):
    """c1(t, z): zero inside the cavity, positive inside the mirrors."""

    @abstractmethod
    def c1(self, t: float, z: FloatArray | float) -> FloatArray: ...

    def breakpoints(self, t: float) -> Sequence[float]:
        return ()

    def cell_averages(self, grid: FieldGrid, t: float) -> Optional[FloatArray]:
        """Exact cell averages when the profile knows them in closed form."""
        return None


@dataclass(frozen=True, slots=True)
class StepWallProfile(WallProfile):
    """Constant wall strength outside [l(t), r(t)], zero inside."""

    strength: float
    left: Callable[[float], float]
    right: Callable[[float], float]

    def __post_init__(self) -> None:
        if self.strength < 0:
            raise ValueError("wall strength must be non-negative")

    @classmethod
    def static(cls, strength: float, l0: float, r0: float) -> StepWallProfile:
        return cls(strength=strength, left=lambda _t: l0, right=lambda _t: r0)

    @classmethod
    def from_trajectory(cls, strength: float, traj: MirrorTrajectory) -> StepWallProfile:
        return cls(strength=strength, left=lambda t: float(traj.left(t)), right=lambda _t: traj.r0)

    def c1(self, t: float, z: FloatArray | float) -> FloatArray:
        z_arr = np.asarray(z, dtype=float)
        inside = (z_arr >= self.left(t)) & (z_arr <= self.right(t))
        return np.where(inside, 0.0, self.strength)

    def breakpoints(self, t: float) -> Sequence[float]:
        return (self.left(t), self.right(t))

    def cell_averages(self, grid: FieldGrid, t: float) -> Optional[FloatArray]:
        lo, hi = grid.edges[:-1], grid.edges[1:]
        overlap = np.clip(np.minimum(hi, self.right(t)) - np.maximum(lo, self.left(t)), 0.0, None)
        return self.strength * (1.0 - overlap / (hi - lo))


@dataclass(frozen=True, slots=True)
class FunctionWallProfile(WallProfile):
    """Arbitrary profile given as a callable; averaged by adaptive quadrature."""

    function: Callable[[float, float], float]
    kinks: Callable[[float], Sequence[float]] = lambda _t: ()

    def c1(self, t: float, z: FloatArray | float) -> FloatArray:
        return np.vectorize(lambda zz: self.function(t, zz))(np.asarray(z, dtype=float))

    def breakpoints(self, t: float) -> Sequence[float]:
        return tuple(self.kinks(t))


@dataclass(frozen=True, slots=True)
class FieldGrid:
    edges: FloatArray

    def __post_init__(self) -> None:
        if self.edges.ndim != 1 or self.edges.size < 2:
            raise ValueError("a grid needs at least two edges")
        if np.any(np.diff(self.edges) <= 0.0):
            raise ValueError("grid edges must be strictly increasing")

    @classmethod
    def uniform(cls, z_min: float, z_max: float, spacing: float) -> FieldGrid:
        cells = int(round((z_max - z_min) / spacing))
        return cls(edges=z_min + spacing * np.arange(cells + 1))

    @classmethod
    def around_cavity(
        cls, l0: float, r0: float, spacing: float, wall_cells: int = DEFAULT_WALL_CELLS
    ) -> FieldGrid:
        """Equidistant grid with ``wall_cells`` wall cells beyond each mirror."""
        return cls.uniform(l0 - wall_cells * spacing, r0 + wall_cells * spacing, spacing)

    @property
    def widths(self) -> FloatArray:
        return np.diff(self.edges)

    @property
    def centers(self) -> FloatArray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def n_cells(self) -> int:
        return int(self.edges.size - 1)


@dataclass(frozen=True, slots=True)
class DiscreteFieldSystem:
    grid: FieldGrid
    profile: WallProfile
    bond_couplings: FloatArray
    system: QuadraticSystem
    boundary: str

    def c1(self, t: float) -> FloatArray:
        return coarse_grain(self.profile, self.grid, t)


def coarse_grain(profile: WallProfile, grid: FieldGrid, t: float) -> FloatArray:
    """c1_i = (1/d_i) ∫ c1(t, z) dz over each cell."""
    exact = profile.cell_averages(grid, t)
    if exact is not None:
        return np.asarray(exact, dtype=float)

    kinks = sorted(profile.breakpoints(t))
    values = np.empty(grid.n_cells)
    for i, (lo, hi) in enumerate(zip(grid.edges[:-1], grid.edges[1:])):
        points = [p for p in kinks if lo < p < hi] or None
        integral, _, info, *rest = integrate.quad(
            lambda z: float(profile.c1(t, z)), lo, hi, points=points, full_output=1, limit=200
        )
        # quad appends a warning message only when it fails
        if rest:
            raise QuadratureError(
                f"cell [{lo:.6g}, {hi:.6g}] did not converge: {rest[0]}",
                details={"interval": [float(lo), float(hi)], "t": t},
            )
        values[i] = integral / (hi - lo)
    return values


def bond_couplings(grid: FieldGrid, boundary: str = "fixed") -> FloatArray:
    """
    d⁻² per bond, outer bonds included.

    Interior bonds use the mean of the adjacent cell widths. With fixed ends
    each outer bond couples the edge cell to a clamped node; free ends drop it.
    """
    widths = grid.widths
    inner = 1.0 / (0.5 * (widths[:-1] + widths[1:])) ** 2
    if boundary == "fixed":
        outer = (1.0 / widths[0] ** 2, 1.0 / widths[-1] ** 2)
    elif boundary == "free":
        outer = (0.0, 0.0)
    else:
        raise ValueError(f"unknown boundary '{boundary}'")
    return np.concatenate([[outer[0]], inner, [outer[1]]])


def laplacian_stiffness(bonds: FloatArray, c1: FloatArray) -> FloatArray:
    """Diagonal κ_left + κ_right + c1_i, off-diagonal −κ."""
    diagonal = bonds[:-1] + bonds[1:] + c1
    stiffness = np.diag(diagonal)
    off = -bonds[1:-1]
    stiffness += np.diag(off, 1) + np.diag(off, -1)
    return stiffness


def build_hd(
    profile: WallProfile,
    grid: FieldGrid,
    protocol: Optional[StageProtocol] = None,
    boundary: Literal["fixed", "free"] = "fixed",
    time_dependent: bool = True,
) -> DiscreteFieldSystem:
    """
    H^d for ``profile`` on ``grid``; the field mass is one.

    ``protocol`` marks the stages on which c1 is constant, so propagation can
    use the closed-form static rotation there.
    """
    if grid.n_cells < 3:
        raise ValueError("H^d needs at least 3 grid cells")
    bonds = bond_couplings(grid, boundary)

    def stiffness(t: float) -> FloatArray:
        return laplacian_stiffness(bonds, coarse_grain(profile, grid, t))

    system = QuadraticSystem(
        n_modes=grid.n_cells,
        mass=1.0,
        stiffness=stiffness,
        protocol=protocol,
        time_dependent=time_dependent,
    )
    return DiscreteFieldSystem(
        grid=grid, profile=profile, bond_couplings=bonds, system=system, boundary=boundary
    )


def static_cavity_spectrum(
    length: float,
    spacing: float,
    wall_strength: float,
    n_modes: int,
    wall_cells: int = DEFAULT_WALL_CELLS,
) -> FloatArray:
    """Lowest ``n_modes`` frequencies of a static cavity [0, length] on the lattice."""
    grid = FieldGrid.around_cavity(0.0, length, spacing, wall_cells)
    profile = StepWallProfile.static(wall_strength, 0.0, length)
    hd = build_hd(profile, grid, time_dependent=False)
    return normal_modes(hd.system.stiffness_at(0.0)).frequencies[:n_modes]


def truncation_sensitivity(
    length: float,
    spacing: float,
    wall_strength: float,
    n_modes: int = 3,
    wall_cells: int = DEFAULT_WALL_CELLS,
) -> float:
    """Largest relative change of the lowest frequencies when the walls are doubled."""
    base = static_cavity_spectrum(length, spacing, wall_strength, n_modes, wall_cells)
    wide = static_cavity_spectrum(length, spacing, wall_strength, n_modes, 2 * wall_cells)
    sensitivity = float(np.max(np.abs(wide - base) / wide))
    logger.debug("field.truncation.sensitivity", sensitivity=sensitivity, wall_cells=wall_cells)
    return sensitivity


def wall_participation(vector: FloatArray, grid: FieldGrid, l0: float, r0: float) -> float:
    """Weight of a normalized lattice mode on cells outside [l0, r0]."""
    centers = grid.centers
    outside = (centers < l0) | (centers > r0)
    return float(np.sum(vector[outside] ** 2))


def lattice_decay_rate(wall_strength: float, omega: float, spacing: float) -> float:
    """
    Evanescent decay per cell inside a uniform wall on the lattice.

    Solves cosh(κd) = 1 + (c − ω²)d²/2; tends to √(c − ω²) as d → 0.
    """
    gap = wall_strength - omega**2
    if gap <= 0:
        return 0.0
    return 2.0 * math.asinh(0.5 * math.sqrt(gap) * spacing) / spacing
