"""
Physical constants, unit-carrying quantity parsing and simulation units.

Internally every module works in simulation units with m = 1 and k̄ = 1:
frequencies in units of √(k̄/m), times in units of 1/√(k̄/m). SI only appears
at the configuration and report boundaries.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from scipy import constants

ELEMENTARY_CHARGE = constants.e
VACUUM_PERMITTIVITY = constants.epsilon_0
HBAR = constants.hbar
ATOMIC_MASS = constants.atomic_mass
ELECTRON_MASS = constants.m_e
COULOMB_CONSTANT = 1.0 / (4.0 * math.pi * VACUUM_PERMITTIVITY)

PREFIXES: dict[str, float] = {
    "p": constants.pico,
    "n": constants.nano,
    "u": constants.micro,
    "µ": constants.micro,
    "m": constants.milli,
    "c": constants.centi,
    "k": constants.kilo,
    "M": constants.mega,
    "G": constants.giga,
}

# unit symbol -> (dimension, scale to SI)
BASE_UNITS: dict[str, tuple[str, float]] = {
    "m": ("length", 1.0),
    "V": ("voltage", 1.0),
    "s": ("time", 1.0),
    "Hz": ("frequency", 2.0 * math.pi),
    "rad/s": ("frequency", 1.0),
    "kg": ("mass", 1.0),
    "u": ("mass", ATOMIC_MASS),
    "Da": ("mass", ATOMIC_MASS),
    "N/m": ("stiffness", 1.0),
    "V^2/m^2/Hz": ("spectral_density", 1.0),
    "V^2/(m^2 Hz)": ("spectral_density", 1.0),
}

_QUANTITY_RE = re.compile(
    r"^\s*(?P<angular>2\s*pi\s*\*\s*)?"
    r"(?P<value>[-+]?(?:inf|\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?))"
    r"\s*(?P<unit>\S.*?)?\s*$"
)


def _resolve_unit(symbol: str) -> tuple[str, float]:
    if symbol in BASE_UNITS:
        return BASE_UNITS[symbol]
    prefix, rest = symbol[:1], symbol[1:]
    if prefix in PREFIXES and rest in BASE_UNITS:
        dimension, scale = BASE_UNITS[rest]
        return dimension, scale * PREFIXES[prefix]
    raise ValueError(f"unknown unit '{symbol}'")


def parse_quantity(raw: str | float | int, dimension: str) -> float:
    """
    Parse a unit-carrying string such as ``"80 um"`` or ``"2pi*1.38 MHz"`` into SI.

    Frequencies are returned as angular frequencies (rad/s). A value given in
    Hz is cyclic and is multiplied by 2π; the optional ``2pi*`` marker is only
    accepted together with a Hz unit and states the same thing explicitly.
    Bare numbers are accepted as already being in SI.
    """
    if isinstance(raw, bool):
        raise ValueError("expected a quantity, got a boolean")
    if isinstance(raw, (int, float)):
        return float(raw)

    match = _QUANTITY_RE.match(raw)
    if match is None:
        raise ValueError(f"cannot parse quantity '{raw}'")
    value = float(match.group("value"))
    unit = match.group("unit")
    if unit is None:
        if match.group("angular"):
            raise ValueError(f"'{raw}': the 2pi* marker needs a Hz unit")
        return value

    found, scale = _resolve_unit(unit.strip())
    if found != dimension:
        raise ValueError(f"'{raw}' has dimension {found}, expected {dimension}")
    if match.group("angular") and not unit.strip().endswith("Hz"):
        raise ValueError(f"'{raw}': the 2pi* marker needs a Hz unit")
    return value * scale


def coulomb_strength(charge_number: int) -> float:
    """Z²e²/(4πε₀) in J·m."""
    return COULOMB_CONSTANT * (charge_number * ELEMENTARY_CHARGE) ** 2


@dataclass(frozen=True, slots=True)
class SimulationUnits:
    """Conversion between SI and the m = k̄ = 1 simulation units."""

    mass: float
    kbar: float

    @property
    def frequency(self) -> float:
        """√(k̄/m) in rad/s."""
        return math.sqrt(self.kbar / self.mass)

    @property
    def time(self) -> float:
        return 1.0 / self.frequency

    def to_seconds(self, t: float) -> float:
        return t * self.time

    def from_seconds(self, seconds: float) -> float:
        return seconds / self.time

    def to_angular(self, omega: float) -> float:
        return omega * self.frequency

    def from_angular(self, omega: float) -> float:
        return omega / self.frequency

    @classmethod
    def from_spacing(cls, mass: float, charge_number: int, spacing: float) -> SimulationUnits:
        """Units whose k̄ is the Coulomb coupling of two ions at ``spacing``."""
        return cls(mass=mass, kbar=coulomb_strength(charge_number) / spacing**3)
