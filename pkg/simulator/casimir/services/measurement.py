"""
Backgrounds and readout of the lowest radial modes.

Electric-field-noise heating is an additive budget next to the unitary
dynamics. Phonon statistics are read out through blue-sideband flopping,
whose Rabi frequencies scale with √(n + 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import nnls
from thewalrus.quantum import probabilities as fock_probabilities

from casimir.core.errors import ConfigurationError, IllConditionedError, TruncationError
from casimir.core.logging import get_logger
from casimir.core.units import ELEMENTARY_CHARGE, HBAR
from casimir.services.dynamics import BogoliubovMap

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]

NORMALIZATION_TOLERANCE = 1e-9
TAIL_TOLERANCE = 1e-6
BEAT_PERIODS = 4
RIDGE = 1e-12


@dataclass(frozen=True, slots=True)
class NoiseModel:
    """S_E at ω_ref; ``inverse_frequency`` keeps S_E·ω constant, ``flat`` keeps S_E."""

    spectral_density: float
    reference_frequency: float
    scaling: Literal["inverse_frequency", "flat"] = "inverse_frequency"

    def __post_init__(self) -> None:
        if self.spectral_density < 0:
            raise ValueError("spectral density must be non-negative")
        if self.reference_frequency <= 0:
            raise ValueError("reference frequency must be positive")

    def spectral_density_at(self, omega: float) -> float:
        if self.scaling == "flat":
            return self.spectral_density
        return self.spectral_density * self.reference_frequency / omega


@dataclass(frozen=True, slots=True)
class PhononDistribution:
    probabilities: FloatArray

    def __post_init__(self) -> None:
        p = self.probabilities
        if p.ndim != 1 or p.size == 0:
            raise ValueError("a distribution needs at least one probability")
        if np.any(p < 0.0):
            raise ValueError("probabilities must be non-negative")
        if abs(float(p.sum()) - 1.0) > NORMALIZATION_TOLERANCE:
            raise ValueError(f"probabilities sum to {float(p.sum())!r}, not 1")

    @classmethod
    def from_weights(cls, weights: FloatArray) -> PhononDistribution:
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        if w.sum() <= 0.0:
            raise ValueError("weights must have positive total mass")
        return cls(probabilities=w / w.sum())

    @classmethod
    def fock(cls, n: int, n_max: int) -> PhononDistribution:
        p = np.zeros(n_max + 1)
        p[n] = 1.0
        return cls(probabilities=p)

    @classmethod
    def thermal(cls, mean: float, n_max: int) -> PhononDistribution:
        n = np.arange(n_max + 1)
        return cls.from_weights(mean**n / (1.0 + mean) ** (n + 1))

    @property
    def n_max(self) -> int:
        return int(self.probabilities.size - 1)

    @property
    def mean(self) -> float:
        return float(np.arange(self.probabilities.size) @ self.probabilities)

    def padded(self, n_max: int) -> FloatArray:
        out = np.zeros(max(n_max, self.n_max) + 1)
        out[: self.probabilities.size] = self.probabilities
        return out


@dataclass(frozen=True, slots=True)
class SidebandSignal:
    times: FloatArray
    excitation: FloatArray
    rabi_frequency: float

    def __post_init__(self) -> None:
        if self.times.shape != self.excitation.shape:
            raise ValueError("times and excitation must have the same shape")
        if np.any(self.excitation < 0.0) or np.any(self.excitation > 1.0):
            raise ValueError("excitation probabilities must lie in [0, 1]")

    @property
    def window(self) -> float:
        return float(self.times.max() - self.times.min())


def heating_rate(noise: NoiseModel, mass: float, charge_number: int, omega: float) -> float:
    """Γ = e²Z² S_E(ω)/(4 m ħ ω) in quanta per second."""
    if omega <= 0:
        raise ValueError("mode frequency must be positive")
    numerator = (charge_number * ELEMENTARY_CHARGE) ** 2 * noise.spectral_density_at(omega)
    return numerator / (4.0 * mass * HBAR * omega)


def sideband_signal(
    distribution: PhononDistribution, rabi_frequency: float, times: FloatArray
) -> SidebandSignal:
    """P_e(Δt) = Σ_n p(n) sin²(√(n + 1) Ω Δt)."""
    t = np.asarray(times, dtype=float)
    rates = np.sqrt(np.arange(distribution.probabilities.size) + 1.0) * rabi_frequency
    excitation = np.sin(np.outer(t, rates)) ** 2 @ distribution.probabilities
    return SidebandSignal(
        times=t, excitation=np.clip(excitation, 0.0, 1.0), rabi_frequency=rabi_frequency
    )


def required_window(rabi_frequency: float, n_max: int) -> float:
    """Four beat periods of the two closest flopping frequencies 2√(n+1)Ω up to n_max."""
    if n_max < 1:
        gap = 2.0 * rabi_frequency
    else:
        gap = 2.0 * rabi_frequency * (math.sqrt(n_max + 1) - math.sqrt(n_max))
    return BEAT_PERIODS * 2.0 * math.pi / gap


def sampling_times(
    rabi_frequency: float, n_max: int, samples: int, window_factor: float = 1.25
) -> FloatArray:
    window = window_factor * required_window(rabi_frequency, n_max)
    return np.linspace(window / samples, window, samples)


def invert_sideband(signal: SidebandSignal, n_max: int) -> PhononDistribution:
    """
    Non-negative least squares onto the known flopping components.

    Each column of the design matrix is sin²(√(n+1)ΩΔt); an extra row pins
    Σ p(n) = 1 and a tiny ridge keeps the normal equations regular.
    """
    needed = required_window(signal.rabi_frequency, n_max)
    if signal.window < needed * (1.0 - 1e-9):
        raise IllConditionedError(
            f"sampling window {signal.window:.6g} cannot resolve n <= {n_max}; "
            f"need at least {needed:.6g}",
            details={"required_window": needed, "window": signal.window, "n_max": n_max},
        )
    rates = np.sqrt(np.arange(n_max + 1) + 1.0) * signal.rabi_frequency
    design = np.sin(np.outer(signal.times, rates)) ** 2
    weight = math.sqrt(signal.times.size)
    system = np.vstack(
        [design, weight * np.ones((1, n_max + 1)), math.sqrt(RIDGE) * np.eye(n_max + 1)]
    )
    rhs = np.concatenate([signal.excitation, [weight], np.zeros(n_max + 1)])
    solution, residual = nnls(system, rhs, maxiter=50 * (n_max + 1))
    logger.debug("readout.inversion.solved", n_max=n_max, residual=float(residual))
    return PhononDistribution.from_weights(solution)


def add_readout_noise(
    signal: SidebandSignal, sigma: float, rng: np.random.Generator
) -> SidebandSignal:
    """Additive Gaussian projection noise, clipped back into [0, 1]."""
    noisy = signal.excitation + rng.normal(0.0, sigma, size=signal.excitation.shape)
    return SidebandSignal(
        times=signal.times,
        excitation=np.clip(noisy, 0.0, 1.0),
        rabi_frequency=signal.rabi_frequency,
    )


def total_variation(
    p: PhononDistribution, q: PhononDistribution, n_limit: Optional[int] = None
) -> float:
    """½ Σ |p(n) − q(n)|, optionally restricted to n <= n_limit."""
    size = max(p.n_max, q.n_max)
    diff = np.abs(p.padded(size) - q.padded(size))
    if n_limit is not None:
        diff = diff[: n_limit + 1]
    return 0.5 * float(diff.sum())


def single_mode_covariance(bogoliubov_map: BogoliubovMap, mode: int) -> FloatArray:
    """
    Reduced (x, p) covariance of output mode ``mode`` (1-based) for vacuum input, ħ = 2.

    With N = Σ_k |β_ℓk|² and M = Σ_k α_ℓk β_ℓk the state is a squeezed thermal
    state with ⟨x²⟩ = 2N + 1 + 2 Re M and ⟨p²⟩ = 2N + 1 − 2 Re M.
    """
    row = mode - 1
    n = float(np.sum(np.abs(bogoliubov_map.beta[row]) ** 2))
    m = complex(np.sum(bogoliubov_map.alpha[row] * bogoliubov_map.beta[row]))
    return np.array(
        [
            [2.0 * n + 1.0 + 2.0 * m.real, 2.0 * m.imag],
            [2.0 * m.imag, 2.0 * n + 1.0 - 2.0 * m.real],
        ]
    )


def photon_statistics(
    bogoliubov_map: BogoliubovMap, mode: int, n_max: int
) -> PhononDistribution:
    """Fock distribution of a single output mode after evolution from vacuum."""
    if not 1 <= mode <= bogoliubov_map.beta.shape[0]:
        raise ValueError(f"mode {mode} outside 1..{bogoliubov_map.beta.shape[0]}")
    cov = single_mode_covariance(bogoliubov_map, mode)
    p = np.real(np.asarray(fock_probabilities(np.zeros(2), cov, n_max + 1, hbar=2)))
    p = np.clip(p, 0.0, None)
    tail = 1.0 - float(p.sum())
    if tail > TAIL_TOLERANCE:
        suggested = 2 * n_max + 2
        raise TruncationError(
            f"{tail:.3e} of the probability lies above n_max={n_max}; try n_max={suggested}",
            details={"tail": tail, "n_max": n_max, "suggested_n_max": suggested},
        )
    return PhononDistribution.from_weights(p)


def squeezed_vacuum(r: float, n_max: int) -> PhononDistribution:
    """p(2k) = (2k)!/(4^k (k!)²) tanh^{2k} r / cosh r, odd terms zero."""
    p = np.zeros(n_max + 1)
    t = math.tanh(r)
    for k in range(n_max // 2 + 1):
        p[2 * k] = math.comb(2 * k, k) / 4.0**k * t ** (2 * k) / math.cosh(r)
    return PhononDistribution.from_weights(p)


DISTRIBUTION_COLUMNS = ("n", "p")


def distribution_rows(distribution: PhononDistribution) -> list[tuple[int, float]]:
    return [(n, float(p)) for n, p in enumerate(distribution.probabilities)]


def read_distribution(path: Path | str) -> PhononDistribution:
    """Distribution from a CSV with ``n`` and ``p`` columns."""
    path = Path(path)
    try:
        with path.open(newline="") as handle:
            rows = list(csv.DictReader(handle))
        pairs = sorted((int(row["n"]), float(row["p"])) for row in rows)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigurationError(
            f"cannot read distribution {path}: {exc}", details={"path": str(path)}
        ) from exc
    if [n for n, _ in pairs] != list(range(len(pairs))):
        raise ConfigurationError(f"distribution {path} must list n = 0, 1, 2, ... without gaps")
    return PhononDistribution.from_weights(np.array([p for _, p in pairs]))
