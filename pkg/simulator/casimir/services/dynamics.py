"""
Exact evolution of time-dependent quadratic bosonic Hamiltonians.

H(t) = Σ P_i²/(2m) + ½ Xᵀ K(t) X is evolved through its 2N×2N symplectic
propagator. Occupations of the instantaneous normal modes follow from the
Bogoliubov map between the canonical modes of two static stiffness matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import linalg
from scipy.integrate import solve_ivp

from casimir.core.errors import IntegrationError, SymplecticDefectError, UnstableConfigurationError
from casimir.core.logging import get_logger

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]

SYMMETRY_TOLERANCE = 1e-12
DEGENERACY_TOLERANCE = 1e-10

# two-stage Gauss-Legendre tableau
_GL_C = (0.5 - math.sqrt(3.0) / 6.0, 0.5 + math.sqrt(3.0) / 6.0)
_GL_A = ((0.25, 0.25 - math.sqrt(3.0) / 6.0), (0.25 + math.sqrt(3.0) / 6.0, 0.25))


@dataclass(frozen=True, slots=True)
class StageProtocol:
    """Stage I is [t0, t1), stage II is [t1, t2), stage III is [t2, ∞)."""

    t0: float
    t1: float
    t2: float

    def __post_init__(self) -> None:
        if not (self.t0 < self.t1 < self.t2):
            raise ValueError(
                f"stage times must satisfy t0 < t1 < t2, got {self.t0}, {self.t1}, {self.t2}"
            )

    def stage(self, t: float) -> int:
        if t < self.t1:
            return 1
        if t < self.t2:
            return 2
        return 3

    @property
    def drive_duration(self) -> float:
        return self.t2 - self.t1


@dataclass(frozen=True, slots=True)
class QuadraticSystem:
    """
    N oscillators of common mass with stiffness matrix K(t).

    The same type carries the discretized field Hamiltonian (field amplitudes
    Â_j on cells, mass 1, couplings d⁻²) and the staggered radial ion-chain
    Hamiltonian (mass m, couplings (−1)^{i−j} k_ij, on-site χ_i).
    """

    n_modes: int
    mass: float
    stiffness: Callable[[float], FloatArray]
    protocol: Optional[StageProtocol] = None
    time_dependent: bool = True

    def __post_init__(self) -> None:
        if self.n_modes < 1:
            raise ValueError("a quadratic system needs at least one mode")
        if self.mass <= 0:
            raise ValueError("mass must be positive")

    @classmethod
    def static(cls, stiffness: FloatArray, mass: float = 1.0) -> QuadraticSystem:
        frozen = np.array(stiffness, dtype=float)
        frozen.setflags(write=False)
        return cls(
            n_modes=frozen.shape[0],
            mass=mass,
            stiffness=lambda _t: frozen,
            time_dependent=False,
        )

    def stiffness_at(self, t: float) -> FloatArray:
        k = np.asarray(self.stiffness(t), dtype=float)
        if k.shape != (self.n_modes, self.n_modes):
            raise ValueError(
                f"stiffness at t={t} has shape {k.shape}, expected {self.n_modes}x{self.n_modes}"
            )
        scale = max(float(np.max(np.abs(k))), 1.0)
        if float(np.max(np.abs(k - k.T))) > SYMMETRY_TOLERANCE * scale:
            raise ValueError(f"stiffness at t={t} is not symmetric")
        return 0.5 * (k + k.T)

    def frozen_at(self, t: float) -> QuadraticSystem:
        return QuadraticSystem.static(self.stiffness_at(t), self.mass)

    def is_static_between(self, t_start: float, t_end: float) -> bool:
        if not self.time_dependent:
            return True
        if self.protocol is None:
            return False
        return t_end <= self.protocol.t1 or t_start >= self.protocol.t2


@dataclass(frozen=True, slots=True)
class ModeBasis:
    frequencies: FloatArray
    vectors: FloatArray
    mass: float = 1.0

    @property
    def n_modes(self) -> int:
        return int(self.frequencies.shape[0])

    def orthonormality_defect(self) -> float:
        g = self.vectors
        return float(np.max(np.abs(g.T @ g - np.eye(self.n_modes))))


@dataclass(frozen=True, slots=True)
class StepControl:
    method: str = "DOP853"
    rtol: float = 1e-10
    atol: float = 1e-12
    fallback_to_symplectic: bool = True
    symplectic_tolerance: float = 1e-8
    # fallback step is chosen so that ω_max·h stays below this phase
    max_phase_step: float = 0.02

    def tightened(self, factor: float) -> StepControl:
        return StepControl(
            method=self.method,
            rtol=self.rtol * factor,
            atol=self.atol * factor,
            fallback_to_symplectic=self.fallback_to_symplectic,
            symplectic_tolerance=self.symplectic_tolerance,
            max_phase_step=self.max_phase_step * factor,
        )


@dataclass(frozen=True, slots=True)
class SymplecticPropagator:
    """Maps the phase-space vector (X, P) at ``t_start`` to ``t_end``."""

    matrix: FloatArray
    t_start: float
    t_end: float

    @property
    def defect(self) -> float:
        return symplectic_defect(self.matrix)


@dataclass(frozen=True, slots=True)
class BogoliubovMap:
    """b_ℓ = Σ_k α_ℓk a_k + β_ℓk a_k† between input and output canonical modes."""

    alpha: ComplexArray
    beta: ComplexArray

    def identity_defect(self) -> float:
        n = self.alpha.shape[0]
        gram = self.alpha @ self.alpha.conj().T - self.beta @ self.beta.conj().T
        return float(np.max(np.abs(gram - np.eye(n))))

    def symmetry_defect(self) -> float:
        product = self.alpha @ self.beta.T
        return float(np.max(np.abs(product - product.T)))


@dataclass(frozen=True, slots=True)
class TimeseriesSample:
    t: float
    occupations: FloatArray
    defect: float = field(default=0.0)


def symplectic_form(n: int) -> FloatArray:
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def symplectic_defect(matrix: FloatArray) -> float:
    n = matrix.shape[0] // 2
    j = symplectic_form(n)
    defect = float(np.max(np.abs(matrix.T @ j @ matrix - j)))
    # NaN entries must fail every tolerance comparison
    return defect if math.isfinite(defect) else math.inf


def _canonical_subspace(block: FloatArray) -> FloatArray:
    # basis depends only on the spanned subspace, not on the solver's rotation
    projector = block @ block.T
    chosen: list[FloatArray] = []
    for column in projector.T:
        v = column.copy()
        for u in chosen:
            v -= (u @ v) * u
        norm = float(np.linalg.norm(v))
        if norm > 1e-6:
            chosen.append(v / norm)
        if len(chosen) == block.shape[1]:
            break
    return np.column_stack(chosen)


def _fix_sign(vector: FloatArray) -> FloatArray:
    pivot = int(np.argmax(np.abs(vector)))
    return -vector if vector[pivot] < 0 else vector


def normal_modes(stiffness: FloatArray, mass: float = 1.0) -> ModeBasis:
    """
    Instantaneous normal modes of K: K g_ℓ = m ω_ℓ² g_ℓ.

    Vectors are signed so their largest-magnitude component is positive;
    degenerate subspaces get a canonical basis sorted lexicographically.
    """
    k = np.asarray(stiffness, dtype=float)
    eigenvalues, vectors = linalg.eigh(0.5 * (k + k.T) / mass)
    scale = max(float(np.max(np.abs(eigenvalues))), 1e-300)
    for index, value in enumerate(eigenvalues):
        if value <= 0.0:
            raise UnstableConfigurationError(
                f"unstable static configuration: eigenvalue {index + 1} of K/m is {value:.6g}",
                details={"mode_index": index + 1, "eigenvalue": float(value)},
            )

    ordered = np.empty_like(vectors)
    start = 0
    n = len(eigenvalues)
    while start < n:
        stop = start + 1
        while stop < n and eigenvalues[stop] - eigenvalues[start] <= DEGENERACY_TOLERANCE * scale:
            stop += 1
        block = vectors[:, start:stop]
        if stop - start > 1:
            block = _canonical_subspace(block)
        columns = [_fix_sign(block[:, i]) for i in range(block.shape[1])]
        if len(columns) > 1:
            columns.sort(key=lambda v: tuple(np.round(v, 12)))
        ordered[:, start:stop] = np.column_stack(columns)
        start = stop

    return ModeBasis(frequencies=np.sqrt(eigenvalues), vectors=ordered, mass=mass)


def static_propagator(basis: ModeBasis, duration: float) -> FloatArray:
    """Closed-form rotation of every normal mode over ``duration``."""
    g = basis.vectors
    w = basis.frequencies
    m = basis.mass
    cos = np.cos(w * duration)
    sin = np.sin(w * duration)
    xx = g @ np.diag(cos) @ g.T
    xp = g @ np.diag(sin / (m * w)) @ g.T
    px = g @ np.diag(-m * w * sin) @ g.T
    return np.block([[xx, xp], [px, xx]])


def _generator(system: QuadraticSystem, t: float) -> FloatArray:
    n = system.n_modes
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n) / system.mass
    a[n:, :n] = -system.stiffness_at(t)
    return a


def _integrate_adaptive(
    system: QuadraticSystem, t_start: float, t_end: float, control: StepControl
) -> FloatArray:
    n = system.n_modes
    dim = 2 * n
    inv_mass = 1.0 / system.mass

    def rhs(t: float, y: FloatArray) -> FloatArray:
        state = y.reshape(dim, dim)
        out = np.empty_like(state)
        out[:n] = state[n:] * inv_mass
        out[n:] = -system.stiffness_at(t) @ state[:n]
        return out.ravel()

    solution = solve_ivp(
        rhs,
        (t_start, t_end),
        np.eye(dim).ravel(),
        method=control.method,
        rtol=control.rtol,
        atol=control.atol,
        t_eval=[t_end],
    )
    if not solution.success:
        failed_at = float(solution.t[-1]) if solution.t.size else t_start
        raise IntegrationError(
            f"integration stopped at t={failed_at:.10g}: {solution.message}",
            details={"time": failed_at, "t_start": t_start, "t_end": t_end},
        )
    return solution.y[:, -1].reshape(dim, dim)


def _integrate_symplectic(
    system: QuadraticSystem, t_start: float, t_end: float, control: StepControl
) -> FloatArray:
    dim = 2 * system.n_modes
    sample_times = np.linspace(t_start, t_end, 5)
    samples = [system.stiffness_at(t) for t in sample_times]
    for t, k in zip(sample_times, samples):
        if not np.all(np.isfinite(k)):
            raise IntegrationError(
                f"stiffness is not finite at t={t:.10g}",
                details={"time": float(t), "t_start": t_start, "t_end": t_end},
            )
    omega_max = max(
        math.sqrt(max(float(np.max(np.abs(linalg.eigvalsh(k)))), 1e-300) / system.mass)
        for k in samples
    )
    steps = max(1, math.ceil((t_end - t_start) * omega_max / control.max_phase_step))
    h = (t_end - t_start) / steps
    state = np.eye(dim)
    eye2 = np.eye(2 * dim)
    for step in range(steps):
        t = t_start + step * h
        a1 = _generator(system, t + _GL_C[0] * h)
        a2 = _generator(system, t + _GL_C[1] * h)
        lhs = eye2 - h * np.block(
            [[_GL_A[0][0] * a1, _GL_A[0][1] * a1], [_GL_A[1][0] * a2, _GL_A[1][1] * a2]]
        )
        stages = linalg.solve(lhs, np.vstack([a1 @ state, a2 @ state]))
        state = state + 0.5 * h * (stages[:dim] + stages[dim:])
    return state


def _propagate_segment(
    system: QuadraticSystem, t_start: float, t_end: float, control: StepControl
) -> FloatArray:
    dim = 2 * system.n_modes
    if t_end <= t_start:
        return np.eye(dim)
    if system.is_static_between(t_start, t_end):
        basis = normal_modes(system.stiffness_at(t_start), system.mass)
        return static_propagator(basis, t_end - t_start)

    try:
        matrix = _integrate_adaptive(system, t_start, t_end, control)
    except IntegrationError as exc:
        if not control.fallback_to_symplectic:
            raise
        logger.warning("dynamics.propagate.fallback", reason=str(exc), t_start=t_start, t_end=t_end)
        return _integrate_symplectic(system, t_start, t_end, control)

    defect = symplectic_defect(matrix)
    if defect > control.symplectic_tolerance and control.fallback_to_symplectic:
        logger.warning("dynamics.propagate.fallback", defect=defect, t_start=t_start, t_end=t_end)
        return _integrate_symplectic(system, t_start, t_end, control)
    return matrix


def propagate(
    system: QuadraticSystem,
    t_start: float,
    t_end: float,
    control: Optional[StepControl] = None,
) -> SymplecticPropagator:
    """
    Symplectic propagator of dX/dt = P/m, dP/dt = −K(t)X from ``t_start`` to ``t_end``.

    Static stages of the system's protocol use the closed-form normal-mode
    rotation; the driven stage is integrated with an adaptive high-order
    method and falls back to fixed-step Gauss-Legendre when that fails.
    """
    control = control or StepControl()
    if t_end < t_start:
        raise ValueError(f"t_end={t_end} precedes t_start={t_start}")

    cuts = [t_start]
    if system.protocol is not None and system.time_dependent:
        cuts += [t for t in (system.protocol.t1, system.protocol.t2) if t_start < t < t_end]
    cuts.append(t_end)

    matrix = np.eye(2 * system.n_modes)
    for left, right in zip(cuts[:-1], cuts[1:]):
        matrix = _propagate_segment(system, left, right, control) @ matrix

    defect = symplectic_defect(matrix)
    if defect > control.symplectic_tolerance:
        raise IntegrationError(
            f"symplectic defect {defect:.3e} exceeds {control.symplectic_tolerance:.1e}",
            details={"defect": defect, "t_start": t_start, "t_end": t_end},
        )
    return SymplecticPropagator(matrix=matrix, t_start=t_start, t_end=t_end)


def _mode_rows(basis: ModeBasis) -> tuple[ComplexArray, ComplexArray]:
    w = basis.frequencies
    m = basis.mass
    u = np.diag(np.sqrt(m * w / 2.0)) @ basis.vectors.T
    v = 1j * np.diag(1.0 / np.sqrt(2.0 * m * w)) @ basis.vectors.T
    return u.astype(complex), v


def bogoliubov(
    propagator: SymplecticPropagator | FloatArray,
    basis_in: ModeBasis,
    basis_out: ModeBasis,
    tolerance: float = 1e-8,
) -> BogoliubovMap:
    """(α, β) expressing the output-basis annihilators through the input-basis ones."""
    if isinstance(propagator, SymplecticPropagator):
        matrix = propagator.matrix
    else:
        matrix = np.asarray(propagator)
    n = basis_in.n_modes
    if matrix.shape != (2 * n, 2 * n) or basis_out.n_modes != n:
        raise ValueError("propagator and mode bases have inconsistent dimensions")
    defect = symplectic_defect(matrix)
    if defect > tolerance:
        raise SymplecticDefectError(
            f"refusing Bogoliubov map: symplectic defect {defect:.3e} exceeds {tolerance:.1e}",
            details={"defect": defect, "tolerance": tolerance},
        )

    u_out, v_out = _mode_rows(basis_out)
    w = np.hstack([u_out, v_out]) @ matrix
    w_x, w_p = w[:, :n], w[:, n:]
    d1 = np.diag(1.0 / np.sqrt(2.0 * basis_in.mass * basis_in.frequencies))
    d2 = np.diag(-1j * np.sqrt(basis_in.mass * basis_in.frequencies / 2.0))
    from_x = w_x @ basis_in.vectors @ d1
    from_p = w_p @ basis_in.vectors @ d2
    return BogoliubovMap(alpha=from_x + from_p, beta=from_x - from_p)


def occupations(bogoliubov_map: BogoliubovMap) -> FloatArray:
    """⟨n_ℓ⟩ = Σ_k |β_ℓk|² for a vacuum input state."""
    return np.sum(np.abs(bogoliubov_map.beta) ** 2, axis=1)


def mode_energies(basis: ModeBasis, x: FloatArray, p: FloatArray) -> FloatArray:
    """Classical energy ½(p_ℓ²/m + mω_ℓ²q_ℓ²) carried by each normal mode."""
    q = basis.vectors.T @ x
    pm = basis.vectors.T @ p
    return 0.5 * (pm**2 / basis.mass + basis.mass * basis.frequencies**2 * q**2)


def occupation_timeseries(
    system: QuadraticSystem,
    protocol: StageProtocol,
    sample_times: Sequence[float],
    basis_out: Optional[ModeBasis] = None,
    control: Optional[StepControl] = None,
) -> list[TimeseriesSample]:
    """
    Occupations as if the drive froze at each sample time.

    Unless ``basis_out`` is given, each sample uses the normal modes of the
    stiffness frozen at that time. Samples are returned in ascending time.
    """
    control = control or StepControl()
    times = sorted(float(t) for t in sample_times)
    if times and times[0] < protocol.t0:
        raise ValueError(f"sample time {times[0]} precedes t0={protocol.t0}")

    basis_in = normal_modes(system.stiffness_at(protocol.t0), system.mass)
    matrix = np.eye(2 * system.n_modes)
    previous = protocol.t0
    samples: list[TimeseriesSample] = []
    for t in times:
        matrix = propagate(system, previous, t, control).matrix @ matrix
        previous = t
        basis = basis_out or normal_modes(system.stiffness_at(t), system.mass)
        mapping = bogoliubov(matrix, basis_in, basis, tolerance=control.symplectic_tolerance)
        samples.append(
            TimeseriesSample(
                t=t, occupations=occupations(mapping), defect=symplectic_defect(matrix)
            )
        )
    logger.debug("dynamics.timeseries.completed", samples=len(samples), n_modes=system.n_modes)
    return samples
