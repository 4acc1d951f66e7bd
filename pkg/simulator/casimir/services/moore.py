"""
Moving-mirror cavity with perfectly reflecting walls.

The right mirror is static at r0 and the left mirror follows l(t). Working in
the flipped coordinate y = r0 − z puts the static mirror at y = 0 and the
moving one at y = L(t) = r0 − l(t), where a single function R solves the
problem: every canonical in-mode is built from e^{−iπnR(t±y)} and the
Dirichlet condition at the moving mirror becomes R(t + L(t)) = R(t − L(t)) + 2.
R is obtained by tracing null rays back through their reflections into the
static first stage, where R(u) = u/L0.

Units: c = 1, lengths and times in the same (lattice-spacing) unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import elementwise

from casimir.core.errors import DomainError, QuadratureError, RootFindingError, SimulationError
from casimir.core.logging import get_logger
from casimir.services.dynamics import BogoliubovMap, StageProtocol, occupations

logger = get_logger(__name__)

FloatArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]

REFLECTION_TOLERANCE = 1e-12
DEFAULT_NODES_PER_LENGTH = 2000
DEFAULT_MODES = 30
COMPLETENESS_THRESHOLD = 1e-3


@dataclass(frozen=True, slots=True)
class MirrorTrajectory:
    """
    Left mirror l(t) = l0 + δ sin²(ω_D (t − t1)/2) during the drive.

    l(t) = l0 before t1 and stays at its t2 value afterwards.
    """

    l0: float
    r0: float
    delta: float
    omega_d: float
    protocol: StageProtocol

    def __post_init__(self) -> None:
        if self.r0 <= self.l0:
            raise ValueError(f"r0={self.r0} must exceed l0={self.l0}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.omega_d <= 0:
            raise ValueError("omega_D must be positive")
        if self.delta >= self.r0 - self.l0:
            raise ValueError("mirrors would cross: delta must stay below r0 - l0")
        if self.max_speed >= 1.0:
            raise ValueError(f"mirror speed {self.max_speed:.3f} reaches the speed of light")

    @property
    def length(self) -> float:
        return self.r0 - self.l0

    @property
    def max_speed(self) -> float:
        return 0.5 * self.delta * self.omega_d

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega_d

    def phase(self, t: FloatArray | float) -> FloatArray:
        t1, t2 = self.protocol.t1, self.protocol.t2
        return self.omega_d * (np.clip(np.asarray(t, dtype=float), t1, t2) - t1)

    def modulation(self, t: FloatArray | float) -> FloatArray:
        """s(t) = sin²(phase/2) in [0, 1]."""
        return np.sin(0.5 * self.phase(t)) ** 2

    def left(self, t: FloatArray | float) -> FloatArray:
        return self.l0 + self.delta * self.modulation(t)

    def left_velocity(self, t: FloatArray | float) -> FloatArray:
        t_arr = np.asarray(t, dtype=float)
        active = (t_arr >= self.protocol.t1) & (t_arr < self.protocol.t2)
        return np.where(active, 0.5 * self.delta * self.omega_d * np.sin(self.phase(t_arr)), 0.0)

    def cavity_length(self, t: FloatArray | float) -> FloatArray:
        return self.r0 - self.left(t)

    def check_ordering(self, samples_per_period: int = 1000) -> None:
        span = self.protocol.t2 - self.protocol.t1
        count = max(samples_per_period, int(math.ceil(span / self.period * samples_per_period)))
        times = np.linspace(self.protocol.t0, self.protocol.t2, count)
        if np.any(self.cavity_length(times) <= 0.0):
            raise ValueError("mirrors cross during the drive")


@dataclass(frozen=True, slots=True)
class MooreFunction:
    """Monotone table of R and R' on [u_min, u_max] with Hermite interpolation."""

    nodes: FloatArray
    values: FloatArray
    slopes: FloatArray
    spline: CubicHermiteSpline = field(repr=False, compare=False)

    @property
    def u_min(self) -> float:
        return float(self.nodes[0])

    @property
    def u_max(self) -> float:
        return float(self.nodes[-1])

    def _check_range(self, u: FloatArray) -> None:
        span = self.u_max - self.u_min
        slack = 1e-12 * max(span, 1.0)
        if np.any(u < self.u_min - slack) or np.any(u > self.u_max + slack):
            raise DomainError(
                f"null coordinate outside tabulated range [{self.u_min:.6g}, {self.u_max:.6g}]",
                details={"u_min": self.u_min, "u_max": self.u_max},
            )

    def __call__(self, u: FloatArray | float) -> FloatArray:
        u_arr = np.asarray(u, dtype=float)
        self._check_range(u_arr)
        return self.spline(np.clip(u_arr, self.u_min, self.u_max))

    def derivative(self, u: FloatArray | float) -> FloatArray:
        u_arr = np.asarray(u, dtype=float)
        self._check_range(u_arr)
        return self.spline(np.clip(u_arr, self.u_min, self.u_max), 1)


@dataclass(slots=True)
class MooreResult:
    occupations: FloatArray
    bogoliubov: BogoliubovMap
    completeness_defect: float
    t_eval: float
    warnings: list[str] = field(default_factory=list)


def exact_moore_values(traj: MirrorTrajectory, u: FloatArray) -> tuple[FloatArray, FloatArray]:
    """
    R(u) and R'(u) by tracing each null ray back to the static stage.

    Each reflection off the moving mirror solves t + L(t) = w for t with a
    vectorized bracketed root solve on [w − L_max, w − L_min].
    """
    u = np.asarray(u, dtype=float)
    l0 = traj.length
    if traj.delta == 0.0:
        return u / l0, np.full_like(u, 1.0 / l0)
    l_min = l0 - traj.delta
    threshold = traj.protocol.t1 + l0
    pad = 1e-6 * l0

    w = u.copy()
    offset = np.zeros_like(w)
    slope_factor = np.ones_like(w)
    pending = w > threshold
    # each reflection moves a ray back by at least 2·L_min
    reach = float(np.max(w, initial=threshold)) - threshold
    max_reflections = int(math.ceil(reach / (2.0 * l_min))) + 2

    for _ in range(max_reflections):
        if not np.any(pending):
            break
        targets = w[pending]

        def crossing(t: FloatArray, target: FloatArray) -> FloatArray:
            return t + traj.cavity_length(t) - target

        result = elementwise.find_root(
            crossing,
            (targets - l0 - pad, targets - l_min + pad),
            args=(targets,),
            tolerances={"xatol": REFLECTION_TOLERANCE, "xrtol": 4 * np.finfo(float).eps},
        )
        if not np.all(result.success):
            bad = targets[~result.success]
            raise RootFindingError(
                f"reflection solve failed for {bad.size} rays (first at w={bad[0]:.12g})",
                details={"w": bad[:5].tolist(), "l0": traj.l0, "r0": traj.r0, "delta": traj.delta},
            )
        t_hit = result.x
        speed = -traj.left_velocity(t_hit)  # dL/dt
        slope_factor[pending] *= (1.0 - speed) / (1.0 + speed)
        offset[pending] += 2.0
        w[pending] = t_hit - traj.cavity_length(t_hit)
        pending = w > threshold
    else:
        if np.any(pending):
            raise RootFindingError(
                "ray tracing did not reach the static stage",
                details={"pending": int(pending.sum())},
            )

    values = w / l0 + offset
    slopes = slope_factor / l0
    return values, slopes


def build_moore_function(
    traj: MirrorTrajectory,
    resolution: int = DEFAULT_NODES_PER_LENGTH,
    u_range: Optional[tuple[float, float]] = None,
) -> MooreFunction:
    """
    Tabulate R on ``u_range`` with ``resolution`` nodes per initial cavity length.

    The default range covers every null coordinate needed between t0 and t2.
    """
    traj.check_ordering()
    if u_range is None:
        u_range = (traj.protocol.t0 - traj.length, traj.protocol.t2 + traj.length)
    u_min, u_max = u_range
    if u_max <= u_min:
        raise ValueError("empty null-coordinate range")

    count = max(8, int(math.ceil((u_max - u_min) / traj.length * resolution)) + 1)
    nodes = np.linspace(u_min, u_max, count)
    values, slopes = exact_moore_values(traj, nodes)
    if np.any(slopes <= 0.0) or np.any(np.diff(values) <= 0.0):
        raise SimulationError(
            "Moore function is not strictly increasing", error_code="moore_not_monotone"
        )

    spline = CubicHermiteSpline(nodes, values, slopes)
    midpoints = 0.5 * (nodes[:-1] + nodes[1:])
    mid_values = spline(midpoints)
    if np.any(mid_values <= values[:-1]) or np.any(mid_values >= values[1:]):
        raise SimulationError(
            "interpolated Moore function lost monotonicity", error_code="moore_not_monotone"
        )

    logger.debug("moore.table.built", nodes=count, u_min=u_min, u_max=u_max)
    return MooreFunction(nodes=nodes, values=values, slopes=slopes, spline=spline)


def _normalization(index: int) -> complex:
    return (-1) ** (index + 1) * 1j / (2.0 * math.sqrt(math.pi * index))


def mode_function(
    mf: MooreFunction,
    traj: MirrorTrajectory,
    index: int,
    t: float,
    z: FloatArray | float,
) -> tuple[ComplexArray, ComplexArray]:
    """A_ℓ(t, z) and ∂_t A_ℓ(t, z) for z in [l(t), r0]."""
    if index < 1:
        raise ValueError("mode index starts at 1")
    z_arr = np.asarray(z, dtype=float)
    left = float(traj.left(t))
    slack = 1e-12 * traj.length
    if np.any(z_arr < left - slack) or np.any(z_arr > traj.r0 + slack):
        raise DomainError(
            f"z outside cavity [{left:.12g}, {traj.r0:.12g}] at t={t:.12g}",
            details={"t": t, "left": left, "right": traj.r0},
        )
    y = np.clip(traj.r0 - z_arr, 0.0, traj.r0 - left)
    return _mode_in_flipped(mf, index, t, y)


def _mode_in_flipped(
    mf: MooreFunction, index: int, t: float, y: FloatArray
) -> tuple[ComplexArray, ComplexArray]:
    norm = _normalization(index)
    k = math.pi * index
    plus = np.exp(-1j * k * mf(t + y))
    minus = np.exp(-1j * k * mf(t - y))
    value = norm * (plus - minus)
    rate = norm * (-1j * k) * (mf.derivative(t + y) * plus - mf.derivative(t - y) * minus)
    return value, rate


def _gauss_panels(a: float, b: float, panels: int, order: int) -> tuple[FloatArray, FloatArray]:
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    points = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return points, weights


def symplectic_form(
    f1: Callable[[FloatArray], tuple[ComplexArray, ComplexArray]],
    f2: Callable[[FloatArray], tuple[ComplexArray, ComplexArray]],
    interval: tuple[float, float],
    panels: int = 32,
    order: int = 16,
    tolerance: float = 1e-10,
    max_doublings: int = 6,
) -> complex:
    """
    {f1|f2} = ∫ (f2 ∂_t f1 − f1 ∂_t f2) dz over ``interval`` at a fixed time.

    Each function maps positions to (value, time derivative). The composite
    Gauss-Legendre rule is refined by panel doubling until two successive
    estimates agree.
    """
    a, b = interval

    def estimate(count: int) -> complex:
        z, w = _gauss_panels(a, b, count, order)
        v1, d1 = f1(z)
        v2, d2 = f2(z)
        return complex(np.sum(w * (v2 * d1 - v1 * d2)))

    previous = estimate(panels)
    for _ in range(max_doublings):
        panels *= 2
        current = estimate(panels)
        if abs(current - previous) <= tolerance * max(1.0, abs(current)):
            return current
        previous = current
    raise QuadratureError(
        f"symplectic form did not converge on [{a:.6g}, {b:.6g}] with {panels} panels",
        details={"interval": [a, b], "panels": panels},
    )


def overlap_matrices(
    mf: MooreFunction,
    traj: MirrorTrajectory,
    t_eval: float,
    n_out: int,
    n_in: int,
    panels: int = 64,
    order: int = 16,
    tolerance: float = 1e-9,
    max_doublings: int = 5,
) -> BogoliubovMap:
    """
    Bogoliubov coefficients between the evolved in-modes and the static modes of
    the cavity frozen at ``t_eval``.

    α_mn = i{A_n | B_m*} and β_mn = i·conj({A_n | B_m}), with B_m the canonical
    static out-modes. All overlaps share one quadrature grid.
    """
    length = float(traj.cavity_length(t_eval))
    out_index = np.arange(1, n_out + 1)
    in_index = np.arange(1, n_in + 1)
    out_freq = math.pi * out_index / length

    def estimate(count: int) -> tuple[ComplexArray, ComplexArray]:
        y, w = _gauss_panels(0.0, length, count, order)
        r_plus, r_minus = mf(t_eval + y), mf(t_eval - y)
        s_plus, s_minus = mf.derivative(t_eval + y), mf.derivative(t_eval - y)
        k = math.pi * in_index[:, None]
        norm = np.array([_normalization(n) for n in in_index])[:, None]
        plus = np.exp(-1j * k * r_plus[None, :])
        minus = np.exp(-1j * k * r_minus[None, :])
        value = norm * (plus - minus)
        rate = norm * (-1j * k) * (s_plus[None, :] * plus - s_minus[None, :] * minus)
        # B_m in flipped coordinates: (−1)^{m+1} sin(πm y/L)/√(πm)
        sign = np.where(out_index % 2 == 1, 1.0, -1.0)[:, None]
        basis = sign * np.sin(np.pi * out_index[:, None] * y[None, :] / length)
        basis /= np.sqrt(np.pi * out_index)[:, None]
        weighted = basis * w[None, :]
        rate_part = weighted @ rate.T
        value_part = weighted @ value.T
        alpha = 1j * (rate_part - 1j * out_freq[:, None] * value_part)
        beta = 1j * np.conj(rate_part + 1j * out_freq[:, None] * value_part)
        return alpha, beta

    alpha, beta = estimate(panels)
    for _ in range(max_doublings):
        panels *= 2
        alpha_next, beta_next = estimate(panels)
        change = max(
            float(np.max(np.abs(alpha_next - alpha))), float(np.max(np.abs(beta_next - beta)))
        )
        alpha, beta = alpha_next, beta_next
        if change <= tolerance:
            return BogoliubovMap(alpha=alpha, beta=beta)
    raise QuadratureError(
        f"mode overlaps did not converge at t={t_eval:.6g} with {panels} panels",
        details={"t": t_eval, "panels": panels},
    )


def mean_frequency(traj: MirrorTrajectory, index: int = 1, points: int = 2001) -> float:
    """⟨ω_ℓ⟩_T: trapezoid average of πℓ/(r − l) over one drive period."""
    phase = np.linspace(0.0, 2.0 * math.pi, max(points, 1001))
    length = traj.length - traj.delta * np.sin(0.5 * phase) ** 2
    return float(np.trapezoid(math.pi * index / length, phase) / (2.0 * math.pi))


def resonance_law(traj: MirrorTrajectory, t: float | FloatArray) -> FloatArray:
    """Short-time parametric resonance estimate sinh²[⟨ω₁⟩_T δ τ / (4(r0 − l0))]."""
    tau = np.clip(np.asarray(t, dtype=float), traj.protocol.t1, traj.protocol.t2) - traj.protocol.t1
    rate = mean_frequency(traj) * traj.delta / (4.0 * traj.length)
    return np.sinh(rate * tau) ** 2


def moore_occupations(
    traj: MirrorTrajectory,
    n_modes: int = DEFAULT_MODES,
    t_eval: Optional[float] = None,
    resolution: int = DEFAULT_NODES_PER_LENGTH,
    in_mode_factor: int = 2,
    completeness_threshold: float = COMPLETENESS_THRESHOLD,
    moore_function: Optional[MooreFunction] = None,
) -> MooreResult:
    """
    Occupations of the static out-modes after the drive.

    The out-modes are those of the cavity [l(t_eval), r0]; ``t_eval``
    defaults to t2. In-modes are kept up to ``in_mode_factor × n_modes``.
    A completeness defect above threshold is recorded as a warning.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be at least 1")
    t_eval = traj.protocol.t2 if t_eval is None else float(t_eval)
    length_now = float(traj.cavity_length(t_eval))
    mf = moore_function or build_moore_function(
        traj, resolution, u_range=(t_eval - length_now, t_eval + length_now)
    )
    n_in = max(n_modes, in_mode_factor * n_modes)
    full = overlap_matrices(mf, traj, t_eval, n_modes, n_in)
    n = occupations(full)

    gram = full.alpha @ full.alpha.conj().T - full.beta @ full.beta.conj().T
    defect = float(np.max(np.abs(gram - np.eye(n_modes))))
    warnings: list[str] = []
    if defect > completeness_threshold:
        warnings.append(
            f"completeness defect {defect:.3e} exceeds {completeness_threshold:.1e}"
            f" at {n_modes} modes"
        )
        logger.warning("moore.completeness.defect", defect=defect, n_modes=n_modes, t_eval=t_eval)
    return MooreResult(
        occupations=n,
        bogoliubov=full,
        completeness_defect=defect,
        t_eval=t_eval,
        warnings=warnings,
    )
