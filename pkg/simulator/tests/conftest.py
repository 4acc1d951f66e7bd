"""
Shared test configuration and fixtures for the simulator test suite.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Callable, Generator, Optional

import numpy as np
import pytest

from casimir.core.config import clear_settings_cache
from casimir.schemas.experiment import ExperimentConfig
from casimir.services.dynamics import QuadraticSystem, StageProtocol
from casimir.services.ion_chain import DriveSchedule, equidistant_couplings, staggered_stiffness
from casimir.services.moore import MirrorTrajectory

REPO_ROOT = Path(__file__).resolve().parents[2]
EXPERIMENTS = REPO_ROOT / "shared" / "experiments"
ENV_VARIABLES = (
    "CASIMIR_CHAIN_THREADS",
    "CASIMIR_LOG_LEVEL",
    "CASIMIR_LOG_FORMAT",
    "CASIMIR_OUTPUT_DIR",
    "CASIMIR_CSV_DIGITS",
)


@pytest.fixture(autouse=True)
def reset_settings(monkeypatch: pytest.MonkeyPatch) -> Generator[None, None, None]:
    """Every test starts from default settings and sees its own CASIMIR_* variables."""
    for name in ENV_VARIABLES:
        monkeypatch.delenv(name, raising=False)
    clear_settings_cache()
    yield
    clear_settings_cache()


@pytest.fixture
def twenty_ion_config_path() -> Path:
    return EXPERIMENTS / "twenty_ion.cfg"


@pytest.fixture
def two_ion_config_path() -> Path:
    return EXPERIMENTS / "two_ion.cfg"


@pytest.fixture
def protocol() -> StageProtocol:
    return StageProtocol(t0=0.0, t1=2.0, t2=12.0)


def sine_modulated(
    base: np.ndarray,
    pump: np.ndarray,
    omega_d: float,
    protocol: StageProtocol,
) -> QuadraticSystem:
    """K(t) = base + pump·sin²(ω_D (t − t1)/2) during stage II, frozen afterwards."""

    def stiffness(t: float) -> np.ndarray:
        if t <= protocol.t1:
            return base
        elapsed = min(t, protocol.t2) - protocol.t1
        return base + pump * math.sin(0.5 * omega_d * elapsed) ** 2

    return QuadraticSystem(n_modes=base.shape[0], mass=1.0, stiffness=stiffness, protocol=protocol)


@pytest.fixture
def modulated_system() -> Callable[..., QuadraticSystem]:
    return sine_modulated


@pytest.fixture
def small_chain_stiffness() -> Callable[[int, float], np.ndarray]:
    """Staggered stiffness of an evenly spaced chain with uniform χ."""

    def build(n_ions: int, chi: float = 6.0) -> np.ndarray:
        return staggered_stiffness(np.full(n_ions, chi), equidistant_couplings(n_ions))

    return build


@pytest.fixture
def make_trajectory() -> Callable[..., MirrorTrajectory]:
    def build(
        length: float = 1.0,
        delta: float = 0.01,
        omega_d: Optional[float] = None,
        periods: int = 3,
        t1: float = 0.5,
        l0: float = 0.0,
    ) -> MirrorTrajectory:
        omega = omega_d if omega_d is not None else 2.0 * math.pi / length
        t2 = t1 + periods * 2.0 * math.pi / omega
        return MirrorTrajectory(
            l0=l0,
            r0=l0 + length,
            delta=delta,
            omega_d=omega,
            protocol=StageProtocol(t0=0.0, t1=t1, t2=t2),
        )

    return build


def trap_document(**sections: dict[str, Any]) -> dict[str, Any]:
    """Minimal valid experiment document; sections override or extend the defaults."""
    document: dict[str, Any] = {
        "trap": {
            "n_ions": 4,
            "height": "80 um",
            "species": {"atomic_mass": "39.962590863 u"},
            "chi_override": {"chi_over_kbar": [6.0, 2.0, 2.0, 6.0]},
        },
        "drive": {"target_ions": [1], "alpha": 0.3, "periods": 3, "settle_time": 2.0},
        "moore": {"modes": 4},
        "sweep": {"start_over_omega1": 1.5, "stop_over_omega1": 2.5, "points": 3},
        "numerics": {
            "rtol": 1e-9,
            "atol": 1e-11,
            "moore_nodes_per_length": 200,
            "average_points": 1001,
            "drive_table_points": 21,
        },
        "timeseries": {"samples_per_period": 4},
    }
    for name, values in sections.items():
        document[name] = {**document.get(name, {}), **values}
    return document


@pytest.fixture
def small_config() -> ExperimentConfig:
    """Four-ion chain with a χ override: fast enough for every orchestration test."""
    return ExperimentConfig.model_validate(trap_document())


@pytest.fixture
def small_drive(small_config: ExperimentConfig) -> Callable[[float], DriveSchedule]:
    def build(omega_d: float) -> DriveSchedule:
        return DriveSchedule.from_config(small_config.drive, omega_d)

    return build
