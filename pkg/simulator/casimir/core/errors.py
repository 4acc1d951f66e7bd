"""
Simulation error hierarchy.

Every error carries a stable ``error_code`` so the CLI can map failures to
exit codes and the run manifest can record them without parsing messages.
"""

from __future__ import annotations

from typing import Any, Optional


class SimulationError(Exception):
    """Base class for failures raised by the simulator."""

    error_code = "simulation_failed"

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.error_message = message
        if error_code is not None:
            self.error_code = error_code
        self.details = dict(details or {})

    def __str__(self) -> str:
        return self.error_message


class ConfigurationError(SimulationError):
    """Experiment document is unreadable or inconsistent."""

    error_code = "invalid_configuration"


class UnstableConfigurationError(SimulationError):
    """A static stiffness matrix has a non-positive eigenvalue."""

    error_code = "unstable_configuration"


class IntegrationError(SimulationError):
    """The equations of motion could not be integrated to tolerance."""

    error_code = "integration_failed"


class SymplecticDefectError(SimulationError):
    """A propagator violates S^T J S = J beyond tolerance."""

    error_code = "symplectic_defect"


class RootFindingError(SimulationError):
    """A bracketed root solve had no sign change or did not converge."""

    error_code = "root_not_found"


class EquilibriumError(SimulationError):
    """The ion chain has no stable linear equilibrium."""

    error_code = "equilibrium_failed"


class DomainError(SimulationError):
    """A field was evaluated outside the cavity or outside a tabulated range."""

    error_code = "outside_domain"


class QuadratureError(SimulationError):
    """An integral did not converge."""

    error_code = "quadrature_failed"


class IllConditionedError(SimulationError):
    """Sideband samples cannot resolve the requested Rabi frequencies."""

    error_code = "ill_conditioned"


class TruncationError(SimulationError):
    """Fock truncation leaves more probability mass than allowed."""

    error_code = "truncation_too_small"
