"""
Discretized field Hamiltonian.

This module tests:
- Grid construction and its validation
- Exact and quadrature cell averages of the wall profile
- Convergence of the static lattice spectrum toward πk/L
- Evanescent decay inside the walls and wall truncation
- A lattice cavity driven by a moving wall
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from casimir.services.discretization import (
    FieldGrid,
    FunctionWallProfile,
    StepWallProfile,
    bond_couplings,
    build_hd,
    coarse_grain,
    laplacian_stiffness,
    lattice_decay_rate,
    static_cavity_spectrum,
    truncation_sensitivity,
    wall_participation,
)
from casimir.services.dynamics import bogoliubov, normal_modes, occupations, propagate


@pytest.mark.unit
class TestFieldGrid:
    """Cell edges, centers and the padded cavity grid."""

    def test_around_cavity_padding(self):
        """Wall cells are added beyond both mirrors."""
        grid = FieldGrid.around_cavity(0.0, 1.0, 0.1, wall_cells=4)
        assert grid.n_cells == 18
        assert grid.edges[0] == pytest.approx(-0.4)
        assert grid.edges[-1] == pytest.approx(1.4)
        assert np.allclose(grid.widths, 0.1)

    def test_non_increasing_edges_rejected(self):
        """Edges must increase strictly."""
        with pytest.raises(ValueError):
            FieldGrid(edges=np.array([0.0, 0.5, 0.5, 1.0]))

    def test_too_few_cells_rejected(self):
        """H^d needs at least three cells."""
        grid = FieldGrid.uniform(0.0, 0.2, 0.1)
        with pytest.raises(ValueError, match="at least 3"):
            build_hd(StepWallProfile.static(10.0, 0.0, 0.2), grid)


@pytest.mark.unit
class TestCoarseGraining:
    """c1_i is the cell average of the wall profile."""

    def test_step_profile_partial_cells(self):
        """A mirror inside a cell contributes the blocked fraction of the strength."""
        grid = FieldGrid.uniform(-0.5, 1.5, 0.5)
        profile = StepWallProfile.static(8.0, 0.25, 1.0)
        assert np.allclose(coarse_grain(profile, grid, 0.0), [8.0, 4.0, 0.0, 8.0])

    def test_quadrature_matches_closed_form(self):
        """Adaptive quadrature with kink hints reproduces the exact cell averages."""
        grid = FieldGrid.around_cavity(0.0, 1.0, 0.07, wall_cells=3)
        left, right = 0.013, 0.981
        exact = StepWallProfile.static(50.0, left, right)
        generic = FunctionWallProfile(
            function=lambda _t, z: 0.0 if left <= z <= right else 50.0,
            kinks=lambda _t: (left, right),
        )
        quadrature = coarse_grain(generic, grid, 0.0)
        assert np.allclose(quadrature, coarse_grain(exact, grid, 0.0), atol=1e-10)

    def test_moving_wall_changes_averages(self, make_trajectory):
        """The wall cells follow the mirror during the drive."""
        traj = make_trajectory(length=1.0, delta=0.05)
        profile = StepWallProfile.from_trajectory(100.0, traj)
        grid = FieldGrid.around_cavity(0.0, 1.0, 0.1, wall_cells=2)
        before = coarse_grain(profile, grid, 0.0)
        during = coarse_grain(profile, grid, traj.protocol.t1 + 0.5 * traj.period)
        assert during[2] == pytest.approx(50.0)
        assert before[2] == 0.0
        assert np.allclose(before[3:], during[3:])

    def test_negative_strength_rejected(self):
        """Walls cannot lower the field mass."""
        with pytest.raises(ValueError):
            StepWallProfile.static(-1.0, 0.0, 1.0)


@pytest.mark.unit
class TestLatticeOperators:
    """Gradient couplings and the Laplacian stiffness."""

    def test_free_ends_keep_uniform_mode(self):
        """Without walls and with free ends the uniform field costs nothing."""
        grid = FieldGrid.uniform(0.0, 1.0, 0.1)
        stiffness = laplacian_stiffness(bond_couplings(grid, "free"), np.zeros(grid.n_cells))
        assert np.allclose(stiffness @ np.ones(grid.n_cells), 0.0)

    def test_fixed_ends_are_clamped(self):
        """Fixed ends add d⁻² to the outer diagonal entries."""
        grid = FieldGrid.uniform(0.0, 1.0, 0.25)
        stiffness = laplacian_stiffness(bond_couplings(grid, "fixed"), np.zeros(grid.n_cells))
        assert stiffness[0, 0] == pytest.approx(32.0)
        assert stiffness[0, 1] == pytest.approx(-16.0)

    def test_unknown_boundary_rejected(self):
        """Only fixed and free ends exist."""
        with pytest.raises(ValueError, match="unknown boundary"):
            bond_couplings(FieldGrid.uniform(0.0, 1.0, 0.25), "periodic")


@pytest.mark.unit
class TestStaticSpectrum:
    """The lattice cavity approaches the continuum cavity."""

    def test_lowest_frequency_converges(self):
        """Halving d roughly halves the distance of ω₁ to π/L, always from below."""
        errors = []
        for spacing in (0.1, 0.05, 0.025):
            omega = static_cavity_spectrum(1.0, spacing, wall_strength=1e6, n_modes=1)[0]
            assert omega < math.pi
            errors.append(math.pi - omega)
        assert errors[1] < 0.6 * errors[0]
        assert errors[2] < 0.6 * errors[1]

    def test_spectrum_is_nearly_equidistant(self):
        """ω_k/ω₁ ≈ k for a fine lattice with stiff walls."""
        omega = static_cavity_spectrum(1.0, 0.01, wall_strength=1e7, n_modes=3)
        assert omega[1] / omega[0] == pytest.approx(2.0, rel=2e-3)
        assert omega[2] / omega[0] == pytest.approx(3.0, rel=5e-3)

    def test_decay_inside_wall_matches_lattice_rate(self):
        """Mode amplitudes shrink by exp(−κd) per wall cell."""
        spacing, strength = 0.02, 400.0
        grid = FieldGrid.around_cavity(0.0, 1.0, spacing, wall_cells=16)
        hd = build_hd(StepWallProfile.static(strength, 0.0, 1.0), grid, time_dependent=False)
        basis = normal_modes(hd.system.stiffness_at(0.0))
        vector = basis.vectors[:, 0]
        kappa = lattice_decay_rate(strength, float(basis.frequencies[0]), spacing)
        ratio = abs(vector[14] / vector[15])
        assert ratio == pytest.approx(math.exp(-kappa * spacing), rel=1e-4)
        assert wall_participation(vector, grid, 0.0, 1.0) < 0.05

    def test_decay_rate_continuum_limit(self):
        """κ tends to √(c − ω²) for small d and vanishes above the wall gap."""
        assert lattice_decay_rate(100.0, 1.0, 1e-4) == pytest.approx(math.sqrt(99.0), rel=1e-6)
        assert lattice_decay_rate(1.0, 2.0, 0.1) == 0.0

    def test_truncation_sensitivity_shrinks_with_wall_strength(self):
        """Doubling the walls matters for soft walls and not for stiff ones."""
        soft = truncation_sensitivity(1.0, 0.05, wall_strength=100.0)
        stiff = truncation_sensitivity(1.0, 0.05, wall_strength=1e6)
        assert soft > 1e-8
        assert stiff < 1e-10


@pytest.mark.integration
@pytest.mark.slow
class TestDrivenLattice:
    """H^d with a moving wall produces excitations."""

    def test_moving_wall_excites_lowest_mode(self, make_trajectory):
        """Driving at twice the lattice ω₁ populates mode 1 while staying canonical."""
        spacing, strength = 0.1, 400.0
        omega1 = static_cavity_spectrum(1.0, spacing, strength, n_modes=1, wall_cells=4)[0]
        traj = make_trajectory(length=1.0, delta=0.05, omega_d=2.0 * omega1, periods=3)
        grid = FieldGrid.around_cavity(0.0, 1.0, spacing, wall_cells=4)
        hd = build_hd(StepWallProfile.from_trajectory(strength, traj), grid, protocol=traj.protocol)
        protocol = traj.protocol
        propagator = propagate(hd.system, protocol.t0, protocol.t2)
        basis_in = normal_modes(hd.system.stiffness_at(protocol.t0))
        basis_out = normal_modes(hd.system.stiffness_at(protocol.t2))
        mapping = bogoliubov(propagator, basis_in, basis_out)
        assert mapping.identity_defect() < 1e-6
        n = occupations(mapping)
        assert n[0] > 1e-5
        assert np.all(n >= -1e-10)
