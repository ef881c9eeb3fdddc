"""Tests for the spectral service."""

import math

import numpy as np
import pytest
from scipy import special
from scipy.integrate import trapezoid

from app.models import CircuitParams
from app.services.circuit import build_hamiltonian, effective_junction, sin_phi_operator
from app.services.errors import (
    ConvergenceError,
    DegenerateGapError,
    DegenerateInputError,
    EigensolverError,
)
from app.services.spectral import (
    convergence_check,
    cooper_pair_box_spectrum,
    eigensystem,
    flux_sweep,
    harmonic_well,
    localize_qubit_basis,
    ng_sweep,
    phase_gauge,
    phase_wavefunction,
    qubit_splitting,
    spectrum_at,
    splitting_approx,
)


# =============================================================================
# Eigensystems
# =============================================================================

class TestEigensystem:
    """Tests for the checked dense eigensolver."""

    def test_lowest_levels_ascending_and_orthonormal(self, paper_params):
        """Test that eigenpairs come back sorted with orthonormal columns."""
        hamiltonian = build_hamiltonian(paper_params, 2.0)
        result = eigensystem(hamiltonian, 6)
        assert result.k_kept == 6
        assert np.all(np.diff(result.energies) >= 0)
        overlap = result.states.conj().T @ result.states
        assert np.allclose(overlap, np.eye(6), atol=1e-10)
        residual = hamiltonian @ result.states - result.states * result.energies
        assert np.abs(residual).max() < 1e-8 * np.linalg.norm(hamiltonian)

    def test_invalid_level_count(self, paper_params):
        """Test that k outside [1, dim] is rejected."""
        hamiltonian = build_hamiltonian(paper_params, 0.0)
        with pytest.raises(ValueError):
            eigensystem(hamiltonian, 0)
        with pytest.raises(ValueError):
            eigensystem(hamiltonian, paper_params.dim + 1)

    def test_failed_residual_check_raises(self, paper_params, monkeypatch):
        """Test that a failing residual check raises EigensolverError naming the point."""
        monkeypatch.setattr("app.services.spectral.settings.RESIDUAL_TOL", -1.0)
        with pytest.raises(EigensolverError) as exc_info:
            spectrum_at(paper_params, 1.5, 3)
        assert "flux=1.5" in str(exc_info.value)

    def test_matches_reference_solver_on_random_matrix(self):
        """Test a random 6x6 Hermitian matrix against numpy's eigvalsh."""
        rng = np.random.default_rng(3)
        a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        hamiltonian = (a + a.conj().T) / 2
        result = eigensystem(hamiltonian, 6)
        assert np.allclose(result.energies, np.linalg.eigvalsh(hamiltonian), atol=1e-10)
        assert np.allclose(hamiltonian @ result.states, result.states * result.energies, atol=1e-10)

    def test_variational_in_cutoff(self):
        """Test that enlarging the charge basis never raises a level."""
        small = CircuitParams.reference_device(n_cut=6)
        large = small.replace(n_cut=7)
        for flux in (0.0, 1.0, math.pi):
            e_small = spectrum_at(small, flux, 6).energies
            e_large = spectrum_at(large, flux, 6).energies
            assert np.all(e_large <= e_small + 1e-9)


# =============================================================================
# Sweeps
# =============================================================================

class TestSweeps:
    """Tests for flux and offset-charge sweeps."""

    def test_full_period_flux_sweep(self):
        """Test a 401-point sweep over one period at the default cutoff."""
        params = CircuitParams.reference_device()
        grid = np.linspace(0, 2 * math.pi, 401)
        sweep = flux_sweep(params, grid, 6, threads=2)
        assert sweep.energies.shape == (401, 6)
        assert np.all(sweep.energies[:, 0] == 0)
        assert np.all(np.diff(sweep.energies, axis=1) >= -1e-9)
        assert sweep.ground_energies.shape == (401,)
        # 2π periodicity
        assert np.allclose(sweep.energies[0], sweep.energies[-1], atol=1e-6)

    def test_sweep_order_independent_of_threads(self, paper_params):
        """Test that results come back in grid order whatever the pool size."""
        grid = np.linspace(0.5, 2.5, 9)
        serial = flux_sweep(paper_params, grid, 4, threads=1)
        pooled = flux_sweep(paper_params, grid, 4, threads=4)
        assert np.allclose(serial.absolute_energies, pooled.absolute_energies, rtol=0, atol=1e-9)

    def test_non_monotone_grid_rejected(self, paper_params):
        """Test that unsorted grids are degenerate input."""
        with pytest.raises(DegenerateInputError):
            flux_sweep(paper_params, [0.0, 1.0, 0.5], 4)
        with pytest.raises(DegenerateInputError):
            flux_sweep(paper_params, [], 4)

    def test_ng_sweep(self, paper_params):
        """Test an offset-charge sweep is periodic in n_g."""
        sweep = ng_sweep(paper_params, math.pi, np.linspace(-0.5, 0.5, 11), 4, threads=1)
        assert sweep.variable == "ng"
        assert sweep.energies.shape == (11, 4)
        assert np.allclose(sweep.energies[0], sweep.energies[-1], atol=1e-6)


# =============================================================================
# Qubit splitting
# =============================================================================

class TestSplitting:
    """Tests for the ground-doublet splitting and its estimate."""

    def test_reference_device_matches_estimate(self, paper_params):
        """Test that the exact splitting at half flux is within 15% of the estimate."""
        exact = qubit_splitting(paper_params, math.pi)
        approx = splitting_approx(paper_params, math.pi)
        assert exact > 0
        assert abs(exact - approx) / exact < 0.15

    def test_symmetric_about_half_flux(self, paper_params):
        """Test that E_q(π + x) = E_q(π - x)."""
        for x in (0.05, 0.2, 0.4):
            assert qubit_splitting(paper_params, math.pi + x) == pytest.approx(
                qubit_splitting(paper_params, math.pi - x), rel=1e-8
            )

    def test_flat_near_half_flux(self, paper_params):
        """Test that the splitting varies by less than 10% on [0.9π, 1.1π]."""
        center = qubit_splitting(paper_params, math.pi)
        for flux in np.linspace(0.9 * math.pi, 1.1 * math.pi, 7):
            assert abs(qubit_splitting(paper_params, flux) - center) / center < 0.1

    def test_grows_with_single_pair_tunneling(self, paper_params):
        """Test that stronger parasitic tunneling splits the doublet further."""
        values = [qubit_splitting(paper_params.replace(ej1_sum=v), math.pi) for v in (300, 600, 1200)]
        assert values[0] < values[1] < values[2]

    def test_ideal_limit_splitting_shrinks_with_pair_tunneling(self, paper_params):
        """Test that without parasitic tunneling the splitting falls as E_J2/E_C grows."""
        ideal = paper_params.replace(ej1_sum=0.0)
        weak = qubit_splitting(ideal, math.pi)
        strong = qubit_splitting(ideal.replace(ej2_sum=8000.0), math.pi)
        assert 0 < strong < weak

    def test_sweet_spot_slope_vanishes(self, paper_params):
        """Test that dE_q/dΦ at half flux is zero to finite-difference accuracy."""
        h = 1e-3
        slope = (qubit_splitting(paper_params, math.pi + h) - qubit_splitting(paper_params, math.pi - h)) / (2 * h)
        assert abs(slope) < 1e-4 * qubit_splitting(paper_params, math.pi)

    def test_estimate_tracks_exact_near_half_flux(self, paper_params):
        """Test that the estimate stays within 30% of the exact splitting on [0.9π, 1.1π]."""
        for flux in np.linspace(0.9 * math.pi, 1.1 * math.pi, 7):
            exact = qubit_splitting(paper_params, flux)
            assert abs(exact - splitting_approx(paper_params, flux)) / exact < 0.3

    def test_estimate_needs_pair_tunneling(self):
        """Test that the estimate refuses a vanishing E_J2(Φ)."""
        params = CircuitParams(ej1_sum=600, ej2_sum=6000, d1=0.05, d2=0.0, ec=200, n_cut=10)
        with pytest.raises(DegenerateInputError):
            splitting_approx(params, math.pi / 2)


# =============================================================================
# Harmonic well and reference spectra
# =============================================================================

def test_harmonic_ground_energy():
    """Test the pure pair-tunneling ground energy against the harmonic estimate."""
    params = CircuitParams(ej1_sum=0.0, ej2_sum=6000.0, d1=0.0, d2=0.0, ec=200.0, n_cut=15)
    well = harmonic_well(params, 0.0)
    ground = spectrum_at(params, 0.0, 1).energies[0]
    assert abs(ground - well.ground_energy) / abs(well.ground_energy) < 0.05
    assert well.phase_variance == pytest.approx(math.sqrt(200 / 12000))
    assert well.cos_expectation == pytest.approx(math.exp(-math.sqrt(200 / 48000)))
    assert well.plasma_frequency == pytest.approx(2 * math.sqrt(8 * 200 * 6000))


def test_harmonic_well_needs_pair_tunneling():
    """Test that no well exists where E_J2(Φ) vanishes."""
    params = CircuitParams(ej1_sum=600, ej2_sum=6000, d2=0.0, ec=200, n_cut=10)
    with pytest.raises(DegenerateInputError):
        harmonic_well(params, math.pi / 2)


def test_cooper_pair_box_reference():
    """Test that with d2 = 0 the quarter-period spectrum is the charge-qubit spectrum."""
    params = CircuitParams(ej1_sum=600, ej2_sum=6000, d1=0.05, d2=0.0, ec=200, n_cut=15)
    full = spectrum_at(params, math.pi / 2, 4).energies
    reference = cooper_pair_box_spectrum(params, 4).energies
    assert np.allclose(full, reference, atol=1e-8)


@pytest.mark.parametrize("ng, orders", [
    (0.0, [("a", 0), ("b", 2), ("a", 2), ("b", 4), ("a", 4), ("b", 6)]),
    (0.5, [("a", 1), ("b", 1), ("a", 3), ("b", 3), ("a", 5), ("b", 5)]),
])
def test_cooper_pair_box_matches_mathieu_values(ng, orders):
    """Test the charge-qubit spectrum against Mathieu characteristic values."""
    params = CircuitParams(ej1_sum=600, ej2_sum=6000, d1=0.05, d2=0.0, ec=200, ng=ng, n_cut=15)
    q = abs(effective_junction(params, math.pi / 2).ej1) / (2 * params.ec)
    characteristic = {"a": special.mathieu_a, "b": special.mathieu_b}
    reference = sorted(params.ec * characteristic[kind](order, q) for kind, order in orders)[:4]
    energies = cooper_pair_box_spectrum(params, 4).energies
    assert np.allclose(energies, reference, rtol=1e-6, atol=1e-6)


def test_ideal_charge_qubit_at_quarter_flux():
    """Test that with d1 = d2 = 0 the quarter-period spectrum is a charge qubit with E_J = E_J1Σ/√2."""
    params = CircuitParams(ej1_sum=600, ej2_sum=6000, d1=0.0, d2=0.0, ec=200, n_cut=15)
    assert abs(effective_junction(params, math.pi / 2).ej1) == pytest.approx(600 / math.sqrt(2))
    q = 600 / math.sqrt(2) / (2 * params.ec)
    reference = sorted(params.ec * v for v in (
        special.mathieu_a(0, q), special.mathieu_b(2, q), special.mathieu_a(2, q),
        special.mathieu_b(4, q), special.mathieu_a(4, q),
    ))[:4]
    assert np.allclose(spectrum_at(params, math.pi / 2, 4).energies, reference, rtol=1e-6, atol=1e-6)


# =============================================================================
# Logical basis
# =============================================================================

class TestQubitBasis:
    """Tests for the localised logical states."""

    def test_reference_device_wells(self, paper_params):
        """Test that the two lowest states sit in opposite wells."""
        basis = localize_qubit_basis(paper_params)
        assert basis.well_labels == ("+pi/2", "-pi/2")
        assert basis.sin_phi[0] > 0.5
        assert basis.sin_phi[1] < -0.5
        assert not basis.rotated
        assert np.allclose(basis.matrix.conj().T @ basis.matrix, np.eye(2), atol=1e-10)

    def test_phase_gauge_applied(self, paper_params):
        """Test that each basis state has its largest component real and positive."""
        basis = localize_qubit_basis(paper_params)
        for state in (basis.psi0, basis.psi1):
            pivot = state[np.argmax(np.abs(state))]
            assert pivot.real > 0
            assert abs(pivot.imag) < 1e-12

    def test_parity_doublet_is_rotated(self, paper_params):
        """Test that without parasitic tunneling the parity states are rotated into wells."""
        basis = localize_qubit_basis(paper_params.replace(ej1_sum=0.0))
        assert basis.rotated
        assert basis.well_labels == ("+pi/2", "-pi/2")
        assert basis.sin_phi[0] == pytest.approx(-basis.sin_phi[1], abs=1e-6)
        sin_phi = sin_phi_operator(paper_params.n_cut)
        assert abs(np.vdot(basis.psi0, sin_phi @ basis.psi1)) < 1e-8

    def test_gap_floor(self, paper_params, monkeypatch):
        """Test that a doublet not separated from level 2 is rejected."""
        monkeypatch.setattr("app.services.spectral.settings.GAP_FLOOR_MHZ", 1e9)
        with pytest.raises(DegenerateGapError):
            localize_qubit_basis(paper_params)


def test_localisation_repeats_exactly(paper_params):
    """Test that building the logical basis twice gives the same states."""
    first = localize_qubit_basis(paper_params)
    again = localize_qubit_basis(paper_params)
    assert np.allclose(first.matrix, again.matrix, atol=1e-12)
    assert first.well_labels == again.well_labels


def test_phase_gauge_is_idempotent():
    """Test that re-gauging a gauged state changes nothing."""
    rng = np.random.default_rng(7)
    state = rng.normal(size=9) + 1j * rng.normal(size=9)
    gauged = phase_gauge(state)
    assert np.allclose(phase_gauge(gauged), gauged)
    assert np.allclose(np.abs(gauged), np.abs(state))


def test_phase_wavefunction_normalised(paper_params):
    """Test that ψ(φ) integrates to one over a period."""
    state = spectrum_at(paper_params, math.pi, 1).states[:, 0]
    phi = np.linspace(-math.pi, math.pi, 4001)
    density = np.abs(phase_wavefunction(state, phi)) ** 2
    assert trapezoid(density, phi) == pytest.approx(1.0, abs=1e-6)


# =============================================================================
# Truncation
# =============================================================================

def test_convergence_check(paper_params):
    """Test that the reference device converges well inside the default cutoff."""
    report = convergence_check(paper_params, math.pi, 1e-8)
    assert 4 <= report.n_star <= 30
    assert report.history[-1] == (report.n_star, report.history[-1][1])
    assert report.history[-1][1] < 1e-8


def test_convergence_check_fails_past_limit(paper_params, monkeypatch):
    """Test that an unreachable tolerance raises ConvergenceError."""
    monkeypatch.setattr("app.services.spectral.settings.MAX_N_CUT", 12)
    with pytest.raises(ConvergenceError):
        convergence_check(paper_params, math.pi, 0.0)


def test_convergence_tightens_with_tolerance(paper_params):
    """Test that a tighter tolerance never needs a smaller cutoff."""
    loose = convergence_check(paper_params, math.pi, 1e-4)
    tight = convergence_check(paper_params, math.pi, 1e-10)
    assert loose.n_star <= tight.n_star
    assert tight.history[-1][1] < tight.history[0][1]


def test_free_charging_converges_at_first_cutoff():
    """Test that without tunneling the charge states are exact from the first cutoff."""
    params = CircuitParams(ej1_sum=0.0, ej2_sum=0.0, d1=0.0, d2=0.0, ec=200.0, n_cut=10)
    report = convergence_check(params, math.pi, 1e-12, levels=6)
    assert report.n_star == 4
    assert len(report.history) == 1
    assert report.history[0][1] < 1e-12
