"""Tests for Berry curvature and loop phases."""

import math

import numpy as np
import pytest

from app.models import RectangleSpec
from app.services.circuit import (
    build_hamiltonian_unshifted,
    charge_numbers,
    d_effective_junction,
    d_hamiltonian_d_flux,
    d_hamiltonian_d_ng,
    d_hamiltonian_unshifted_d_flux,
    effective_junction,
)
from app.services.errors import DegenerateGapError, DegenerateInputError, QuadratureError
from app.services.holonomy import (
    RectanglePath,
    area_integral,
    berry_curvature,
    curvature_from_eigensystem,
    curvature_grid,
    intermediate_levels,
    loop_phase_curvature,
    loop_phase_wilson,
    total_curvature,
    wilson_phase,
)
from app.services.spectral import eigensystem, spectrum_at

PI = math.pi


@pytest.fixture
def toy_loop():
    return RectanglePath(flux_min=2.8, flux_max=3.5, ng_min=0.05, ng_max=0.3)


def phase_difference(a: float, b: float) -> float:
    return abs(math.remainder(a - b, 2 * PI))


# =============================================================================
# Curvature
# =============================================================================

class TestCurvature:
    """Tests for the pointwise curvature."""

    def test_antisymmetric_in_levels(self, toy_params):
        """Test that B_kl = -B_lk."""
        for k, l in [(0, 1), (1, 2), (0, 3)]:
            assert berry_curvature(toy_params, 2.9, 0.2, k, l) == pytest.approx(
                -berry_curvature(toy_params, 2.9, 0.2, l, k), abs=1e-12
            )

    def test_gauge_invariant(self, toy_params):
        """Test that rephasing eigenvectors leaves B_kl unchanged."""
        point = toy_params.replace(ng=0.2)
        junction = effective_junction(point, 2.9)
        result = spectrum_at(point, 2.9, 4, junction)
        d_flux = d_hamiltonian_d_flux(point, 2.9, junction)
        d_ng = d_hamiltonian_d_ng(point)
        phases = np.exp(1j * np.random.default_rng(11).uniform(0, 2 * PI, 4))
        original = curvature_from_eigensystem(result.energies, result.states, d_flux, d_ng, 0, 1)
        twirled = curvature_from_eigensystem(result.energies, result.states * phases, d_flux, d_ng, 0, 1)
        assert twirled == pytest.approx(original, abs=1e-12)
        assert original != 0

    def test_sum_over_all_levels_vanishes(self, toy_params):
        """Test that Σ_k Σ_l B_kl = 0 when every level is kept."""
        top = toy_params.dim - 1
        totals = [total_curvature(toy_params, 2.9, 0.2, k, l_max=top).total for k in range(toy_params.dim)]
        assert abs(sum(totals)) < 1e-9 * max(abs(t) for t in totals)

    def test_no_parasitic_tunneling_no_curvature(self, paper_params):
        """Test that B_01 vanishes when only pairs tunnel."""
        ideal = paper_params.replace(ej1_sum=0.0)
        assert abs(berry_curvature(ideal, 2.0, 0.25, 0, 1)) < 1e-10

    def test_degenerate_doublet_rejected(self, paper_params):
        """Test that the parity doublet at n_g = 1/2 is a degenerate gap."""
        ideal = paper_params.replace(ej1_sum=0.0)
        with pytest.raises(DegenerateGapError) as exc_info:
            berry_curvature(ideal, PI, 0.5, 0, 1)
        assert "ng=0.5" in str(exc_info.value)

    def test_same_level_rejected(self, toy_params):
        """Test that B_kk is not a curvature."""
        with pytest.raises(DegenerateInputError):
            berry_curvature(toy_params, 2.9, 0.2, 1, 1)

    @pytest.mark.parametrize("form", ["shifted", "unshifted"])
    def test_even_in_flux_and_offset_charge(self, toy_params, form):
        """Test that B(Φ, n_g) = B(-Φ, n_g) = B(Φ, -n_g)."""
        for k, l in [(0, 1), (1, 2)]:
            value = berry_curvature(toy_params, 2.3, 0.2, k, l, form)
            assert berry_curvature(toy_params, -2.3, 0.2, k, l, form) == pytest.approx(value, rel=1e-8, abs=1e-12)
            assert berry_curvature(toy_params, 2.3, -0.2, k, l, form) == pytest.approx(value, rel=1e-8, abs=1e-12)
            assert value != 0

    def test_shifted_form_flat_at_zero_flux(self, paper_params):
        """Test that B_12 vanishes on Φ = 0 when d1 = d2, since H and dH/dΦ are real there."""
        for ng in (0.1, 0.3, 0.45):
            assert berry_curvature(paper_params, 0.0, ng, 1, 2) == pytest.approx(0.0, abs=1e-9)

    def test_unknown_form_rejected(self, toy_params):
        """Test that only the two Hamiltonian forms are accepted."""
        with pytest.raises(DegenerateInputError):
            berry_curvature(toy_params, 2.9, 0.2, 0, 1, "rotated")


class TestUnshiftedForm:
    """Tests for curvature of the unshifted Hamiltonian."""

    def test_flux_derivative_finite_difference(self, toy_params):
        """Test the analytic dH/dΦ of the unshifted form against central differences."""
        step = 1e-6
        for flux in (0.4, 2.9, -1.7):
            numeric = (
                build_hamiltonian_unshifted(toy_params, flux + step)
                - build_hamiltonian_unshifted(toy_params, flux - step)
            ) / (2 * step)
            assert np.allclose(d_hamiltonian_unshifted_d_flux(toy_params, flux), numeric, atol=1e-7)

    def test_forms_differ_by_shift_connection(self, toy_params):
        """Test that Σ_l B_kl changes by -(dφ2/dΦ / 2) d<n>_k/dn_g between forms."""
        flux, ng, step = 2.9, 0.2, 1e-4
        top = toy_params.dim - 1
        rate = d_effective_junction(toy_params, flux).dphi2
        for k in range(3):
            shifted = total_curvature(toy_params, flux, ng, k, l_max=top).total
            unshifted = total_curvature(toy_params, flux, ng, k, l_max=top, form="unshifted").total

            def mean_charge(offset: float) -> float:
                point = toy_params.replace(ng=offset)
                state = eigensystem(build_hamiltonian_unshifted(point, flux), k + 1).states[:, k]
                return float(np.sum(charge_numbers(toy_params.n_cut) * np.abs(state) ** 2))

            slope = (mean_charge(ng + step) - mean_charge(ng - step)) / (2 * step)
            assert unshifted - shifted == pytest.approx(-0.5 * rate * slope, rel=1e-5, abs=1e-8)

    def test_ideal_device_curvature(self, paper_params):
        """Test that only the unshifted form carries curvature when E_J1 = 0."""
        ideal = paper_params.replace(ej1_sum=0.0)
        top = ideal.dim - 1
        assert total_curvature(ideal, 1.2, 0.25, 0, l_max=top).total == pytest.approx(0.0, abs=1e-12)
        assert abs(total_curvature(ideal, 1.2, 0.25, 0, l_max=top, form="unshifted").total) > 1e-2
        assert berry_curvature(ideal, 1.2, 0.25, 0, 1, "unshifted") == pytest.approx(0.0, abs=1e-10)


def test_intermediate_levels(paper_params, toy_params):
    """Test the default and clipped intermediate level ranges."""
    assert intermediate_levels(paper_params, 1) == [0, 2, 3, 4, 5, 6, 7, 8]
    assert intermediate_levels(toy_params, 0, l_max=100) == list(range(1, toy_params.dim))
    assert intermediate_levels(toy_params, 3, l_max=1) == [0, 1, 2, 4]


def test_total_curvature_truncation_estimate(toy_params):
    """Test that the tail estimate is the last level's contribution."""
    result = total_curvature(toy_params, 2.9, 0.2, 0, l_max=4)
    assert sorted(result.by_level) == [1, 2, 3, 4]
    assert result.truncation_estimate == pytest.approx(abs(result.by_level[4]))
    assert result.total == pytest.approx(sum(result.by_level.values()))


def test_curvature_grid_flags_degeneracies(paper_params):
    """Test that degenerate points are flagged instead of failing the grid."""
    ideal = paper_params.replace(ej1_sum=0.0)
    grid = curvature_grid(ideal, [2.5, 3.0], [0.25, 0.5], 0, 1, threads=1)
    assert grid.values.shape == (2, 2)
    assert grid.flagged[:, 1].all()
    assert not grid.flagged[:, 0].any()
    assert np.isnan(grid.values[:, 1]).all()


def test_logical_curvature_sits_near_half_charge(paper_params):
    """Test that B_01 peaks on n_g = 1/2 and is at least five times weaker on n_g = 0."""
    fluxes = np.linspace(-PI, PI, 9)
    grid = curvature_grid(paper_params, fluxes, [0.0, 0.25, 0.5], 0, 1, threads=1)
    assert not grid.flagged.any()
    _, peak_ng, peak_value = grid.peak
    assert peak_ng == 0.5
    assert np.abs(grid.values[:, 0]).max() < abs(peak_value) / 5


def test_curvature_grid_peak(toy_params):
    """Test that the reported peak is the largest sampled magnitude."""
    fluxes = np.linspace(2.6, 3.6, 5)
    ngs = np.linspace(0.0, 0.4, 5)
    grid = curvature_grid(toy_params, fluxes, ngs, 0, 1, threads=1)
    flux, ng, value = grid.peak
    assert abs(value) == pytest.approx(np.abs(grid.values).max())
    assert flux in fluxes and ng in ngs
    width_flux, width_ng = grid.peak_width
    assert 0 <= width_flux <= 1.0 and 0 <= width_ng <= 0.4


# =============================================================================
# Paths
# =============================================================================

class TestRectanglePath:
    """Tests for loop geometry."""

    def test_vertices_closed(self, toy_loop):
        """Test that the corner list repeats its first corner."""
        corners = toy_loop.vertices()
        assert len(corners) == 5
        assert corners[0] == corners[-1]
        assert corners[1] == (3.5, 0.05)

    def test_clockwise_reverses(self, toy_loop):
        """Test that a clockwise loop visits the corners in reverse."""
        clockwise = RectanglePath(2.8, 3.5, 0.05, 0.3, clockwise=True)
        assert clockwise.vertices() == toy_loop.vertices()[::-1]
        assert clockwise.orientation == -1

    def test_discretize(self, toy_loop):
        """Test that each edge gets n_steps / 4 points."""
        points = toy_loop.discretize(40)
        assert len(points) == 40
        assert points[0] == (2.8, 0.05)
        assert points[10] == pytest.approx((3.5, 0.05))

    def test_bad_bounds(self):
        """Test that inverted bounds are rejected."""
        with pytest.raises(DegenerateInputError):
            RectanglePath(1.0, 0.5, 0.0, 0.1)

    def test_from_spec(self):
        """Test conversion from a config section in units of π."""
        spec = RectangleSpec(flux_min=-0.45, flux_max=0.45, ng_min=0.05, ng_max=0.95, in_units_of_pi=True)
        path = RectanglePath.from_spec(spec)
        assert path.flux_min == pytest.approx(-0.45 * PI)
        assert path.area == pytest.approx(0.9 * PI * 0.9)


# =============================================================================
# Loop phases
# =============================================================================

class TestLoopPhases:
    """Tests for area integrals and Wilson loops."""

    def test_zero_area_loop(self, toy_params):
        """Test that a degenerate rectangle encloses no phase."""
        line = RectanglePath(2.8, 2.8, 0.05, 0.3)
        assert loop_phase_curvature(toy_params, line, 0).omega_total == 0.0
        assert loop_phase_wilson(toy_params, line, 0, n_steps=40).omega_total == 0.0

    def test_area_integral_is_additive(self, toy_params):
        """Test that splitting a rectangle in two splits the integral."""
        whole = RectanglePath(2.8, 3.4, 0.05, 0.3)
        left = RectanglePath(2.8, 3.1, 0.05, 0.3)
        right = RectanglePath(3.1, 3.4, 0.05, 0.3)
        union, _ = area_integral(toy_params, whole, 0, flux_cells=16, ng_cells=8, threads=1)
        first, _ = area_integral(toy_params, left, 0, flux_cells=8, ng_cells=8, threads=1)
        second, _ = area_integral(toy_params, right, 0, flux_cells=8, ng_cells=8, threads=1)
        assert sum(union.values()) == pytest.approx(
            sum(first.values()) + sum(second.values()), abs=1e-10
        )

    def test_wilson_matches_curvature(self, toy_params, toy_loop):
        """Test that both loop-phase methods agree when every level is kept."""
        curvature = loop_phase_curvature(toy_params, toy_loop, 0, l_max=toy_params.dim - 1, threads=1)
        wilson = loop_phase_wilson(toy_params, toy_loop, 0, n_steps=800, threads=1)
        assert phase_difference(curvature.omega_total, wilson.omega_total) < 1e-3
        assert curvature.min_gap_on_path > 0
        assert wilson.resolution == 800

    def test_wilson_matches_curvature_on_reference_loop(self, paper_params):
        """Test both methods on the bundled loop at E_J1Σ = 120 MHz."""
        spec = RectangleSpec(flux_min=-0.45, flux_max=0.45, ng_min=0.05, ng_max=0.95, in_units_of_pi=True)
        path = RectanglePath.from_spec(spec)
        device = paper_params.replace(ej1_sum=120.0)
        curvature = loop_phase_curvature(device, path, 1, threads=1)
        wilson = loop_phase_wilson(device, path, 1, threads=1)
        assert phase_difference(curvature.omega_total, wilson.omega_total) < 1e-3

    def test_logical_pair_phase_fades_with_single_pair_tunneling(self, paper_params):
        """Test that the (0, 1) share of Ω_1 falls off as E_J1Σ goes to zero, away from n_g = 1/2."""
        path = RectanglePath(-0.45 * PI, 0.45 * PI, 0.05, 0.3)

        def logical_share(ej1: float) -> float:
            by_level, _ = area_integral(
                paper_params.replace(ej1_sum=ej1), path, 1, l_max=4, flux_cells=8, ng_cells=8, threads=1
            )
            return by_level[0]

        assert logical_share(0.0) == pytest.approx(0.0, abs=1e-12)
        assert abs(logical_share(0.01)) <= 0.05 * abs(logical_share(0.1))

    def test_wilson_converges_in_steps(self, toy_params, toy_loop):
        """Test that doubling the boundary points barely moves the Wilson phase."""
        coarse = loop_phase_wilson(toy_params, toy_loop, 0, n_steps=400, threads=1)
        fine = loop_phase_wilson(toy_params, toy_loop, 0, n_steps=800, threads=1)
        assert phase_difference(coarse.omega_total, fine.omega_total) < 1e-3

    def test_orientation_flips_sign(self, toy_params):
        """Test that a clockwise loop collects the opposite phase."""
        forward = RectanglePath(2.8, 3.5, 0.05, 0.3)
        backward = RectanglePath(2.8, 3.5, 0.05, 0.3, clockwise=True)
        ccw, _ = area_integral(toy_params, forward, 0, flux_cells=8, ng_cells=8, threads=1)
        cw, _ = area_integral(toy_params, backward, 0, flux_cells=8, ng_cells=8, threads=1)
        assert sum(cw.values()) == pytest.approx(-sum(ccw.values()), abs=1e-12)

        wilson_ccw = loop_phase_wilson(toy_params, forward, 0, n_steps=200, threads=1).omega_total
        wilson_cw = loop_phase_wilson(toy_params, backward, 0, n_steps=200, threads=1).omega_total
        assert phase_difference(wilson_cw, -wilson_ccw) < 1e-8

    def test_quadrature_gives_up(self, toy_params, toy_loop, monkeypatch):
        """Test that a refinement limit below the first doubling raises QuadratureError."""
        monkeypatch.setattr("app.services.holonomy.settings.QUADRATURE_MAX", 16)
        with pytest.raises(QuadratureError):
            loop_phase_curvature(toy_params, toy_loop, 0, interior_resolution=16, threads=1)

    def test_loop_through_degeneracy(self, paper_params):
        """Test that a Wilson loop crossing the parity doublet fails with its location."""
        ideal = paper_params.replace(ej1_sum=0.0)
        path = RectanglePath(2.0, 3.0, 0.25, 0.5)
        with pytest.raises(DegenerateGapError) as exc_info:
            loop_phase_wilson(ideal, path, 0, n_steps=8, threads=1)
        assert "ng=0.5" in str(exc_info.value)


def test_wilson_phase_of_constant_loop():
    """Test that a loop of one repeated state has no phase."""
    state = np.array([1.0, 1j, 0.5]) / 1.5
    assert wilson_phase([state, state * np.exp(0.3j), state]) == pytest.approx(0.0, abs=1e-12)
