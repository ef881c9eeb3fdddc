"""Spectral service - eigensystems, sweeps, qubit splitting and the logical basis.

All energies are E/h in MHz. Sweeps diagonalise every bias point
independently and keep levels in energy order.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from app.models import CircuitParams
from app.services.circuit import (
    EffectiveJunction,
    HermitianOperator,
    build_hamiltonian,
    charge_numbers,
    effective_junction,
    sin_phi_operator,
)
from app.services.errors import (
    ConvergenceError,
    DegenerateGapError,
    DegenerateInputError,
    EigensolverError,
)
from app.services.workers import parallel_map
from app.settings import settings

logger = logging.getLogger(__name__)


@dataclass
class SpectrumResult:
    """Lowest eigenpairs at one bias point."""
    flux: float
    ng: float
    energies: np.ndarray  # ascending, MHz
    states: np.ndarray  # columns are eigenvectors in the charge basis
    k_kept: int


@dataclass
class SpectrumSweep:
    """Spectra over a flux or offset-charge grid."""
    variable: str  # "flux" or "ng"
    grid: np.ndarray
    results: list[SpectrumResult]
    params: CircuitParams

    @property
    def absolute_energies(self) -> np.ndarray:
        return np.array([r.energies for r in self.results])

    @property
    def ground_energies(self) -> np.ndarray:
        return self.absolute_energies[:, 0]

    @property
    def energies(self) -> np.ndarray:
        """Energies with the pointwise ground energy E0 subtracted."""
        absolute = self.absolute_energies
        return absolute - absolute[:, :1]


@dataclass
class QubitBasis:
    """Phase-fixed logical states at the anchor flux."""
    psi0: np.ndarray
    psi1: np.ndarray
    anchor_flux: float
    well_labels: tuple[str, str]
    sin_phi: tuple[float, float]  # <ψ|sin φ|ψ> for psi0, psi1
    energies: tuple[float, float]  # <ψ|H|ψ> at the anchor
    rotated: bool = False  # True when the degenerate-doublet fallback was used

    @property
    def matrix(self) -> np.ndarray:
        """Charge-basis matrix with psi0 and psi1 as columns."""
        return np.column_stack([self.psi0, self.psi1])


@dataclass
class HarmonicWell:
    """Harmonic approximation around one well of the cos 2φ term."""
    flux: float
    ej2_abs: float
    phase_variance: float  # <δφ^2>
    cos_expectation: float  # <cos δφ>
    plasma_frequency: float
    ground_energy: float  # including the first-order quartic correction


@dataclass
class ConvergenceReport:
    """Result of a charge-cutoff convergence scan."""
    n_star: int
    tol: float
    levels: int
    history: list[tuple[int, float]] = field(default_factory=list)  # (n_cut, relative change)


# =============================================================================
# Eigensystems
# =============================================================================

def eigensystem(
    hamiltonian: HermitianOperator,
    k: int,
    flux: float = math.nan,
    ng: float = math.nan,
) -> SpectrumResult:
    """
    Lowest k eigenpairs of a dense Hermitian matrix.

    Args:
        hamiltonian: Hermitian matrix in MHz
        k: Number of levels to keep, 1 <= k <= dim
        flux: Bias point, reported in errors and results
        ng: Bias point, reported in errors and results

    Returns:
        SpectrumResult with ascending energies and orthonormal columns

    Raises:
        EigensolverError: If LAPACK fails or the residual/orthonormality
            checks do not pass
    """
    dim = hamiltonian.shape[0]
    if not 1 <= k <= dim:
        raise ValueError(f"k must be in [1, {dim}], got {k}")

    try:
        energies, states = linalg.eigh(hamiltonian, subset_by_index=[0, k - 1])
    except (linalg.LinAlgError, ValueError) as e:
        raise EigensolverError(f"Eigensolver failed at flux={flux:.6g}, ng={ng:.6g}: {e}")

    scale = np.linalg.norm(hamiltonian)
    residual = np.linalg.norm(hamiltonian @ states - states * energies, axis=0).max()
    if residual > settings.RESIDUAL_TOL * max(scale, 1.0):
        raise EigensolverError(
            f"Eigen-residual {residual:.3e} too large at flux={flux:.6g}, ng={ng:.6g}"
        )
    overlap = np.abs(states.conj().T @ states - np.eye(k)).max()
    if overlap > settings.ORTHONORMALITY_TOL:
        raise EigensolverError(
            f"Eigenvectors not orthonormal ({overlap:.3e}) at flux={flux:.6g}, ng={ng:.6g}"
        )

    return SpectrumResult(flux=flux, ng=ng, energies=energies, states=states, k_kept=k)


def spectrum_at(
    params: CircuitParams,
    flux: float,
    k: int,
    junction: Optional[EffectiveJunction] = None,
) -> SpectrumResult:
    """Build the Hamiltonian at one flux value and diagonalise it."""
    hamiltonian = build_hamiltonian(params, flux, junction)
    return eigensystem(hamiltonian, k, flux=flux, ng=params.ng)


def _check_grid(grid: Sequence[float], name: str) -> np.ndarray:
    values = np.asarray(grid, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise DegenerateInputError(f"{name} grid must be a non-empty 1-D sequence")
    steps = np.diff(values)
    if values.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise DegenerateInputError(f"{name} grid must be strictly monotone")
    return values


def flux_sweep(
    params: CircuitParams,
    flux_grid: Sequence[float],
    k: int,
    threads: Optional[int] = None,
) -> SpectrumSweep:
    """
    Spectra over a flux grid.

    Args:
        params: Circuit constants (n_g fixed)
        flux_grid: Strictly monotone flux values in radians
        k: Levels per point
        threads: Worker threads (None = settings.THREADS)

    Returns:
        SpectrumSweep; .energies gives the E0-referenced table
    """
    grid = _check_grid(flux_grid, "flux")
    logger.info(f"Flux sweep: {grid.size} points, k={k}, n_cut={params.n_cut}")
    results = parallel_map(lambda flux: spectrum_at(params, float(flux), k), grid, threads)
    return SpectrumSweep(variable="flux", grid=grid, results=results, params=params)


def ng_sweep(
    params: CircuitParams,
    flux: float,
    ng_grid: Sequence[float],
    k: int,
    threads: Optional[int] = None,
) -> SpectrumSweep:
    """Spectra over an offset-charge grid at fixed flux."""
    grid = _check_grid(ng_grid, "ng")
    logger.info(f"Offset-charge sweep: {grid.size} points at flux={flux:.6g}, k={k}")
    junction = effective_junction(params, flux)
    results = parallel_map(
        lambda ng: spectrum_at(params.replace(ng=float(ng)), flux, k, junction), grid, threads
    )
    return SpectrumSweep(variable="ng", grid=grid, results=results, params=params)


# =============================================================================
# Qubit splitting
# =============================================================================

def qubit_splitting(params: CircuitParams, flux: float) -> float:
    """Exact splitting E1 - E0 of the ground doublet in MHz."""
    result = spectrum_at(params, flux, 2)
    return max(float(result.energies[1] - result.energies[0]), 0.0)


def splitting_approx(params: CircuitParams, flux: float) -> float:
    """
    Perturbative splitting around half flux.

    E_q ~ |2 E_J1 sin(φ0) exp(-sqrt(E_C / 8|E_J2|))|, from first-order
    shifts of harmonic well states.

    Raises:
        DegenerateInputError: If E_J2(Φ) vanishes
    """
    junction = effective_junction(params, flux)
    if abs(junction.ej2) <= 1e-12 * max(params.ej2_sum, 1.0):
        raise DegenerateInputError(
            f"splitting_approx needs E_J2(flux) != 0; E_J2({flux:.6g}) = {junction.ej2:.3e} MHz"
        )
    suppression = math.exp(-math.sqrt(params.ec / (8 * abs(junction.ej2))))
    return abs(2 * junction.ej1 * math.sin(junction.phi0) * suppression)


def harmonic_well(params: CircuitParams, flux: float) -> HarmonicWell:
    """
    Harmonic approximation around the wells of the pair-tunneling term.

    Raises:
        DegenerateInputError: If E_J2(Φ) vanishes
    """
    junction = effective_junction(params, flux)
    ej2 = abs(junction.ej2)
    if ej2 <= 1e-12 * max(params.ej2_sum, 1.0):
        raise DegenerateInputError(f"No pair-tunneling well at flux={flux:.6g}: E_J2 = 0")

    variance = math.sqrt(params.ec / (2 * ej2))
    plasma = 2 * math.sqrt(8 * params.ec * ej2)
    return HarmonicWell(
        flux=flux,
        ej2_abs=ej2,
        phase_variance=variance,
        cos_expectation=math.exp(-variance / 2),
        plasma_frequency=plasma,
        ground_energy=-ej2 + plasma / 2 - params.ec,
    )


def cooper_pair_box_spectrum(params: CircuitParams, k: int, flux: float = math.pi / 2) -> SpectrumResult:
    """
    Spectrum with the pair-tunneling term removed.

    At Φ = π/2 and d2 = 0 the SQUID reduces to this charge-qubit Hamiltonian
    with E_J = E_J1(π/2).
    """
    junction = effective_junction(params, flux)
    single_pair_only = EffectiveJunction(
        flux=flux,
        ej1=junction.ej1,
        ej2=0.0,
        phi1=junction.phi1,
        phi2=junction.phi2,
        phi0=junction.phi0,
    )
    return spectrum_at(params, flux, k, junction=single_pair_only)


# =============================================================================
# Logical basis
# =============================================================================

def phase_gauge(state: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the largest charge component is real positive."""
    pivot = state[int(np.argmax(np.abs(state)))]
    if pivot == 0:
        return state.copy()
    return state * (abs(pivot) / pivot)


def phase_wavefunction(state: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """ψ(φ) = Σ_n c_n e^{inφ} / sqrt(2π) on a phase grid."""
    n_cut = (state.shape[0] - 1) // 2
    phases = np.exp(1j * np.outer(np.asarray(phi, dtype=float), charge_numbers(n_cut)))
    return phases @ state / math.sqrt(2 * math.pi)


def _well_label(sin_value: float) -> str:
    if abs(sin_value) < settings.LOCALIZATION_TOL:
        return "delocalized"
    return "+pi/2" if sin_value > 0 else "-pi/2"


def localize_qubit_basis(params: CircuitParams, anchor_flux: Optional[float] = None) -> QubitBasis:
    """
    Logical states at the anchor flux, localised in the φ = ±π/2 wells.

    The two lowest eigenstates are used as they are when they localise. If
    the doublet is degenerate, or neither state localises, the pair is
    rotated within the doublet onto the extremes of <sin φ>, with psi0 in
    the +π/2 well.

    Raises:
        DegenerateGapError: If the doublet is not separated from level 2
    """
    anchor = settings.ANCHOR_FLUX if anchor_flux is None else anchor_flux
    result = spectrum_at(params, anchor, 3)
    gap = float(result.energies[2] - result.energies[1])
    if gap <= settings.GAP_FLOOR_MHZ:
        raise DegenerateGapError(
            f"Qubit doublet touches level 2 at flux={anchor:.6g} (gap {gap:.3e} MHz)"
        )

    pair = result.states[:, :2]
    sin_phi = sin_phi_operator(params.n_cut)
    projected = pair.conj().T @ sin_phi @ pair
    splitting = float(result.energies[1] - result.energies[0])
    localized = max(abs(projected[0, 0].real), abs(projected[1, 1].real)) >= settings.LOCALIZATION_TOL

    rotated = False
    if splitting < settings.DEGENERACY_MHZ or not localized:
        _, rotation = np.linalg.eigh(projected)
        pair = pair @ rotation[:, ::-1]
        rotated = True
        logger.info(f"Qubit doublet at flux={anchor:.6g} rotated onto well states")

    psi0 = phase_gauge(pair[:, 0])
    psi1 = phase_gauge(pair[:, 1])
    sin0 = float(np.vdot(psi0, sin_phi @ psi0).real)
    sin1 = float(np.vdot(psi1, sin_phi @ psi1).real)

    hamiltonian = build_hamiltonian(params, anchor)
    return QubitBasis(
        psi0=psi0,
        psi1=psi1,
        anchor_flux=anchor,
        well_labels=(_well_label(sin0), _well_label(sin1)),
        sin_phi=(sin0, sin1),
        energies=(
            float(np.vdot(psi0, hamiltonian @ psi0).real),
            float(np.vdot(psi1, hamiltonian @ psi1).real),
        ),
        rotated=rotated,
    )


# =============================================================================
# Truncation
# =============================================================================

def convergence_check(
    params: CircuitParams,
    flux: float,
    tol: float,
    levels: Optional[int] = None,
) -> ConvergenceReport:
    """
    Smallest charge cutoff whose lowest levels are stable to tol.

    The relative change of the lowest levels under N -> N + step is measured
    against max(max|E|, E_C).

    Raises:
        ConvergenceError: If no N up to settings.MAX_N_CUT qualifies
    """
    levels = levels or settings.CONVERGENCE_LEVELS
    step = settings.CONVERGENCE_STEP
    start = max(4, math.ceil((levels - 1) / 2))
    cache: dict[int, np.ndarray] = {}

    def lowest(n_cut: int) -> np.ndarray:
        if n_cut not in cache:
            cache[n_cut] = spectrum_at(params.replace(n_cut=n_cut), flux, levels).energies
        return cache[n_cut]

    history: list[tuple[int, float]] = []
    for n_cut in range(start, settings.MAX_N_CUT - step + 1):
        coarse, fine = lowest(n_cut), lowest(n_cut + step)
        scale = max(float(np.abs(fine).max()), params.ec)
        change = float(np.abs(fine - coarse).max()) / scale
        history.append((n_cut, change))
        if change < tol:
            logger.info(f"Charge cutoff converged at N={n_cut} (tol={tol:g}, change={change:.2e})")
            return ConvergenceReport(n_star=n_cut, tol=tol, levels=levels, history=history)

    raise ConvergenceError(
        f"Lowest {levels} levels not converged to {tol:g} by N = {settings.MAX_N_CUT} at flux={flux:.6g}"
    )
