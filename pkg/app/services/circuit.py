"""Circuit model - effective junction parameters and charge-basis Hamiltonians.

Energies are E/h in MHz. The truncated charge basis is n = -N..N and
e^{iφ} raises the charge index by one, so cos(φ - φ0) puts
(1/2)e^{-iφ0} on the (n+1, n) entries and cos 2φ puts 1/2 on (n+2, n).

The two SQUID junction pairs enter only through complex amplitudes

    A1 = E_J1,Σ (cos(Φ/2) + i d1 sin(Φ/2))
    A2 = E_J2,Σ (cos Φ + i d2 sin Φ)

and every signed amplitude / phase pair below satisfies ej * e^{iφ} = A.
"""

import cmath
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.models import CircuitParams
from app.settings import settings

logger = logging.getLogger(__name__)

# Dense complex matrix indexed by charge states n = -N..N.
HermitianOperator = np.ndarray


@dataclass(frozen=True)
class EffectiveJunction:
    """Effective tunneling amplitudes and phase shifts at one flux value."""
    flux: float
    ej1: float  # signed, MHz
    ej2: float  # signed, MHz
    phi1: float
    phi2: float
    phi0: float  # phi1 - phi2 / 2

    @property
    def amplitude1(self) -> complex:
        return self.ej1 * cmath.exp(1j * self.phi1)

    @property
    def amplitude2(self) -> complex:
        return self.ej2 * cmath.exp(1j * self.phi2)


@dataclass(frozen=True)
class JunctionDerivative:
    """Flux derivatives of the effective junction quantities."""
    flux: float
    dej1: float
    dej2: float
    dphi1: float
    dphi2: float

    @property
    def dphi0(self) -> float:
        return self.dphi1 - self.dphi2 / 2


# =============================================================================
# Effective junction
# =============================================================================

def junction_from_energies(ej_a: float, ej_b: float) -> tuple[float, float]:
    """
    Reduce a pair of junction energies to total and relative asymmetry.

    Returns:
        (E_a + E_b, (E_a - E_b) / (E_a + E_b)); the asymmetry is 0 for an
        empty pair.
    """
    total = ej_a + ej_b
    if total == 0:
        return 0.0, 0.0
    return total, (ej_a - ej_b) / total


def _amplitudes(params: CircuitParams, flux: float) -> tuple[complex, complex]:
    half = flux / 2
    a1 = params.ej1_sum * complex(math.cos(half), params.d1 * math.sin(half))
    a2 = params.ej2_sum * complex(math.cos(flux), params.d2 * math.sin(flux))
    return a1, a2


def _amplitude_derivatives(params: CircuitParams, flux: float) -> tuple[complex, complex]:
    half = flux / 2
    da1 = params.ej1_sum * complex(-math.sin(half) / 2, params.d1 * math.cos(half) / 2)
    da2 = params.ej2_sum * complex(-math.sin(flux), params.d2 * math.cos(flux))
    return da1, da2


def _split(amplitude: complex, reference_phase: Optional[float]) -> tuple[float, float]:
    """Decompose A into a signed magnitude and a phase, A = ej * e^{i phase}."""
    phase = math.atan2(amplitude.imag, amplitude.real)
    if reference_phase is None:
        # Principal branch (-π/2, π/2]: the sign convention of the arctan forms
        if phase > math.pi / 2:
            phase -= math.pi
        elif phase <= -math.pi / 2:
            phase += math.pi
    else:
        phase += math.pi * round((reference_phase - phase) / math.pi)
    magnitude = abs(amplitude)
    aligned = (amplitude * cmath.exp(-1j * phase)).real
    return (magnitude if aligned >= 0 else -magnitude), phase


def effective_junction(
    params: CircuitParams,
    flux: float,
    reference: Optional[EffectiveJunction] = None,
) -> EffectiveJunction:
    """
    Evaluate the effective junction at one flux value.

    Args:
        params: Circuit constants
        flux: External flux Φ in radians
        reference: Junction at a nearby flux; when given, phases are taken on
            the branch closest to it so curves stay continuous

    Returns:
        EffectiveJunction with ej * e^{iφ} equal to the complex amplitudes
    """
    a1, a2 = _amplitudes(params, flux)
    ej1, phi1 = _split(a1, reference.phi1 if reference else None)
    ej2, phi2 = _split(a2, reference.phi2 if reference else None)
    return EffectiveJunction(
        flux=flux, ej1=ej1, ej2=ej2, phi1=phi1, phi2=phi2, phi0=phi1 - phi2 / 2,
    )


def effective_junction_sweep(params: CircuitParams, fluxes: Sequence[float]) -> list[EffectiveJunction]:
    """Effective junctions along a grid, with phases unwrapped point to point."""
    junctions: list[EffectiveJunction] = []
    previous = None
    for flux in fluxes:
        previous = effective_junction(params, float(flux), reference=previous)
        junctions.append(previous)
    return junctions


def d_effective_junction(
    params: CircuitParams,
    flux: float,
    reference: Optional[EffectiveJunction] = None,
) -> JunctionDerivative:
    """Analytic flux derivatives of E_J1, E_J2, φ1 and φ2 on the chosen branch."""
    junction = effective_junction(params, flux, reference)
    a1, a2 = _amplitudes(params, flux)
    da1, da2 = _amplitude_derivatives(params, flux)

    def _phase_rate(a: complex, da: complex) -> float:
        # arg A is constant where A vanishes on a real axis (d = 0)
        norm = abs(a) ** 2
        return (da * a.conjugate()).imag / norm if norm > 0 else 0.0

    return JunctionDerivative(
        flux=flux,
        dej1=(da1 * cmath.exp(-1j * junction.phi1)).real,
        dej2=(da2 * cmath.exp(-1j * junction.phi2)).real,
        dphi1=_phase_rate(a1, da1),
        dphi2=_phase_rate(a2, da2),
    )


# =============================================================================
# Charge-basis operators
# =============================================================================

def charge_numbers(n_cut: int) -> np.ndarray:
    return np.arange(-n_cut, n_cut + 1, dtype=float)


def _raising(n_cut: int, step: int = 1) -> np.ndarray:
    """Matrix of e^{i step φ}: ones on the (n + step, n) entries."""
    dim = 2 * n_cut + 1
    return np.eye(dim, k=-step, dtype=complex)


def number_operator(n_cut: int) -> HermitianOperator:
    return np.diag(charge_numbers(n_cut)).astype(complex)


def sin_phi_operator(n_cut: int) -> HermitianOperator:
    """sin φ with -i/2 on the (n+1, n) entries and +i/2 on (n, n+1)."""
    up = _raising(n_cut)
    return (up - up.T) / 2j


def cos_phi_operator(n_cut: int) -> HermitianOperator:
    up = _raising(n_cut)
    return (up + up.T) / 2


def _add_band(matrix: np.ndarray, offset: int, value: complex) -> None:
    """Add value on the (n + offset, n) entries and its conjugate on (n, n + offset)."""
    idx = np.arange(matrix.shape[0] - offset)
    matrix[idx + offset, idx] += value
    matrix[idx, idx + offset] += np.conj(value)


def _charging(params: CircuitParams) -> np.ndarray:
    n = charge_numbers(params.n_cut)
    return np.diag(4 * params.ec * (n - params.ng) ** 2).astype(complex)


def build_hamiltonian(
    params: CircuitParams,
    flux: float,
    junction: Optional[EffectiveJunction] = None,
) -> HermitianOperator:
    """
    Build H = 4E_C(n - n_g)^2 - E_J1 cos(φ - φ0) - E_J2 cos 2φ.

    This is the shifted form, with φ2 absorbed by φ -> φ + φ2/2.

    Args:
        params: Circuit constants
        flux: External flux Φ in radians
        junction: Precomputed effective junction (selects the phase branch)

    Returns:
        (2N+1) x (2N+1) complex Hermitian matrix in MHz
    """
    junction = junction or effective_junction(params, flux)
    hamiltonian = _charging(params)
    _add_band(hamiltonian, 1, -0.5 * junction.ej1 * cmath.exp(-1j * junction.phi0))
    _add_band(hamiltonian, 2, -0.5 * junction.ej2)
    return hamiltonian


def build_hamiltonian_unshifted(params: CircuitParams, flux: float) -> HermitianOperator:
    """H with -E_J1 cos(φ - φ1) - E_J2 cos(2φ - φ2), before the variable shift."""
    junction = effective_junction(params, flux)
    hamiltonian = _charging(params)
    _add_band(hamiltonian, 1, -0.5 * junction.ej1 * cmath.exp(-1j * junction.phi1))
    _add_band(hamiltonian, 2, -0.5 * junction.ej2 * cmath.exp(-1j * junction.phi2))
    return hamiltonian


def shift_phases(params: CircuitParams, flux: float, junction: Optional[EffectiveJunction] = None) -> np.ndarray:
    """
    Diagonal of U = diag(e^{i n φ2/2}) with H_shifted = U H_unshifted U^H.

    Eigenvectors of the shifted form map to the unshifted form as U^H v.
    """
    junction = junction or effective_junction(params, flux)
    return np.exp(0.5j * junction.phi2 * charge_numbers(params.n_cut))


def d_hamiltonian_d_flux(
    params: CircuitParams,
    flux: float,
    junction: Optional[EffectiveJunction] = None,
) -> HermitianOperator:
    """
    Analytic dH/dΦ of the shifted Hamiltonian.

    The single-pair coupling E_J1 e^{-iφ0} equals conj(A1) e^{iφ2/2}, so it
    differentiates through dA1/dΦ and dφ2/dΦ without touching φ1.
    """
    junction = junction or effective_junction(params, flux)
    rates = d_effective_junction(params, flux, reference=junction)
    a1, _ = _amplitudes(params, flux)
    da1, _ = _amplitude_derivatives(params, flux)

    half_shift = cmath.exp(0.5j * junction.phi2)
    d_coupling = (da1.conjugate() + a1.conjugate() * 0.5j * rates.dphi2) * half_shift

    derivative = np.zeros((params.dim, params.dim), dtype=complex)
    _add_band(derivative, 1, -0.5 * d_coupling)
    _add_band(derivative, 2, -0.5 * rates.dej2)
    return derivative


def d_hamiltonian_unshifted_d_flux(params: CircuitParams, flux: float) -> HermitianOperator:
    """
    Analytic dH/dΦ of the unshifted Hamiltonian.

    The couplings are conj(A1) and conj(A2) on the first and second bands,
    so no phase branch enters.
    """
    da1, da2 = _amplitude_derivatives(params, flux)
    derivative = np.zeros((params.dim, params.dim), dtype=complex)
    _add_band(derivative, 1, -0.5 * da1.conjugate())
    _add_band(derivative, 2, -0.5 * da2.conjugate())
    return derivative


def d_hamiltonian_d_ng(params: CircuitParams, flux: Optional[float] = None) -> HermitianOperator:
    """dH/dn_g = -8E_C(n - n_g), diagonal and flux independent."""
    n = charge_numbers(params.n_cut)
    return np.diag(-8 * params.ec * (n - params.ng)).astype(complex)


def is_hermitian(matrix: np.ndarray, tol: Optional[float] = None) -> bool:
    """Check ||M - M^H||_max <= tol * ||M||_max."""
    tol = settings.HERMITICITY_TOL if tol is None else tol
    scale = np.abs(matrix).max() if matrix.size else 0.0
    if scale == 0:
        return True
    return float(np.abs(matrix - matrix.conj().T).max()) <= tol * scale


# =============================================================================
# Landscape and special cases
# =============================================================================

def potential_energy(params: CircuitParams, flux: float, phi: np.ndarray) -> np.ndarray:
    """Josephson potential U(φ) of the shifted form, in MHz."""
    junction = effective_junction(params, flux)
    phi = np.asarray(phi, dtype=float)
    return -junction.ej1 * np.cos(phi - junction.phi0) - junction.ej2 * np.cos(2 * phi)


def pi_junction_params(
    ej1: float,
    ej2: float,
    ec: float,
    ng: float = 0.0,
    n_cut: Optional[int] = None,
) -> CircuitParams:
    """
    A single two-harmonic π-junction as the zero-flux symmetric SQUID.

    At Φ = 0 with d1 = d2 = 0 the SQUID potential is -ej1 cos φ - ej2 cos 2φ;
    ej1 = 0 gives the ideal π-periodic junction.
    """
    fields = dict(ej1_sum=ej1, ej2_sum=ej2, d1=0.0, d2=0.0, ec=ec, ng=ng)
    if n_cut is not None:
        fields["n_cut"] = n_cut
    return CircuitParams(**fields)
