"""Dynamics service - flux pulse schedules, state propagation and gate extraction.

Time is in µs and energies in MHz, so a step propagator is
exp(-2πi H dt). Propagation uses the unshifted Hamiltonian, whose charge
basis does not move with flux; the logical basis found by the spectral
service in the shifted form is carried over with U^H = diag(e^{-inφ2/2}).

Gate convention: R_n(θ) = exp(+iθ n·σ/2) on the (ψ0, ψ1) basis with ψ0 at
the north pole, so holding at a flux with splitting E_q is a +z rotation by
2π E_q t. Axes are reported in the n_z >= 0 hemisphere.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import integrate, linalg, optimize

from app.models import CircuitParams, SegmentSpec
from app.services.circuit import build_hamiltonian_unshifted, shift_phases
from app.services.errors import (
    AdiabaticityError,
    ConvergenceError,
    DegenerateInputError,
    NormDriftError,
    ScheduleError,
    TwoLevelBreakdownError,
)
from app.services.spectral import QubitBasis, eigensystem, localize_qubit_basis, qubit_splitting
from app.settings import settings

logger = logging.getLogger(__name__)

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)

QUBIT_STATES = ("psi0", "psi1", "plus", "minus", "plus_i", "minus_i", "random")


# =============================================================================
# Pulse schedules
# =============================================================================

@dataclass(frozen=True)
class PulseSegment:
    """Linear flux ramp, or a hold when flux_start == flux_end."""
    kind: str  # "ramp" or "hold"
    duration: float  # µs
    flux_start: float
    flux_end: float

    @property
    def is_flat(self) -> bool:
        return self.flux_start == self.flux_end

    def flux_at(self, local_t: float) -> float:
        fraction = min(max(local_t / self.duration, 0.0), 1.0)
        return self.flux_start + (self.flux_end - self.flux_start) * fraction


@dataclass(frozen=True)
class PulseSchedule:
    """Ordered, flux-continuous sequence of segments."""
    segments: tuple[PulseSegment, ...]

    def __post_init__(self):
        if not self.segments:
            raise ScheduleError("Pulse schedule needs at least one segment")
        for i, segment in enumerate(self.segments):
            if not segment.duration > 0:
                raise ScheduleError(f"Segment {i} has non-positive duration {segment.duration}")
            if segment.kind not in ("ramp", "hold"):
                raise ScheduleError(f"Segment {i} has unknown kind {segment.kind!r}")
            if segment.kind == "hold" and not segment.is_flat:
                raise ScheduleError(f"Hold segment {i} changes flux")
        for i, (before, after) in enumerate(zip(self.segments, self.segments[1:])):
            if not math.isclose(before.flux_end, after.flux_start, rel_tol=1e-12, abs_tol=1e-12):
                raise ScheduleError(
                    f"Flux jumps from {before.flux_end:.6g} to {after.flux_start:.6g} "
                    f"between segments {i} and {i + 1}"
                )

    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.segments)

    @property
    def shortest(self) -> float:
        return min(s.duration for s in self.segments)

    @property
    def boundaries(self) -> list[float]:
        """Segment start times followed by the total duration."""
        return [0.0, *np.cumsum([s.duration for s in self.segments]).tolist()]

    @property
    def flux_start(self) -> float:
        return self.segments[0].flux_start

    def flux_at(self, t: float) -> float:
        """Piecewise-linear flux at time t (µs)."""
        total = self.total_duration
        slack = 1e-9 * total
        if t < -slack or t > total + slack:
            raise ScheduleError(f"Time {t} outside schedule [0, {total}]")
        start = 0.0
        for segment in self.segments:
            if t <= start + segment.duration:
                return segment.flux_at(t - start)
            start += segment.duration
        return self.segments[-1].flux_end

    def __add__(self, other: "PulseSchedule") -> "PulseSchedule":
        return PulseSchedule(self.segments + other.segments)

    @classmethod
    def hold(cls, flux: float, duration: float) -> "PulseSchedule":
        return cls((PulseSegment("hold", duration, flux, flux),))

    @classmethod
    def ramp(cls, flux_start: float, flux_end: float, duration: float) -> "PulseSchedule":
        return cls((PulseSegment("ramp", duration, flux_start, flux_end),))

    @classmethod
    def adiabatic(cls, anchor: float, target: float, ramp_time: float, hold_time: float) -> "PulseSchedule":
        """Ramp to target, hold, ramp back. A zero hold_time drops the hold."""
        schedule = cls.ramp(anchor, target, ramp_time)
        if hold_time > 0:
            schedule = schedule + cls.hold(target, hold_time)
        return schedule + cls.ramp(target, anchor, ramp_time)

    @classmethod
    def square(cls, anchor: float, target: float, hold_time: float, rise_time: float) -> "PulseSchedule":
        """Square pulse with finite rise and fall."""
        return cls.adiabatic(anchor, target, rise_time, hold_time)

    @classmethod
    def from_specs(cls, specs: Sequence[SegmentSpec]) -> "PulseSchedule":
        segments = []
        for spec in specs:
            scale = math.pi if spec.in_units_of_pi else 1.0
            start = spec.flux_start * scale
            end = start if spec.flux_end is None else spec.flux_end * scale
            segments.append(PulseSegment(spec.kind, spec.duration, start, end))
        return cls(tuple(segments))


# =============================================================================
# Qubit frame
# =============================================================================

def logical_frame(params: CircuitParams, basis: QubitBasis) -> np.ndarray:
    """(dim, 2) matrix of ψ0, ψ1 in the unshifted charge basis."""
    phases = shift_phases(params, basis.anchor_flux)
    return phases.conj()[:, None] * basis.matrix


def qubit_state(frame: np.ndarray, label: str, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Named qubit state from the logical frame: psi0, psi1, plus, minus, plus_i,
    minus_i, or random.

    "random" draws a uniformly distributed Bloch vector from rng, which
    defaults to an unseeded generator.
    """
    psi0, psi1 = frame[:, 0], frame[:, 1]
    if label == "random":
        rng = rng or np.random.default_rng()
        amplitudes = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        amplitudes /= np.linalg.norm(amplitudes)
        return amplitudes[0] * psi0 + amplitudes[1] * psi1
    states = {
        "psi0": psi0,
        "psi1": psi1,
        "plus": (psi0 + psi1) / math.sqrt(2),
        "minus": (psi0 - psi1) / math.sqrt(2),
        "plus_i": (psi0 + 1j * psi1) / math.sqrt(2),
        "minus_i": (psi0 - 1j * psi1) / math.sqrt(2),
    }
    if label not in states:
        raise DegenerateInputError(f"Unknown qubit state {label!r}; expected one of {QUBIT_STATES}")
    return states[label].copy()


def bloch_vector(amplitudes: np.ndarray) -> np.ndarray:
    """(x, y, z) of qubit amplitudes (a, b); not renormalised, so leakage shortens it."""
    a, b = amplitudes[..., 0], amplitudes[..., 1]
    cross = np.conj(a) * b
    return np.stack([2 * cross.real, 2 * cross.imag, np.abs(a) ** 2 - np.abs(b) ** 2], axis=-1)


# =============================================================================
# Propagation
# =============================================================================

@dataclass
class StateTrajectory:
    """Stored states of one propagation."""
    times: np.ndarray  # µs
    fluxes: np.ndarray
    states: np.ndarray  # (n_stored, dim)
    amplitudes: np.ndarray  # (n_stored, 2), <ψ0|ψ>, <ψ1|ψ>
    dt: float
    frame: np.ndarray

    @property
    def bloch(self) -> np.ndarray:
        return bloch_vector(self.amplitudes)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def leakage(self) -> np.ndarray:
        return 1.0 - self.populations.sum(axis=1)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def probability(self, target: np.ndarray) -> np.ndarray:
        """|<target|ψ(t)>|^2 at every stored time."""
        return np.abs(self.states @ np.conj(target)) ** 2


def _step_propagator(params: CircuitParams, flux: float, h: float) -> np.ndarray:
    energies, vectors = linalg.eigh(build_hamiltonian_unshifted(params, flux))
    return (vectors * np.exp(-2j * math.pi * energies * h)) @ vectors.conj().T


def _check_dt(schedule: PulseSchedule, dt: float) -> None:
    if not dt > 0:
        raise ScheduleError(f"dt must be positive, got {dt}")
    if dt > schedule.shortest * (1 + 1e-12):
        raise ScheduleError(f"dt = {dt} µs exceeds the shortest segment ({schedule.shortest} µs)")


def _steps(params: CircuitParams, schedule: PulseSchedule, dt: float) -> Iterator[tuple[float, np.ndarray]]:
    """Yield (end time, step propagator); each segment is cut into equal steps of at most dt."""
    start = 0.0
    for segment in schedule.segments:
        n_steps = max(1, math.ceil(segment.duration / dt - 1e-9))
        h = segment.duration / n_steps
        fixed = _step_propagator(params, segment.flux_start, h) if segment.is_flat else None
        for j in range(n_steps):
            if fixed is not None:
                yield start + (j + 1) * h, fixed
            else:
                yield start + (j + 1) * h, _step_propagator(params, segment.flux_at((j + 0.5) * h), h)
        start += segment.duration


def _check_norms(states: np.ndarray, t: float, reference: np.ndarray) -> None:
    drift = np.abs(np.linalg.norm(states, axis=0) - reference).max()
    if drift > settings.NORM_TOL:
        raise NormDriftError(f"Norm drifted by {drift:.3e} at t = {t:.6g} µs")


def propagate(
    params: CircuitParams,
    schedule: PulseSchedule,
    psi_init: np.ndarray,
    dt: Optional[float] = None,
    basis: Optional[QubitBasis] = None,
    store_every: int = 1,
) -> StateTrajectory:
    """
    Evolve a state through a pulse schedule.

    Each step applies exp(-2πi H(Φ_mid) h) exactly through an eigendecomposition,
    with Φ_mid the flux at the step midpoint. Holds reuse one propagator. The
    norm is checked after every step and never renormalised.

    Args:
        params: Circuit constants
        schedule: Flux schedule
        psi_init: Normalised initial state in the unshifted charge basis
        dt: Maximum step in µs (default settings.DT_US)
        basis: Logical basis for amplitudes (default: localised at ANCHOR_FLUX)
        store_every: Keep every n-th step; t = 0 and the final state are always kept

    Returns:
        StateTrajectory

    Raises:
        ScheduleError: If dt exceeds the shortest segment
        NormDriftError: If a step breaks unitarity beyond settings.NORM_TOL
    """
    dt = dt or settings.DT_US
    _check_dt(schedule, dt)
    psi = np.asarray(psi_init, dtype=complex).copy()
    if psi.shape != (params.dim,):
        raise DegenerateInputError(f"Initial state has shape {psi.shape}, expected ({params.dim},)")
    if abs(np.linalg.norm(psi) - 1) > settings.NORM_TOL:
        raise DegenerateInputError(f"Initial state is not normalised (norm {np.linalg.norm(psi):.12f})")

    basis = basis or localize_qubit_basis(params)
    frame = logical_frame(params, basis)

    norm = np.linalg.norm(psi, keepdims=True)
    times, states = [0.0], [psi.copy()]
    last_t, step = 0.0, 0
    for t, propagator in _steps(params, schedule, dt):
        psi = propagator @ psi
        _check_norms(psi[:, None], t, norm)
        step += 1
        last_t = t
        if step % store_every == 0:
            times.append(t)
            states.append(psi.copy())
    if times[-1] != last_t:
        times.append(last_t)
        states.append(psi.copy())

    stored = np.array(states)
    logger.debug(f"Propagated {step} steps over {schedule.total_duration} µs (dt={dt})")
    return StateTrajectory(
        times=np.array(times),
        fluxes=np.array([schedule.flux_at(t) for t in times]),
        states=stored,
        amplitudes=stored @ frame.conj(),
        dt=dt,
        frame=frame,
    )


def propagate_converged(
    params: CircuitParams,
    schedule: PulseSchedule,
    psi_init: np.ndarray,
    dt: Optional[float] = None,
    tol: Optional[float] = None,
    basis: Optional[QubitBasis] = None,
    store_every: int = 1,
) -> tuple[StateTrajectory, float]:
    """
    Propagate with dt halved until the final state is stable.

    Returns:
        (trajectory at the accepted dt, accepted dt)

    Raises:
        ConvergenceError: If settings.MAX_DT_HALVINGS halvings do not reach tol
    """
    dt = dt or settings.DT_US
    tol = settings.SELF_CONVERGENCE_TOL if tol is None else tol
    basis = basis or localize_qubit_basis(params)

    coarse = propagate(params, schedule, psi_init, dt, basis, store_every)
    for halving in range(settings.MAX_DT_HALVINGS):
        dt /= 2
        fine = propagate(params, schedule, psi_init, dt, basis, store_every)
        change = float(np.linalg.norm(fine.final_state - coarse.final_state))
        logger.info(f"dt = {dt:.3e} µs: final-state change {change:.3e}")
        if change < tol:
            return coarse, 2 * dt
        coarse = fine
    raise ConvergenceError(
        f"Propagation not converged to {tol:g} after {settings.MAX_DT_HALVINGS} dt halvings (dt = {dt:.3e} µs)"
    )


def evolve_frame(
    params: CircuitParams,
    schedule: PulseSchedule,
    frame: np.ndarray,
    dt: Optional[float] = None,
) -> np.ndarray:
    """Evolve every column of frame through the schedule; returns the final columns."""
    dt = dt or settings.DT_US
    _check_dt(schedule, dt)
    columns = np.array(frame, dtype=complex)
    norms = np.linalg.norm(columns, axis=0)
    for t, propagator in _steps(params, schedule, dt):
        columns = propagator @ columns
        _check_norms(columns, t, norms)
    return columns


def subspace_map(
    params: CircuitParams,
    schedule: PulseSchedule,
    basis: Optional[QubitBasis] = None,
    dt: Optional[float] = None,
) -> np.ndarray:
    """2x2 map M_ij = <ψi|U|ψj> of the schedule restricted to the qubit subspace."""
    basis = basis or localize_qubit_basis(params)
    frame = logical_frame(params, basis)
    return frame.conj().T @ evolve_frame(params, schedule, frame, dt)


def relative_dynamical_phase(params: CircuitParams, schedule: PulseSchedule, samples: int = 201) -> float:
    """2π ∫ E_q(Φ(t)) dt along the schedule, in radians."""
    phase = 0.0
    for segment in schedule.segments:
        if segment.is_flat:
            phase += qubit_splitting(params, segment.flux_start) * segment.duration
            continue
        t = np.linspace(0.0, segment.duration, samples)
        splittings = [qubit_splitting(params, segment.flux_at(local)) for local in t]
        phase += float(integrate.trapezoid(splittings, t))
    return 2 * math.pi * phase


# =============================================================================
# Rotations
# =============================================================================

def wrap_angle(angle: float) -> float:
    """Map an angle to (-π, π]."""
    wrapped = math.remainder(angle, 2 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def rotation_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    """R_n(θ) = cos(θ/2) I + i sin(θ/2) n·σ."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    generator = sum(component * pauli for component, pauli in zip(n, PAULI))
    return math.cos(angle / 2) * np.eye(2) + 1j * math.sin(angle / 2) * generator


def gate_fidelity(realized: np.ndarray, ideal: np.ndarray) -> float:
    """|Tr(V^H M)| / 2; 1 for equal maps up to a global phase."""
    return float(abs(np.trace(ideal.conj().T @ realized)) / 2)


def _oriented(axis: np.ndarray, angle: float) -> tuple[np.ndarray, float]:
    if axis[2] < 0:
        return -axis, -angle
    return axis, angle


def rotation_from_map(subspace: np.ndarray) -> tuple[np.ndarray, float]:
    """
    Rotation axis and angle of a 2x2 qubit map.

    The unitary polar factor absorbs leakage; the determinant phase is
    removed before reading off cos(θ/2) and sin(θ/2) n.

    Returns:
        (unit axis with n_z >= 0, angle in (-π, π])
    """
    unitary, _ = linalg.polar(subspace)
    special = unitary / np.sqrt(np.linalg.det(unitary))
    cos_half = np.trace(special).real / 2
    sin_half = np.array([np.trace(special @ pauli).imag / 2 for pauli in PAULI])
    norm = float(np.linalg.norm(sin_half))
    if norm < 1e-14:
        return np.array([0.0, 0.0, 1.0]), 0.0
    axis, angle = _oriented(sin_half / norm, 2 * math.atan2(norm, cos_half))
    return axis, wrap_angle(angle)


@dataclass
class GateResult:
    """
    Qubit-subspace action of a pulse.

    axis and angle come from subspace_map. full_space_map is the logical
    block of the full propagator; the two differ only for sudden gates.
    """
    axis: np.ndarray
    angle: float
    fidelity_proxy: float
    leakage_final: float
    subspace_map: np.ndarray = field(repr=False)
    ideal_axis: Optional[np.ndarray] = None
    ideal_angle: Optional[float] = None
    full_space_map: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def tilt(self) -> float:
        """Angle between the axis and +z."""
        return math.acos(min(1.0, float(self.axis[2])))


def _map_leakage(subspace: np.ndarray) -> float:
    return max(0.0, 1.0 - float(np.sum(np.abs(subspace) ** 2)) / 2)


# =============================================================================
# Static projection
# =============================================================================

@dataclass
class TwoLevelValidity:
    flux: float
    gap: float  # E2 - E1, MHz
    leakage_step: float
    valid: bool


@dataclass
class TippingAxis:
    """H(flux) projected onto the anchor basis, h0 I + h·σ/2."""
    flux: float
    h0: float
    field: np.ndarray  # (hx, hy, hz), MHz
    theta: float  # tipping angle in [0, π/2]
    azimuth: float
    validity: TwoLevelValidity

    @property
    def rate(self) -> float:
        """|h| in MHz; a hold of τ rotates by 2π|h|τ."""
        return float(np.linalg.norm(self.field))

    @property
    def gate_axis(self) -> np.ndarray:
        """Axis of exp(-2πiτ h·σ/2) in the R_n convention, n_z >= 0."""
        rate = self.rate
        if rate == 0:
            return np.array([0.0, 0.0, 1.0])
        axis, _ = _oriented(-self.field / rate, 1.0)
        return axis

    def ideal_rotation(self, hold_time: float) -> tuple[np.ndarray, float]:
        """Axis and wrapped angle of a sudden hold of hold_time µs."""
        rate = self.rate
        if rate == 0:
            return np.array([0.0, 0.0, 1.0]), 0.0
        axis, angle = _oriented(-self.field / rate, 2 * math.pi * rate * hold_time)
        return axis, wrap_angle(angle)


def project_hamiltonian(hamiltonian: np.ndarray, frame: np.ndarray) -> np.ndarray:
    return frame.conj().T @ hamiltonian @ frame


def field_from_block(block: np.ndarray) -> tuple[float, np.ndarray]:
    """Split a Hermitian 2x2 block into h0 and h with block = h0 I + h·σ/2."""
    h0 = float(np.trace(block).real / 2)
    field_ = np.array([
        2 * block[0, 1].real,
        -2 * block[0, 1].imag,
        (block[0, 0] - block[1, 1]).real,
    ])
    return h0, field_


def two_level_validity(
    params: CircuitParams,
    flux: float,
    basis: Optional[QubitBasis] = None,
) -> TwoLevelValidity:
    """
    Gap above the doublet and the anchor basis weight outside it at one flux.

    leakage_step is 1 minus the mean population that ψ0 and ψ1 keep in the
    two lowest eigenstates of H(flux).
    """
    basis = basis or localize_qubit_basis(params)
    frame = logical_frame(params, basis)
    result = eigensystem(build_hamiltonian_unshifted(params, flux), 3, flux=flux, ng=params.ng)
    overlaps = result.states[:, :2].conj().T @ frame
    leakage = max(0.0, 1.0 - float(np.sum(np.abs(overlaps) ** 2)) / 2)
    return TwoLevelValidity(
        flux=flux,
        gap=float(result.energies[2] - result.energies[1]),
        leakage_step=leakage,
        valid=leakage < settings.LEAKAGE_THRESHOLD,
    )


def tipping_axis(params: CircuitParams, flux: float, basis: Optional[QubitBasis] = None) -> TippingAxis:
    """Projected qubit Hamiltonian at flux with its tipping angle and validity flag."""
    basis = basis or localize_qubit_basis(params)
    frame = logical_frame(params, basis)
    h0, field_ = field_from_block(project_hamiltonian(build_hamiltonian_unshifted(params, flux), frame))

    transverse = math.hypot(field_[0], field_[1])
    raw = math.atan2(transverse, field_[2])
    axis = TippingAxis(
        flux=flux,
        h0=h0,
        field=field_,
        theta=min(raw, math.pi - raw),
        azimuth=0.0,
        validity=two_level_validity(params, flux, basis),
    )
    if transverse > 0:
        gate_axis = axis.gate_axis
        axis.azimuth = math.atan2(gate_axis[1], gate_axis[0])
    return axis


def tipping_angle(params: CircuitParams, flux: float, basis: Optional[QubitBasis] = None) -> float:
    """Tipping angle Θ in [0, π/2] of a sudden pulse to flux."""
    return tipping_axis(params, flux, basis).theta


def validity_edge(
    params: CircuitParams,
    flux_a: float,
    flux_b: float,
    basis: Optional[QubitBasis] = None,
    xtol: float = 1e-6,
) -> float:
    """
    Flux between flux_a and flux_b where leakage_step reaches settings.LEAKAGE_THRESHOLD.

    Raises:
        DegenerateInputError: If the interval does not bracket the crossing
    """
    basis = basis or localize_qubit_basis(params)

    def excess(flux: float) -> float:
        return two_level_validity(params, flux, basis).leakage_step - settings.LEAKAGE_THRESHOLD

    low, high = sorted((flux_a, flux_b))
    if excess(low) * excess(high) > 0:
        raise DegenerateInputError(
            f"leakage_step does not cross {settings.LEAKAGE_THRESHOLD} between {low:.6g} and {high:.6g}"
        )
    edge = float(optimize.brentq(excess, low, high, xtol=xtol))
    logger.info(f"Two-level validity edge at flux={edge:.6g} ({edge / math.pi:.4f} pi)")
    return edge


# =============================================================================
# Gates
# =============================================================================

def adiabatic_z_gate(
    params: CircuitParams,
    flux_hold: float,
    ramp_time: float,
    hold_time: float,
    dt: Optional[float] = None,
    basis: Optional[QubitBasis] = None,
) -> GateResult:
    """
    Slow ramp from the anchor to flux_hold, hold, and ramp back.

    The angle is the total relative phase, ramp contributions included.

    Raises:
        DegenerateInputError: If flux_hold is outside (π/2, 3π/2), where the
            doublet is no longer the ground pair of the pair-tunneling wells
        AdiabaticityError: If the final leakage exceeds settings.ADIABATIC_LEAKAGE_MAX
    """
    if not math.pi / 2 < flux_hold < 3 * math.pi / 2:
        raise DegenerateInputError(f"Adiabatic gate needs pi/2 < flux_hold < 3pi/2, got {flux_hold:.6g}")
    basis = basis or localize_qubit_basis(params)
    schedule = PulseSchedule.adiabatic(basis.anchor_flux, flux_hold, ramp_time, hold_time)
    subspace = subspace_map(params, schedule, basis, dt)
    leakage = _map_leakage(subspace)
    if leakage > settings.ADIABATIC_LEAKAGE_MAX:
        raise AdiabaticityError(
            f"Adiabatic gate to flux={flux_hold:.6g} leaked {leakage:.3e} with ramp_time={ramp_time} µs"
        )

    axis, angle = rotation_from_map(subspace)
    z_axis = np.array([0.0, 0.0, 1.0])
    phase = wrap_angle(-np.angle(subspace[1, 1]) + np.angle(subspace[0, 0]))
    logger.info(f"Adiabatic gate at flux={flux_hold:.6g}: angle={angle:.6f}, leakage={leakage:.2e}")
    return GateResult(
        axis=axis,
        angle=angle,
        fidelity_proxy=gate_fidelity(subspace, rotation_matrix(z_axis, phase)),
        leakage_final=leakage,
        subspace_map=subspace,
        ideal_axis=z_axis,
        ideal_angle=phase,
        full_space_map=subspace,
    )


def diabatic_gate(
    params: CircuitParams,
    flux_hold: float,
    hold_time: float,
    rise_time: float = 0.0,
    dt: Optional[float] = None,
    basis: Optional[QubitBasis] = None,
) -> GateResult:
    """
    Sudden step to flux_hold, hold for hold_time µs, and step back.

    The sudden gate evolves under the Hamiltonian projected onto the anchor
    basis, so its axis tilts by exactly the tipping angle. The full-space
    propagator is kept alongside; fidelity_proxy and leakage_final compare
    it with the projected rotation. With rise_time > 0 the steps become
    linear ramps of that duration and the whole pulse is propagated in the
    full space.

    Raises:
        TwoLevelBreakdownError: If flux_hold is outside the two-level region
    """
    basis = basis or localize_qubit_basis(params)
    static = tipping_axis(params, flux_hold, basis)
    if not static.validity.valid:
        raise TwoLevelBreakdownError(
            f"Two-level approximation breaks down at flux={flux_hold:.6g} "
            f"(leakage_step {static.validity.leakage_step:.3e} >= {settings.LEAKAGE_THRESHOLD})"
        )

    frame = logical_frame(params, basis)
    if rise_time > 0:
        schedule = PulseSchedule.square(basis.anchor_flux, flux_hold, hold_time, rise_time)
        full_space = frame.conj().T @ evolve_frame(params, schedule, frame, dt)
        subspace = full_space
    else:
        full_space = frame.conj().T @ _step_propagator(params, flux_hold, hold_time) @ frame
        block = project_hamiltonian(build_hamiltonian_unshifted(params, flux_hold), frame)
        subspace = linalg.expm(-2j * math.pi * hold_time * block)

    axis, angle = rotation_from_map(subspace)
    ideal_axis, ideal_angle = static.ideal_rotation(hold_time)
    gate = GateResult(
        axis=axis,
        angle=angle,
        fidelity_proxy=gate_fidelity(full_space, rotation_matrix(ideal_axis, ideal_angle)),
        leakage_final=_map_leakage(full_space),
        subspace_map=subspace,
        ideal_axis=ideal_axis,
        ideal_angle=ideal_angle,
        full_space_map=full_space,
    )
    logger.info(f"Diabatic gate at flux={flux_hold:.6g}: tilt={gate.tilt:.6f} rad, leakage={gate.leakage_final:.2e}")
    return gate
