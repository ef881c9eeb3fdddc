"""Holonomy service - Berry curvature over (Φ, n_g) and closed-loop phases.

Curvature between levels k and l, with Φ as the first coordinate:

    B_kl = -2 Im(<k|∂_Φ H|l><l|∂_ng H|k>) / (E_k - E_l)^2

A counter-clockwise loop in the (Φ, n_g) plane collects
Ω_k = Σ_l ∬ B_kl dΦ dn_g. Wilson loops give the same phase from
eigenvector overlaps and serve as an independent check.

The shifted form moves the φ2/2 phase into the basis and is the
default. Its curvature differs from the unshifted form by the flux
dependence of that basis change; with E_J1 = 0 the shifted H is real and
all its curvature vanishes, while the unshifted form keeps the
d2 sin 2φ term.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from app.models import CircuitParams, RectangleSpec
from app.services.circuit import (
    EffectiveJunction,
    build_hamiltonian_unshifted,
    d_hamiltonian_d_flux,
    d_hamiltonian_d_ng,
    d_hamiltonian_unshifted_d_flux,
    effective_junction,
)
from app.services.errors import DegenerateGapError, DegenerateInputError, QuadratureError
from app.services.spectral import SpectrumResult, eigensystem, spectrum_at
from app.services.workers import parallel_map
from app.settings import settings

logger = logging.getLogger(__name__)


# =============================================================================
# Curvature
# =============================================================================

def _gap_floor(gap_floor: Optional[float]) -> float:
    return settings.GAP_FLOOR_MHZ if gap_floor is None else gap_floor


def curvature_row(
    energies: np.ndarray,
    states: np.ndarray,
    d_flux: np.ndarray,
    d_ng: np.ndarray,
    k: int,
    gap_floor: Optional[float] = None,
) -> np.ndarray:
    """
    B_kl for every retained level l (zero at l = k).

    Raises:
        DegenerateGapError: If any retained level is within the gap floor of k
    """
    floor = _gap_floor(gap_floor)
    gaps = energies[k] - energies
    gaps[k] = math.inf
    if np.abs(gaps).min() <= floor:
        l = int(np.argmin(np.abs(gaps)))
        raise DegenerateGapError(f"Levels {k} and {l} closer than {floor:g} MHz ({abs(gaps[l]):.3e} MHz)")
    row_flux = states[:, k].conj() @ d_flux @ states
    col_ng = states.conj().T @ d_ng @ states[:, k]
    return -2 * np.imag(row_flux * col_ng) / gaps ** 2


def curvature_from_eigensystem(
    energies: np.ndarray,
    states: np.ndarray,
    d_flux: np.ndarray,
    d_ng: np.ndarray,
    k: int,
    l: int,
    gap_floor: Optional[float] = None,
) -> float:
    """B_kl from eigenpairs and the two derivative operators."""
    if k == l:
        raise DegenerateInputError("Curvature needs two distinct levels")
    floor = _gap_floor(gap_floor)
    gap = float(energies[k] - energies[l])
    if abs(gap) <= floor:
        raise DegenerateGapError(f"Levels {k} and {l} closer than {floor:g} MHz ({abs(gap):.3e} MHz)")
    overlap = (states[:, k].conj() @ d_flux @ states[:, l]) * (states[:, l].conj() @ d_ng @ states[:, k])
    return float(-2 * overlap.imag / gap ** 2)


HamiltonianForm = Literal["shifted", "unshifted"]


def _form_spectrum(
    point: CircuitParams,
    flux: float,
    levels: int,
    junction: Optional[EffectiveJunction],
    form: HamiltonianForm,
) -> SpectrumResult:
    """Lowest eigenpairs of the chosen Hamiltonian form."""
    if form == "unshifted":
        return eigensystem(build_hamiltonian_unshifted(point, flux), levels, flux=flux, ng=point.ng)
    if form != "shifted":
        raise DegenerateInputError(f"Unknown Hamiltonian form {form!r}")
    return spectrum_at(point, flux, levels, junction or effective_junction(point, flux))


def _eigenpairs_with_flux_derivative(
    point: CircuitParams,
    flux: float,
    levels: int,
    junction: Optional[EffectiveJunction],
    form: HamiltonianForm,
) -> tuple[SpectrumResult, np.ndarray]:
    if form == "unshifted":
        return _form_spectrum(point, flux, levels, None, form), d_hamiltonian_unshifted_d_flux(point, flux)
    junction = junction or effective_junction(point, flux)
    return _form_spectrum(point, flux, levels, junction, form), d_hamiltonian_d_flux(point, flux, junction)


def _point_row(
    params: CircuitParams,
    flux: float,
    ng: float,
    k: int,
    levels: int,
    junction: Optional[EffectiveJunction] = None,
    form: HamiltonianForm = "shifted",
) -> tuple[np.ndarray, np.ndarray]:
    """(B_kl over l < levels, energies) at one bias point."""
    point = params.replace(ng=ng)
    result, d_flux = _eigenpairs_with_flux_derivative(point, flux, levels, junction, form)
    try:
        row = curvature_row(result.energies, result.states, d_flux, d_hamiltonian_d_ng(point), k)
    except DegenerateGapError as e:
        raise DegenerateGapError(f"{e} at flux={flux:.6g}, ng={ng:.6g}")
    return row, result.energies


def berry_curvature(
    params: CircuitParams,
    flux: float,
    ng: float,
    k: int,
    l: int,
    form: HamiltonianForm = "shifted",
) -> float:
    """
    Curvature B_kl at one (Φ, n_g) point.

    Raises:
        DegenerateGapError: If |E_k - E_l| is within settings.GAP_FLOOR_MHZ
    """
    point = params.replace(ng=ng)
    result, d_flux = _eigenpairs_with_flux_derivative(point, flux, max(k, l) + 1, None, form)
    try:
        return curvature_from_eigensystem(
            result.energies, result.states, d_flux, d_hamiltonian_d_ng(point), k, l
        )
    except DegenerateGapError as e:
        raise DegenerateGapError(f"{e} at flux={flux:.6g}, ng={ng:.6g}")


def _top_level(params: CircuitParams, k: int, l_max: Optional[int]) -> int:
    top = settings.L_MAX if l_max is None else l_max
    return min(max(top, k + 1), params.dim - 1)


def intermediate_levels(params: CircuitParams, k: int, l_max: Optional[int] = None) -> list[int]:
    """Levels l != k summed over for level k; l_max defaults to settings.L_MAX."""
    return [l for l in range(_top_level(params, k, l_max) + 1) if l != k]


@dataclass
class CurvatureSum:
    """Σ_l B_kl at one point."""
    total: float
    by_level: dict[int, float]
    truncation_estimate: float  # |B_k,l_max|


def total_curvature(
    params: CircuitParams,
    flux: float,
    ng: float,
    k: int,
    l_max: Optional[int] = None,
    form: HamiltonianForm = "shifted",
) -> CurvatureSum:
    """
    Curvature of level k summed over intermediate levels 0..l_max.

    l_max defaults to settings.L_MAX and is clipped to the basis size.
    """
    top = _top_level(params, k, l_max)
    row, _ = _point_row(params, flux, ng, k, top + 1, form=form)
    by_level = {l: float(row[l]) for l in range(top + 1) if l != k}
    return CurvatureSum(
        total=float(sum(by_level.values())),
        by_level=by_level,
        truncation_estimate=abs(by_level.get(top, 0.0)),
    )


@dataclass
class CurvatureGrid:
    """B_kl sampled on a (flux, ng) grid; values[i, j] is at (flux_axis[i], ng_axis[j])."""
    flux_axis: np.ndarray
    ng_axis: np.ndarray
    values: np.ndarray  # NaN where flagged
    flagged: np.ndarray  # True where the gap floor was hit
    level_pair: tuple[int, int]

    @property
    def peak(self) -> tuple[float, float, float]:
        """(flux, ng, B) at the largest |B|."""
        magnitude = np.where(self.flagged, -np.inf, np.abs(self.values))
        i, j = np.unravel_index(int(np.argmax(magnitude)), magnitude.shape)
        return float(self.flux_axis[i]), float(self.ng_axis[j]), float(self.values[i, j])

    @property
    def peak_width(self) -> tuple[float, float]:
        """Extent along flux and ng of the cells above half the peak magnitude, through the peak."""
        flux, ng, value = self.peak
        i = int(np.searchsorted(self.flux_axis, flux))
        j = int(np.searchsorted(self.ng_axis, ng))
        half = abs(value) / 2

        def extent(axis: np.ndarray, line: np.ndarray) -> float:
            above = axis[np.nan_to_num(np.abs(line)) >= half]
            return float(above.max() - above.min()) if above.size else 0.0

        return extent(self.flux_axis, self.values[:, j]), extent(self.ng_axis, self.values[i, :])


def curvature_grid(
    params: CircuitParams,
    flux_axis: Sequence[float],
    ng_axis: Sequence[float],
    k: int,
    l: int,
    threads: Optional[int] = None,
    form: HamiltonianForm = "shifted",
) -> CurvatureGrid:
    """
    Sample B_kl on a rectangular grid.

    Points below the gap floor are flagged and stored as NaN.
    """
    fluxes = np.asarray(flux_axis, dtype=float)
    ngs = np.asarray(ng_axis, dtype=float)
    points = [(float(f), float(n)) for f in fluxes for n in ngs]
    logger.info(f"Curvature grid B_{k}{l} ({form} form): {fluxes.size} x {ngs.size} points")

    def sample(point: tuple[float, float]) -> float:
        try:
            return berry_curvature(params, point[0], point[1], k, l, form)
        except DegenerateGapError as e:
            logger.debug(str(e))
            return math.nan

    values = np.array(parallel_map(sample, points, threads)).reshape(fluxes.size, ngs.size)
    flagged = np.isnan(values)
    if flagged.any():
        logger.warning(f"{int(flagged.sum())} grid points below the gap floor for B_{k}{l}")
    return CurvatureGrid(
        flux_axis=fluxes, ng_axis=ngs, values=values, flagged=flagged, level_pair=(k, l),
    )


# =============================================================================
# Loops
# =============================================================================

@dataclass(frozen=True)
class RectanglePath:
    """Axis-aligned rectangle in (Φ, n_g); counter-clockwise unless clockwise is set."""
    flux_min: float
    flux_max: float
    ng_min: float
    ng_max: float
    clockwise: bool = False

    def __post_init__(self):
        if self.flux_max < self.flux_min or self.ng_max < self.ng_min:
            raise DegenerateInputError("Rectangle bounds must satisfy min <= max")

    @classmethod
    def from_spec(cls, spec: RectangleSpec) -> "RectanglePath":
        scale = math.pi if spec.in_units_of_pi else 1.0
        return cls(
            flux_min=spec.flux_min * scale,
            flux_max=spec.flux_max * scale,
            ng_min=spec.ng_min,
            ng_max=spec.ng_max,
            clockwise=spec.clockwise,
        )

    @property
    def orientation(self) -> int:
        return -1 if self.clockwise else 1

    @property
    def area(self) -> float:
        return (self.flux_max - self.flux_min) * (self.ng_max - self.ng_min)

    def vertices(self) -> list[tuple[float, float]]:
        """Corners in traversal order; the first corner is repeated at the end."""
        corners = [
            (self.flux_min, self.ng_min),
            (self.flux_max, self.ng_min),
            (self.flux_max, self.ng_max),
            (self.flux_min, self.ng_max),
        ]
        if self.clockwise:
            corners = [corners[0]] + corners[:0:-1]
        return corners + [corners[0]]

    def discretize(self, n_steps: int) -> list[tuple[float, float]]:
        """Open list of points along the boundary, n_steps // 4 per edge."""
        per_edge = max(1, n_steps // 4)
        corners = self.vertices()
        points = []
        for (f0, n0), (f1, n1) in zip(corners, corners[1:]):
            for s in np.arange(per_edge) / per_edge:
                points.append((f0 + (f1 - f0) * s, n0 + (n1 - n0) * s))
        return points


@dataclass
class LoopPhaseResult:
    """Geometric phase of level k around a closed path.

    omega_by_level holds the per-level area integrals for the curvature
    method; Wilson loops only give the total and leave it empty.
    """
    level: int
    method: str  # "curvature" or "wilson"
    omega_total: float
    omega_by_level: dict[int, float]
    path: list[tuple[float, float]]
    min_gap_on_path: float
    truncation_estimate: float = 0.0
    resolution: int = 0  # quadrature cells per axis or boundary points
    diagnostics: dict = field(default_factory=dict)


def _min_neighbour_gap(energies: np.ndarray, k: int) -> float:
    gaps = []
    if k > 0:
        gaps.append(energies[k] - energies[k - 1])
    if k + 1 < energies.size:
        gaps.append(energies[k + 1] - energies[k])
    return float(min(gaps)) if gaps else math.inf


def area_integral(
    params: CircuitParams,
    path: RectanglePath,
    k: int,
    l_max: Optional[int] = None,
    flux_cells: int = 16,
    ng_cells: int = 16,
    threads: Optional[int] = None,
    form: HamiltonianForm = "shifted",
) -> tuple[dict[int, float], float]:
    """
    Midpoint-rule ∬ B_kl over the rectangle for each intermediate level.

    Returns:
        ({l: integral}, smallest neighbour gap of level k over the samples);
        integrals carry the path orientation

    Raises:
        DegenerateGapError: At the first sample below the gap floor
    """
    top = _top_level(params, k, l_max)
    if path.area == 0:
        return {l: 0.0 for l in range(top + 1) if l != k}, math.inf

    d_flux = (path.flux_max - path.flux_min) / flux_cells
    d_ng = (path.ng_max - path.ng_min) / ng_cells
    fluxes = path.flux_min + (np.arange(flux_cells) + 0.5) * d_flux
    ngs = path.ng_min + (np.arange(ng_cells) + 0.5) * d_ng
    junctions = {float(f): effective_junction(params, float(f)) for f in fluxes}
    points = [(float(f), float(n)) for f in fluxes for n in ngs]

    samples = parallel_map(
        lambda point: _point_row(params, point[0], point[1], k, top + 1, junctions[point[0]], form),
        points,
        threads,
    )
    rows = np.array([row for row, _ in samples])
    min_gap = min(_min_neighbour_gap(energies, k) for _, energies in samples)
    weight = path.orientation * d_flux * d_ng
    integrals = rows.sum(axis=0) * weight
    return {l: float(integrals[l]) for l in range(top + 1) if l != k}, min_gap


def loop_phase_curvature(
    params: CircuitParams,
    path: RectanglePath,
    k: int,
    interior_resolution: Optional[int] = None,
    l_max: Optional[int] = None,
    tol: Optional[float] = None,
    threads: Optional[int] = None,
    form: HamiltonianForm = "shifted",
) -> LoopPhaseResult:
    """
    Ω_k as the area integral of Σ_l B_kl over the enclosed rectangle.

    The midpoint rule on m x m cells is refined by doubling m; the result is
    the Richardson value (4 I_2m - I_m) / 3, accepted once |I_2m - I_m| / 3
    is below tol.

    Raises:
        DegenerateGapError: If a sample inside the region hits the gap floor
        QuadratureError: If settings.QUADRATURE_MAX cells per axis are not enough
    """
    tol = settings.QUADRATURE_TOL if tol is None else tol
    cells = interior_resolution or settings.QUADRATURE_START
    top = _top_level(params, k, l_max)

    if path.area == 0:
        by_level = {l: 0.0 for l in range(top + 1) if l != k}
        return LoopPhaseResult(
            level=k, method="curvature", omega_total=0.0, omega_by_level=by_level,
            path=path.vertices(), min_gap_on_path=math.inf, resolution=0,
        )

    coarse, min_gap = area_integral(params, path, k, top, cells, cells, threads, form)
    while 2 * cells <= settings.QUADRATURE_MAX:
        fine, fine_gap = area_integral(params, path, k, top, 2 * cells, 2 * cells, threads, form)
        min_gap = min(min_gap, fine_gap)
        error = abs(sum(fine.values()) - sum(coarse.values())) / 3
        logger.info(f"Loop quadrature for level {k}: {2 * cells} cells/axis, error estimate {error:.2e}")
        if error < tol:
            by_level = {l: (4 * fine[l] - coarse[l]) / 3 for l in fine}
            return LoopPhaseResult(
                level=k,
                method="curvature",
                omega_total=float(sum(by_level.values())),
                omega_by_level=by_level,
                path=path.vertices(),
                min_gap_on_path=min_gap,
                truncation_estimate=abs(by_level.get(top, 0.0)),
                resolution=2 * cells,
                diagnostics={"error_estimate": error, "l_max": top, "form": form},
            )
        coarse = fine
        cells *= 2

    raise QuadratureError(
        f"Area quadrature for level {k} not stable to {tol:g} at {settings.QUADRATURE_MAX} cells per axis"
    )


def wilson_phase(states: Sequence[np.ndarray]) -> float:
    """-arg Π <ψ_j|ψ_j+1> around a closed list of states, in (-π, π]."""
    total = 0.0
    for current, following in zip(states, [*states[1:], states[0]]):
        overlap = np.vdot(current, following)
        if abs(overlap) < 1e-12:
            raise DegenerateGapError("Consecutive loop states are orthogonal; refine the path")
        total -= float(np.angle(overlap))
    wrapped = math.remainder(total, 2 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def loop_phase_wilson(
    params: CircuitParams,
    path: RectanglePath,
    k: int,
    n_steps: Optional[int] = None,
    threads: Optional[int] = None,
    form: HamiltonianForm = "shifted",
) -> LoopPhaseResult:
    """
    Ω_k from the discrete Wilson loop of level k along the rectangle boundary.

    In the shifted form the junction phase branch is followed from point to
    point so the eigenvectors come from one continuous family of
    Hamiltonians. The unshifted form has no branch to follow.

    Raises:
        DegenerateGapError: If level k meets a neighbour within the gap floor
    """
    n_steps = n_steps or settings.WILSON_STEPS
    points = path.discretize(n_steps)

    junctions: list[EffectiveJunction] = []
    previous = None
    for flux, _ in points:
        previous = effective_junction(params, flux, reference=previous)
        junctions.append(previous)

    levels = min(k + 2, params.dim)
    results = parallel_map(
        lambda item: _form_spectrum(params.replace(ng=item[0][1]), item[0][0], levels, item[1], form),
        list(zip(points, junctions)),
        threads,
    )

    min_gap = min(_min_neighbour_gap(r.energies, k) for r in results)
    if min_gap <= settings.GAP_FLOOR_MHZ:
        worst = min(results, key=lambda r: _min_neighbour_gap(r.energies, k))
        raise DegenerateGapError(
            f"Level {k} meets a neighbour on the loop at flux={worst.flux:.6g}, ng={worst.ng:.6g} "
            f"(gap {min_gap:.3e} MHz)"
        )

    omega = 0.0 if path.area == 0 else wilson_phase([r.states[:, k] for r in results])
    return LoopPhaseResult(
        level=k,
        method="wilson",
        omega_total=omega,
        omega_by_level={},
        path=path.vertices(),
        min_gap_on_path=min_gap,
        resolution=len(points),
    )
