"""Job service - Load run configs and turn each job kind into payload tables."""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from functools import partial
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from pydantic import ValidationError

from app.models import (
    BerryGridJob,
    BerryLoopJob,
    CircuitParams,
    ConvergenceJob,
    PulseJob,
    RunConfig,
    SpectrumSweepJob,
    SplittingJob,
    TippingScanJob,
)
from app.services import dynamics, holonomy, spectral
from app.services.circuit import potential_energy
from app.services.errors import ConfigError, DegenerateInputError
from app.services.export import Table, write_tables
from app.services.workers import parallel_map
from app.settings import settings

logger = logging.getLogger(__name__)


@dataclass
class JobOutput:
    tables: list[Table]
    metadata: dict = field(default_factory=dict)


# =============================================================================
# Config loading
# =============================================================================

def describe_validation_error(error: ValidationError) -> str:
    """One line per problem, each naming the offending field path."""
    lines = []
    for problem in error.errors():
        location = ".".join(str(part) for part in problem["loc"]) or "<root>"
        lines.append(f"{location}: {problem['msg']}")
    return "; ".join(lines)


def parse_run_config(data: dict, kind: Optional[str] = None) -> RunConfig:
    """
    Validate a run config dict.

    Args:
        data: Parsed config document
        kind: Job kind from the command line; filled in when the job section
            omits it, and must match when it does not

    Raises:
        ConfigError: On any schema problem, with the field path in the message
    """
    if not isinstance(data, dict):
        raise ConfigError("Config document must be a JSON object")
    data = dict(data)
    if kind is not None:
        job = data.get("job")
        if not isinstance(job, dict):
            raise ConfigError("job: section missing")
        declared = job.get("kind")
        if declared is not None and declared != kind:
            raise ConfigError(f"job.kind: config declares {declared!r} but the command is {kind!r}")
        data["job"] = {**job, "kind": kind}
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid config: {describe_validation_error(e)}")


def load_run_config(path: Path, kind: Optional[str] = None) -> RunConfig:
    """Read and validate a JSON run config file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")
    return parse_run_config(data, kind)


# =============================================================================
# Job runners
# =============================================================================

def _energy_columns(levels: int) -> list[str]:
    return [f"E{i}_MHz" for i in range(levels)]


def run_spectrum_sweep(params: CircuitParams, job: SpectrumSweepJob, threads: Optional[int]) -> JobOutput:
    grid = job.grid.values()
    if job.variable == "flux":
        sweep = spectral.flux_sweep(params, grid, job.levels, threads)
        first = "flux_rad"
    else:
        sweep = spectral.ng_sweep(params, job.flux, grid, job.levels, threads)
        first = "ng"
    energies = sweep.energies if job.relative else sweep.absolute_energies
    rows = [[float(x), *map(float, e)] for x, e in zip(sweep.grid, energies)]
    tables = [Table([first, *_energy_columns(job.levels)], rows)]

    metadata = {"n_cut": params.n_cut, "variable": job.variable, "relative_to_ground": job.relative}
    if job.variable == "flux":
        reference = spectral.cooper_pair_box_spectrum(params, min(job.levels, params.dim))
        metadata["charge_qubit_reference_MHz"] = (reference.energies - reference.energies[0]).tolist()

    if job.wavefunctions is not None:
        tables.append(_wavefunction_table(params, job))
    return JobOutput(tables, metadata)


def _wavefunction_table(params: CircuitParams, job: SpectrumSweepJob) -> Table:
    spec = job.wavefunctions
    flux = spec.flux_rad
    phi = np.linspace(-math.pi, math.pi, spec.phi_points)
    result = spectral.spectrum_at(params, flux, job.levels)
    densities = [
        np.abs(spectral.phase_wavefunction(result.states[:, i], phi)) ** 2 for i in range(job.levels)
    ]
    potential = potential_energy(params, flux, phi)
    rows = [
        [float(phi[j]), float(potential[j]), *(float(d[j]) for d in densities)]
        for j in range(phi.size)
    ]
    columns = ["phi_rad", "U_MHz", *[f"density{i}_per_rad" for i in range(job.levels)]]
    return Table(
        columns,
        rows,
        name="wavefunctions",
        metadata={"flux_rad": flux, "energies_MHz": result.energies.tolist()},
    )


def run_splitting(params: CircuitParams, job: SplittingJob, threads: Optional[int]) -> JobOutput:
    grid = job.grid.values()
    values = job.ej1_sum_values if job.ej1_sum_values is not None else [params.ej1_sum]
    tables = []
    for ej1 in values:
        device = params.replace(ej1_sum=ej1)
        exact = parallel_map(lambda flux: spectral.qubit_splitting(device, float(flux)), grid, threads)

        def approx(flux: float) -> float:
            try:
                return spectral.splitting_approx(device, float(flux))
            except DegenerateInputError:
                return math.nan

        columns = ["flux_rad", "Eq_MHz"]
        if job.approx:
            columns.append("Eq_approx_MHz")
            rows = [[float(f), e, approx(f)] for f, e in zip(grid, exact)]
        else:
            rows = [[float(f), e] for f, e in zip(grid, exact)]
        name = f"ej1_{ej1:g}" if job.ej1_sum_values is not None else ""
        tables.append(Table(columns, rows, name=name, metadata={"ej1_sum_MHz": ej1}))
    return JobOutput(tables, {"n_cut": params.n_cut})


def run_pulse(params: CircuitParams, job: PulseJob, threads: Optional[int], seed: int = 0) -> JobOutput:
    schedule = dynamics.PulseSchedule.from_specs(job.segments)
    basis = spectral.localize_qubit_basis(params, job.anchor_flux)
    frame = dynamics.logical_frame(params, basis)
    psi = dynamics.qubit_state(frame, job.initial, np.random.default_rng(seed))
    dt = job.dt or min(settings.DT_US, schedule.shortest)

    if job.auto_dt:
        trajectory, dt = dynamics.propagate_converged(
            params, schedule, psi, dt, basis=basis, store_every=job.store_every
        )
    else:
        trajectory = dynamics.propagate(params, schedule, psi, dt, basis, job.store_every)

    p_plus = trajectory.probability(dynamics.qubit_state(frame, "plus"))
    bloch = trajectory.bloch
    populations = trajectory.populations
    rows = [
        [
            float(trajectory.times[i]),
            float(trajectory.fluxes[i]),
            *map(float, bloch[i]),
            float(populations[i, 0]),
            float(populations[i, 1]),
            float(p_plus[i]),
            float(trajectory.leakage[i]),
        ]
        for i in range(trajectory.times.size)
    ]
    columns = ["time_us", "flux_rad", "bloch_x", "bloch_y", "bloch_z", "p0", "p1", "p_plus", "leakage"]
    splitting = spectral.qubit_splitting(params, job.anchor_flux)
    metadata = {
        "n_cut": params.n_cut,
        "dt_us": dt,
        "anchor_flux_rad": job.anchor_flux,
        "Eq_anchor_MHz": splitting,
        "larmor_period_us": 1 / splitting if splitting > 0 else math.inf,
        "well_labels": list(basis.well_labels),
    }
    if job.initial == "random":
        metadata["seed"] = seed
    return JobOutput([Table(columns, rows)], metadata)


def run_tipping_scan(params: CircuitParams, job: TippingScanJob, threads: Optional[int]) -> JobOutput:
    basis = spectral.localize_qubit_basis(params, job.anchor_flux)
    axes = parallel_map(lambda flux: dynamics.tipping_axis(params, float(flux), basis), job.grid.values(), threads)
    rows = [
        [
            a.flux, a.theta, a.azimuth, *map(float, a.field),
            a.validity.gap, a.validity.leakage_step, a.validity.valid,
        ]
        for a in axes
    ]
    columns = [
        "flux_rad", "theta_rad", "azimuth_rad", "hx_MHz", "hy_MHz", "hz_MHz",
        "gap_MHz", "leakage_step", "valid",
    ]
    invalid = [a.flux for a in axes if not a.validity.valid]
    flips = [(a.flux, b.flux) for a, b in zip(axes, axes[1:]) if a.validity.valid != b.validity.valid]
    metadata = {
        "n_cut": params.n_cut,
        "anchor_flux_rad": job.anchor_flux,
        "leakage_threshold": settings.LEAKAGE_THRESHOLD,
        "first_invalid_flux_rad": invalid[0] if invalid else None,
        "validity_edge_rad": dynamics.validity_edge(params, *flips[0], basis) if flips else None,
    }
    return JobOutput([Table(columns, rows)], metadata)


def run_berry_grid(params: CircuitParams, job: BerryGridJob, threads: Optional[int]) -> JobOutput:
    k, l = job.levels
    grid = holonomy.curvature_grid(params, job.flux.values(), job.ng.values(), k, l, threads, job.form)
    rows = [
        [float(f), float(n), float(grid.values[i, j]), bool(grid.flagged[i, j])]
        for i, f in enumerate(grid.flux_axis)
        for j, n in enumerate(grid.ng_axis)
    ]
    metadata = {
        "n_cut": params.n_cut,
        "levels": [k, l],
        "form": job.form,
        "flagged_points": int(grid.flagged.sum()),
    }
    if not grid.flagged.all():
        peak_flux, peak_ng, peak_value = grid.peak
        width_flux, width_ng = grid.peak_width
        metadata.update(
            peak_flux_rad=peak_flux,
            peak_ng=peak_ng,
            peak_value=peak_value,
            peak_width_flux_rad=width_flux,
            peak_width_ng=width_ng,
        )
    return JobOutput([Table(["flux_rad", "ng", "B", "flagged"], rows)], metadata)


def run_berry_loop(params: CircuitParams, job: BerryLoopJob, threads: Optional[int]) -> JobOutput:
    path = holonomy.RectanglePath.from_spec(job.rectangle)
    values = job.ej1_sum_values if job.ej1_sum_values is not None else [params.ej1_sum]
    k = job.level
    intermediate = holonomy.intermediate_levels(params, k, job.l_max)
    columns = [
        "ej1_sum_MHz",
        "omega_curvature_rad",
        *[f"omega_{k}_{l}_rad" for l in intermediate],
        "truncation_rad",
        "omega_wilson_rad",
        "min_gap_MHz",
    ]

    rows = []
    for ej1 in values:
        device = params.replace(ej1_sum=ej1)
        curvature = wilson = None
        if job.method in ("curvature", "both"):
            curvature = holonomy.loop_phase_curvature(
                device, path, k, job.interior_resolution, job.l_max, threads=threads, form=job.form
            )
        if job.method in ("wilson", "both"):
            wilson = holonomy.loop_phase_wilson(device, path, k, job.n_steps, threads, job.form)
        gaps = [r.min_gap_on_path for r in (curvature, wilson) if r is not None]
        rows.append([
            ej1,
            curvature.omega_total if curvature else math.nan,
            *[curvature.omega_by_level[l] if curvature else math.nan for l in intermediate],
            curvature.truncation_estimate if curvature else math.nan,
            wilson.omega_total if wilson else math.nan,
            min(gaps),
        ])
    metadata = {
        "n_cut": params.n_cut,
        "level": k,
        "path": path.vertices(),
        "method": job.method,
        "form": job.form,
    }
    return JobOutput([Table(columns, rows)], metadata)


def run_convergence(params: CircuitParams, job: ConvergenceJob, threads: Optional[int]) -> JobOutput:
    report = spectral.convergence_check(params, job.flux, job.tol)
    rows = [[n_cut, change] for n_cut, change in report.history]
    metadata = {"n_star": report.n_star, "tol": report.tol, "levels": report.levels, "flux_rad": job.flux}
    return JobOutput([Table(["n_cut", "rel_change"], rows)], metadata)


RUNNERS: dict[str, Callable] = {
    "spectrum-sweep": run_spectrum_sweep,
    "splitting": run_splitting,
    "pulse": run_pulse,
    "tipping-scan": run_tipping_scan,
    "berry-grid": run_berry_grid,
    "berry-loop": run_berry_loop,
    "convergence": run_convergence,
}


def run_job(config: RunConfig, threads: Optional[int] = None) -> JobOutput:
    """Dispatch a validated config to its job runner."""
    params = config.circuit.to_params()
    threads = threads if threads is not None else config.threads
    logger.info(f"Running {config.job.kind} job (n_cut={params.n_cut})")
    runner = RUNNERS[config.job.kind]
    if config.job.kind == "pulse":
        runner = partial(run_pulse, seed=config.seed)
    return runner(params, config.job, threads)


def execute(
    config: RunConfig,
    directory: Optional[Path] = None,
    fmt: Optional[str] = None,
    threads: Optional[int] = None,
) -> list[Path]:
    """
    Run a job and write its tables.

    Output directory and format fall back from the arguments to the config's
    output section to settings.

    Returns:
        Paths of the written files
    """
    directory = Path(directory or config.output.directory or settings.OUTPUT_DIR)
    fmt = fmt or config.output.format or settings.OUTPUT_FORMAT
    started_at = datetime.now(timezone.utc)
    start = time.perf_counter()
    output = run_job(config, threads)
    elapsed = time.perf_counter() - start
    return write_tables(config, output.tables, directory, fmt, started_at, elapsed, output.metadata)
