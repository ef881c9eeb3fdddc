"""Pydantic models for circuit parameters, run configurations and results."""

import math
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.settings import settings


# =============================================================================
# Circuit
# =============================================================================

class CircuitParams(BaseModel):
    """Raw circuit constants. Energies are E/h in MHz."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    ej1_sum: float = Field(ge=0)  # single Cooper pair tunneling, both junctions
    ej2_sum: float = Field(ge=0)  # pair tunneling, both junctions
    d1: float = Field(default=0.0, gt=-1, lt=1)
    d2: float = Field(default=0.0, gt=-1, lt=1)
    ec: float = Field(gt=0)
    ng: float = 0.0
    n_cut: int = Field(default_factory=lambda: settings.N_CUT, ge=4)

    @property
    def dim(self) -> int:
        return 2 * self.n_cut + 1

    def replace(self, **changes) -> "CircuitParams":
        """Return a validated copy with some fields changed."""
        return CircuitParams.model_validate({**self.model_dump(), **changes})

    @classmethod
    def from_junctions(
        cls,
        ej1_a: float,
        ej1_b: float,
        ej2_a: float,
        ej2_b: float,
        ec: float,
        ng: float = 0.0,
        n_cut: Optional[int] = None,
    ) -> "CircuitParams":
        """Build parameters from the four per-junction tunneling energies."""
        from app.services.circuit import junction_from_energies

        ej1_sum, d1 = junction_from_energies(ej1_a, ej1_b)
        ej2_sum, d2 = junction_from_energies(ej2_a, ej2_b)
        fields = dict(ej1_sum=ej1_sum, ej2_sum=ej2_sum, d1=d1, d2=d2, ec=ec, ng=ng)
        if n_cut is not None:
            fields["n_cut"] = n_cut
        return cls(**fields)

    @classmethod
    def reference_device(cls, **overrides) -> "CircuitParams":
        """E_J2/E_C = 30, E_J1/E_J2 = 0.1, E_C = 200 MHz, n_g = 0, d1 = d2 = 0.05."""
        fields = dict(ej1_sum=600.0, ej2_sum=6000.0, d1=0.05, d2=0.05, ec=200.0, ng=0.0)
        fields.update(overrides)
        return cls(**fields)


class CircuitConfig(BaseModel):
    """Circuit section of a run config: sums and asymmetries, or per-junction energies."""
    model_config = ConfigDict(extra="forbid")

    ej1_sum: Optional[float] = Field(default=None, ge=0)
    ej2_sum: Optional[float] = Field(default=None, ge=0)
    d1: Optional[float] = Field(default=None, gt=-1, lt=1)
    d2: Optional[float] = Field(default=None, gt=-1, lt=1)
    ej1_a: Optional[float] = Field(default=None, ge=0)
    ej1_b: Optional[float] = Field(default=None, ge=0)
    ej2_a: Optional[float] = Field(default=None, ge=0)
    ej2_b: Optional[float] = Field(default=None, ge=0)
    ec: float = Field(gt=0)
    ng: float = 0.0
    n_cut: Optional[int] = Field(default=None, ge=4)

    @model_validator(mode="after")
    def _one_parameterisation(self) -> "CircuitConfig":
        sums = [self.ej1_sum, self.ej2_sum]
        junctions = [self.ej1_a, self.ej1_b, self.ej2_a, self.ej2_b]
        given_sums = any(v is not None for v in sums + [self.d1, self.d2])
        given_junctions = any(v is not None for v in junctions)
        if given_sums and given_junctions:
            raise ValueError("give either ej1_sum/ej2_sum/d1/d2 or ej1_a/ej1_b/ej2_a/ej2_b, not both")
        if given_junctions and any(v is None for v in junctions):
            raise ValueError("per-junction form needs all of ej1_a, ej1_b, ej2_a, ej2_b")
        if not given_junctions and any(v is None for v in sums):
            raise ValueError("ej1_sum and ej2_sum are required")
        return self

    def to_params(self) -> CircuitParams:
        if self.ej1_a is not None:
            return CircuitParams.from_junctions(
                self.ej1_a, self.ej1_b, self.ej2_a, self.ej2_b,
                ec=self.ec, ng=self.ng, n_cut=self.n_cut,
            )
        fields = dict(
            ej1_sum=self.ej1_sum,
            ej2_sum=self.ej2_sum,
            d1=self.d1 or 0.0,
            d2=self.d2 or 0.0,
            ec=self.ec,
            ng=self.ng,
        )
        if self.n_cut is not None:
            fields["n_cut"] = self.n_cut
        return CircuitParams(**fields)


# =============================================================================
# Job sections
# =============================================================================

class GridSpec(BaseModel):
    """Uniform grid; flux grids may be given in units of π."""
    model_config = ConfigDict(extra="forbid")

    start: float
    stop: float
    points: int = Field(ge=1)
    in_units_of_pi: bool = False

    @model_validator(mode="after")
    def _monotone(self) -> "GridSpec":
        if self.points > 1 and self.start == self.stop:
            raise ValueError("grid with more than one point needs start != stop")
        return self

    def values(self) -> np.ndarray:
        scale = math.pi if self.in_units_of_pi else 1.0
        return np.linspace(self.start, self.stop, self.points) * scale


class WavefunctionSpec(BaseModel):
    """Phase-space sampling of eigenstates for well plots."""
    model_config = ConfigDict(extra="forbid")

    flux: float = math.pi
    in_units_of_pi: bool = False
    phi_points: int = Field(default=201, ge=3)

    @property
    def flux_rad(self) -> float:
        return self.flux * math.pi if self.in_units_of_pi else self.flux


class SpectrumSweepJob(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["spectrum-sweep"] = "spectrum-sweep"
    variable: Literal["flux", "ng"] = "flux"
    grid: GridSpec
    levels: int = Field(default=6, ge=1)
    flux: float = math.pi  # fixed flux for ng sweeps
    relative: bool = True
    wavefunctions: Optional[WavefunctionSpec] = None


class SplittingJob(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["splitting"] = "splitting"
    grid: GridSpec
    ej1_sum_values: Optional[list[Annotated[float, Field(ge=0)]]] = None
    approx: bool = True


class SegmentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["ramp", "hold"]
    duration: float = Field(gt=0)  # µs
    flux_start: float
    flux_end: Optional[float] = None
    in_units_of_pi: bool = False

    @model_validator(mode="after")
    def _hold_is_flat(self) -> "SegmentSpec":
        if self.kind == "ramp" and self.flux_end is None:
            raise ValueError("ramp segments need flux_end")
        if self.kind == "hold" and self.flux_end is not None and self.flux_end != self.flux_start:
            raise ValueError("hold segments keep flux_end equal to flux_start")
        return self


class PulseJob(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["pulse"] = "pulse"
    segments: list[SegmentSpec] = Field(min_length=1)
    initial: Literal["psi0", "psi1", "plus", "minus", "plus_i", "minus_i", "random"] = "plus"
    dt: Optional[float] = Field(default=None, gt=0)
    auto_dt: bool = False
    store_every: int = Field(default=1, ge=1)
    anchor_flux: float = math.pi


class TippingScanJob(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["tipping-scan"] = "tipping-scan"
    grid: GridSpec
    anchor_flux: float = math.pi


class BerryGridJob(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["berry-grid"] = "berry-grid"
    flux: GridSpec
    ng: GridSpec
    levels: tuple[int, int] = (1, 2)
    form: Literal["shifted", "unshifted"] = "shifted"


class RectangleSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    flux_min: float
    flux_max: float
    ng_min: float
    ng_max: float
    in_units_of_pi: bool = False
    clockwise: bool = False

    @model_validator(mode="after")
    def _ordered(self) -> "RectangleSpec":
        if self.flux_max < self.flux_min or self.ng_max < self.ng_min:
            raise ValueError("rectangle bounds must satisfy min <= max")
        return self


class BerryLoopJob(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["berry-loop"] = "berry-loop"
    rectangle: RectangleSpec
    level: int = Field(default=1, ge=0)
    method: Literal["curvature", "wilson", "both"] = "both"
    interior_resolution: int = Field(default_factory=lambda: settings.QUADRATURE_START, ge=1)
    n_steps: int = Field(default_factory=lambda: settings.WILSON_STEPS, ge=4)
    l_max: Optional[int] = Field(default=None, ge=1)
    form: Literal["shifted", "unshifted"] = "shifted"
    ej1_sum_values: Optional[list[Annotated[float, Field(ge=0)]]] = None


class ConvergenceJob(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["convergence"] = "convergence"
    flux: float = math.pi
    tol: float = Field(default=1e-8, gt=0)


JobConfig = Annotated[
    Union[
        SpectrumSweepJob,
        SplittingJob,
        PulseJob,
        TippingScanJob,
        BerryGridJob,
        BerryLoopJob,
        ConvergenceJob,
    ],
    Field(discriminator="kind"),
]

JOB_KINDS = (
    "spectrum-sweep",
    "splitting",
    "pulse",
    "tipping-scan",
    "berry-grid",
    "berry-loop",
    "convergence",
)


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: Optional[Path] = None
    format: Optional[Literal["csv", "json"]] = None
    stem: Optional[str] = None


class RunConfig(BaseModel):
    """A complete, schema-checked job description."""
    model_config = ConfigDict(extra="forbid")

    circuit: CircuitConfig
    job: JobConfig
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = 0  # seeds random initial states
    threads: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _levels_fit_basis(self) -> "RunConfig":
        dim = 2 * (self.circuit.n_cut or settings.N_CUT) + 1
        job = self.job
        if isinstance(job, SpectrumSweepJob) and job.levels > dim:
            raise ValueError(f"job.levels={job.levels} exceeds the charge basis size 2*n_cut+1={dim}")
        if isinstance(job, BerryGridJob) and max(job.levels) >= dim:
            raise ValueError(f"job.levels={list(job.levels)} must be below the charge basis size {dim}")
        if isinstance(job, BerryLoopJob) and job.level + 1 >= dim:
            raise ValueError(f"job.level={job.level} needs a level above it in a basis of size {dim}")
        return self


# =============================================================================
# Results
# =============================================================================

class ResultEnvelope(BaseModel):
    """Metadata written alongside every payload table."""
    tool: str = "pisquid-sim"
    version: str
    table: str
    config: dict
    started_at: str
    wall_clock_s: float
    metadata: dict = {}
    payload_sha256: str
