"""Exception taxonomy shared by the simulator services.

The command surface maps these onto exit codes: ConfigError -> 2,
ConvergenceError -> 3, DegenerateInputError -> 4.
"""


class SimulationError(Exception):
    """Base class for failures raised while computing a result."""
    pass


class ConvergenceError(SimulationError):
    """Raised when a numerical procedure fails to reach its tolerance."""
    pass


class EigensolverError(ConvergenceError):
    """Raised when a Hermitian eigensolve fails or fails its residual checks."""
    pass


class NormDriftError(ConvergenceError):
    """Raised when a propagation step breaks unitarity beyond tolerance."""
    pass


class AdiabaticityError(ConvergenceError):
    """Raised when an adiabatic gate leaks out of the qubit subspace."""
    pass


class QuadratureError(ConvergenceError):
    """Raised when area quadrature does not stabilise within its grid budget."""
    pass


class DegenerateInputError(SimulationError):
    """Raised when the inputs put a formula or basis outside its domain."""
    pass


class DegenerateGapError(DegenerateInputError):
    """Raised when two levels come closer than the gap floor."""
    pass


class TwoLevelBreakdownError(DegenerateInputError):
    """Raised when the qubit subspace leaks past the two-level threshold."""
    pass


class ScheduleError(DegenerateInputError):
    """Raised for malformed pulse schedules or out-of-range times."""
    pass


class ConfigError(Exception):
    """Raised when a run configuration fails schema validation."""
    pass
