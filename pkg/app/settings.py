"""Simulator configuration from environment variables."""

import math
from pathlib import Path
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.version import __version__


class Settings(BaseSettings):
    """Simulator settings loaded from environment."""

    # Charge basis
    N_CUT: int = 25
    MAX_N_CUT: int = 120
    CONVERGENCE_STEP: int = 5
    CONVERGENCE_LEVELS: int = 6

    # Eigensolver checks
    HERMITICITY_TOL: float = 1e-12
    RESIDUAL_TOL: float = 1e-8
    ORTHONORMALITY_TOL: float = 1e-9

    # Qubit basis
    ANCHOR_FLUX: float = math.pi
    DEGENERACY_MHZ: float = 1e-9
    LOCALIZATION_TOL: float = 1e-6

    # Time evolution (MHz and microseconds)
    DT_US: float = 1e-4
    MAX_DT_HALVINGS: int = 6
    SELF_CONVERGENCE_TOL: float = 1e-6
    NORM_TOL: float = 1e-9
    LEAKAGE_THRESHOLD: float = 0.01
    ADIABATIC_LEAKAGE_MAX: float = 1e-3

    # Berry curvature and loop phases
    GAP_FLOOR_MHZ: float = 1e-6
    L_MAX: int = 8
    QUADRATURE_TOL: float = 1e-4
    QUADRATURE_START: int = 16
    QUADRATURE_MAX: int = 256
    WILSON_STEPS: int = 400

    # Runs and output
    THREADS: int = 0  # 0 = let the pool decide
    OUTPUT_DIR: Path = Path("results")
    OUTPUT_FORMAT: str = "csv"
    LOG_LEVEL: str = "INFO"
    APP_VERSION: str = __version__

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8")


settings = Settings()
