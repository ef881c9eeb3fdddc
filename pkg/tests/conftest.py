"""Pytest fixtures for the π-SQUID simulator tests."""

import pytest
import tempfile
from pathlib import Path

from app.models import CircuitParams


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def test_settings(temp_dir):
    """Override settings for tests."""
    from app.settings import Settings

    return Settings(
        OUTPUT_DIR=temp_dir / "results",
        THREADS=1,
        LOG_LEVEL="WARNING",
    )


@pytest.fixture
def paper_params():
    """Reference device with a cutoff that keeps the low levels converged."""
    return CircuitParams.reference_device(n_cut=15)


@pytest.fixture
def toy_params():
    """Small circuit with comparable energies, for loop phases and dt studies."""
    return CircuitParams(ej1_sum=0.5, ej2_sum=1.0, d1=0.3, d2=0.2, ec=1.0, ng=0.0, n_cut=6)


@pytest.fixture
def reference_config():
    """Minimal valid run config document."""
    return {
        "circuit": {"ej1_sum": 600.0, "ej2_sum": 6000.0, "d1": 0.05, "d2": 0.05, "ec": 200.0, "n_cut": 12},
        "job": {
            "kind": "spectrum-sweep",
            "grid": {"start": 0.0, "stop": 2.0, "points": 9, "in_units_of_pi": True},
            "levels": 4,
        },
    }
