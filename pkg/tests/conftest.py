import math

import pytest

from modules.circulator.model_core import CircuitParams, SquidArraySpec


@pytest.fixture
def spec():
    return SquidArraySpec()


@pytest.fixture
def nominal_params():
    """Lossless 4-5 GHz band device with a moderate imbalance."""
    return CircuitParams(2.5e-9, 0.15, 1e-12, 50.0, 2 * math.pi * 120e6, math.pi / 2)


@pytest.fixture
def balanced_params():
    return CircuitParams(1e-9, 0.0, 1e-12, 50.0, 2 * math.pi * 120e6)


@pytest.fixture
def run_config(tmp_path):
    """Raw config dict writing into a temporary directory."""
    return {
        "experiment": {"name": "power-budget"},
        "output": {"directory": str(tmp_path / "out"), "formats": ["csv", "json"], "plot_stub": False},
    }
