import numpy as np
import pytest

from braggtomo.forward import uniform_grid
from braggtomo.geometry import ScannerConfig


@pytest.fixture(scope="session")
def desk_scanner():
    """Reduced portal scanner: 11 sources, 120 detectors, 29 energies."""
    return ScannerConfig(
        w_x1=300.0,
        w_x2=410.0,
        beta=np.deg2rad(120.0),
        source_x1=np.linspace(-300.0, 300.0, 11),
        detector_x1=-300.0 + 5.0 * np.arange(120),
        energies=np.arange(1.0, 30.0),
    )


@pytest.fixture(scope="session")
def desk_grid():
    return uniform_grid(150, 120)


@pytest.fixture(scope="session")
def tiny_scanner():
    """Very small lattice for plumbing tests."""
    return ScannerConfig(
        w_x1=300.0,
        w_x2=410.0,
        beta=np.deg2rad(120.0),
        source_x1=np.linspace(-200.0, 200.0, 3),
        detector_x1=np.linspace(-250.0, 250.0, 24),
        energies=np.arange(4.0, 12.0),
    )


@pytest.fixture(scope="session")
def tiny_grid():
    return uniform_grid(40, 30)
