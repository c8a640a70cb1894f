import numpy as np
import pytest

from teecontrol.config import load_controller_config, load_plant_config


@pytest.fixture(scope="session")
def plant():
    return load_plant_config()


@pytest.fixture(scope="session")
def controller():
    return load_controller_config()


@pytest.fixture(scope="session")
def model(plant, controller):
    return controller.model(plant)


def taylor_expm(M, terms=60):
    """Truncated power series, used as an oracle independent of scipy."""
    M = np.asarray(M, dtype=float)
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out
