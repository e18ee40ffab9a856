import numpy as np
import pytest

from apps.mgt.service.model_service import ModelService
from shared.config.config import Config
from shared.models.material import CoefficientSet, ZenerMaterial
from shared.models.state import InitialData
from shared.numerics.grid import Grid
from shared.numerics.laws import ConstantLaw, PolynomialLaw

MGT_ENV = (
    "MGT_OUTPUT_DIR",
    "MGT_LOG_LEVEL",
    "MGT_MAX_WORKERS",
    "MGT_BLOWUP_THRESHOLD",
    "MGT_BLOWUP_GROWTH",
    "MGT_UNDERSHOOT_TOL",
)


@pytest.fixture
def clean_env(monkeypatch):
    """Remove every MGT_* variable so Config falls back to its defaults."""
    for key in MGT_ENV:
        monkeypatch.delenv(key, raising=False)
    return monkeypatch


@pytest.fixture
def mock_config(clean_env):
    """
    Provide a Config with small, test-safe settings.

    Returns:
        Config: two workers and the default thresholds.
    """
    return Config(output_dir="out-test", log_level="DEBUG", max_workers=2)


@pytest.fixture
def grid():
    return Grid(length=1.0, n=33)


@pytest.fixture
def unit_coefficients():
    """gamma = ghat = 1, alpha = 1, D = 1, no heating."""
    return CoefficientSet.constant()


@pytest.fixture
def heated_coefficients():
    """Temperature-dependent laws with strain-rate heating."""
    return CoefficientSet(
        alpha=1.0,
        diffusivity=0.5,
        gamma=PolynomialLaw([1.0, 0.2]),
        ghat=PolynomialLaw([1.0, 0.1, 0.05]),
        heating=ConstantLaw(1.0),
    )


@pytest.fixture
def model_service():
    return ModelService()


def cosine_data(
    grid: Grid,
    u: float = 0.0,
    v: float = 0.0,
    w: float = 0.0,
    theta: float = 1.0,
    theta_mode: float = 0.0,
    mode: int = 1,
) -> InitialData:
    """Single-mode, mean-free mechanical data and a nonnegative temperature."""
    phi = np.cos(mode * np.pi * grid.nodes / grid.length)
    return InitialData(
        grid=grid,
        u0=u * phi,
        u0t=v * phi,
        u0tt=w * phi,
        theta0=theta + theta_mode * phi,
        means_removed=True,
    )


@pytest.fixture
def small_data(grid):
    return cosine_data(grid, u=1e-2, v=1e-2, theta=1.0, theta_mode=0.2)


@pytest.fixture
def zener_material():
    """tau_rel = 1, tau_ret = 2, c = 1, rho = 1, D = 1."""
    return ZenerMaterial(
        tau_rel=1.0,
        tau_ret=2.0,
        stiffness=ConstantLaw(1.0),
        density=1.0,
        diffusivity=1.0,
    )


@pytest.fixture
def minimal_config():
    """Smallest valid run configuration document."""
    return {"material": {"kind": "coefficients"}}


@pytest.fixture
def zener_config():
    return {
        "material": {
            "kind": "zener",
            "tau_rel": 1.0,
            "tau_ret": 2.0,
            "stiffness": {"kind": "constant", "parameters": [1.0]},
            "density": 1.0,
            "diffusivity": 1.0,
        }
    }


@pytest.fixture
def make_data():
    """Factory for single-mode initial data on any grid."""
    return cosine_data
