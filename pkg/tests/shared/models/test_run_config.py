import pytest
from pydantic import TypeAdapter, ValidationError

from shared.models.run_config import CoefficientsConfig, RunConfig, ZenerConfig

RUN_CONFIG = TypeAdapter(RunConfig)


def test_minimal_config_takes_defaults(minimal_config):
    """
    Test that only the material section is mandatory.
    """
    cfg = RUN_CONFIG.validate_python(minimal_config)

    assert isinstance(cfg.material, CoefficientsConfig)
    assert cfg.grid.n == 128
    assert cfg.evolution.eps == 0.0
    assert cfg.experiment.selector == "run"
    assert cfg.monitors.diagnostics == [
        "energy",
        "identity",
        "riccati",
        "hessian",
        "blowup",
    ]
    assert cfg.seed == 0


def test_zener_material_is_discriminated(zener_config):
    cfg = RUN_CONFIG.validate_python(zener_config)

    assert isinstance(cfg.material, ZenerConfig)
    assert cfg.material.stiffness.kind == "constant"


def test_equal_relaxation_and_retardation_times_accepted(zener_config):
    zener_config["material"]["tau_ret"] = 1.0

    assert RUN_CONFIG.validate_python(zener_config).material.tau_ret == 1.0


@pytest.mark.parametrize(
    "patch",
    [
        {"material": {"kind": "glass"}},
        {"grid": {"n": 4}},
        {"evolution": {"dt": -1.0}},
        {"evolution": {"scheme": "euler"}},
        {"monitors": {"diagnostics": ["entropy"]}},
        {"experiment": {"selector": "plot"}},
        {"experiment": {"sweep_eps": {"eps_list": [1e-3, 1e-2]}}},
        {"experiment": {"sweep_eps": {"eps_list": [1e-2, -1.0]}}},
        {"initial": {"u0": {"kind": "tabulated", "abscissae": [0.0]}}},
        {"output": {"formats": ["xml"]}},
        {"seed": -1},
        {"seed": 2**64},
        {"extra": True},
    ],
)
def test_invalid_documents_rejected(minimal_config, patch):
    """
    Test that schema violations surface as ValidationError.

    Steps:
      1. Merge one invalid section into the minimal document.

    Expected:
      - Validation fails, unknown keys included.
    """
    with pytest.raises(ValidationError):
        RUN_CONFIG.validate_python({**minimal_config, **patch})


def test_zener_times_order_enforced(zener_config):
    zener_config["material"]["tau_rel"] = 3.0

    with pytest.raises(ValidationError, match="tau_rel < tau_ret"):
        RUN_CONFIG.validate_python(zener_config)


def test_nested_unknown_key_rejected(zener_config):
    zener_config["material"]["viscosity"] = 1.0

    with pytest.raises(ValidationError):
        RUN_CONFIG.validate_python(zener_config)
