import numpy as np
import pytest
from pydantic import ValidationError

from shared.models.material import CoefficientSet, CoefficientSpec, ValidationReport
from shared.numerics.laws import (
    ConstantLaw,
    ExponentialLaw,
    PolynomialLaw,
    TabulatedLaw,
)


@pytest.mark.parametrize(
    "spec, law_type",
    [
        ({"kind": "constant", "parameters": [2.0]}, ConstantLaw),
        ({"kind": "polynomial", "parameters": [1.0, 0.5]}, PolynomialLaw),
        ({"kind": "exponential", "parameters": [1.0, 0.1]}, ExponentialLaw),
        (
            {
                "kind": "tabulated",
                "parameters": [1.0, 2.0, 4.0],
                "abscissae": [0.0, 1.0, 2.0],
            },
            TabulatedLaw,
        ),
    ],
)
def test_coefficient_spec_builds_law(spec, law_type):
    """
    Test that every kind of CoefficientSpec builds the matching evaluator.
    """
    law = CoefficientSpec(**spec).build()

    assert isinstance(law, law_type)
    assert np.all(np.isfinite(law(np.linspace(0.0, 2.0, 5))))


@pytest.mark.parametrize(
    "spec",
    [
        {"kind": "constant", "parameters": [1.0, 2.0]},
        {"kind": "polynomial", "parameters": []},
        {"kind": "exponential", "parameters": [1.0]},
        {"kind": "tabulated", "parameters": [1.0, 2.0]},
        {"kind": "tabulated", "parameters": [1.0, 2.0], "abscissae": [1.0, 0.0]},
        {"kind": "constant", "parameters": [1.0], "abscissae": [0.0]},
        {"kind": "spline", "parameters": [1.0]},
    ],
)
def test_coefficient_spec_rejects_invalid_parameters(spec):
    with pytest.raises(ValidationError):
        CoefficientSpec(**spec)


def test_coefficient_spec_forbids_unknown_keys():
    with pytest.raises(ValidationError):
        CoefficientSpec(kind="constant", parameters=[1.0], scale=2.0)


def test_constant_coefficient_set():
    c = CoefficientSet.constant(alpha=2.0, gamma=3.0, heating=0.5)

    assert c.alpha == 2.0
    assert c.diffusivity == 1.0
    assert float(c.gamma(1.0)) == 3.0
    assert float(c.ghat(1.0)) == 1.0
    assert float(c.heating(7.0)) == 0.5


def test_validation_report_outcome():
    """
    Test the derived properties of ValidationReport.

    Expected:
      - passed follows the failure list.
      - max_derivative_error is the worst entry, 0 for an empty map.
    """
    common = dict(
        theta_max=1.0,
        samples=1000,
        min_gamma=1.0,
        argmin_gamma=0.0,
        min_ghat=1.0,
        argmin_ghat=0.0,
        min_heating=0.0,
        argmin_heating=0.0,
    )
    ok = ValidationReport(
        **common, derivative_errors={"gamma.d1": 1e-9, "ghat.d1": 1e-7}, failures=[]
    )
    bad = ValidationReport(**common, derivative_errors={}, failures=["gamma=-1"])

    assert ok.passed
    assert ok.max_derivative_error == 1e-7
    assert not bad.passed
    assert bad.max_derivative_error == 0.0
