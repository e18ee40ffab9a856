import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shared.numerics.laws import (
    ConstantLaw,
    ExponentialLaw,
    PolynomialLaw,
    TabulatedLaw,
)

THETA = np.linspace(0.0, 3.0, 31)


def test_constant_law():
    law = ConstantLaw(2.5)

    np.testing.assert_array_equal(law(THETA), 2.5)
    np.testing.assert_array_equal(law.d1(THETA), 0.0)
    np.testing.assert_array_equal(law.d2(THETA), 0.0)


def test_polynomial_law_derivatives():
    law = PolynomialLaw([1.0, 2.0, 3.0])

    np.testing.assert_allclose(law(THETA), 1.0 + 2.0 * THETA + 3.0 * THETA**2)
    np.testing.assert_allclose(law.d1(THETA), 2.0 + 6.0 * THETA)
    np.testing.assert_allclose(law.d2(THETA), 6.0)


def test_exponential_law_derivatives():
    law = ExponentialLaw(2.0, 0.5, 1.0)

    np.testing.assert_allclose(law(THETA), 2.0 * np.exp(0.5 * THETA) + 1.0)
    np.testing.assert_allclose(law.d1(THETA), np.exp(0.5 * THETA))
    np.testing.assert_allclose(law.d2(THETA), 0.5 * np.exp(0.5 * THETA))


def test_tabulated_law_reproduces_cubic():
    """
    Test that the spline reproduces a cubic through its knots together with
    both derivatives (not-a-knot end conditions are exact for cubics).
    """
    knots = np.linspace(0.0, 3.0, 7)
    law = TabulatedLaw(knots, 1.0 + knots**3)

    np.testing.assert_allclose(law(THETA), 1.0 + THETA**3, atol=1e-10)
    np.testing.assert_allclose(law.d1(THETA), 3.0 * THETA**2, atol=1e-9)
    np.testing.assert_allclose(law.d2(THETA), 6.0 * THETA, atol=1e-8)


def test_tabulated_law_rejects_unsorted_abscissae():
    with pytest.raises(ValueError, match="strictly increasing"):
        TabulatedLaw([0.0, 2.0, 1.0], [1.0, 2.0, 3.0])


def test_clamped_continuation_below_zero():
    """
    Test constant continuation: below zero the value freezes at law(0)
    and both derivatives vanish.
    """
    law = PolynomialLaw([1.0, 1.0, 1.0])
    theta = np.array([-2.0, -1e-12, 0.0, 1.0])

    np.testing.assert_allclose(law.clamped(theta), [1.0, 1.0, 1.0, 3.0])
    np.testing.assert_allclose(law.clamped_d1(theta), [0.0, 0.0, 1.0, 3.0])
    np.testing.assert_allclose(law.clamped_d2(theta), [0.0, 0.0, 2.0, 2.0])


@given(factor=st.floats(0.01, 100.0), theta=st.floats(0.0, 5.0))
def test_scaled_law_is_linear(factor, theta):
    base = ExponentialLaw(1.0, 0.3)
    law = base.scaled(factor)

    assert float(law(theta)) == pytest.approx(factor * float(base(theta)))
    assert float(law.d1(theta)) == pytest.approx(factor * float(base.d1(theta)))
    assert float(law.d2(theta)) == pytest.approx(factor * float(base.d2(theta)))
