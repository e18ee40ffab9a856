"""
Temperature laws with value, first and second derivative evaluators.

Every law is defined on [0, inf). `clamped*` evaluators extend it below
zero by constant continuation (value at 0, vanishing derivatives); they are
what the solvers use, so that tiny negative temperature undershoots never
leave the domain of the coefficients.
"""

from abc import ABC, abstractmethod

import numpy as np
from numpy.polynomial import Polynomial
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import CubicSpline

Values = NDArray[np.float64]


class ScalarLaw(ABC):
    """A C^2 scalar function of temperature."""

    @abstractmethod
    def value(self, theta: ArrayLike) -> Values: ...

    @abstractmethod
    def d1(self, theta: ArrayLike) -> Values: ...

    @abstractmethod
    def d2(self, theta: ArrayLike) -> Values: ...

    def __call__(self, theta: ArrayLike) -> Values:
        return self.value(theta)

    def clamped(self, theta: ArrayLike) -> Values:
        return self.value(np.maximum(np.asarray(theta, dtype=np.float64), 0.0))

    def clamped_d1(self, theta: ArrayLike) -> Values:
        theta = np.asarray(theta, dtype=np.float64)
        return np.where(theta < 0.0, 0.0, self.d1(np.maximum(theta, 0.0)))

    def clamped_d2(self, theta: ArrayLike) -> Values:
        theta = np.asarray(theta, dtype=np.float64)
        return np.where(theta < 0.0, 0.0, self.d2(np.maximum(theta, 0.0)))

    def scaled(self, factor: float) -> "ScalarLaw":
        return ScaledLaw(self, factor)


class ConstantLaw(ScalarLaw):
    def __init__(self, c: float):
        self.c = float(c)

    def value(self, theta):
        return np.full(np.shape(theta), self.c)

    def d1(self, theta):
        return np.zeros(np.shape(theta))

    def d2(self, theta):
        return np.zeros(np.shape(theta))

    def __repr__(self) -> str:
        return f"ConstantLaw({self.c})"


class PolynomialLaw(ScalarLaw):
    """sum_k coefficients[k] * theta**k."""

    def __init__(self, coefficients):
        self.poly = Polynomial(np.asarray(coefficients, dtype=np.float64))
        self._d1 = self.poly.deriv(1)
        self._d2 = self.poly.deriv(2)

    def value(self, theta):
        return np.asarray(self.poly(np.asarray(theta, dtype=np.float64)), float)

    def d1(self, theta):
        return np.asarray(self._d1(np.asarray(theta, dtype=np.float64)), float)

    def d2(self, theta):
        return np.asarray(self._d2(np.asarray(theta, dtype=np.float64)), float)

    def __repr__(self) -> str:
        return f"PolynomialLaw({list(self.poly.coef)})"


class ExponentialLaw(ScalarLaw):
    """a * exp(b * theta) + c."""

    def __init__(self, a: float, b: float, c: float = 0.0):
        self.a, self.b, self.c = float(a), float(b), float(c)

    def value(self, theta):
        return self.a * np.exp(self.b * np.asarray(theta, dtype=np.float64)) + self.c

    def d1(self, theta):
        return self.a * self.b * np.exp(self.b * np.asarray(theta, dtype=np.float64))

    def d2(self, theta):
        return (
            self.a * self.b**2 * np.exp(self.b * np.asarray(theta, dtype=np.float64))
        )

    def __repr__(self) -> str:
        return f"ExponentialLaw(a={self.a}, b={self.b}, c={self.c})"


class TabulatedLaw(ScalarLaw):
    """Cubic spline through (abscissae, values); abscissae strictly increasing."""

    def __init__(self, abscissae, values):
        x = np.asarray(abscissae, dtype=np.float64)
        if x.ndim != 1 or len(x) < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("tabulated abscissae must be strictly increasing")
        self.spline = CubicSpline(x, np.asarray(values, dtype=np.float64))

    def value(self, theta):
        return np.asarray(self.spline(np.asarray(theta, dtype=np.float64)), float)

    def d1(self, theta):
        return np.asarray(self.spline(np.asarray(theta, dtype=np.float64), 1), float)

    def d2(self, theta):
        return np.asarray(self.spline(np.asarray(theta, dtype=np.float64), 2), float)

    def __repr__(self) -> str:
        return f"TabulatedLaw(knots={len(self.spline.x)})"


class ScaledLaw(ScalarLaw):
    """factor * base(theta); derivatives follow by linearity."""

    def __init__(self, base: ScalarLaw, factor: float):
        self.base = base
        self.factor = float(factor)

    def value(self, theta):
        return self.factor * self.base.value(theta)

    def d1(self, theta):
        return self.factor * self.base.d1(theta)

    def d2(self, theta):
        return self.factor * self.base.d2(theta)

    def __repr__(self) -> str:
        return f"ScaledLaw({self.factor} * {self.base!r})"
