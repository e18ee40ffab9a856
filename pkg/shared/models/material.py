from typing import Literal, Optional

from pydantic import ConfigDict, Field, model_validator
from pydantic.dataclasses import dataclass

from shared.numerics.laws import (
    ConstantLaw,
    ExponentialLaw,
    PolynomialLaw,
    ScalarLaw,
    TabulatedLaw,
)

CoefficientKind = Literal["constant", "polynomial", "exponential", "tabulated"]

_LAWS_CONFIG = ConfigDict(arbitrary_types_allowed=True)


@dataclass(config=ConfigDict(extra="forbid"))
class CoefficientSpec:
    """
    Declarative description of one temperature law.

    `parameters` is interpreted per kind:

    * constant:    [c]
    * polynomial:  [a0, a1, ...] for a0 + a1*theta + ...
    * exponential: [a, b] or [a, b, c] for a*exp(b*theta) + c
    * tabulated:   values at `abscissae`, joined by a C^2 cubic spline
    """

    kind: CoefficientKind
    parameters: list[float] = Field(default_factory=list)
    abscissae: Optional[list[float]] = Field(default=None)

    @model_validator(mode="after")
    def _check_parameters(self):
        count = len(self.parameters)
        if self.kind == "constant" and count != 1:
            raise ValueError("constant law takes exactly one parameter")
        if self.kind == "polynomial" and count < 1:
            raise ValueError("polynomial law needs at least one coefficient")
        if self.kind == "exponential" and count not in (2, 3):
            raise ValueError("exponential law takes [a, b] or [a, b, c]")
        if self.kind == "tabulated":
            if self.abscissae is None or len(self.abscissae) != count:
                raise ValueError("tabulated law needs one abscissa per value")
            if count < 2 or any(
                b <= a for a, b in zip(self.abscissae, self.abscissae[1:])
            ):
                raise ValueError("tabulated abscissae must be strictly increasing")
        elif self.abscissae is not None:
            raise ValueError("abscissae are only accepted by tabulated laws")
        return self

    def build(self) -> ScalarLaw:
        """Evaluator with value, first and second derivative."""
        p = self.parameters
        match self.kind:
            case "constant":
                return ConstantLaw(p[0])
            case "polynomial":
                return PolynomialLaw(p)
            case "exponential":
                return ExponentialLaw(*p)
            case "tabulated":
                return TabulatedLaw(self.abscissae, p)


@dataclass(config=_LAWS_CONFIG)
class ZenerMaterial:
    """
    Physical parameters of a Zener (standard linear solid) material.

    The stiffness law c(theta) is in Pa, the times in s, the density in
    kg/m^3 and the diffusivity in m^2/s. `theta_max` bounds the temperature
    range on which c(theta) > 0 is required.

    Construction does not enforce the physical invariants; they are checked
    by `ModelService.zener_to_coefficients`, which reports all of them at
    once as an InvalidMaterialError.
    """

    tau_rel: float
    tau_ret: float
    stiffness: ScalarLaw
    density: float
    diffusivity: float
    theta_max: float = 10.0


@dataclass(frozen=True, config=_LAWS_CONFIG)
class CoefficientSet:
    """
    Coefficients of the Moore-Gibson-Thompson/heat system.

    u_ttt + alpha u_tt = (gamma(theta) u_xt)_x + (ghat(theta) u_x)_x
    theta_t = diffusivity theta_xx + heating(theta) u_xt^2
    """

    alpha: float
    diffusivity: float
    gamma: ScalarLaw
    ghat: ScalarLaw
    heating: ScalarLaw

    @classmethod
    def constant(
        cls,
        alpha: float = 1.0,
        diffusivity: float = 1.0,
        gamma: float = 1.0,
        ghat: float = 1.0,
        heating: float = 0.0,
    ) -> "CoefficientSet":
        return cls(
            alpha=alpha,
            diffusivity=diffusivity,
            gamma=ConstantLaw(gamma),
            ghat=ConstantLaw(ghat),
            heating=ConstantLaw(heating),
        )


@dataclass(frozen=True)
class ValidationReport:
    """
    Outcome of sampling a CoefficientSet on [0, theta_max].

    `derivative_errors` maps "gamma.d1", "gamma.d2", "ghat.d1", "ghat.d2"
    and "heating.d1" to the worst relative deviation between the supplied
    derivative and a centred difference of the evaluator below it.
    """

    theta_max: float
    samples: int
    min_gamma: float
    argmin_gamma: float
    min_ghat: float
    argmin_ghat: float
    min_heating: float
    argmin_heating: float
    derivative_errors: dict[str, float]
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_derivative_error(self) -> float:
        return max(self.derivative_errors.values(), default=0.0)
