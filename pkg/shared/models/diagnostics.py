from typing import Optional

import numpy as np
from pydantic import ConfigDict
from pydantic.dataclasses import dataclass


@dataclass(frozen=True)
class ConstantsEstimate:
    """
    Sampled bounds of the coefficients on the temperature range [0, M].

    k1 <= gamma <= k2, k3 <= ghat <= k4, heating <= k5,
    |gamma'| <= k6, |ghat'| <= k7, |gamma''| <= k8, |ghat''| <= k9,
    |heating'| <= k10.

    Derived weights:
        B   = 4 k4^2 / k1
        k12 = max{2, 4/k1, 4/B, 1/k3}
        B1  = 4 (sup ghat)^2 / (inf gamma) over the observed temperatures
        B2  = weight of the temperature difference (configuration)
    """

    M: float
    k1: float
    k2: float
    k3: float
    k4: float
    k5: float
    k6: float
    k7: float
    k8: float
    k9: float
    k10: float
    B: float
    k12: float
    B1: float
    B2: float = 1.0


@dataclass(frozen=True)
class EnergyTerms:
    """The five integrals that add up to the energy functional y."""

    acceleration: float  # 1/2 int w_x^2
    damping: float  # 1/2 int gamma v_xx^2
    coupling: float  # int ghat u_xx v_xx
    stiffness: float  # B/2 int u_xx^2
    viscous: float  # eps int ghat u_xxx^2

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (
            self.acceleration,
            self.damping,
            self.coupling,
            self.stiffness,
            self.viscous,
        )


@dataclass(frozen=True)
class EnergyReport:
    t: float
    y: float
    terms: EnergyTerms
    lower_bound: float
    identity_residual: Optional[float] = None
    k13_fitted: Optional[float] = None


@dataclass(frozen=True, config=ConfigDict(arbitrary_types_allowed=True))
class TimeSeries:
    """Scalar samples at trajectory times."""

    times: np.ndarray
    values: np.ndarray

    def l1_norm(self) -> float:
        """Trapezoidal integral of |values| over the sampled window."""
        if len(self.times) < 2:
            return 0.0
        return float(np.trapezoid(np.abs(self.values), self.times))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0


@dataclass(frozen=True)
class DiagnosticsRow:
    """One row of the diagnostics CSV stream."""

    t: float
    mean_u: float
    mean_v: float
    mean_w: float
    min_theta: float
    y: float
    y_terms: tuple[float, float, float, float, float]
    identity_residual: float
    k13_fitted: float
    blowup_monitor: float

    HEADER = (
        "t",
        "mean_u",
        "mean_v",
        "mean_w",
        "min_theta",
        "y",
        "y_acceleration",
        "y_damping",
        "y_coupling",
        "y_stiffness",
        "y_viscous",
        "identity_residual",
        "k13_fitted",
        "blowup_monitor",
    )

    def as_row(self) -> list[float]:
        return [
            self.t,
            self.mean_u,
            self.mean_v,
            self.mean_w,
            self.min_theta,
            self.y,
            *self.y_terms,
            self.identity_residual,
            self.k13_fitted,
            self.blowup_monitor,
        ]
