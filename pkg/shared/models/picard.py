import numpy as np
from pydantic import ConfigDict, Field, model_validator
from pydantic.dataclasses import dataclass


@dataclass(frozen=True)
class SemigroupConstants:
    """
    Empirical smoothing constants of the discrete Neumann heat semigroup.

    On the grid they were estimated on, for t in (0, 1]:

        ||e^{eps t Lap} phi||_{W12}      <= c1 t^(-1/2) ||phi||_inf
        ||e^{D t Lap} phi||_inf          <= c2 t^(-1/2) ||phi||_1
        ||e^{eps t Lap} d_x phi||_inf    <= c3 t^(-3/4) ||phi||_2
    """

    c1: float = Field(gt=0)
    c2: float = Field(gt=0)
    c3: float = Field(gt=0)


@dataclass(frozen=True)
class SmallnessRoots:
    """Largest horizon allowed by each smallness condition taken alone."""

    flux: float
    velocity: float
    displacement: float
    heating: float

    def binding(self) -> str:
        roots = {
            "flux": self.flux,
            "velocity": self.velocity,
            "displacement": self.displacement,
            "heating": self.heating,
        }
        return min(roots, key=roots.get)


@dataclass(frozen=True, config=ConfigDict(extra="forbid"))
class PicardConfig:
    """
    Parameters of one Duhamel fixed-point solve on [0, T].

    R is the radius of the ball the iterates must stay in; T0 the horizon
    granted by the smallness conditions.
    """

    eps: float = Field(gt=0)
    R: float = Field(ge=1)
    T0: float = Field(gt=0)
    T: float = Field(gt=0)
    n_time: int = Field(default=65, ge=2)
    max_iter: int = Field(default=50, ge=1)
    tol: float = Field(default=1e-12, gt=0)

    @model_validator(mode="after")
    def _check_horizon(self):
        if self.T > self.T0:
            raise ValueError(f"T={self.T} exceeds T0={self.T0}")
        return self


@dataclass(config=ConfigDict(arbitrary_types_allowed=True))
class PicardIterate:
    """Time-sampled quadruple; every field array has shape (n_time, n)."""

    times: np.ndarray
    w: np.ndarray
    v: np.ndarray
    u: np.ndarray
    theta: np.ndarray


@dataclass(config=ConfigDict(arbitrary_types_allowed=True))
class PicardResult:
    """
    Fixed point (or last iterate) and the contraction history.

    `differences[k]` is the X0-distance between iterates k+1 and k,
    `ratios[k]` the quotient of consecutive differences and `ball_norms[k]`
    the X0-norm of iterate k+1.
    """

    iterate: PicardIterate
    differences: list[float]
    ratios: list[float]
    ball_norms: list[float]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.differences)
