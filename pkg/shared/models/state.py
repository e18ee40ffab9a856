from typing import Callable, Literal, Optional

import numpy as np
from pydantic import ConfigDict, Field, model_validator
from pydantic.dataclasses import dataclass

from shared.numerics.grid import Grid

Scheme = Literal["semi_implicit", "explicit_rk4"]
TimeDiscretization = Literal["backward_euler", "crank_nicolson"]
CoefficientUpdate = Literal["frozen", "midpoint"]

# f(x, t) -> array shaped like x
Forcing = Callable[[np.ndarray, float], np.ndarray]

_ARRAYS = ConfigDict(arbitrary_types_allowed=True)


@dataclass(frozen=True, config=_ARRAYS)
class State:
    """
    Unknowns of the first-order system at one time instant.

    v is u_t and w is u_tt; all four fields live on `grid`.
    """

    grid: Grid
    t: float
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    theta: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "State":
        z = np.zeros(grid.n)
        return cls(grid=grid, t=t, u=z, v=z.copy(), w=z.copy(), theta=z.copy())

    def fields(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.u, self.v, self.w, self.theta

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(f))) for f in self.fields())


@dataclass(frozen=True, config=_ARRAYS)
class InitialData:
    """
    Nodal initial data (u0, u0_t, u0_tt, theta0).

    Instances built by `ModelService.make_initial_data` are Neumann
    compatible and carry nonnegative temperatures; the constructor accepts
    raw arrays for callers that prepared them themselves.
    """

    grid: Grid
    u0: np.ndarray
    u0t: np.ndarray
    u0tt: np.ndarray
    theta0: np.ndarray
    means_removed: bool = False

    def to_state(self) -> State:
        return State(
            grid=self.grid,
            t=0.0,
            u=np.array(self.u0, dtype=np.float64),
            v=np.array(self.u0t, dtype=np.float64),
            w=np.array(self.u0tt, dtype=np.float64),
            theta=np.array(self.theta0, dtype=np.float64),
        )


@dataclass(frozen=True, config=_ARRAYS)
class SourceTerms:
    """Optional forcings added to the w-equation and the theta-equation."""

    f_u: Optional[Forcing] = None
    f_theta: Optional[Forcing] = None

    def mechanical(self, x: np.ndarray, t: float) -> Optional[np.ndarray]:
        return None if self.f_u is None else np.asarray(self.f_u(x, t), float)

    def thermal(self, x: np.ndarray, t: float) -> Optional[np.ndarray]:
        if self.f_theta is None:
            return None
        return np.asarray(self.f_theta(x, t), float)


@dataclass(frozen=True, config=ConfigDict(extra="forbid"))
class EvolutionParams:
    """
    Time-stepping parameters.

    `dt` is a target: `evolve` shrinks it so that an integer number of
    steps lands exactly on `t_end`. `cadence` is the number of steps
    between snapshots and monitor calls.

    `undershoot_tol` is relative to max(1, max|theta|): a step whose
    temperature dips below -undershoot_tol * scale is rejected.
    """

    eps: float = Field(default=0.0, ge=0)
    dt: float = Field(default=1e-3, gt=0)
    t_end: float = Field(default=1.0, ge=0)
    scheme: Scheme = "semi_implicit"
    safety: float = Field(default=0.9, gt=0, le=1)
    time_discretization: TimeDiscretization = "crank_nicolson"
    coefficient_update: CoefficientUpdate = "midpoint"
    cadence: int = Field(default=1, ge=1)
    undershoot_tol: float = Field(default=1e-6, gt=0)


@dataclass(frozen=True)
class StepRecord:
    """Per-step bookkeeping kept by `evolve`."""

    t: float
    mean_u: float
    mean_v: float
    mean_w: float
    min_theta: float
    undershoot: float


@dataclass(config=_ARRAYS)
class Trajectory:
    """
    Snapshots at monitor times plus one record per accepted step.

    Snapshot times are strictly increasing; the first snapshot is the
    initial state.
    """

    grid: Grid
    snapshots: list[State] = Field(default_factory=list)
    records: list[StepRecord] = Field(default_factory=list)
    completed: bool = False

    @model_validator(mode="after")
    def _check_times(self):
        times = [s.t for s in self.snapshots]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot times must be strictly increasing")
        return self

    def append(self, state: State) -> None:
        if self.snapshots and state.t <= self.snapshots[-1].t:
            raise ValueError(
                f"snapshot at t={state.t} does not follow t={self.snapshots[-1].t}"
            )
        self.snapshots.append(state)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self) -> State:
        return self.snapshots[-1]

    def stack(self, name: str) -> np.ndarray:
        """Field `name` of every snapshot as a (snapshots, n) array."""
        return np.stack([getattr(s, name) for s in self.snapshots])

    def __len__(self) -> int:
        return len(self.snapshots)
