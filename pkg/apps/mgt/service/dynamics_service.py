"""
Time integration of the first-order system

    u_t     = eps Lap u + v
    v_t     = eps Lap v + w
    w_t     = eps Lap w + (gamma(theta) v_x)_x + (ghat(theta) u_x)_x - alpha w + f_u
    theta_t = D Lap theta + heating(theta) v_x^2 + f_theta

with zero-flux boundaries. Coefficients are evaluated at max(theta, 0).
"""

import logging
import math
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from shared.models.material import CoefficientSet
from shared.models.state import (
    EvolutionParams,
    InitialData,
    SourceTerms,
    State,
    StepRecord,
    Trajectory,
)
from shared.numerics.grid import (
    Grid,
    apply_bands,
    first_difference,
    flux_divergence_bands,
    heat_semigroup_apply,
    laplacian,
    mean,
)

logger = logging.getLogger(__name__)

Monitor = Callable[[State], None]

# (u, v, w) are interleaved per node: index 3*i + {0, 1, 2}
_LOWER, _UPPER = 5, 3


class DynamicsError(Exception):
    """Base class for DynamicsService errors."""


class NonFiniteStateError(DynamicsError):
    """Raised when a state contains NaN or Inf values."""

    def __init__(self, message: str, t: Optional[float] = None):
        super().__init__(message)
        self.t = t


class SolverFailure(DynamicsError):
    """Raised when a time step cannot be completed."""


class TemperatureUndershootError(SolverFailure):
    """Raised when the temperature drops below the undershoot tolerance."""

    def __init__(self, message: str, t: float, undershoot: float):
        super().__init__(message)
        self.t = t
        self.undershoot = undershoot


class StabilityViolationError(DynamicsError):
    """Raised when an explicit step exceeds its stability guard."""


class BlowupSuspectedError(DynamicsError):
    """
    Raised by a monitor when the solution norm explodes.

    `evolve` attaches the partial trajectory before re-raising.
    """

    def __init__(self, message: str, value: float, t: float):
        super().__init__(message)
        self.value = value
        self.t = t
        self.trajectory: Optional[Trajectory] = None


def _heating_gradient(grid: Grid, v: np.ndarray) -> np.ndarray:
    vx = first_difference(grid, v)
    vx[0] = vx[-1] = 0.0
    return vx


class ManufacturedSolution:
    """
    Exact fields u*(x,t) = cos(k x) cos(t), theta*(x,t) = 1 + cos(k x) e^{-t}
    with k = pi/L, for eps = 0, and the forcings that make them exact
    solutions of the system for the given coefficients.
    """

    def __init__(self, grid: Grid, coefficients: CoefficientSet):
        self.grid = grid
        self.c = coefficients
        self.k = math.pi / grid.length

    def exact(self, t: float) -> State:
        x = self.grid.nodes
        phi = np.cos(self.k * x)
        return State(
            grid=self.grid,
            t=t,
            u=phi * math.cos(t),
            v=-phi * math.sin(t),
            w=-phi * math.cos(t),
            theta=1.0 + phi * math.exp(-t),
        )

    def f_u(self, x: np.ndarray, t: float) -> np.ndarray:
        k = self.k
        phi, phi_x = np.cos(k * x), -k * np.sin(k * x)
        theta = 1.0 + phi * math.exp(-t)
        theta_x = phi_x * math.exp(-t)
        v_x, v_xx = -phi_x * math.sin(t), k * k * phi * math.sin(t)
        u_x, u_xx = phi_x * math.cos(t), -k * k * phi * math.cos(t)
        damping = self.c.gamma.d1(theta) * theta_x * v_x + self.c.gamma(theta) * v_xx
        stiffness = self.c.ghat.d1(theta) * theta_x * u_x + self.c.ghat(theta) * u_xx
        w = -phi * math.cos(t)
        w_t = phi * math.sin(t)
        return w_t - damping - stiffness + self.c.alpha * w

    def f_theta(self, x: np.ndarray, t: float) -> np.ndarray:
        k = self.k
        phi = np.cos(k * x)
        decay = math.exp(-t)
        theta = 1.0 + phi * decay
        v_x = k * np.sin(k * x) * math.sin(t)
        return (
            -phi * decay
            + self.c.diffusivity * k * k * phi * decay
            - self.c.heating(theta) * v_x**2
        )

    def source_terms(self) -> SourceTerms:
        return SourceTerms(f_u=self.f_u, f_theta=self.f_theta)


class DynamicsService:
    """
    Steppers and the evolution loop for one grid and coefficient set.

    Two schemes are available:

    * semi_implicit: the mechanical part is linear once the temperature is
      frozen; it is advanced by a theta-method (backward Euler or
      Crank-Nicolson) with one banded solve per pass. Temperature diffusion
      is exact through the discrete heat semigroup, heating is explicit.
      With coefficient_update="midpoint" the mechanical solve is repeated
      with coefficients at the predicted mid-step temperature.
    * explicit_rk4: classical Runge-Kutta on the full right-hand side,
      guarded by a conservative step restriction.
    """

    def __init__(self, grid: Grid, coefficients: CoefficientSet):
        self.grid = grid
        self.c = coefficients
        self.x = grid.nodes
        self._unit_bands = flux_divergence_bands(grid, np.ones(grid.n))
        logger.debug(
            "DynamicsService initialized (n=%d, L=%g, alpha=%g, D=%g)",
            grid.n,
            grid.length,
            coefficients.alpha,
            coefficients.diffusivity,
        )

    def rhs(
        self, s: State, eps: float, src: Optional[SourceTerms] = None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Tendencies (u_t, v_t, w_t, theta_t) of the semi-discrete system.

        Raises:
            NonFiniteStateError: if any field contains NaN or Inf.
        """
        self._check_finite(s)
        grid, c = self.grid, self.c
        gamma = c.gamma.clamped(s.theta)
        ghat = c.ghat.clamped(s.theta)

        du = s.v.copy()
        dv = s.w.copy()
        dw = (
            apply_bands(flux_divergence_bands(grid, gamma), s.v)
            + apply_bands(flux_divergence_bands(grid, ghat), s.u)
            - c.alpha * s.w
        )
        if eps:
            du += eps * apply_bands(self._unit_bands, s.u)
            dv += eps * apply_bands(self._unit_bands, s.v)
            dw += eps * apply_bands(self._unit_bands, s.w)

        vx = _heating_gradient(grid, s.v)
        dtheta = c.diffusivity * laplacian(grid, s.theta) + c.heating.clamped(
            s.theta
        ) * vx * vx

        if src is not None:
            f_u = src.mechanical(self.x, s.t)
            if f_u is not None:
                dw += f_u
            f_theta = src.thermal(self.x, s.t)
            if f_theta is not None:
                dtheta += f_theta
        return du, dv, dw, dtheta

    def stable_dt(self, s: State, params: EvolutionParams) -> float:
        """Largest step accepted by the explicit RK4 guard at state s."""
        h = self.grid.h
        gamma_max = float(np.max(self.c.gamma.clamped(s.theta)))
        ghat_max = float(np.max(self.c.ghat.clamped(s.theta)))
        diffusive = h * h / (
            2.0 * params.eps + 2.0 * self.c.diffusivity + 2.0 * gamma_max
        )
        wave = h / math.sqrt(ghat_max) if ghat_max > 0 else math.inf
        return params.safety * min(diffusive, wave)

    def step_explicit_rk4(
        self,
        s: State,
        params: EvolutionParams,
        src: Optional[SourceTerms] = None,
        dt: Optional[float] = None,
    ) -> State:
        """
        One classical four-stage Runge-Kutta step.

        Raises:
            StabilityViolationError: dt above the guard of `stable_dt`.
            NonFiniteStateError: non-finite input or result.
        """
        dt = params.dt if dt is None else dt
        self._check_finite(s)
        limit = self.stable_dt(s, params)
        if dt > limit:
            raise StabilityViolationError(
                f"dt={dt:g} exceeds the explicit stability limit {limit:g}"
            )

        def stage(base: State, k, factor: float, t: float) -> State:
            return State(
                grid=self.grid,
                t=t,
                u=base.u + factor * k[0],
                v=base.v + factor * k[1],
                w=base.w + factor * k[2],
                theta=base.theta + factor * k[3],
            )

        k1 = self.rhs(s, params.eps, src)
        k2 = self.rhs(stage(s, k1, 0.5 * dt, s.t + 0.5 * dt), params.eps, src)
        k3 = self.rhs(stage(s, k2, 0.5 * dt, s.t + 0.5 * dt), params.eps, src)
        k4 = self.rhs(stage(s, k3, dt, s.t + dt), params.eps, src)
        fields = [
            f + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
            for f, a, b, c, d in zip(s.fields(), k1, k2, k3, k4)
        ]
        out = State(
            grid=self.grid,
            t=s.t + dt,
            u=fields[0],
            v=fields[1],
            w=fields[2],
            theta=fields[3],
        )
        self._check_finite(out)
        return out

    def step_semi_implicit(
        self,
        s: State,
        params: EvolutionParams,
        src: Optional[SourceTerms] = None,
        dt: Optional[float] = None,
    ) -> State:
        """
        One semi-implicit step.

        1. Freeze gamma, ghat at the current temperature and advance
           (u, v, w) with the theta-method.
        2. Advance theta by the exact heat semigroup composed with the
           explicit heating source built from the new v.
        3. For coefficient_update="midpoint", redo step 1 with coefficients
           at the average of the old and predicted temperature, then step 2.

        Raises:
            SolverFailure: the banded system is singular.
            TemperatureUndershootError: theta < -undershoot_tol * scale.
            NonFiniteStateError: non-finite input or result.
        """
        dt = params.dt if dt is None else dt
        self._check_finite(s)
        cn = params.time_discretization == "crank_nicolson"
        weight = 0.5 if cn else 1.0
        t_new = s.t + dt

        forcing = None
        if src is not None and src.f_u is not None:
            forcing = weight * src.mechanical(self.x, t_new) + (
                1.0 - weight
            ) * src.mechanical(self.x, s.t)

        u, v, w = self._mechanical_step(s, s.theta, dt, weight, params.eps, forcing)
        theta = self._thermal_step(s, s.theta, v, dt, cn, src)

        if params.coefficient_update == "midpoint":
            theta_mid = 0.5 * (s.theta + theta)
            u, v, w = self._mechanical_step(
                s, theta_mid, dt, weight, params.eps, forcing
            )
            theta = self._thermal_step(s, theta, v, dt, cn, src)

        out = State(grid=self.grid, t=t_new, u=u, v=v, w=w, theta=theta)
        self._check_finite(out)
        self._check_undershoot(out, params.undershoot_tol)
        return out

    def evolve(
        self,
        init: InitialData,
        params: EvolutionParams,
        src: Optional[SourceTerms] = None,
        monitors: Iterable[Monitor] = (),
    ) -> Trajectory:
        """
        Integrate from t = 0 to params.t_end.

        The step is shrunk so that an integer number of steps lands on
        t_end. Snapshots are kept, and monitors invoked, every
        `params.cadence` steps and at the final time.

        Raises:
            BlowupSuspectedError: a monitor aborted the run; the partial
                trajectory is attached as `trajectory`.
            NonFiniteStateError, SolverFailure, StabilityViolationError:
                propagated from the steppers.
        """
        monitors = list(monitors)
        state = init.to_state()
        self._check_finite(state)
        traj = Trajectory(grid=self.grid)
        traj.append(state)
        traj.records.append(self._record(state, 0.0))

        steps = 0
        if params.t_end > 0:
            steps = max(1, math.ceil(params.t_end / params.dt - 1e-9))
        dt = params.t_end / steps if steps else params.dt
        step = (
            self.step_semi_implicit
            if params.scheme == "semi_implicit"
            else self.step_explicit_rk4
        )
        logger.info(
            "Evolving %s on n=%d: eps=%g dt=%g steps=%d",
            params.scheme,
            self.grid.n,
            params.eps,
            dt,
            steps,
        )

        try:
            for monitor in monitors:
                monitor(state)
            for i in range(1, steps + 1):
                state = step(state, params, src, dt)
                if i == steps:
                    # land exactly on t_end
                    state = State(
                        grid=self.grid,
                        t=params.t_end,
                        u=state.u,
                        v=state.v,
                        w=state.w,
                        theta=state.theta,
                    )
                traj.records.append(
                    self._record(state, max(0.0, -float(np.min(state.theta))))
                )
                if i % params.cadence == 0 or i == steps:
                    traj.append(state)
                    for monitor in monitors:
                        monitor(state)
        except BlowupSuspectedError as e:
            e.trajectory = traj
            logger.warning(
                "Run aborted at t=%g: blow-up suspected (monitor=%g)", e.t, e.value
            )
            raise

        traj.completed = True
        logger.info("Run completed at t=%g with %d snapshots", state.t, len(traj))
        return traj

    def _mechanical_step(
        self,
        s: State,
        theta: np.ndarray,
        dt: float,
        weight: float,
        eps: float,
        forcing: Optional[np.ndarray],
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        grid, n = self.grid, self.grid.n
        gamma_bands = flux_divergence_bands(grid, self.c.gamma.clamped(theta))
        ghat_bands = flux_divergence_bands(grid, self.c.ghat.clamped(theta))

        rhs = np.empty(3 * n)
        explicit = (1.0 - weight) * dt
        rhs[0::3] = s.u
        rhs[1::3] = s.v
        rhs[2::3] = s.w
        if explicit:
            du, dv, dw = self._linear_tendency(s, gamma_bands, ghat_bands, eps)
            rhs[0::3] += explicit * du
            rhs[1::3] += explicit * dv
            rhs[2::3] += explicit * dw
        if forcing is not None:
            rhs[2::3] += dt * forcing

        ab = self._assemble(gamma_bands, ghat_bands, weight * dt, eps)
        try:
            z = solve_banded((_LOWER, _UPPER), ab, rhs, check_finite=False)
        except (LinAlgError, ValueError) as e:
            raise SolverFailure(f"banded solve failed at t={s.t:g}: {e}") from e
        return z[0::3], z[1::3], z[2::3]

    def _linear_tendency(self, s: State, gamma_bands, ghat_bands, eps: float):
        du = s.v.copy()
        dv = s.w.copy()
        dw = (
            apply_bands(gamma_bands, s.v)
            + apply_bands(ghat_bands, s.u)
            - self.c.alpha * s.w
        )
        if eps:
            du += eps * apply_bands(self._unit_bands, s.u)
            dv += eps * apply_bands(self._unit_bands, s.v)
            dw += eps * apply_bands(self._unit_bands, s.w)
        return du, dv, dw

    def _assemble(self, gamma_bands, ghat_bands, tau: float, eps: float):
        """Banded storage of I - tau * A for the interleaved (u, v, w)."""
        n = self.grid.n
        ab = np.zeros((_LOWER + _UPPER + 1, 3 * n))
        idx = np.arange(n)

        def put(rows, cols, values):
            ab[_UPPER + rows - cols, cols] += values

        def put_bands(row_off, col_off, bands, scale):
            lower, diag, upper = bands
            rows = 3 * idx + row_off
            put(rows, 3 * idx + col_off, scale * diag)
            put(rows[1:], 3 * idx[:-1] + col_off, scale * lower[1:])
            put(rows[:-1], 3 * idx[1:] + col_off, scale * upper[:-1])

        put(np.arange(3 * n), np.arange(3 * n), np.ones(3 * n))
        if eps:
            for k in range(3):
                put_bands(k, k, self._unit_bands, -tau * eps)
        put(3 * idx, 3 * idx + 1, np.full(n, -tau))
        put(3 * idx + 1, 3 * idx + 2, np.full(n, -tau))
        put_bands(2, 1, gamma_bands, -tau)
        put_bands(2, 0, ghat_bands, -tau)
        put(3 * idx + 2, 3 * idx + 2, np.full(n, tau * self.c.alpha))
        return ab

    def _heating_source(
        self,
        theta: np.ndarray,
        v: np.ndarray,
        t: float,
        src: Optional[SourceTerms],
    ) -> np.ndarray:
        vx = _heating_gradient(self.grid, v)
        source = self.c.heating.clamped(theta) * vx * vx
        if src is not None and src.f_theta is not None:
            source = source + src.thermal(self.x, t)
        return source

    def _thermal_step(
        self,
        s: State,
        theta_coeff: np.ndarray,
        v_new: np.ndarray,
        dt: float,
        trapezoid: bool,
        src: Optional[SourceTerms],
    ) -> np.ndarray:
        """
        Exponential Euler, or with `trapezoid` the exponential trapezoid
        rule e^{D dt Lap}(theta + dt/2 S_old) + dt/2 S_new, where S_new uses
        the heating law at `theta_coeff`.
        """
        D = self.c.diffusivity
        t_new = s.t + dt
        if trapezoid:
            s_old = self._heating_source(s.theta, s.v, s.t, src)
            s_new = self._heating_source(theta_coeff, v_new, t_new, src)
            return (
                heat_semigroup_apply(self.grid, D, dt, s.theta + 0.5 * dt * s_old)
                + 0.5 * dt * s_new
            )
        source = self._heating_source(s.theta, v_new, t_new, src)
        return heat_semigroup_apply(self.grid, D, dt, s.theta + dt * source)

    def _record(self, s: State, undershoot: float) -> StepRecord:
        return StepRecord(
            t=s.t,
            mean_u=mean(self.grid, s.u),
            mean_v=mean(self.grid, s.v),
            mean_w=mean(self.grid, s.w),
            min_theta=float(np.min(s.theta)),
            undershoot=undershoot,
        )

    def _check_finite(self, s: State) -> None:
        if not s.is_finite():
            raise NonFiniteStateError(f"non-finite state at t={s.t:g}", t=s.t)

    def _check_undershoot(self, s: State, tol: float) -> None:
        theta_min = float(np.min(s.theta))
        if theta_min >= 0:
            return
        scale = max(1.0, float(np.max(np.abs(s.theta))))
        if -theta_min > tol * scale:
            raise TemperatureUndershootError(
                f"theta={theta_min:g} below -{tol:g}*{scale:g} at t={s.t:g}",
                t=s.t,
                undershoot=-theta_min,
            )
        logger.debug("Clamped coefficient argument: theta_min=%g", theta_min)
