import math

import numpy as np
import pytest

from apps.mgt.service.dynamics_service import (
    BlowupSuspectedError,
    DynamicsService,
    ManufacturedSolution,
    NonFiniteStateError,
    StabilityViolationError,
    TemperatureUndershootError,
)
from shared.models.state import EvolutionParams, InitialData, State
from shared.numerics.grid import Grid, laplacian_eigenvalues, mean


@pytest.fixture
def dynamics(grid, unit_coefficients):
    return DynamicsService(grid, unit_coefficients)


def test_rhs_of_rest_state_vanishes(dynamics, grid, make_data):
    state = make_data(grid, theta=2.0).to_state()

    for tendency in dynamics.rhs(state, eps=0.1):
        np.testing.assert_allclose(tendency, 0.0, atol=1e-12)


def test_rhs_conserves_mechanical_means(grid, heated_coefficients, make_data):
    """
    Test that the flux terms integrate to zero, so only damping moves the
    mean of w.

    Expected:
      - mean(w_t) = -alpha mean(w) for a state with mean(w) = 0.3.
    """
    dynamics = DynamicsService(grid, heated_coefficients)
    data = make_data(grid, u=0.1, v=0.2, w=0.1, theta_mode=0.3)
    state = data.to_state()
    state = State(
        grid=grid, t=0.0, u=state.u, v=state.v, w=state.w + 0.3, theta=state.theta
    )

    du, dv, dw, _ = dynamics.rhs(state, eps=0.05)

    assert mean(grid, du) == pytest.approx(0.0, abs=1e-12)
    assert mean(grid, dv) == pytest.approx(0.3, abs=1e-12)
    alpha = heated_coefficients.alpha
    assert mean(grid, dw) == pytest.approx(-0.3 * alpha, abs=1e-10)


def test_rhs_rejects_non_finite_state(dynamics, grid):
    state = State.zeros(grid)
    state.theta[4] = np.nan

    with pytest.raises(NonFiniteStateError):
        dynamics.rhs(state, eps=0.0)


def test_manufactured_forcing_is_consistent(heated_coefficients):
    """
    Test that the exact fields with their forcings satisfy the semi-discrete
    system up to the spatial truncation error.

    Steps:
      1. Evaluate rhs at the exact state for t = 0.7.
      2. Compare with the analytic time derivatives.

    Expected:
      - Agreement to O(h^2) on n = 65.
    """
    grid = Grid(length=1.0, n=65)
    mms = ManufacturedSolution(grid, heated_coefficients)
    dynamics = DynamicsService(grid, heated_coefficients)
    t, dt = 0.7, 1e-6

    du, dv, dw, dtheta = dynamics.rhs(mms.exact(t), 0.0, mms.source_terms())
    later, earlier = mms.exact(t + dt), mms.exact(t - dt)

    for name, tendency in zip(("u", "v", "w", "theta"), (du, dv, dw, dtheta)):
        exact = (getattr(later, name) - getattr(earlier, name)) / (2.0 * dt)
        np.testing.assert_allclose(tendency, exact, atol=2e-2, err_msg=name)


@pytest.mark.parametrize("scheme", ["semi_implicit", "explicit_rk4"])
def test_pure_heat_conduction_is_exact(grid, unit_coefficients, make_data, scheme):
    """
    Test that a resting body only diffuses its temperature.

    Steps:
      1. Start from u = v = w = 0, theta = 1 + 0.5 cos(pi x).
      2. Evolve to t = 0.05.

    Expected:
      - theta = 1 + 0.5 exp(-lambda_1 t) cos(pi x), exact for the
        semigroup step and to RK4 accuracy otherwise.
    """
    dynamics = DynamicsService(grid, unit_coefficients)
    data = make_data(grid, theta=1.0, theta_mode=0.5)
    params = EvolutionParams(dt=2e-4, t_end=0.05, scheme=scheme)

    traj = dynamics.evolve(data, params)

    lam = laplacian_eigenvalues(grid)[1]
    expected = 1.0 + 0.5 * math.exp(-lam * 0.05) * np.cos(np.pi * grid.nodes)
    np.testing.assert_allclose(traj.final.theta, expected, atol=1e-10)
    np.testing.assert_allclose(traj.final.u, 0.0, atol=1e-14)


def test_schemes_agree_on_linear_problem(unit_coefficients, make_data):
    """
    Test that the semi-implicit Crank-Nicolson run and the RK4 run of a
    single-mode problem agree to the accuracy of the coarser of the two.
    """
    grid = Grid(length=1.0, n=17)
    dynamics = DynamicsService(grid, unit_coefficients)
    data = make_data(grid, u=1e-2, v=1e-2, w=0.0, theta=1.0)

    implicit = dynamics.evolve(data, EvolutionParams(dt=5e-4, t_end=0.01))
    explicit = dynamics.evolve(
        data, EvolutionParams(dt=5e-4, t_end=0.01, scheme="explicit_rk4")
    )

    for name in ("u", "v", "w", "theta"):
        np.testing.assert_allclose(
            getattr(implicit.final, name), getattr(explicit.final, name), atol=1e-6
        )


def test_backward_euler_and_frozen_update(grid, heated_coefficients, make_data):
    dynamics = DynamicsService(grid, heated_coefficients)
    data = make_data(grid, u=1e-2, v=1e-2, theta=1.0, theta_mode=0.2)
    params = EvolutionParams(
        dt=1e-3,
        t_end=0.02,
        time_discretization="backward_euler",
        coefficient_update="frozen",
    )

    traj = dynamics.evolve(data, params)

    assert traj.completed
    assert traj.final.is_finite()
    assert float(np.min(traj.final.theta)) > 0.0


def test_rk4_stability_guard(dynamics, grid, small_data):
    state = small_data.to_state()
    params = EvolutionParams(scheme="explicit_rk4")
    limit = dynamics.stable_dt(state, params)

    with pytest.raises(StabilityViolationError):
        dynamics.step_explicit_rk4(state, params, dt=2.0 * limit)


def test_evolve_lands_on_t_end_with_cadence(dynamics, small_data):
    """
    Test step shrinking and snapshot cadence.

    Steps:
      1. t_end = 0.1 with target dt = 0.03 needs 4 steps of 0.025.
      2. Keep a snapshot every 3 steps.

    Expected:
      - Snapshots at 0, 0.075 and the final time 0.1.
      - One record per step plus the initial one.
      - Mechanical means stay zero.
    """
    params = EvolutionParams(dt=0.03, t_end=0.1, cadence=3)

    traj = dynamics.evolve(small_data, params)

    np.testing.assert_allclose(traj.times, [0.0, 0.075, 0.1])
    assert traj.final.t == 0.1
    assert len(traj.records) == 5
    for record in traj.records:
        assert abs(record.mean_u) < 1e-12
        assert abs(record.mean_v) < 1e-12
        assert abs(record.mean_w) < 1e-12


def test_evolve_with_zero_horizon(dynamics, small_data):
    traj = dynamics.evolve(small_data, EvolutionParams(t_end=0.0))

    assert traj.completed
    assert len(traj) == 1


def test_monitor_abort_attaches_partial_trajectory(dynamics, small_data):
    """
    Test that a BlowupSuspectedError raised by a monitor carries the
    snapshots recorded so far.
    """
    seen = []

    def monitor(state):
        seen.append(state.t)
        if state.t > 0.025:
            raise BlowupSuspectedError("too large", value=1e9, t=state.t)

    with pytest.raises(BlowupSuspectedError) as info:
        dynamics.evolve(
            small_data, EvolutionParams(dt=0.01, t_end=0.1), monitors=[monitor]
        )

    traj = info.value.trajectory
    assert traj is not None
    assert not traj.completed
    assert traj.final.t == pytest.approx(0.03)
    assert seen[0] == 0.0


@pytest.mark.slow
def test_long_heated_run_keeps_means_and_temperature(heated_coefficients, make_data):
    """
    Test a long run with heating on a fine grid.

    Steps:
      1. Evolve mean-free data on n = 257 with eps = 1e-2, dt = 1e-4 up to
         t = 1, i.e. 10^4 steps.

    Expected:
      - The means of u, v and w stay below 1e-11 at every step.
      - The temperature never drops below -1e-10.
    """
    grid = Grid(length=1.0, n=257)
    data = make_data(grid, u=1e-2, v=1e-2, theta=1.0, theta_mode=0.5)
    params = EvolutionParams(eps=1e-2, dt=1e-4, t_end=1.0, cadence=1000)

    traj = DynamicsService(grid, heated_coefficients).evolve(data, params)

    assert traj.completed
    assert len(traj.records) == 10001
    for record in traj.records:
        assert max(abs(record.mean_u), abs(record.mean_v), abs(record.mean_w)) <= 1e-11
        assert record.min_theta >= -1e-10


def test_negative_temperature_is_rejected(dynamics, grid):
    """
    Test the undershoot guard of the semi-implicit step.

    Expected:
      - theta = cos(pi x) stays near -1 at x = L after one step, far below
        the tolerance.
    """
    z = np.zeros(grid.n)
    state = State(grid=grid, t=0.0, u=z, v=z, w=z, theta=np.cos(np.pi * grid.nodes))

    with pytest.raises(TemperatureUndershootError) as info:
        dynamics.step_semi_implicit(state, EvolutionParams(dt=1e-3))

    assert info.value.undershoot > 0.9


def test_manufactured_run_converges(grid, unit_coefficients):
    """
    Test a short forced run against the exact solution.

    Expected:
      - Max error below 1e-2 at t = 0.1 on n = 33.
    """
    mms = ManufacturedSolution(grid, unit_coefficients)
    exact0 = mms.exact(0.0)
    data = InitialData(
        grid=grid, u0=exact0.u, u0t=exact0.v, u0tt=exact0.w, theta0=exact0.theta
    )
    params = EvolutionParams(dt=1e-3, t_end=0.1, undershoot_tol=1e-2)

    traj = DynamicsService(grid, unit_coefficients).evolve(
        data, params, src=mms.source_terms()
    )

    exact = mms.exact(0.1)
    for name in ("u", "v", "w", "theta"):
        error = np.max(np.abs(getattr(traj.final, name) - getattr(exact, name)))
        assert error < 1e-2, name
    assert traj.completed
